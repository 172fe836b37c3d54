#include "ndconv/nd_loss.hpp"

#include <array>
#include <cmath>

#include "ndconv/error.hpp"

namespace ndconv {

namespace {

void validate_offsets(const Tensor& offsets) {
    if (offsets.shape().c != kOffsetChannels)
        throw ShapeError("nd_loss: offset field must have 18 channels, got " +
                         std::to_string(offsets.shape().c));
}

// Corner terms: (edge1 + edge2) - center - corner. Row-major tap ids.
struct CornerDef {
    std::int64_t corner, edge1, edge2;
};
constexpr std::array<CornerDef, 4> kCorners = {{{TAP_A, TAP_D, TAP_B},
                                                {TAP_C, TAP_B, TAP_F},
                                                {TAP_G, TAP_D, TAP_H},
                                                {TAP_I, TAP_F, TAP_H}}};

// Base-point part of a corner residual. Integer arithmetic in doubles, so the
// cancellation (d + b - e - a = 0, for every dilation) is exact; it is carried
// through anyway instead of being assumed.
Point corner_base(const GridGeometry& geometry, const CornerDef& c) {
    const auto base = geometry.base_points();
    const Point& p1 = base[static_cast<std::size_t>(c.edge1)];
    const Point& p2 = base[static_cast<std::size_t>(c.edge2)];
    const Point& pe = base[static_cast<std::size_t>(TAP_E)];
    const Point& pc = base[static_cast<std::size_t>(c.corner)];
    return Point{p1.x + p2.x - pe.x - pc.x, p1.y + p2.y - pe.y - pc.y};
}

std::pair<double, NdLossBreakdown> nd_loss_impl(const Tensor& offsets, const GridGeometry& geometry,
                                                bool corner_variant) {
    validate_offsets(offsets);
    const Shape& s = offsets.shape();
    const std::int64_t locations = s.n * s.h * s.w;
    if (locations == 0) return {0.0, NdLossBreakdown{}};

    std::array<Point, 4> rbase;
    for (std::size_t ci = 0; ci < 4; ++ci) rbase[ci] = corner_base(geometry, kCorners[ci]);

    NdLossBreakdown acc;
    double corner_acc[4] = {0.0, 0.0, 0.0, 0.0};
    for (std::int64_t n = 0; n < s.n; ++n) {
        for (std::int64_t y = 0; y < s.h; ++y) {
            for (std::int64_t x = 0; x < s.w; ++x) {
                auto dx = [&](std::int64_t tap) { return offsets.at(n, 2 * tap, y, x); };
                auto dy = [&](std::int64_t tap) { return offsets.at(n, 2 * tap + 1, y, x); };
                acc.l_e += dx(TAP_E) * dx(TAP_E) + dy(TAP_E) * dy(TAP_E);
                const double hx = dx(TAP_D) + dx(TAP_F);
                acc.l_hor += hx * hx + dy(TAP_D) * dy(TAP_D) + dy(TAP_F) * dy(TAP_F);
                const double vy = dy(TAP_B) + dy(TAP_H);
                acc.l_vec += vy * vy + dx(TAP_B) * dx(TAP_B) + dx(TAP_H) * dx(TAP_H);
                for (std::size_t ci = 0; ci < 4; ++ci) {
                    const CornerDef& c = kCorners[ci];
                    double rx = dx(c.edge1) + dx(c.edge2) - dx(TAP_E) + rbase[ci].x;
                    double ry = dy(c.edge1) + dy(c.edge2) - dy(TAP_E) + rbase[ci].y;
                    if (corner_variant) {
                        rx -= dx(c.corner);
                        ry -= dy(c.corner);
                    }
                    corner_acc[ci] += rx * rx + ry * ry;
                }
            }
        }
    }
    const double inv = 1.0 / static_cast<double>(locations);
    acc.l_e *= inv;
    acc.l_hor *= inv;
    acc.l_vec *= inv;
    acc.l_A = corner_acc[0] * inv;
    acc.l_C = corner_acc[1] * inv;
    acc.l_G = corner_acc[2] * inv;
    acc.l_I = corner_acc[3] * inv;
    acc.total = acc.l_e + acc.l_hor + acc.l_vec + acc.l_A + acc.l_C + acc.l_G + acc.l_I;
    return {acc.total, acc};
}

}  // namespace

std::pair<double, NdLossBreakdown> nd_loss(const Tensor& offsets, const GridGeometry& geometry) {
    return nd_loss_impl(offsets, geometry, false);
}

std::pair<double, NdLossBreakdown> nd_loss_corner_variant(const Tensor& offsets,
                                                          const GridGeometry& geometry) {
    return nd_loss_impl(offsets, geometry, true);
}

Tensor nd_loss_backward(const Tensor& offsets, const GridGeometry& geometry, bool corner_variant,
                        double upstream) {
    validate_offsets(offsets);
    const Shape& s = offsets.shape();
    Tensor grad = Tensor::zeros_like(offsets);
    const std::int64_t locations = s.n * s.h * s.w;
    if (locations == 0) return grad;

    std::array<Point, 4> rbase;
    for (std::size_t ci = 0; ci < 4; ++ci) rbase[ci] = corner_base(geometry, kCorners[ci]);

    const double scale = upstream / static_cast<double>(locations);
    for (std::int64_t n = 0; n < s.n; ++n) {
        for (std::int64_t y = 0; y < s.h; ++y) {
            for (std::int64_t x = 0; x < s.w; ++x) {
                auto dx = [&](std::int64_t tap) { return offsets.at(n, 2 * tap, y, x); };
                auto dy = [&](std::int64_t tap) { return offsets.at(n, 2 * tap + 1, y, x); };
                auto gx = [&](std::int64_t tap) -> double& { return grad.at(n, 2 * tap, y, x); };
                auto gy = [&](std::int64_t tap) -> double& { return grad.at(n, 2 * tap + 1, y, x); };

                gx(TAP_E) += 2.0 * dx(TAP_E);
                gy(TAP_E) += 2.0 * dy(TAP_E);
                const double hx = dx(TAP_D) + dx(TAP_F);
                gx(TAP_D) += 2.0 * hx;
                gx(TAP_F) += 2.0 * hx;
                gy(TAP_D) += 2.0 * dy(TAP_D);
                gy(TAP_F) += 2.0 * dy(TAP_F);
                const double vy = dy(TAP_B) + dy(TAP_H);
                gy(TAP_B) += 2.0 * vy;
                gy(TAP_H) += 2.0 * vy;
                gx(TAP_B) += 2.0 * dx(TAP_B);
                gx(TAP_H) += 2.0 * dx(TAP_H);

                for (std::size_t ci = 0; ci < 4; ++ci) {
                    const CornerDef& c = kCorners[ci];
                    double rx = dx(c.edge1) + dx(c.edge2) - dx(TAP_E) + rbase[ci].x;
                    double ry = dy(c.edge1) + dy(c.edge2) - dy(TAP_E) + rbase[ci].y;
                    if (corner_variant) {
                        rx -= dx(c.corner);
                        ry -= dy(c.corner);
                    }
                    gx(c.edge1) += 2.0 * rx;
                    gx(c.edge2) += 2.0 * rx;
                    gx(TAP_E) -= 2.0 * rx;
                    gy(c.edge1) += 2.0 * ry;
                    gy(c.edge2) += 2.0 * ry;
                    gy(TAP_E) -= 2.0 * ry;
                    if (corner_variant) {
                        gx(c.corner) -= 2.0 * rx;
                        gy(c.corner) -= 2.0 * ry;
                    }
                }
            }
        }
    }
    for (std::int64_t i = 0; i < grad.size(); ++i) grad.data()[i] *= scale;
    return grad;
}

UniformityReport uniformity_report(const Tensor& offsets, const GridGeometry& geometry) {
    validate_offsets(offsets);
    const Shape& s = offsets.shape();
    UniformityReport rep;
    const std::int64_t locations = s.n * s.h * s.w;
    if (locations == 0) return rep;

    std::array<Point, 4> rbase;
    for (std::size_t ci = 0; ci < 4; ++ci) rbase[ci] = corner_base(geometry, kCorners[ci]);

    double corner_acc[4] = {0.0, 0.0, 0.0, 0.0};
    double drift = 0.0;
    for (std::int64_t n = 0; n < s.n; ++n) {
        for (std::int64_t y = 0; y < s.h; ++y) {
            for (std::int64_t x = 0; x < s.w; ++x) {
                auto dx = [&](std::int64_t tap) { return offsets.at(n, 2 * tap, y, x); };
                auto dy = [&](std::int64_t tap) { return offsets.at(n, 2 * tap + 1, y, x); };
                drift += std::sqrt(dx(TAP_E) * dx(TAP_E) + dy(TAP_E) * dy(TAP_E));
                for (std::size_t ci = 0; ci < 4; ++ci) {
                    const CornerDef& c = kCorners[ci];
                    // Displaced corner minus the parallelogram completion of
                    // its edges: dCorner - (dE1 + dE2 - dE), bases cancelling.
                    const double rx =
                        dx(c.corner) - (dx(c.edge1) + dx(c.edge2) - dx(TAP_E) + rbase[ci].x);
                    const double ry =
                        dy(c.corner) - (dy(c.edge1) + dy(c.edge2) - dy(TAP_E) + rbase[ci].y);
                    corner_acc[ci] += rx * rx + ry * ry;
                }
            }
        }
    }
    const double inv = 1.0 / static_cast<double>(locations);
    rep.r_A = corner_acc[0] * inv;
    rep.r_C = corner_acc[1] * inv;
    rep.r_G = corner_acc[2] * inv;
    rep.r_I = corner_acc[3] * inv;
    rep.center_drift = drift * inv;
    rep.mean_residual = 0.25 * (rep.r_A + rep.r_C + rep.r_G + rep.r_I);
    return rep;
}

}  // namespace ndconv
