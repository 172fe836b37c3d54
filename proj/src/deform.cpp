#include "ndconv/deform.hpp"

#include <cmath>

#include "ndconv/error.hpp"

namespace ndconv {

double bilinear_sample(const double* plane, std::int64_t h, std::int64_t w, double x, double y) {
    if (x <= -1.0 || x >= static_cast<double>(w) || y <= -1.0 || y >= static_cast<double>(h))
        return 0.0;
    const std::int64_t x0 = static_cast<std::int64_t>(std::floor(x));
    const std::int64_t y0 = static_cast<std::int64_t>(std::floor(y));
    const double fx = x - static_cast<double>(x0);
    const double fy = y - static_cast<double>(y0);
    // Exact-integer coordinates return the pixel itself so that a zero-offset
    // deformable pass is bit-identical to the padded standard convolution.
    if (fx == 0.0 && fy == 0.0)
        return (x0 >= 0 && x0 < w && y0 >= 0 && y0 < h) ? plane[y0 * w + x0] : 0.0;
    const bool x0in = x0 >= 0 && x0 < w, x1in = x0 + 1 >= 0 && x0 + 1 < w;
    const bool y0in = y0 >= 0 && y0 < h, y1in = y0 + 1 >= 0 && y0 + 1 < h;
    const double v00 = (x0in && y0in) ? plane[y0 * w + x0] : 0.0;
    const double v10 = (x1in && y0in) ? plane[y0 * w + x0 + 1] : 0.0;
    const double v01 = (x0in && y1in) ? plane[(y0 + 1) * w + x0] : 0.0;
    const double v11 = (x1in && y1in) ? plane[(y0 + 1) * w + x0 + 1] : 0.0;
    return (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11);
}

double bilinear_sample_grad(const double* plane, std::int64_t h, std::int64_t w, double x, double y,
                            double* dvdx, double* dvdy) {
    if (x <= -1.0 || x >= static_cast<double>(w) || y <= -1.0 || y >= static_cast<double>(h)) {
        *dvdx = 0.0;
        *dvdy = 0.0;
        return 0.0;
    }
    const std::int64_t x0 = static_cast<std::int64_t>(std::floor(x));
    const std::int64_t y0 = static_cast<std::int64_t>(std::floor(y));
    const double fx = x - static_cast<double>(x0);
    const double fy = y - static_cast<double>(y0);
    const bool x0in = x0 >= 0 && x0 < w, x1in = x0 + 1 >= 0 && x0 + 1 < w;
    const bool y0in = y0 >= 0 && y0 < h, y1in = y0 + 1 >= 0 && y0 + 1 < h;
    const double v00 = (x0in && y0in) ? plane[y0 * w + x0] : 0.0;
    const double v10 = (x1in && y0in) ? plane[y0 * w + x0 + 1] : 0.0;
    const double v01 = (x0in && y1in) ? plane[(y0 + 1) * w + x0] : 0.0;
    const double v11 = (x1in && y1in) ? plane[(y0 + 1) * w + x0 + 1] : 0.0;
    *dvdx = (1.0 - fy) * (v10 - v00) + fy * (v11 - v01);
    *dvdy = (1.0 - fx) * (v01 - v00) + fx * (v11 - v10);
    if (fx == 0.0 && fy == 0.0) return (x0in && y0in) ? plane[y0 * w + x0] : 0.0;
    return (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11);
}

namespace {

// Bilinear cell for one tap position, shared by every input channel at a
// pixel: floor cell index, fractional coordinates, and corner validity.
struct TapCell {
    std::int64_t idx = 0;  // y0 * w + x0; dereferenced only under a corner flag
    double fx = 0.0, fy = 0.0;
    bool outside = false, exact = false;
    bool c00 = false, c10 = false, c01 = false, c11 = false;
};

inline void fill_cell(TapCell& c, double sx, double sy, std::int64_t h, std::int64_t w) {
    if (sx <= -1.0 || sx >= static_cast<double>(w) || sy <= -1.0 || sy >= static_cast<double>(h)) {
        c.outside = true;
        c.exact = false;
        c.c00 = c.c10 = c.c01 = c.c11 = false;
        c.fx = c.fy = 0.0;
        c.idx = 0;
        return;
    }
    const std::int64_t x0 = static_cast<std::int64_t>(std::floor(sx));
    const std::int64_t y0 = static_cast<std::int64_t>(std::floor(sy));
    c.outside = false;
    c.fx = sx - static_cast<double>(x0);
    c.fy = sy - static_cast<double>(y0);
    c.exact = c.fx == 0.0 && c.fy == 0.0;
    c.idx = y0 * w + x0;
    const bool x0in = x0 >= 0 && x0 < w, x1in = x0 + 1 >= 0 && x0 + 1 < w;
    const bool y0in = y0 >= 0 && y0 < h, y1in = y0 + 1 >= 0 && y0 + 1 < h;
    c.c00 = x0in && y0in;
    c.c10 = x1in && y0in;
    c.c01 = x0in && y1in;
    c.c11 = x1in && y1in;
}

// Same value, branch for branch, as bilinear_sample.
inline double cell_sample(const TapCell& c, const double* __restrict plane, std::int64_t w) {
    if (c.outside) return 0.0;
    if (c.exact) return c.c00 ? plane[c.idx] : 0.0;
    const double fx = c.fx, fy = c.fy;
    const double v00 = c.c00 ? plane[c.idx] : 0.0;
    const double v10 = c.c10 ? plane[c.idx + 1] : 0.0;
    const double v01 = c.c01 ? plane[c.idx + w] : 0.0;
    const double v11 = c.c11 ? plane[c.idx + w + 1] : 0.0;
    return (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11);
}

// Same values as bilinear_sample_grad.
inline double cell_sample_grad(const TapCell& c, const double* __restrict plane, std::int64_t w,
                               double* dvdx, double* dvdy) {
    if (c.outside) {
        *dvdx = 0.0;
        *dvdy = 0.0;
        return 0.0;
    }
    const double fx = c.fx, fy = c.fy;
    const double v00 = c.c00 ? plane[c.idx] : 0.0;
    const double v10 = c.c10 ? plane[c.idx + 1] : 0.0;
    const double v01 = c.c01 ? plane[c.idx + w] : 0.0;
    const double v11 = c.c11 ? plane[c.idx + w + 1] : 0.0;
    *dvdx = (1.0 - fy) * (v10 - v00) + fy * (v11 - v01);
    *dvdy = (1.0 - fx) * (v01 - v00) + fx * (v11 - v10);
    if (c.exact) return c.c00 ? plane[c.idx] : 0.0;
    return (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11);
}

void validate_deform_args(const Tensor& input, const Tensor& offsets, const Tensor& weight,
                          const std::vector<double>& bias, const GridGeometry& geometry) {
    const Shape& is = input.shape();
    const Shape& ws = weight.shape();
    const Shape& os = offsets.shape();
    if (geometry.kernel_size != 3) throw ConfigError("deform_conv2d: kernel size is fixed to 3");
    if (ws.h != 3 || ws.w != 3) throw ShapeError("deform_conv2d: weight must be (out_c, in_c, 3, 3)");
    if (ws.c != is.c)
        throw ShapeError("deform_conv2d: weight in_c " + std::to_string(ws.c) + " != input c " +
                         std::to_string(is.c));
    if (static_cast<std::int64_t>(bias.size()) != ws.n)
        throw ShapeError("deform_conv2d: bias size mismatch");
    if (os.c != kOffsetChannels)
        throw ShapeError("deform_conv2d: offset field must have 18 channels, got " +
                         std::to_string(os.c));
    // stride 1, padding = dilation: output dims equal input dims.
    if (os.n != is.n || os.h != is.h || os.w != is.w)
        throw ShapeError("deform_conv2d: offsets " + os.str() + " do not match output dims of input " +
                         is.str());
}

}  // namespace

Tensor deform_conv2d(const Tensor& input, const Tensor& offsets, const Tensor& weight,
                     const std::vector<double>& bias, const GridGeometry& geometry,
                     DeformNode* node) {
    validate_deform_args(input, offsets, weight, bias, geometry);
    const Shape& is = input.shape();
    const Shape& ws = weight.shape();
    Tensor out(is.n, ws.n, is.h, is.w);
    const auto base = geometry.base_points();

    std::vector<double> samples(static_cast<std::size_t>(is.c * kTaps));
    std::vector<const double*> in_planes(static_cast<std::size_t>(is.c));
    std::vector<const double*> off_planes(static_cast<std::size_t>(kOffsetChannels));
    std::vector<double*> out_planes(static_cast<std::size_t>(ws.n));
    TapCell cells[kTaps];
    for (std::int64_t n = 0; n < is.n; ++n) {
        for (std::int64_t ic = 0; ic < is.c; ++ic)
            in_planes[static_cast<std::size_t>(ic)] = input.plane(n, ic);
        for (std::int64_t c = 0; c < kOffsetChannels; ++c)
            off_planes[static_cast<std::size_t>(c)] = offsets.plane(n, c);
        for (std::int64_t oc = 0; oc < ws.n; ++oc)
            out_planes[static_cast<std::size_t>(oc)] = out.plane(n, oc);
        for (std::int64_t y = 0; y < is.h; ++y) {
            for (std::int64_t x = 0; x < is.w; ++x) {
                const std::int64_t pos = y * is.w + x;
                // Sampling positions are shared across input channels; resolve
                // each tap's bilinear cell once, then gather all (ic, tap) reads.
                for (std::int64_t k = 0; k < kTaps; ++k) {
                    const std::size_t ku = static_cast<std::size_t>(k);
                    const double sx =
                        static_cast<double>(x) + base[ku].x + off_planes[2 * ku][pos];
                    const double sy =
                        static_cast<double>(y) + base[ku].y + off_planes[2 * ku + 1][pos];
                    fill_cell(cells[ku], sx, sy, is.h, is.w);
                }
                for (std::int64_t ic = 0; ic < is.c; ++ic) {
                    const double* plane = in_planes[static_cast<std::size_t>(ic)];
                    double* srow = samples.data() + ic * kTaps;
                    for (std::int64_t k = 0; k < kTaps; ++k)
                        srow[k] = cell_sample(cells[static_cast<std::size_t>(k)], plane, is.w);
                }
                for (std::int64_t oc = 0; oc < ws.n; ++oc) {
                    // Same per-element accumulation order as conv2d: bias, then
                    // (ic, tap) row-major, each folded in with fma.
                    double acc = bias[static_cast<std::size_t>(oc)];
                    const double* wts = weight.plane(oc, 0);
                    for (std::int64_t j = 0; j < is.c * kTaps; ++j)
                        acc = std::fma(wts[j], samples[static_cast<std::size_t>(j)], acc);
                    out_planes[static_cast<std::size_t>(oc)][pos] = acc;
                }
            }
        }
    }

    if (node) {
        node->input = input;
        node->offsets = offsets;
        node->weight = weight;
        node->geometry = geometry;
        node->bias_size = ws.n;
        node->saved = true;
    }
    return out;
}

DeformGrads deform_conv2d_backward(const Tensor& grad_out, const DeformNode& saved) {
    if (!saved.saved) throw ContractError("deform_conv2d_backward: node has no saved activations");
    const Tensor& input = saved.input;
    const Tensor& offsets = saved.offsets;
    const Tensor& weight = saved.weight;
    const Shape& is = input.shape();
    const Shape& ws = weight.shape();
    if (!(grad_out.shape() == Shape{is.n, ws.n, is.h, is.w}))
        throw ShapeError("deform_conv2d_backward: grad_out shape " + grad_out.shape().str() +
                         " != forward output " + Shape{is.n, ws.n, is.h, is.w}.str());

    DeformGrads g{Tensor::zeros_like(input), Tensor::zeros_like(offsets), Tensor::zeros_like(weight),
                  std::vector<double>(static_cast<std::size_t>(ws.n), 0.0)};
    const auto base = saved.geometry.base_points();

    const std::int64_t cj = is.c * kTaps;
    std::vector<double> val(static_cast<std::size_t>(cj));
    std::vector<double> dvx(static_cast<std::size_t>(cj));
    std::vector<double> dvy(static_cast<std::size_t>(cj));
    std::vector<double> s_acc(static_cast<std::size_t>(cj));
    std::vector<const double*> in_planes(static_cast<std::size_t>(is.c));
    std::vector<double*> gi_planes(static_cast<std::size_t>(is.c));
    std::vector<const double*> off_planes(static_cast<std::size_t>(kOffsetChannels));
    std::vector<double*> goff_planes(static_cast<std::size_t>(kOffsetChannels));
    std::vector<const double*> go_planes(static_cast<std::size_t>(ws.n));
    TapCell cells[kTaps];

    for (std::int64_t n = 0; n < is.n; ++n) {
        for (std::int64_t ic = 0; ic < is.c; ++ic) {
            in_planes[static_cast<std::size_t>(ic)] = input.plane(n, ic);
            gi_planes[static_cast<std::size_t>(ic)] = g.input.plane(n, ic);
        }
        for (std::int64_t c = 0; c < kOffsetChannels; ++c) {
            off_planes[static_cast<std::size_t>(c)] = offsets.plane(n, c);
            goff_planes[static_cast<std::size_t>(c)] = g.offsets.plane(n, c);
        }
        for (std::int64_t oc = 0; oc < ws.n; ++oc)
            go_planes[static_cast<std::size_t>(oc)] = grad_out.plane(n, oc);
        for (std::int64_t y = 0; y < is.h; ++y) {
            for (std::int64_t x = 0; x < is.w; ++x) {
                const std::int64_t pos = y * is.w + x;
                for (std::int64_t k = 0; k < kTaps; ++k) {
                    const std::size_t ku = static_cast<std::size_t>(k);
                    const double sx =
                        static_cast<double>(x) + base[ku].x + off_planes[2 * ku][pos];
                    const double sy =
                        static_cast<double>(y) + base[ku].y + off_planes[2 * ku + 1][pos];
                    fill_cell(cells[ku], sx, sy, is.h, is.w);
                }
                for (std::int64_t ic = 0; ic < is.c; ++ic) {
                    const double* plane = in_planes[static_cast<std::size_t>(ic)];
                    for (std::int64_t k = 0; k < kTaps; ++k) {
                        const std::size_t j = static_cast<std::size_t>(ic * kTaps + k);
                        val[j] = cell_sample_grad(cells[static_cast<std::size_t>(k)], plane, is.w,
                                                  &dvx[j], &dvy[j]);
                    }
                }
                // Fold output channels first: bias and weight gradients, plus
                // s_acc[j] = sum_oc go * w[oc][j], the factor shared by the
                // offset and input gradients.
                std::fill(s_acc.begin(), s_acc.end(), 0.0);
                for (std::int64_t oc = 0; oc < ws.n; ++oc) {
                    const double go = go_planes[static_cast<std::size_t>(oc)][pos];
                    g.bias[static_cast<std::size_t>(oc)] += go;
                    const double* __restrict wts = weight.plane(oc, 0);
                    double* __restrict gwts = g.weight.plane(oc, 0);
                    double* __restrict sa = s_acc.data();
                    const double* __restrict vj = val.data();
                    for (std::int64_t j = 0; j < cj; ++j) {
                        gwts[j] = std::fma(go, vj[j], gwts[j]);
                        sa[j] = std::fma(go, wts[j], sa[j]);
                    }
                }
                // Scatter weights per tap, shared across input channels.
                double sw00[kTaps], sw10[kTaps], sw01[kTaps], sw11[kTaps];
                double gx9[kTaps] = {0.0}, gy9[kTaps] = {0.0};
                for (std::int64_t k = 0; k < kTaps; ++k) {
                    const TapCell& c = cells[static_cast<std::size_t>(k)];
                    sw00[k] = (1.0 - c.fx) * (1.0 - c.fy);
                    sw10[k] = c.fx * (1.0 - c.fy);
                    sw01[k] = (1.0 - c.fx) * c.fy;
                    sw11[k] = c.fx * c.fy;
                }
                for (std::int64_t ic = 0; ic < is.c; ++ic) {
                    double* gplane = gi_planes[static_cast<std::size_t>(ic)];
                    for (std::int64_t k = 0; k < kTaps; ++k) {
                        const std::size_t j = static_cast<std::size_t>(ic * kTaps + k);
                        const double s = s_acc[j];
                        gx9[k] = std::fma(s, dvx[j], gx9[k]);
                        gy9[k] = std::fma(s, dvy[j], gy9[k]);
                        const TapCell& c = cells[static_cast<std::size_t>(k)];
                        if (c.outside || s == 0.0) continue;
                        // Scatter into the four bilinear neighbors.
                        if (c.c00) gplane[c.idx] = std::fma(s, sw00[k], gplane[c.idx]);
                        if (c.c10) gplane[c.idx + 1] = std::fma(s, sw10[k], gplane[c.idx + 1]);
                        if (c.c01) gplane[c.idx + is.w] = std::fma(s, sw01[k], gplane[c.idx + is.w]);
                        if (c.c11)
                            gplane[c.idx + is.w + 1] = std::fma(s, sw11[k], gplane[c.idx + is.w + 1]);
                    }
                }
                for (std::int64_t k = 0; k < kTaps; ++k) {
                    goff_planes[static_cast<std::size_t>(2 * k)][pos] += gx9[k];
                    goff_planes[static_cast<std::size_t>(2 * k + 1)][pos] += gy9[k];
                }
            }
        }
    }
    return g;
}

}  // namespace ndconv
