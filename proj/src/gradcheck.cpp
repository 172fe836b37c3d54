#include "ndconv/gradcheck.hpp"

#include <cmath>
#include <vector>

#include "ndconv/deform.hpp"
#include "ndconv/error.hpp"
#include "ndconv/nd_loss.hpp"
#include "ndconv/ops.hpp"
#include "ndconv/rng.hpp"

namespace ndconv {

namespace {

struct Tracker {
    GradCheckResult r;

    explicit Tracker(const char* component) { r.component = component; }

    void consider(const char* path, std::int64_t index, double analytic, double numeric) {
        ++r.coords;
        const double rel = rel_err(analytic, numeric);
        if (rel > r.max_rel) {
            r.max_rel = rel;
            r.path = path;
            r.index = index;
            r.analytic = analytic;
            r.numeric = numeric;
        }
    }
};

Tensor random_tensor(Shape s, Rng& rng, double lo, double hi) {
    Tensor t(s.n, s.c, s.h, s.w);
    for (std::int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
    return t;
}

double weighted_sum(const Tensor& out, const Tensor& coeffs) {
    double s = 0.0;
    for (std::int64_t i = 0; i < out.size(); ++i) s += coeffs.data()[i] * out.data()[i];
    return s;
}

// Sweeps every coordinate of `t` with central differences of `loss`.
template <typename Fn>
void sweep(Tracker& tracker, const char* path, Tensor& t, const Tensor& analytic, double h,
           const Fn& loss) {
    for (std::int64_t i = 0; i < t.size(); ++i) {
        const double saved = t.data()[i];
        t.data()[i] = saved + h;
        const double lp = loss();
        t.data()[i] = saved - h;
        const double lm = loss();
        t.data()[i] = saved;
        tracker.consider(path, i, analytic.data()[i], (lp - lm) / (2.0 * h));
    }
}

}  // namespace

GradCheckResult gradcheck_conv(std::uint64_t seed, int trials) {
    if (trials < 1) throw ConfigError("gradcheck: trials must be >= 1");
    Tracker tracker("conv");
    const double h = 1e-4;
    for (int t = 0; t < trials; ++t) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
        const std::int64_t n = rng.uniform_int(1, 2);
        const std::int64_t in_c = rng.uniform_int(1, 3);
        const std::int64_t out_c = rng.uniform_int(1, 2);
        const std::int64_t hh = rng.uniform_int(4, 7);
        const std::int64_t ww = rng.uniform_int(4, 7);
        const std::int64_t dilation = rng.uniform_int(1, 2);

        Tensor input = random_tensor({n, in_c, hh, ww}, rng, -1.0, 1.0);
        Tensor weight = random_tensor({out_c, in_c, 3, 3}, rng, -0.7, 0.7);
        std::vector<double> bias(static_cast<std::size_t>(out_c));
        for (double& b : bias) b = rng.uniform(-0.5, 0.5);

        Conv2dNode node;
        Tensor out = conv2d(input, weight, bias, 1, dilation, dilation, &node);
        Tensor coeffs = random_tensor(out.shape(), rng, -1.0, 1.0);
        Conv2dGrads grads = conv2d_backward(coeffs, node);

        auto conv_loss = [&]() {
            return weighted_sum(conv2d(input, weight, bias, 1, dilation, dilation), coeffs);
        };
        sweep(tracker, "input", input, grads.input, h, conv_loss);
        sweep(tracker, "weight", weight, grads.weight, h, conv_loss);
        for (std::int64_t oc = 0; oc < out_c; ++oc) {
            const double saved = bias[static_cast<std::size_t>(oc)];
            bias[static_cast<std::size_t>(oc)] = saved + h;
            const double lp = conv_loss();
            bias[static_cast<std::size_t>(oc)] = saved - h;
            const double lm = conv_loss();
            bias[static_cast<std::size_t>(oc)] = saved;
            tracker.consider("bias", oc, grads.bias[static_cast<std::size_t>(oc)],
                             (lp - lm) / (2.0 * h));
        }

        // the density loss head
        Tensor pred = random_tensor({n, 1, hh, ww}, rng, -0.5, 0.5);
        Tensor target = random_tensor(pred.shape(), rng, 0.0, 0.2);
        MseNode mse_node;
        mse_density_loss(pred, target, &mse_node);
        Tensor mse_grad = mse_density_loss_backward(mse_node);
        sweep(tracker, "mse.pred", pred, mse_grad, h,
              [&]() { return mse_density_loss(pred, target); });
    }
    return tracker.r;
}

GradCheckResult gradcheck_dconv(std::uint64_t seed, int trials) {
    if (trials < 1) throw ConfigError("gradcheck: trials must be >= 1");
    Tracker tracker("dconv");
    const double h = 1e-4;
    for (int t = 0; t < trials; ++t) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
        const std::int64_t n = rng.uniform_int(1, 2);
        const std::int64_t in_c = rng.uniform_int(1, 2);
        const std::int64_t out_c = rng.uniform_int(1, 2);
        const std::int64_t hh = rng.uniform_int(5, 7);
        const std::int64_t ww = rng.uniform_int(5, 7);
        const GridGeometry geom(rng.uniform_int(1, 2));

        Tensor input = random_tensor({n, in_c, hh, ww}, rng, -1.0, 1.0);
        // fractional parts in (0.2, 0.45) either side: h steps cannot cross a
        // bilinear cell boundary
        Tensor offsets(n, kOffsetChannels, hh, ww);
        for (std::int64_t i = 0; i < offsets.size(); ++i) {
            const double mag = rng.uniform(0.2, 0.45);
            offsets.data()[i] = rng.uniform() < 0.5 ? -mag : mag;
        }
        Tensor weight = random_tensor({out_c, in_c, 3, 3}, rng, -0.7, 0.7);
        std::vector<double> bias(static_cast<std::size_t>(out_c));
        for (double& b : bias) b = rng.uniform(-0.5, 0.5);

        DeformNode node;
        Tensor out = deform_conv2d(input, offsets, weight, bias, geom, &node);
        Tensor coeffs = random_tensor(out.shape(), rng, -1.0, 1.0);
        DeformGrads grads = deform_conv2d_backward(coeffs, node);

        auto loss = [&]() {
            return weighted_sum(deform_conv2d(input, offsets, weight, bias, geom), coeffs);
        };
        sweep(tracker, "input", input, grads.input, h, loss);
        sweep(tracker, "offsets", offsets, grads.offsets, h, loss);
        sweep(tracker, "weight", weight, grads.weight, h, loss);
        for (std::int64_t oc = 0; oc < out_c; ++oc) {
            const double saved = bias[static_cast<std::size_t>(oc)];
            bias[static_cast<std::size_t>(oc)] = saved + h;
            const double lp = loss();
            bias[static_cast<std::size_t>(oc)] = saved - h;
            const double lm = loss();
            bias[static_cast<std::size_t>(oc)] = saved;
            tracker.consider("bias", oc, grads.bias[static_cast<std::size_t>(oc)],
                             (lp - lm) / (2.0 * h));
        }
    }
    return tracker.r;
}

GradCheckResult gradcheck_ndloss(std::uint64_t seed, int trials) {
    if (trials < 1) throw ConfigError("gradcheck: trials must be >= 1");
    Tracker tracker("ndloss");
    const double h = 1e-5;
    for (int t = 0; t < trials; ++t) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
        const std::int64_t n = rng.uniform_int(1, 2);
        const std::int64_t hh = rng.uniform_int(3, 5);
        const std::int64_t ww = rng.uniform_int(3, 5);
        const GridGeometry geom(rng.uniform_int(1, 3));

        Tensor offsets(n, kOffsetChannels, hh, ww);
        for (std::int64_t i = 0; i < offsets.size(); ++i) offsets.data()[i] = rng.normal(0.0, 0.7);

        for (bool corner : {false, true}) {
            Tensor analytic = nd_loss_backward(offsets, geom, corner);
            auto loss = [&]() {
                return (corner ? nd_loss_corner_variant(offsets, geom) : nd_loss(offsets, geom))
                    .first;
            };
            sweep(tracker, corner ? "offsets.corner" : "offsets", offsets, analytic, h, loss);
        }
    }
    return tracker.r;
}

double default_gradcheck_tol(const std::string& component) {
    if (component == "ndloss") return 1e-6;
    if (component == "conv" || component == "dconv") return 1e-4;
    throw ConfigError("gradcheck: unknown component " + component);
}

}  // namespace ndconv
