#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "ndconv/tensor.hpp"

namespace ndconv {

// Saved activations for conv2d_backward. Forward fills it when a node pointer
// is supplied; backward refuses to run on a node that was never filled.
struct Conv2dNode {
    Tensor input;
    Tensor weight;  // (out_c, in_c, kh, kw)
    std::int64_t stride = 1;
    std::int64_t padding = 0;
    std::int64_t dilation = 1;
    std::int64_t bias_size = 0;
    bool saved = false;
};

struct Conv2dGrads {
    Tensor input;
    Tensor weight;
    std::vector<double> bias;
};

// Cross-correlation (no kernel flip), zero padding, square kernel.
// Accumulation contract shared with deform_conv2d: each output element starts
// at bias[oc] and folds in contributions with std::fma in (in_c, tap-row-major)
// order, so a zero-offset deformable pass reproduces this bit-for-bit.
Tensor conv2d(const Tensor& input, const Tensor& weight, const std::vector<double>& bias,
              std::int64_t stride, std::int64_t padding, std::int64_t dilation,
              Conv2dNode* node = nullptr);

Conv2dGrads conv2d_backward(const Tensor& grad_out, const Conv2dNode& saved);

struct ReluNode {
    Tensor input;
    bool saved = false;
};

Tensor relu(const Tensor& input, ReluNode* node = nullptr);
// Subgradient at 0 is 0 (mask is input > 0).
Tensor relu_backward(const Tensor& grad_out, const ReluNode& saved);

struct MseNode {
    Tensor pred;
    Tensor target;
    bool saved = false;
};

// Eq-style density loss: (1/(2N)) * sum((pred - target)^2), N = batch size.
double mse_density_loss(const Tensor& pred, const Tensor& target, MseNode* node = nullptr);
// d loss / d pred = upstream * (pred - target) / N.
Tensor mse_density_loss_backward(const MseNode& saved, double upstream = 1.0);

// Central-difference gradient oracle: (f(x+h) - f(x-h)) / (2h) per element.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& scalar_fn,
                        const Tensor& at, double step);

// Relative error convention used by all gradient checks.
inline double rel_err(double analytic, double numeric) {
    double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
    return std::abs(analytic - numeric) / denom;
}

}  // namespace ndconv
