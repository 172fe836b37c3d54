#pragma once

#include <vector>

#include "ndconv/geometry.hpp"
#include "ndconv/tensor.hpp"

namespace ndconv {

// Bilinear read of one spatial plane at real coordinates (x, y), zero outside:
// samples with no in-range neighbor evaluate to 0, partial overlap treats the
// missing neighbors as 0. Total function, no exceptions.
double bilinear_sample(const double* plane, std::int64_t h, std::int64_t w, double x, double y);

// Same read plus the derivatives of the sampled value w.r.t. x and y (one-sided
// at exact-integer coordinates, from the floor() cell).
double bilinear_sample_grad(const double* plane, std::int64_t h, std::int64_t w, double x, double y,
                            double* dvdx, double* dvdy);

struct DeformNode {
    Tensor input;
    Tensor offsets;
    Tensor weight;  // (out_c, in_c, 3, 3)
    GridGeometry geometry;
    std::int64_t bias_size = 0;
    bool saved = false;
};

struct DeformGrads {
    Tensor input;
    Tensor offsets;
    Tensor weight;
    std::vector<double> bias;
};

// Deformable 3x3 convolution, stride 1, padding = dilation (spatial dims are
// preserved). offsets is an (n, 18, h, w) field, channels [2k, 2k+1] holding
// the (dx, dy) displacement of tap k from its base grid point. With all-zero
// offsets this reproduces conv2d with the same dilation bit-exactly (shared
// accumulation contract, see ops.hpp).
Tensor deform_conv2d(const Tensor& input, const Tensor& offsets, const Tensor& weight,
                     const std::vector<double>& bias, const GridGeometry& geometry,
                     DeformNode* node = nullptr);

DeformGrads deform_conv2d_backward(const Tensor& grad_out, const DeformNode& saved);

}  // namespace ndconv
