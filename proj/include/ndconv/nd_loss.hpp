#pragma once

#include <utility>

#include "ndconv/geometry.hpp"
#include "ndconv/tensor.hpp"

namespace ndconv {

// Per-component decomposition of the offset-regularity loss. total is always
// the exact sum of the seven components.
struct NdLossBreakdown {
    double l_e = 0.0;    // center drift: |dE|^2
    double l_hor = 0.0;  // horizontal taps D, F symmetric about the center
    double l_vec = 0.0;  // vertical taps B, H symmetric about the center
    double l_A = 0.0;    // parallelogram closure at each corner
    double l_C = 0.0;
    double l_G = 0.0;
    double l_I = 0.0;
    double total = 0.0;
};

// Regularity loss over an (n, 18, h, w) offset field, averaged over batch and
// spatial locations. Per location:
//   L_e   = dEx^2 + dEy^2
//   L_hor = (dDx + dFx)^2 + dDy^2 + dFy^2
//   L_vec = (dBy + dHy)^2 + dBx^2 + dHx^2
//   L_A   = |(d + dD) + (b + dB) - (e + dE) - a|^2   (and symmetrically C, G, I)
// The corner terms reference the undisplaced corner taps, so the corner offsets
// dA, dC, dG, dI do not participate (their gradient is identically zero); the
// base-point contributions cancel exactly for every dilation.
std::pair<double, NdLossBreakdown> nd_loss(const Tensor& offsets, const GridGeometry& geometry);

// Variant in which each corner term subtracts the displaced corner instead,
// e.g. L_A = |(d + dD) + (b + dB) - (e + dE) - (a + dA)|^2, so corner offsets
// are pulled toward the parallelogram completion of their edges.
std::pair<double, NdLossBreakdown> nd_loss_corner_variant(const Tensor& offsets,
                                                          const GridGeometry& geometry);

// Exact analytic gradient of the chosen variant, times upstream.
Tensor nd_loss_backward(const Tensor& offsets, const GridGeometry& geometry,
                        bool corner_variant = false, double upstream = 1.0);

// Diagnostic of how close the sampled pattern is to a centered parallelogram
// family: squared distance of each displaced corner from the position implied
// by its two edges and the center, plus the mean center displacement.
struct UniformityReport {
    double mean_residual = 0.0;  // mean of the four corner residual means
    double r_A = 0.0;
    double r_C = 0.0;
    double r_G = 0.0;
    double r_I = 0.0;
    double center_drift = 0.0;  // mean |dE|
};

UniformityReport uniformity_report(const Tensor& offsets, const GridGeometry& geometry);

}  // namespace ndconv
