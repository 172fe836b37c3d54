#pragma once

#include <cstdint>
#include <string>

namespace ndconv {

// Worst analytic-vs-central-difference discrepancy found by one component
// suite, with the coordinate where it happened.
struct GradCheckResult {
    std::string component;
    std::string path;        // input path of the worst coordinate, e.g. "offsets"
    std::int64_t index = 0;  // flat index within that path
    double analytic = 0.0;
    double numeric = 0.0;
    double max_rel = 0.0;
    std::int64_t coords = 0;  // total coordinates checked
};

// Each suite runs `trials` random cases (seeds derived from `seed`) and sweeps
// every input coordinate. conv covers conv2d and the density loss; dconv
// covers all four deformable paths with offsets bounded away from integers;
// ndloss covers both regularizer variants.
GradCheckResult gradcheck_conv(std::uint64_t seed, int trials);
GradCheckResult gradcheck_dconv(std::uint64_t seed, int trials);
GradCheckResult gradcheck_ndloss(std::uint64_t seed, int trials);

// 1e-4 for the interpolating components, 1e-6 for the polynomial loss.
double default_gradcheck_tol(const std::string& component);

}  // namespace ndconv
