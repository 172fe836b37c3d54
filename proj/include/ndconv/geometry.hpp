#pragma once

#include <array>
#include <cstdint>

#include "ndconv/error.hpp"

namespace ndconv {

// Number of taps of the 3x3 kernel; offset fields carry 2 channels per tap.
inline constexpr std::int64_t kTaps = 9;
inline constexpr std::int64_t kOffsetChannels = 2 * kTaps;

struct Point {
    double x = 0.0;
    double y = 0.0;

    bool operator==(const Point&) const = default;
};

// Fixed lattice of the nine 3x3 sampling taps a..i (row-major: a b c / d e f /
// g h i). Tap e is the center; corners sit at (+-dilation, +-dilation).
struct GridGeometry {
    std::int64_t kernel_size = 3;
    std::int64_t dilation = 1;

    GridGeometry() = default;
    explicit GridGeometry(std::int64_t dil) : dilation(dil) {
        if (dil < 1) throw ConfigError("GridGeometry: dilation must be >= 1");
    }

    // (x, y) displacement of tap k from the window center.
    std::array<Point, kTaps> base_points() const {
        std::array<Point, kTaps> pts;
        const double d = static_cast<double>(dilation);
        for (std::int64_t k = 0; k < kTaps; ++k) {
            pts[static_cast<std::size_t>(k)] = Point{static_cast<double>(k % 3 - 1) * d,
                                                     static_cast<double>(k / 3 - 1) * d};
        }
        return pts;
    }
};

// Tap indices by name, matching the row-major a..i layout.
enum Tap : std::int64_t { TAP_A = 0, TAP_B, TAP_C, TAP_D, TAP_E, TAP_F, TAP_G, TAP_H, TAP_I };

}  // namespace ndconv
