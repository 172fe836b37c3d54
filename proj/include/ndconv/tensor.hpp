#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ndconv/error.hpp"

namespace ndconv {

struct Shape {
    std::int64_t n = 0;
    std::int64_t c = 0;
    std::int64_t h = 0;
    std::int64_t w = 0;

    std::int64_t count() const { return n * c * h * w; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

// Dense 4-D array in NCHW row-major order. Doubles in memory; the file format
// (see tensor_io) is 32-bit.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w, double fill = 0.0);

    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_.n, t.shape_.c, t.shape_.h, t.shape_.w); }

    const Shape& shape() const { return shape_; }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    std::int64_t index(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) const {
        return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }

    double& at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) { return data_[index(n, c, y, x)]; }
    double at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) const { return data_[index(n, c, y, x)]; }

    // Pointer to the (n, c) spatial plane of h*w contiguous values.
    double* plane(std::int64_t n, std::int64_t c) { return data_.data() + (n * shape_.c + c) * shape_.h * shape_.w; }
    const double* plane(std::int64_t n, std::int64_t c) const {
        return data_.data() + (n * shape_.c + c) * shape_.h * shape_.w;
    }

    void fill(double v);
    bool all_finite() const;
    double sum() const;  // compensated (Neumaier) summation

    // Rounds every element through float32. Parameter/optimizer state is kept
    // float32-representable at all times so that checkpoint files (which store
    // 32-bit values) round-trip bit-exactly.
    void quantize_f32();

    bool operator==(const Tensor&) const = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

void check_same_shape(const Tensor& a, const Tensor& b, const char* what);

// --- serialization -----------------------------------------------------------
//
// Format: one UTF-8 header line "n c h w\n" followed by n*c*h*w little-endian
// IEEE-754 32-bit floats. Shared by dataset files and checkpoints.

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is, const std::string& path_for_errors, std::size_t base_offset = 0);

void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

}  // namespace ndconv
