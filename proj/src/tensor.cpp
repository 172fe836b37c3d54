#include "ndconv/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace ndconv {

std::string Shape::str() const {
    std::ostringstream os;
    os << n << "x" << c << "x" << h << "x" << w;
    return os.str();
}

Tensor::Tensor(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w, double fill) {
    if (n < 0 || c < 0 || h < 0 || w < 0)
        throw ShapeError("tensor dims must be nonnegative, got " + Shape{n, c, h, w}.str());
    shape_ = Shape{n, c, h, w};
    data_.assign(static_cast<std::size_t>(shape_.count()), fill);
}

void Tensor::fill(double v) {
    for (double& x : data_) x = v;
}

bool Tensor::all_finite() const {
    for (double x : data_)
        if (!std::isfinite(x)) return false;
    return true;
}

double Tensor::sum() const {
    double s = 0.0, comp = 0.0;
    for (double x : data_) {
        double t = s + x;
        if (std::abs(s) >= std::abs(x))
            comp += (s - t) + x;
        else
            comp += (x - t) + s;
        s = t;
    }
    return s + comp;
}

void Tensor::quantize_f32() {
    for (double& x : data_) x = static_cast<double>(static_cast<float>(x));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!(a.shape() == b.shape()))
        throw ShapeError(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
}

// --- serialization -----------------------------------------------------------

void write_tensor(std::ostream& os, const Tensor& t) {
    const Shape& s = t.shape();
    os << s.n << " " << s.c << " " << s.h << " " << s.w << "\n";
    std::vector<unsigned char> buf(static_cast<std::size_t>(t.size()) * 4);
    for (std::int64_t i = 0; i < t.size(); ++i) {
        const std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(t.data()[i]));
        buf[4 * i + 0] = static_cast<unsigned char>(bits & 0xff);
        buf[4 * i + 1] = static_cast<unsigned char>((bits >> 8) & 0xff);
        buf[4 * i + 2] = static_cast<unsigned char>((bits >> 16) & 0xff);
        buf[4 * i + 3] = static_cast<unsigned char>((bits >> 24) & 0xff);
    }
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

Tensor read_tensor(std::istream& is, const std::string& path, std::size_t base_offset) {
    std::string header;
    std::size_t pos = base_offset;
    char ch;
    while (is.get(ch)) {
        ++pos;
        if (ch == '\n') break;
        header.push_back(ch);
        if (header.size() > 128) throw ParseError(path, pos, "tensor header line too long");
    }
    if (header.empty() || is.fail()) throw ParseError(path, pos, "missing tensor header");

    std::istringstream hs(header);
    std::int64_t n, c, h, w;
    if (!(hs >> n >> c >> h >> w)) throw ParseError(path, base_offset, "tensor header is not 'n c h w'");
    std::string trailing;
    if (hs >> trailing) throw ParseError(path, base_offset, "trailing content in tensor header");
    if (n < 0 || c < 0 || h < 0 || w < 0) throw ParseError(path, base_offset, "negative tensor dimension");

    Tensor t(n, c, h, w);
    const std::int64_t count = t.size();
    std::vector<unsigned char> buf(static_cast<std::size_t>(count) * 4);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (is.gcount() != static_cast<std::streamsize>(buf.size()))
        throw ParseError(path, pos + static_cast<std::size_t>(is.gcount()), "truncated tensor payload");
    for (std::int64_t i = 0; i < count; ++i) {
        const std::uint32_t bits = static_cast<std::uint32_t>(buf[4 * i]) |
                                   (static_cast<std::uint32_t>(buf[4 * i + 1]) << 8) |
                                   (static_cast<std::uint32_t>(buf[4 * i + 2]) << 16) |
                                   (static_cast<std::uint32_t>(buf[4 * i + 3]) << 24);
        const float v = std::bit_cast<float>(bits);
        if (!std::isfinite(v)) throw ParseError(path, pos + static_cast<std::size_t>(i) * 4, "nonfinite tensor value");
        t.data()[i] = static_cast<double>(v);
    }
    return t;
}

void save_tensor(const std::string& path, const Tensor& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ParseError(path, 0, "cannot open for writing");
    write_tensor(f, t);
    if (!f) throw ParseError(path, 0, "write failed");
}

Tensor load_tensor(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ParseError(path, 0, "cannot open for reading");
    Tensor t = read_tensor(f, path);
    // Reject trailing garbage so truncation/corruption cannot hide.
    char extra;
    if (f.get(extra)) throw ParseError(path, static_cast<std::size_t>(f.tellg()) - 1, "trailing bytes after tensor payload");
    return t;
}

}  // namespace ndconv
