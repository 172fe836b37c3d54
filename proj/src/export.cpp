#include "ndconv/export.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "ndconv/error.hpp"

using nlohmann::json;

namespace ndconv {

namespace {

void check_offset_field(const Tensor& offsets, const char* what) {
    const Shape& s = offsets.shape();
    if (s.n != 1)
        throw ShapeError(std::string(what) + ": expected a single image, got batch " +
                         std::to_string(s.n));
    if (s.c != kOffsetChannels)
        throw ShapeError(std::string(what) + ": expected " + std::to_string(kOffsetChannels) +
                         " offset channels, got " + std::to_string(s.c));
}

}  // namespace

json offset_positions_json(const Tensor& offsets, const GridGeometry& geom,
                           std::int64_t grid_step) {
    check_offset_field(offsets, "offset export");
    if (grid_step < 1) throw ConfigError("offset export: grid step must be >= 1");
    const Shape& s = offsets.shape();
    const auto base = geom.base_points();

    json geometry;
    geometry["kernel_size"] = geom.kernel_size;
    geometry["dilation"] = geom.dilation;
    json base_json = json::array();
    for (const Point& p : base) base_json.push_back(json::array({p.x, p.y}));
    geometry["base_points"] = base_json;

    json locations = json::array();
    for (std::int64_t y = 0; y < s.h; y += grid_step) {
        for (std::int64_t x = 0; x < s.w; x += grid_step) {
            json positions = json::array();
            for (int k = 0; k < kTaps; ++k) {
                const double px =
                    static_cast<double>(x) + base[k].x + offsets.at(0, 2 * k, y, x);
                const double py =
                    static_cast<double>(y) + base[k].y + offsets.at(0, 2 * k + 1, y, x);
                positions.push_back(json::array({px, py}));
            }
            locations.push_back(json{{"x", x}, {"y", y}, {"positions", positions}});
        }
    }

    json out;
    out["v"] = 1;
    out["h"] = s.h;
    out["w"] = s.w;
    out["grid_step"] = grid_step;
    out["geometry"] = geometry;
    out["locations"] = locations;
    return out;
}

json uniformity_json(const UniformityReport& report) {
    return json{{"v", 1},
                {"mean_residual", report.mean_residual},
                {"r_A", report.r_A},
                {"r_C", report.r_C},
                {"r_G", report.r_G},
                {"r_I", report.r_I},
                {"center_drift", report.center_drift}};
}

void write_pgm16(const std::string& path, const Tensor& density) {
    const Shape& s = density.shape();
    if (s.n != 1 || s.c != 1)
        throw ShapeError("pgm: expected a (1, 1, h, w) map, got " + s.str());
    if (!density.all_finite()) throw NumericError("pgm: nonfinite density value");

    double lo = density.data()[0], hi = density.data()[0];
    for (std::int64_t i = 0; i < density.size(); ++i) {
        lo = std::min(lo, density.data()[i]);
        hi = std::max(hi, density.data()[i]);
    }
    const double scale = hi > lo ? 65535.0 / (hi - lo) : 1.0;
    const double offset = lo;

    std::ofstream f(path, std::ios::binary);
    if (!f) throw ParseError(path, 0, "cannot open for writing");
    f << "P5\n";
    f << "# scale " << json(scale).dump() << "\n";
    f << "# offset " << json(offset).dump() << "\n";
    f << s.w << " " << s.h << "\n65535\n";
    std::vector<unsigned char> bytes(static_cast<std::size_t>(density.size()) * 2);
    for (std::int64_t i = 0; i < density.size(); ++i) {
        const double q = (density.data()[i] - offset) * scale;
        const long v = std::clamp(std::lround(q), 0L, 65535L);
        bytes[static_cast<std::size_t>(i) * 2] = static_cast<unsigned char>(v >> 8);
        bytes[static_cast<std::size_t>(i) * 2 + 1] = static_cast<unsigned char>(v & 0xff);
    }
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw ParseError(path, 0, "write failed");
}

namespace {

std::string next_header_line(std::istream& f, const std::string& path) {
    std::string line;
    if (!std::getline(f, line))
        throw ParseError(path, static_cast<std::int64_t>(f.tellg()), "truncated pgm header");
    return line;
}

}  // namespace

Tensor read_pgm16(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ParseError(path, 0, "cannot open for reading");
    if (next_header_line(f, path) != "P5") throw ParseError(path, 0, "not a binary pgm file");

    double scale = 1.0, offset = 0.0;
    bool saw_scale = false, saw_offset = false;
    std::string line = next_header_line(f, path);
    while (!line.empty() && line[0] == '#') {
        std::size_t consumed = 0;
        if (line.rfind("# scale ", 0) == 0) {
            scale = std::stod(line.substr(8), &consumed);
            saw_scale = consumed > 0;
        } else if (line.rfind("# offset ", 0) == 0) {
            offset = std::stod(line.substr(9), &consumed);
            saw_offset = consumed > 0;
        }
        line = next_header_line(f, path);
    }
    if (!saw_scale || !saw_offset)
        throw ParseError(path, 0, "missing scale/offset comments in pgm header");

    std::int64_t w = 0, h = 0;
    if (std::sscanf(line.c_str(), "%ld %ld", &w, &h) != 2 || w < 1 || h < 1)
        throw ParseError(path, static_cast<std::int64_t>(f.tellg()), "bad pgm dimensions");
    if (next_header_line(f, path) != "65535")
        throw ParseError(path, static_cast<std::int64_t>(f.tellg()), "expected 16-bit maxval");

    Tensor density(1, 1, h, w);
    std::vector<unsigned char> bytes(static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * 2);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (static_cast<std::size_t>(f.gcount()) != bytes.size())
        throw ParseError(path, static_cast<std::int64_t>(f.tellg()), "truncated pgm payload");
    for (std::int64_t i = 0; i < density.size(); ++i) {
        const unsigned v = (static_cast<unsigned>(bytes[static_cast<std::size_t>(i) * 2]) << 8) |
                           bytes[static_cast<std::size_t>(i) * 2 + 1];
        density.data()[i] = static_cast<double>(v) / scale + offset;
    }
    return density;
}

}  // namespace ndconv
