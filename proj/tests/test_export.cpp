#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ndconv/error.hpp"
#include "ndconv/export.hpp"
#include "ndconv/nd_loss.hpp"
#include "ndconv/rng.hpp"

using namespace ndconv;
using nlohmann::json;
namespace fs = std::filesystem;

static fs::path fresh_dir(const char* name) {
    fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

static void write_bytes(const fs::path& p, const std::string& bytes) {
    std::ofstream f(p, std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

TEST_CASE("pgm16 round trip stays within quantization error") {
    const fs::path dir = fresh_dir("ndconv_test_pgm");
    Rng rng(31);
    Tensor d(1, 1, 23, 17);
    for (std::int64_t i = 0; i < d.size(); ++i) d.data()[i] = rng.uniform(-0.3, 2.1);
    const std::string path = (dir / "d.pgm").string();
    write_pgm16(path, d);

    Tensor r = read_pgm16(path);
    REQUIRE(r.shape() == d.shape());
    double lo = d.data()[0], hi = d.data()[0];
    for (std::int64_t i = 0; i < d.size(); ++i) {
        lo = std::min(lo, d.data()[i]);
        hi = std::max(hi, d.data()[i]);
    }
    const double step = (hi - lo) / 65535.0;  // one quantization level
    double worst = 0.0, sum_d = 0.0, sum_r = 0.0;
    for (std::int64_t i = 0; i < d.size(); ++i) {
        worst = std::max(worst, std::abs(r.data()[i] - d.data()[i]));
        sum_d += d.data()[i];
        sum_r += r.data()[i];
    }
    CHECK(worst <= 0.5 * step * (1.0 + 1e-9));
    // Per-pixel errors are bounded, so the recovered mass is too.
    CHECK(std::abs(sum_r - sum_d) <= 0.5 * step * static_cast<double>(d.size()) * (1.0 + 1e-9));
}

TEST_CASE("pgm16 flat map reproduces the constant exactly") {
    const fs::path dir = fresh_dir("ndconv_test_pgm_flat");
    Tensor d(1, 1, 4, 6);
    for (std::int64_t i = 0; i < d.size(); ++i) d.data()[i] = 0.7321;
    const std::string path = (dir / "flat.pgm").string();
    write_pgm16(path, d);
    Tensor r = read_pgm16(path);
    for (std::int64_t i = 0; i < r.size(); ++i) CHECK(r.data()[i] == 0.7321);
}

TEST_CASE("pgm16 header layout and big-endian payload") {
    const fs::path dir = fresh_dir("ndconv_test_pgm_hdr");
    Tensor d(1, 1, 2, 3);
    const double vals[6] = {0.0, 1.0, 0.5, 0.25, 0.75, 1.0};
    for (int i = 0; i < 6; ++i) d.data()[i] = vals[i];
    const std::string path = (dir / "h.pgm").string();
    write_pgm16(path, d);

    std::ifstream f(path, std::ios::binary);
    std::string line;
    std::getline(f, line);
    CHECK(line == "P5");
    std::getline(f, line);
    CHECK(line == "# scale " + json(65535.0).dump());
    std::getline(f, line);
    CHECK(line == "# offset " + json(0.0).dump());
    std::getline(f, line);
    CHECK(line == "3 2");
    std::getline(f, line);
    CHECK(line == "65535");
    std::vector<unsigned char> bytes(12);
    f.read(reinterpret_cast<char*>(bytes.data()), 12);
    CHECK(f.gcount() == 12);
    // lo = 0, hi = 1, scale = 65535: value v quantizes to round(v * 65535).
    const unsigned expect[6] = {0, 65535, 32768, 16384, 49151, 65535};
    for (int i = 0; i < 6; ++i) {
        const unsigned got = (static_cast<unsigned>(bytes[static_cast<std::size_t>(i) * 2]) << 8) |
                             bytes[static_cast<std::size_t>(i) * 2 + 1];
        CHECK(got == expect[i]);
    }
    CHECK(f.get() == std::ifstream::traits_type::eof());
}

TEST_CASE("write_pgm16 rejects bad shapes and nonfinite values") {
    const fs::path dir = fresh_dir("ndconv_test_pgm_bad");
    const std::string path = (dir / "x.pgm").string();
    CHECK_THROWS_AS(write_pgm16(path, Tensor(1, 2, 3, 3)), ShapeError);
    CHECK_THROWS_AS(write_pgm16(path, Tensor(2, 1, 3, 3)), ShapeError);
    Tensor nan_map(1, 1, 2, 2);
    nan_map.data()[3] = std::nan("");
    CHECK_THROWS_AS(write_pgm16(path, nan_map), NumericError);
    CHECK(!fs::exists(path));
}

TEST_CASE("read_pgm16 rejects malformed files") {
    const fs::path dir = fresh_dir("ndconv_test_pgm_parse");
    CHECK_THROWS_AS(read_pgm16((dir / "missing.pgm").string()), ParseError);

    const auto path = [&](const char* name) { return (dir / name).string(); };
    write_bytes(dir / "magic.pgm", "P6\n# scale 1\n# offset 0\n2 2\n65535\n--------");
    CHECK_THROWS_AS(read_pgm16(path("magic.pgm")), ParseError);

    write_bytes(dir / "nocomments.pgm", "P5\n2 2\n65535\n--------");
    CHECK_THROWS_AS(read_pgm16(path("nocomments.pgm")), ParseError);

    write_bytes(dir / "dims.pgm", "P5\n# scale 1\n# offset 0\nx 2\n65535\n--------");
    CHECK_THROWS_AS(read_pgm16(path("dims.pgm")), ParseError);

    write_bytes(dir / "zerodim.pgm", "P5\n# scale 1\n# offset 0\n0 2\n65535\n");
    CHECK_THROWS_AS(read_pgm16(path("zerodim.pgm")), ParseError);

    write_bytes(dir / "maxval.pgm", "P5\n# scale 1\n# offset 0\n2 2\n255\n--------");
    CHECK_THROWS_AS(read_pgm16(path("maxval.pgm")), ParseError);

    write_bytes(dir / "short.pgm", "P5\n# scale 1\n# offset 0\n2 2\n65535\n------");
    CHECK_THROWS_AS(read_pgm16(path("short.pgm")), ParseError);

    // Reference: the same header with a full payload parses.
    write_bytes(dir / "ok.pgm", "P5\n# scale 1\n# offset 0\n2 2\n65535\n--------");
    Tensor ok = read_pgm16(path("ok.pgm"));
    CHECK(ok.shape() == Shape{1, 1, 2, 2});
    CHECK(ok.data()[0] == static_cast<double>(('-' << 8) | '-'));
}

TEST_CASE("offset_positions_json layout and zero-offset positions") {
    GridGeometry geom;
    geom.dilation = 2;
    Tensor offsets(1, kOffsetChannels, 4, 5);
    json j = offset_positions_json(offsets, geom, 1);

    CHECK(j["v"] == 1);
    CHECK(j["h"] == 4);
    CHECK(j["w"] == 5);
    CHECK(j["grid_step"] == 1);
    CHECK(j["geometry"]["kernel_size"] == 3);
    CHECK(j["geometry"]["dilation"] == 2);
    REQUIRE(j["geometry"]["base_points"].size() == 9);
    const auto base = geom.base_points();
    for (int k = 0; k < 9; ++k) {
        CHECK(j["geometry"]["base_points"][k][0].get<double>() == base[k].x);
        CHECK(j["geometry"]["base_points"][k][1].get<double>() == base[k].y);
    }
    // Row-major locations covering every pixel.
    REQUIRE(j["locations"].size() == 20);
    CHECK(j["locations"][0]["x"] == 0);
    CHECK(j["locations"][0]["y"] == 0);
    CHECK(j["locations"][6]["x"] == 1);
    CHECK(j["locations"][6]["y"] == 1);
    // Zero offsets: position k is exactly (x, y) + base point k.
    for (const auto& loc : j["locations"]) {
        REQUIRE(loc["positions"].size() == 9);
        const double x = loc["x"].get<double>(), y = loc["y"].get<double>();
        for (int k = 0; k < 9; ++k) {
            CHECK(loc["positions"][k][0].get<double>() == x + base[k].x);
            CHECK(loc["positions"][k][1].get<double>() == y + base[k].y);
        }
    }
}

TEST_CASE("offset_positions_json applies offsets and grid_step") {
    GridGeometry geom;
    geom.dilation = 1;
    Tensor offsets(1, kOffsetChannels, 5, 6);
    for (std::int64_t k = 0; k < kTaps; ++k)
        for (std::int64_t y = 0; y < 5; ++y)
            for (std::int64_t x = 0; x < 6; ++x) {
                offsets.at(0, 2 * k, y, x) = 0.25 + static_cast<double>(k);
                offsets.at(0, 2 * k + 1, y, x) = -0.5;
            }
    json j = offset_positions_json(offsets, geom, 2);
    // y in {0, 2, 4}, x in {0, 2, 4}: nine subsampled locations.
    REQUIRE(j["locations"].size() == 9);
    CHECK(j["locations"][1]["x"] == 2);
    CHECK(j["locations"][1]["y"] == 0);
    CHECK(j["locations"][3]["x"] == 0);
    CHECK(j["locations"][3]["y"] == 2);
    const auto base = geom.base_points();
    const auto& loc = j["locations"][4];  // x = 2, y = 2
    for (int k = 0; k < 9; ++k) {
        CHECK(loc["positions"][k][0].get<double>() == 2.0 + base[k].x + (0.25 + k));
        CHECK(loc["positions"][k][1].get<double>() == 2.0 + base[k].y - 0.5);
    }
}

TEST_CASE("offset_positions_json validates its input") {
    GridGeometry geom;
    CHECK_THROWS_AS(offset_positions_json(Tensor(2, kOffsetChannels, 3, 3), geom, 1), ShapeError);
    CHECK_THROWS_AS(offset_positions_json(Tensor(1, 17, 3, 3), geom, 1), ShapeError);
    CHECK_THROWS_AS(offset_positions_json(Tensor(1, kOffsetChannels, 3, 3), geom, 0), ConfigError);
}

// Structural validation against the published schema (docs/offsets.schema.json):
// every constraint the schema declares, checked by hand.
static void check_point(const json& p) {
    REQUIRE(p.is_array());
    REQUIRE(p.size() == 2);
    CHECK(p[0].is_number());
    CHECK(p[1].is_number());
}

TEST_CASE("offset_positions_json conforms to the published schema") {
    GridGeometry geom;
    geom.dilation = 2;
    Rng rng(9);
    Tensor offsets(1, kOffsetChannels, 6, 7);
    for (std::int64_t i = 0; i < offsets.size(); ++i) offsets.data()[i] = rng.normal() * 0.4;
    const json j = offset_positions_json(offsets, geom, 3);

    const std::vector<std::string> top_keys = {"v", "h", "w", "grid_step", "geometry", "locations"};
    REQUIRE(j.is_object());
    CHECK(j.size() == top_keys.size());
    for (const auto& key : top_keys) REQUIRE(j.contains(key));
    CHECK(j["v"] == 1);
    CHECK(j["h"].is_number_integer());
    CHECK(j["w"].is_number_integer());
    CHECK(j["grid_step"].is_number_integer());
    CHECK(j["h"].get<std::int64_t>() >= 1);
    CHECK(j["w"].get<std::int64_t>() >= 1);
    CHECK(j["grid_step"].get<std::int64_t>() >= 1);

    const json& g = j["geometry"];
    REQUIRE(g.is_object());
    CHECK(g.size() == 3);
    REQUIRE(g.contains("kernel_size"));
    REQUIRE(g.contains("dilation"));
    REQUIRE(g.contains("base_points"));
    CHECK(g["kernel_size"] == 3);
    CHECK(g["dilation"].is_number_integer());
    CHECK(g["dilation"].get<std::int64_t>() >= 1);
    REQUIRE(g["base_points"].is_array());
    REQUIRE(g["base_points"].size() == 9);
    for (const auto& p : g["base_points"]) check_point(p);

    REQUIRE(j["locations"].is_array());
    for (const auto& loc : j["locations"]) {
        REQUIRE(loc.is_object());
        CHECK(loc.size() == 3);
        REQUIRE(loc.contains("x"));
        REQUIRE(loc.contains("y"));
        REQUIRE(loc.contains("positions"));
        CHECK(loc["x"].is_number_integer());
        CHECK(loc["y"].is_number_integer());
        CHECK(loc["x"].get<std::int64_t>() >= 0);
        CHECK(loc["y"].get<std::int64_t>() >= 0);
        REQUIRE(loc["positions"].is_array());
        REQUIRE(loc["positions"].size() == 9);
        for (const auto& p : loc["positions"]) check_point(p);
    }

    // The schema document itself parses and pins the same version.
    std::ifstream f(std::string(NDCONV_DOCS_DIR) + "/offsets.schema.json");
    REQUIRE(f.good());
    const json schema = json::parse(f);
    CHECK(schema["properties"]["v"]["const"] == 1);
    CHECK(schema["properties"]["geometry"]["properties"]["kernel_size"]["const"] == 3);
    for (const auto& key : top_keys)
        CHECK(std::find(schema["required"].begin(), schema["required"].end(), json(key)) !=
              schema["required"].end());
}

TEST_CASE("uniformity_json mirrors the report") {
    UniformityReport rep;
    rep.mean_residual = 0.125;
    rep.r_A = 1.0;
    rep.r_C = 2.0;
    rep.r_G = 3.0;
    rep.r_I = 4.0;
    rep.center_drift = 0.0625;
    json j = uniformity_json(rep);
    CHECK(j["v"] == 1);
    CHECK(j["mean_residual"] == 0.125);
    CHECK(j["r_A"] == 1.0);
    CHECK(j["r_C"] == 2.0);
    CHECK(j["r_G"] == 3.0);
    CHECK(j["r_I"] == 4.0);
    CHECK(j["center_drift"] == 0.0625);

    GridGeometry geom;
    geom.dilation = 3;
    json zero = uniformity_json(uniformity_report(Tensor(1, kOffsetChannels, 4, 4), geom));
    CHECK(zero["mean_residual"] == 0.0);
    CHECK(zero["center_drift"] == 0.0);
}
