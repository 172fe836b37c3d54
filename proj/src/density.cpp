#include "ndconv/density.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "ndconv/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ndconv {

void validate_synth_config(const SynthConfig& cfg) {
    if (cfg.h < 1 || cfg.w < 1) throw ConfigError("synth: image dims must be positive");
    if (cfg.heads_min < 0 || cfg.heads_min > cfg.heads_max)
        throw ConfigError("synth: head-count range is empty");
    if (cfg.heads_max > cfg.h * cfg.w)
        throw ConfigError("synth: head count incompatible with image size");
    if (cfg.radius_min <= 0.0 || cfg.radius_min > cfg.radius_max)
        throw ConfigError("synth: radius range is empty");
    if (cfg.noise_level < 0.0) throw ConfigError("synth: noise level must be >= 0");
    if (cfg.sigma <= 0.0) throw ConfigError("synth: sigma must be > 0");
}

std::array<double, 49> gaussian_kernel7(double sigma) {
    if (sigma <= 0.0) throw ConfigError("gaussian_kernel7: sigma must be > 0");
    std::array<double, 49> k;
    double total = 0.0;
    for (int y = -3; y <= 3; ++y)
        for (int x = -3; x <= 3; ++x) {
            const double v = std::exp(-(x * x + y * y) / (2.0 * sigma * sigma));
            k[static_cast<std::size_t>((y + 3) * 7 + (x + 3))] = v;
            total += v;
        }
    for (double& v : k) v /= total;
    return k;
}

Tensor render_density(const SceneAnnotation& annotation, double sigma) {
    const auto kernel = gaussian_kernel7(sigma);
    Tensor map(1, 1, annotation.h, annotation.w);
    double* plane = map.plane(0, 0);
    for (std::size_t i = 0; i < annotation.points.size(); ++i) {
        const Point& p = annotation.points[i];
        if (p.x < 0.0 || p.x >= static_cast<double>(annotation.w) || p.y < 0.0 ||
            p.y >= static_cast<double>(annotation.h))
            throw ConfigError("render_density: point " + std::to_string(i) + " at (" +
                              std::to_string(p.x) + ", " + std::to_string(p.y) +
                              ") lies outside the image");
        const std::int64_t cx = std::llround(p.x);
        const std::int64_t cy = std::llround(p.y);
        // Clip the kernel window, then renormalize what remains so every head
        // contributes exactly mass 1 even at the borders.
        double mass = 0.0;
        for (std::int64_t ky = -3; ky <= 3; ++ky)
            for (std::int64_t kx = -3; kx <= 3; ++kx) {
                const std::int64_t yy = cy + ky, xx = cx + kx;
                if (yy < 0 || yy >= annotation.h || xx < 0 || xx >= annotation.w) continue;
                mass += kernel[static_cast<std::size_t>((ky + 3) * 7 + (kx + 3))];
            }
        for (std::int64_t ky = -3; ky <= 3; ++ky)
            for (std::int64_t kx = -3; kx <= 3; ++kx) {
                const std::int64_t yy = cy + ky, xx = cx + kx;
                if (yy < 0 || yy >= annotation.h || xx < 0 || xx >= annotation.w) continue;
                plane[yy * annotation.w + xx] +=
                    kernel[static_cast<std::size_t>((ky + 3) * 7 + (kx + 3))] / mass;
            }
    }
    return map;
}

std::pair<Tensor, SceneAnnotation> synth_scene(const SynthConfig& cfg, Rng& rng) {
    validate_synth_config(cfg);
    SceneAnnotation ann;
    ann.h = cfg.h;
    ann.w = cfg.w;
    Tensor image(1, 1, cfg.h, cfg.w);
    double* plane = image.plane(0, 0);

    const std::int64_t count = rng.uniform_int(cfg.heads_min, cfg.heads_max);
    for (std::int64_t i = 0; i < count; ++i) {
        // Clamp centers so even rounded positions stay inside the image.
        const double cx = rng.uniform(0.0, static_cast<double>(cfg.w - 1));
        const double cy = rng.uniform(0.0, static_cast<double>(cfg.h - 1));
        const double rx = rng.uniform(cfg.radius_min, cfg.radius_max);
        const double ry = rng.uniform(cfg.radius_min, cfg.radius_max);
        const double amp = rng.uniform(0.5, 1.0);
        ann.points.push_back(Point{cx, cy});

        const std::int64_t reach = static_cast<std::int64_t>(std::ceil(4.0 * std::max(rx, ry)));
        const std::int64_t y0 = std::max<std::int64_t>(0, std::llround(cy) - reach);
        const std::int64_t y1 = std::min<std::int64_t>(cfg.h - 1, std::llround(cy) + reach);
        const std::int64_t x0 = std::max<std::int64_t>(0, std::llround(cx) - reach);
        const std::int64_t x1 = std::min<std::int64_t>(cfg.w - 1, std::llround(cx) + reach);
        for (std::int64_t y = y0; y <= y1; ++y)
            for (std::int64_t x = x0; x <= x1; ++x) {
                const double dx = static_cast<double>(x) - cx;
                const double dy = static_cast<double>(y) - cy;
                plane[y * cfg.w + x] +=
                    amp * std::exp(-(dx * dx / (2.0 * rx * rx) + dy * dy / (2.0 * ry * ry)));
            }
    }
    // Background noise last, one draw per pixel in row-major order.
    for (std::int64_t i = 0; i < cfg.h * cfg.w; ++i) plane[i] += rng.uniform(0.0, cfg.noise_level);
    // Scenes live on disk as float32; snapping here makes the in-memory scene
    // identical to what a save/load round-trip returns.
    image.quantize_f32();
    return {std::move(image), std::move(ann)};
}

namespace {

json config_to_json(const SynthConfig& cfg) {
    return json{{"h", cfg.h},
                {"w", cfg.w},
                {"heads_min", cfg.heads_min},
                {"heads_max", cfg.heads_max},
                {"radius_min", cfg.radius_min},
                {"radius_max", cfg.radius_max},
                {"noise_level", cfg.noise_level},
                {"sigma", cfg.sigma}};
}

json parse_json_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ParseError(path, 0, "cannot open for reading");
    try {
        return json::parse(f);
    } catch (const json::parse_error& e) {
        throw ParseError(path, e.byte, e.what());
    }
}

}  // namespace

void save_dataset(const std::string& dir, const std::vector<Scene>& scenes, const SynthConfig& cfg,
                  std::uint64_t seed) {
    fs::create_directories(dir);
    for (std::size_t k = 0; k < scenes.size(); ++k) {
        const Scene& s = scenes[k];
        save_tensor(dir + "/scene_" + std::to_string(k) + ".img", s.image);
        json j;
        j["w"] = s.annotation.w;
        j["h"] = s.annotation.h;
        auto& pts = j["points"] = json::array();
        for (const Point& p : s.annotation.points) pts.push_back(json::array({p.x, p.y}));
        std::ofstream f(dir + "/scene_" + std::to_string(k) + ".json", std::ios::binary);
        f << j.dump(2) << "\n";
        if (!f) throw ParseError(dir + "/scene_" + std::to_string(k) + ".json", 0, "write failed");
    }
    json manifest;
    manifest["v"] = 1;
    manifest["scenes"] = scenes.size();
    manifest["seed"] = seed;
    manifest["config"] = config_to_json(cfg);
    std::ofstream f(dir + "/manifest.json", std::ios::binary);
    f << manifest.dump(2) << "\n";
    if (!f) throw ParseError(dir + "/manifest.json", 0, "write failed");
}

std::vector<Scene> load_dataset(const std::string& dir) {
    std::vector<Scene> scenes;
    for (std::size_t k = 0;; ++k) {
        const std::string img_path = dir + "/scene_" + std::to_string(k) + ".img";
        const std::string ann_path = dir + "/scene_" + std::to_string(k) + ".json";
        if (!fs::exists(img_path)) break;
        Scene s;
        s.image = load_tensor(img_path);
        const json j = parse_json_file(ann_path);
        try {
            s.annotation.w = j.at("w").get<std::int64_t>();
            s.annotation.h = j.at("h").get<std::int64_t>();
            for (const auto& p : j.at("points"))
                s.annotation.points.push_back(Point{p.at(0).get<double>(), p.at(1).get<double>()});
        } catch (const json::exception& e) {
            throw ParseError(ann_path, 0, e.what());
        }
        if (s.image.shape().h != s.annotation.h || s.image.shape().w != s.annotation.w)
            throw ParseError(ann_path, 0, "annotation dims do not match image " + s.image.shape().str());
        scenes.push_back(std::move(s));
    }
    return scenes;
}

}  // namespace ndconv
