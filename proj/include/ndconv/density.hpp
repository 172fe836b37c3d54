#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "ndconv/geometry.hpp"
#include "ndconv/rng.hpp"
#include "ndconv/tensor.hpp"

namespace ndconv {

// Head-point annotation for one image. Points are (x, y) in pixels and must
// lie inside [0, w) x [0, h).
struct SceneAnnotation {
    std::int64_t h = 0;
    std::int64_t w = 0;
    std::vector<Point> points;

    bool operator==(const SceneAnnotation&) const = default;
};

// Parameters of the synthetic scene generator: bright elliptical blobs (one
// per head) on a uniform-noise background.
struct SynthConfig {
    std::int64_t h = 96;
    std::int64_t w = 96;
    std::int64_t heads_min = 3;
    std::int64_t heads_max = 12;
    double radius_min = 2.0;
    double radius_max = 5.0;
    double noise_level = 0.05;
    double sigma = 1.5;  // density-kernel sigma used for ground truth
};

void validate_synth_config(const SynthConfig& cfg);

// 7x7 Gaussian sampled on [-3,3]^2, normalized to sum to 1. Row-major.
std::array<double, 49> gaussian_kernel7(double sigma);

// One kernel per head at its rounded center, clipped at the borders and
// renormalized per head so the map integrates exactly to the head count.
// Returns a (1, 1, h, w) tensor.
Tensor render_density(const SceneAnnotation& annotation, double sigma = 1.5);

// Deterministic scene synthesis; consumes a fixed number of draws per head so
// identical (config, seed) pairs give bit-identical scenes.
std::pair<Tensor, SceneAnnotation> synth_scene(const SynthConfig& cfg, Rng& rng);

struct Scene {
    Tensor image;  // (1, 1, h, w)
    SceneAnnotation annotation;
};

// Directory layout: scene_{k}.img (tensor file), scene_{k}.json (annotation),
// manifest.json (count, config, seed).
void save_dataset(const std::string& dir, const std::vector<Scene>& scenes, const SynthConfig& cfg,
                  std::uint64_t seed);
std::vector<Scene> load_dataset(const std::string& dir);

}  // namespace ndconv
