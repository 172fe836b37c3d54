#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "ndconv/density.hpp"
#include "ndconv/model.hpp"
#include "ndconv/nd_loss.hpp"

namespace ndconv {

struct TrainConfig {
    double lambda = 1e-3;  // weight of the offset-regularity loss
    double lr = 1e-4;
    std::int64_t batch_size = 4;
    std::int64_t epochs = 50;
    std::uint64_t seed = 0;
    std::int64_t eval_interval = 50;  // steps between held-out evaluations
    std::int64_t max_steps = 0;       // hard step cap; 0 runs all epochs
    double sigma = 1.5;               // density-kernel sigma of the dataset

    bool operator==(const TrainConfig&) const = default;
};

void validate_train_config(const TrainConfig& cfg);

// Counting metrics: mae = mean |predicted - true| count, mse = root mean
// squared count error (the counting-literature convention).
struct EvalMetrics {
    double mae = 0.0;
    double mse = 0.0;
    std::int64_t n = 0;
};

// Metric arithmetic over (predicted, true) count pairs; order-independent
// (compensated summation).
EvalMetrics metrics_from_counts(const std::vector<std::pair<double, double>>& counts);

EvalMetrics evaluate(const Model& model, const std::vector<Scene>& scenes);

// The deterministic held-out split train() uses: the last fifth of the scene
// indices (every index when the dataset is too small to split).
std::vector<std::size_t> held_out_indices(std::size_t n_scenes);

// One held-out evaluation record; streamed as a JSON line during training.
struct LogEntry {
    std::int64_t step = 0;
    double l_den = 0.0;
    double l_nd = 0.0;
    double lambda_l_nd = 0.0;
    double mae = 0.0;
    double residual = 0.0;  // mean parallelogram residual of held-out offsets

    bool operator==(const LogEntry&) const = default;
};

std::string log_entry_json(const LogEntry& e);

struct TrainResult {
    std::vector<LogEntry> log;
    std::int64_t steps_done = 0;
};

// Shuffled mini-batch training with Adam. Held-out split: the last fifth of
// the scenes by index (all scenes when the dataset is too small to split).
// Fully deterministic given (model seed, dataset, config): the shuffle of
// epoch k uses derive_seed(cfg.seed, k), so a resume from start_step lands on
// the same batches the uninterrupted run saw. Log lines are written to
// log_stream as they happen (one JSON object per line). A nonfinite loss
// aborts with the step named; parameters already written to disk by earlier
// checkpoints are untouched.
TrainResult train(Model& model, const std::vector<Scene>& scenes, const TrainConfig& cfg,
                  std::int64_t start_step = 0, std::ostream* log_stream = nullptr);

// --- checkpoints --------------------------------------------------------------
//
// File format: magic line "NDCK1\n", one-line JSON header (model config, train
// config, global step, per-parameter step counters), then for each parameter
// in header order its value, Adam m, and Adam v tensors in the tensor-core
// serialization. Values are float32 at rest; the store is float32-quantized
// after every update, so a save/load round-trip is bit-exact.

struct Checkpoint {
    ModelConfig model;
    TrainConfig train;
    std::int64_t step = 0;
};

void save_checkpoint(const std::string& path, const Model& model, const TrainConfig& cfg,
                     std::int64_t step);
// Reconstructs the model (parameters, Adam state, step counters) and reports
// the stored configs and global step through info.
Model load_checkpoint(const std::string& path, Checkpoint* info = nullptr);

}  // namespace ndconv
