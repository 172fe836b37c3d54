#include "ndconv/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ndconv/error.hpp"
#include "ndconv/rng.hpp"

using nlohmann::json;

namespace ndconv {

void validate_train_config(const TrainConfig& cfg) {
    if (cfg.lambda < 0.0) throw ConfigError("train: lambda must be >= 0");
    if (cfg.lr < 0.0) throw ConfigError("train: lr must be >= 0");
    if (cfg.batch_size < 1) throw ConfigError("train: batch size must be >= 1");
    if (cfg.epochs < 0) throw ConfigError("train: epochs must be >= 0");
    if (cfg.eval_interval < 1) throw ConfigError("train: eval interval must be >= 1");
    if (cfg.max_steps < 0) throw ConfigError("train: max steps must be >= 0");
    if (cfg.sigma <= 0.0) throw ConfigError("train: sigma must be > 0");
}

namespace {

// Deterministic float-to-text: shortest representation that parses back to the
// same double, so log files are stable and comparable byte-for-byte.
std::string num(double v) {
    return json(v).dump();
}

struct SplitView {
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> held_idx;
};

SplitView split_scenes(std::size_t n) {
    SplitView s;
    const std::size_t held = n / 5;
    for (std::size_t i = 0; i < n - held; ++i) s.train_idx.push_back(i);
    for (std::size_t i = n - held; i < n; ++i) s.held_idx.push_back(i);
    if (s.held_idx.empty())  // too small to split: evaluate on everything
        s.held_idx = s.train_idx;
    return s;
}

Tensor batch_images(const std::vector<Scene>& scenes, const std::vector<std::size_t>& idx,
                    std::size_t lo, std::size_t hi) {
    const Shape& s0 = scenes[idx[lo]].image.shape();
    Tensor batch(static_cast<std::int64_t>(hi - lo), 1, s0.h, s0.w);
    for (std::size_t i = lo; i < hi; ++i) {
        const Tensor& img = scenes[idx[i]].image;
        if (!(img.shape() == s0))
            throw ShapeError("train: scenes in one batch must share dims, got " + img.shape().str() +
                             " vs " + s0.str());
        double* dst = batch.plane(static_cast<std::int64_t>(i - lo), 0);
        for (std::int64_t j = 0; j < s0.h * s0.w; ++j) dst[j] = img.data()[j];
    }
    return batch;
}

Tensor batch_densities(const std::vector<Tensor>& densities, const std::vector<std::size_t>& idx,
                       std::size_t lo, std::size_t hi) {
    const Shape& s0 = densities[idx[lo]].shape();
    Tensor batch(static_cast<std::int64_t>(hi - lo), 1, s0.h, s0.w);
    for (std::size_t i = lo; i < hi; ++i) {
        double* dst = batch.plane(static_cast<std::int64_t>(i - lo), 0);
        for (std::int64_t j = 0; j < s0.h * s0.w; ++j) dst[j] = densities[idx[i]].data()[j];
    }
    return batch;
}

void fisher_yates(std::vector<std::size_t>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
        std::swap(v[i - 1], v[j]);
    }
}

// Held-out pass: per-scene forwards (bit-identical to any batching), combined
// with compensated accumulation so the result is order-independent.
LogEntry held_out_entry(const Model& model, const std::vector<Scene>& scenes,
                        const std::vector<Tensor>& densities, const std::vector<std::size_t>& held,
                        double lambda, std::int64_t step) {
    LogEntry e;
    e.step = step;
    double ssq = 0.0, ssq_comp = 0.0;
    double nd_sum = 0.0, res_sum = 0.0, abs_err = 0.0;
    for (std::size_t i : held) {
        Model::Trace trace;
        Tensor pred = model.forward(scenes[i].image, &trace);
        const Tensor& target = densities[i];
        for (std::int64_t j = 0; j < pred.size(); ++j) {
            const double d = pred.data()[j] - target.data()[j];
            const double x = d * d;
            const double t = ssq + x;
            if (std::abs(ssq) >= std::abs(x))
                ssq_comp += (ssq - t) + x;
            else
                ssq_comp += (x - t) + ssq;
            ssq = t;
        }
        abs_err += std::abs(pred.sum() - static_cast<double>(scenes[i].annotation.points.size()));
        if (model.deformable()) {
            const auto [nd, breakdown] =
                model.corner_variant() ? nd_loss_corner_variant(trace.offsets, model.geometry())
                                       : nd_loss(trace.offsets, model.geometry());
            nd_sum += nd;
            res_sum += uniformity_report(trace.offsets, model.geometry()).mean_residual;
        }
    }
    const double n = static_cast<double>(held.size());
    e.l_den = (ssq + ssq_comp) / (2.0 * n);
    e.l_nd = nd_sum / n;
    e.lambda_l_nd = lambda * e.l_nd;
    e.mae = abs_err / n;
    e.residual = res_sum / n;
    return e;
}

}  // namespace

std::string log_entry_json(const LogEntry& e) {
    std::ostringstream os;
    os << "{\"step\":" << e.step << ",\"l_den\":" << num(e.l_den) << ",\"l_nd\":" << num(e.l_nd)
       << ",\"lambda_l_nd\":" << num(e.lambda_l_nd) << ",\"mae\":" << num(e.mae)
       << ",\"residual\":" << num(e.residual) << "}";
    return os.str();
}

EvalMetrics metrics_from_counts(const std::vector<std::pair<double, double>>& counts) {
    if (counts.empty()) throw ConfigError("metrics: empty sample");
    EvalMetrics m;
    double abs_sum = 0.0, abs_comp = 0.0, sq_sum = 0.0, sq_comp = 0.0;
    for (const auto& [pred, truth] : counts) {
        const double err = pred - truth;
        const double a = std::abs(err);
        double t = abs_sum + a;
        if (std::abs(abs_sum) >= a)
            abs_comp += (abs_sum - t) + a;
        else
            abs_comp += (a - t) + abs_sum;
        abs_sum = t;
        const double q = err * err;
        t = sq_sum + q;
        if (std::abs(sq_sum) >= q)
            sq_comp += (sq_sum - t) + q;
        else
            sq_comp += (q - t) + sq_sum;
        sq_sum = t;
    }
    const double n = static_cast<double>(counts.size());
    m.mae = (abs_sum + abs_comp) / n;
    m.mse = std::sqrt((sq_sum + sq_comp) / n);
    m.n = static_cast<std::int64_t>(counts.size());
    return m;
}

std::vector<std::size_t> held_out_indices(std::size_t n_scenes) {
    return split_scenes(n_scenes).held_idx;
}

EvalMetrics evaluate(const Model& model, const std::vector<Scene>& scenes) {
    if (scenes.empty()) throw ConfigError("evaluate: empty dataset");
    std::vector<std::pair<double, double>> counts;
    counts.reserve(scenes.size());
    for (const Scene& s : scenes)
        counts.emplace_back(model.forward(s.image).sum(),
                            static_cast<double>(s.annotation.points.size()));
    return metrics_from_counts(counts);
}

TrainResult train(Model& model, const std::vector<Scene>& scenes, const TrainConfig& cfg,
                  std::int64_t start_step, std::ostream* log_stream) {
    validate_train_config(cfg);
    if (scenes.empty()) throw ConfigError("train: empty dataset");

    std::vector<Tensor> densities;
    densities.reserve(scenes.size());
    for (const Scene& s : scenes) densities.push_back(render_density(s.annotation, cfg.sigma));

    const SplitView split = split_scenes(scenes.size());
    const std::size_t train_n = split.train_idx.size();
    const std::int64_t steps_per_epoch =
        static_cast<std::int64_t>((train_n + static_cast<std::size_t>(cfg.batch_size) - 1) /
                                  static_cast<std::size_t>(cfg.batch_size));

    TrainResult result;
    result.steps_done = start_step;
    std::int64_t step = start_step;
    std::int64_t epoch = steps_per_epoch > 0 ? start_step / steps_per_epoch : 0;
    std::int64_t skip_in_epoch = steps_per_epoch > 0 ? start_step % steps_per_epoch : 0;

    const double lambda = cfg.lambda;
    const bool regularized = model.deformable() && lambda > 0.0;

    for (; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order = split.train_idx;
        Rng shuffle_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
        fisher_yates(order, shuffle_rng);

        for (std::int64_t b = skip_in_epoch; b < steps_per_epoch; ++b) {
            const std::size_t lo = static_cast<std::size_t>(b * cfg.batch_size);
            const std::size_t hi = std::min(train_n, lo + static_cast<std::size_t>(cfg.batch_size));

            Tensor input = batch_images(scenes, order, lo, hi);
            Tensor target = batch_densities(densities, order, lo, hi);

            Model::Trace trace;
            Tensor pred = model.forward(input, &trace);

            MseNode mse_node;
            const double l_den = mse_density_loss(pred, target, &mse_node);
            double l_nd = 0.0;
            if (model.deformable())
                l_nd = (model.corner_variant() ? nd_loss_corner_variant(trace.offsets, model.geometry())
                                               : nd_loss(trace.offsets, model.geometry()))
                           .first;
            const double l_all = l_den + lambda * l_nd;
            if (!std::isfinite(l_all))
                throw NumericError("train: nonfinite loss at step " + std::to_string(step + 1));

            Tensor grad_pred = mse_density_loss_backward(mse_node);
            if (regularized) {
                Tensor nd_grad =
                    nd_loss_backward(trace.offsets, model.geometry(), model.corner_variant(), lambda);
                model.backward(trace, grad_pred, &nd_grad);
            } else {
                model.backward(trace, grad_pred, nullptr);
            }
            adam_step(model.params(), cfg.lr);
            model.params().quantize_storage();
            ++step;

            if (step % cfg.eval_interval == 0) {
                LogEntry e = held_out_entry(model, scenes, densities, split.held_idx, lambda, step);
                result.log.push_back(e);
                if (log_stream) *log_stream << log_entry_json(e) << "\n" << std::flush;
            }
            if (cfg.max_steps > 0 && step >= cfg.max_steps) {
                result.steps_done = step;
                return result;
            }
        }
        skip_in_epoch = 0;
    }
    result.steps_done = step;
    return result;
}

// --- checkpoints --------------------------------------------------------------

namespace {

json model_config_json(const ModelConfig& cfg) {
    return json{{"widths", cfg.widths},
                {"final_dilation", cfg.final_dilation},
                {"final_kind", final_kind_to_string(cfg.final_kind)},
                {"seed", cfg.seed}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig cfg;
    cfg.widths = j.at("widths").get<std::vector<std::int64_t>>();
    cfg.final_dilation = j.at("final_dilation").get<std::int64_t>();
    cfg.final_kind = final_kind_from_string(j.at("final_kind").get<std::string>());
    cfg.seed = j.at("seed").get<std::uint64_t>();
    return cfg;
}

json train_config_json(const TrainConfig& cfg) {
    return json{{"lambda", cfg.lambda},         {"lr", cfg.lr},
                {"batch_size", cfg.batch_size}, {"epochs", cfg.epochs},
                {"seed", cfg.seed},             {"eval_interval", cfg.eval_interval},
                {"max_steps", cfg.max_steps},   {"sigma", cfg.sigma}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig cfg;
    cfg.lambda = j.at("lambda").get<double>();
    cfg.lr = j.at("lr").get<double>();
    cfg.batch_size = j.at("batch_size").get<std::int64_t>();
    cfg.epochs = j.at("epochs").get<std::int64_t>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.eval_interval = j.at("eval_interval").get<std::int64_t>();
    cfg.max_steps = j.at("max_steps").get<std::int64_t>();
    cfg.sigma = j.at("sigma").get<double>();
    return cfg;
}

constexpr char kMagic[] = "NDCK1\n";

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const TrainConfig& cfg,
                     std::int64_t step) {
    // Write to a scratch file and rename, so an aborted run cannot destroy the
    // last good checkpoint at this path.
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw ParseError(tmp, 0, "cannot open for writing");
        f << kMagic;
        json header;
        header["v"] = 1;
        header["model"] = model_config_json(model.config());
        header["train"] = train_config_json(cfg);
        header["step"] = step;
        json params = json::array();
        for (const auto& [name, entry] : model.params())
            params.push_back(json{{"name", name}, {"step", entry.step}});
        header["params"] = params;
        f << header.dump() << "\n";
        for (const auto& [name, entry] : model.params()) {
            write_tensor(f, entry.value);
            write_tensor(f, entry.m);
            write_tensor(f, entry.v);
        }
        if (!f) throw ParseError(tmp, 0, "write failed");
    }
    std::filesystem::rename(tmp, path);
}

Model load_checkpoint(const std::string& path, Checkpoint* info) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ParseError(path, 0, "cannot open for reading");
    std::string magic(6, '\0');
    f.read(magic.data(), 6);
    if (f.gcount() != 6 || magic != kMagic) throw ParseError(path, 0, "wrong magic bytes");
    std::string header_line;
    if (!std::getline(f, header_line)) throw ParseError(path, 6, "missing header");
    json header;
    try {
        header = json::parse(header_line);
    } catch (const json::parse_error& e) {
        throw ParseError(path, 6 + e.byte, e.what());
    }

    Checkpoint ck;
    try {
        if (header.at("v").get<int>() != 1)
            throw ParseError(path, 6, "unsupported checkpoint version");
        ck.model = model_config_from_json(header.at("model"));
        ck.train = train_config_from_json(header.at("train"));
        ck.step = header.at("step").get<std::int64_t>();
    } catch (const json::exception& e) {
        throw ParseError(path, 6, e.what());
    }

    Model model(ck.model);
    std::set<std::string> restored;
    for (const auto& p : header.at("params")) {
        std::string name;
        std::int64_t pstep = 0;
        try {
            name = p.at("name").get<std::string>();
            pstep = p.at("step").get<std::int64_t>();
        } catch (const json::exception& e) {
            throw ParseError(path, 6, e.what());
        }
        if (!model.params().has(name)) throw ParseError(path, 6, "unexpected parameter " + name);
        if (!restored.insert(name).second)
            throw ParseError(path, 6, "duplicate parameter " + name);
        ParamEntry& entry = model.params().entry(name);
        const std::int64_t base = static_cast<std::int64_t>(f.tellg());
        Tensor value = read_tensor(f, path, base);
        Tensor m = read_tensor(f, path, static_cast<std::int64_t>(f.tellg()));
        Tensor v = read_tensor(f, path, static_cast<std::int64_t>(f.tellg()));
        check_same_shape(entry.value, value, ("checkpoint " + name).c_str());
        entry.value = std::move(value);
        entry.m = std::move(m);
        entry.v = std::move(v);
        entry.step = pstep;
    }
    if (restored.size() != model.params().size())
        throw ParseError(path, 6, "parameter list does not match the model");
    char extra;
    if (f.get(extra)) throw ParseError(path, 0, "trailing bytes after last tensor");
    if (info) *info = ck;
    return model;
}

}  // namespace ndconv
