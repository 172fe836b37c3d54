#include "ndconv/model.hpp"

#include <cmath>

#include "ndconv/error.hpp"
#include "ndconv/rng.hpp"

namespace ndconv {

std::string final_kind_to_string(FinalLayerKind kind) {
    switch (kind) {
        case FinalLayerKind::plain: return "plain";
        case FinalLayerKind::deform: return "dconv";
        case FinalLayerKind::nd_literal: return "ndconv";
        case FinalLayerKind::nd_corner: return "ndconv-corner";
    }
    throw ConfigError("unknown final layer kind");
}

FinalLayerKind final_kind_from_string(const std::string& s) {
    if (s == "plain") return FinalLayerKind::plain;
    if (s == "dconv") return FinalLayerKind::deform;
    if (s == "ndconv") return FinalLayerKind::nd_literal;
    if (s == "ndconv-corner") return FinalLayerKind::nd_corner;
    throw ConfigError("unknown final layer kind: " + s);
}

namespace {

Tensor he_init(std::int64_t out_c, std::int64_t in_c, Rng& rng) {
    Tensor w(out_c, in_c, 3, 3);
    const double stddev = std::sqrt(2.0 / static_cast<double>(in_c * 9));
    for (std::int64_t i = 0; i < w.size(); ++i) w.data()[i] = rng.normal(0.0, stddev);
    return w;
}

}  // namespace

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
    if (cfg.widths.empty()) throw ConfigError("model: at least one stage required");
    for (std::int64_t w : cfg.widths)
        if (w < 1) throw ConfigError("model: stage widths must be positive");
    if (cfg.final_dilation < 1) throw ConfigError("model: final dilation must be >= 1");

    // Weight draws happen in network order; the offset predictor draws nothing,
    // so plain and deformable configs with one seed share identical stage and
    // final weights.
    Rng rng(cfg.seed);
    std::int64_t in_c = 1;
    for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
        const std::int64_t out_c = cfg.widths[i];
        params_.create("stage" + std::to_string(i) + ".weight", he_init(out_c, in_c, rng));
        params_.create("stage" + std::to_string(i) + ".bias", Tensor(1, 1, 1, out_c));
        in_c = out_c;
    }
    params_.create("final.weight", he_init(1, in_c, rng));
    params_.create("final.bias", Tensor(1, 1, 1, 1));
    if (deformable()) {
        params_.create("offset.weight", Tensor(kOffsetChannels, in_c, 3, 3));
        params_.create("offset.bias", Tensor(1, 1, 1, kOffsetChannels));
    }
    // Keep values on the float32 grid from the start (checkpoint precision).
    params_.quantize_storage();
}

std::vector<double> Model::bias_vector(const std::string& name) const {
    const Tensor& t = params_.value(name);
    return std::vector<double>(t.data(), t.data() + t.size());
}

void Model::accumulate_bias(const std::string& name, const std::vector<double>& grad) {
    Tensor g(1, 1, 1, static_cast<std::int64_t>(grad.size()));
    for (std::size_t i = 0; i < grad.size(); ++i) g.data()[static_cast<std::int64_t>(i)] = grad[i];
    params_.accumulate_grad(name, g);
}

Tensor Model::forward(const Tensor& input, Trace* trace) const {
    if (trace) {
        trace->stage_convs.assign(cfg_.widths.size(), Conv2dNode{});
        trace->stage_relus.assign(cfg_.widths.size(), ReluNode{});
        trace->deformable = deformable();
    }
    Tensor cur = input;
    for (std::size_t i = 0; i < cfg_.widths.size(); ++i) {
        const std::string stage = "stage" + std::to_string(i);
        Tensor pre = conv2d(cur, params_.value(stage + ".weight"), bias_vector(stage + ".bias"), 1, 1,
                            1, trace ? &trace->stage_convs[i] : nullptr);
        cur = relu(pre, trace ? &trace->stage_relus[i] : nullptr);
    }
    if (!deformable())
        return conv2d(cur, params_.value("final.weight"), bias_vector("final.bias"), 1,
                      cfg_.final_dilation, cfg_.final_dilation, trace ? &trace->final_plain : nullptr);

    Tensor offsets = conv2d(cur, params_.value("offset.weight"), bias_vector("offset.bias"), 1, 1, 1,
                            trace ? &trace->offset_conv : nullptr);
    Tensor out = deform_conv2d(cur, offsets, params_.value("final.weight"),
                               bias_vector("final.bias"), geometry(),
                               trace ? &trace->final_deform : nullptr);
    if (trace) trace->offsets = std::move(offsets);
    return out;
}

void Model::backward(const Trace& trace, const Tensor& grad_pred, const Tensor* extra_offset_grad) {
    if (trace.deformable != deformable())
        throw ContractError("model backward: trace does not match this model's final layer");

    Tensor grad_features;
    if (deformable()) {
        DeformGrads dg = deform_conv2d_backward(grad_pred, trace.final_deform);
        params_.accumulate_grad("final.weight", dg.weight);
        accumulate_bias("final.bias", dg.bias);

        Tensor grad_offsets = std::move(dg.offsets);
        if (extra_offset_grad) {
            check_same_shape(grad_offsets, *extra_offset_grad, "model backward offset grads");
            for (std::int64_t i = 0; i < grad_offsets.size(); ++i)
                grad_offsets.data()[i] += extra_offset_grad->data()[i];
        }
        Conv2dGrads og = conv2d_backward(grad_offsets, trace.offset_conv);
        params_.accumulate_grad("offset.weight", og.weight);
        accumulate_bias("offset.bias", og.bias);

        grad_features = std::move(dg.input);
        for (std::int64_t i = 0; i < grad_features.size(); ++i)
            grad_features.data()[i] += og.input.data()[i];
    } else {
        Conv2dGrads cg = conv2d_backward(grad_pred, trace.final_plain);
        params_.accumulate_grad("final.weight", cg.weight);
        accumulate_bias("final.bias", cg.bias);
        grad_features = std::move(cg.input);
    }

    for (std::size_t i = cfg_.widths.size(); i-- > 0;) {
        const std::string stage = "stage" + std::to_string(i);
        Tensor grad_pre = relu_backward(grad_features, trace.stage_relus[i]);
        Conv2dGrads cg = conv2d_backward(grad_pre, trace.stage_convs[i]);
        params_.accumulate_grad(stage + ".weight", cg.weight);
        accumulate_bias(stage + ".bias", cg.bias);
        grad_features = std::move(cg.input);
    }
}

Model build_model(const ModelConfig& cfg) { return Model(cfg); }

}  // namespace ndconv
