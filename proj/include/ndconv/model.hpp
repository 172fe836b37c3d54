#pragma once

#include <string>
#include <vector>

#include "ndconv/deform.hpp"
#include "ndconv/ops.hpp"
#include "ndconv/param_store.hpp"

namespace ndconv {

// What the last layer is: a plain dilated conv, a deformable conv trained with
// no offset regularizer, or a deformable conv regularized by the literal /
// corner-variant regularity loss.
enum class FinalLayerKind { plain, deform, nd_literal, nd_corner };

std::string final_kind_to_string(FinalLayerKind kind);
FinalLayerKind final_kind_from_string(const std::string& s);

struct ModelConfig {
    std::vector<std::int64_t> widths = {16, 32, 16};  // channels per plain stage
    std::int64_t final_dilation = 2;
    FinalLayerKind final_kind = FinalLayerKind::nd_literal;
    std::uint64_t seed = 0;

    bool operator==(const ModelConfig&) const = default;
};

// Stack of (3x3 conv -> relu) stages followed by a single-channel final layer.
// Deformable variants attach an offset-predicting 3x3 conv (18 channels) whose
// weights and bias start at exactly zero, so the first forward pass equals the
// plain dilated model with the same seed.
class Model {
public:
    explicit Model(const ModelConfig& cfg);

    const ModelConfig& config() const { return cfg_; }
    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }

    bool deformable() const { return cfg_.final_kind != FinalLayerKind::plain; }
    bool corner_variant() const { return cfg_.final_kind == FinalLayerKind::nd_corner; }
    GridGeometry geometry() const { return GridGeometry(cfg_.final_dilation); }

    // Saved per-op activations of one forward pass, consumed (in reverse
    // creation order) by backward.
    struct Trace {
        std::vector<Conv2dNode> stage_convs;
        std::vector<ReluNode> stage_relus;
        Conv2dNode offset_conv;
        DeformNode final_deform;
        Conv2dNode final_plain;
        Tensor offsets;  // offset field of this pass (deformable kinds only)
        bool deformable = false;
    };

    Tensor forward(const Tensor& input, Trace* trace = nullptr) const;

    // Accumulates parameter gradients for the pass recorded in trace.
    // extra_offset_grad, when given, is added to the gradient arriving at the
    // offset field (the regularizer's contribution).
    void backward(const Trace& trace, const Tensor& grad_pred,
                  const Tensor* extra_offset_grad = nullptr);

private:
    ModelConfig cfg_;
    ParameterStore params_;

    std::vector<double> bias_vector(const std::string& name) const;
    void accumulate_bias(const std::string& name, const std::vector<double>& grad);
};

Model build_model(const ModelConfig& cfg);

}  // namespace ndconv
