#include "ndconv/param_store.hpp"

#include <cmath>

#include "ndconv/error.hpp"

namespace ndconv {

Tensor& ParameterStore::create(const std::string& name, const Tensor& init) {
    if (has(name)) throw ConfigError("parameter already exists: " + name);
    ParamEntry e;
    e.value = init;
    e.grad = Tensor::zeros_like(init);
    e.m = Tensor::zeros_like(init);
    e.v = Tensor::zeros_like(init);
    return entries_.emplace(name, std::move(e)).first->second.value;
}

ParamEntry& ParameterStore::entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("no such parameter: " + name);
    return it->second;
}

const ParamEntry& ParameterStore::entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("no such parameter: " + name);
    return it->second;
}

void ParameterStore::accumulate_grad(const std::string& name, const Tensor& g) {
    ParamEntry& e = entry(name);
    check_same_shape(e.grad, g, "accumulate_grad");
    for (std::int64_t i = 0; i < g.size(); ++i) e.grad.data()[i] += g.data()[i];
}

void ParameterStore::zero_grads() {
    for (auto& [name, e] : entries_) e.grad.fill(0.0);
}

void ParameterStore::quantize_storage() {
    for (auto& [name, e] : entries_) {
        e.value.quantize_f32();
        e.m.quantize_f32();
        e.v.quantize_f32();
    }
}

std::vector<std::string> ParameterStore::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, e] : entries_) out.push_back(name);
    return out;
}

void adam_step(ParameterStore& store, double lr, double beta1, double beta2, double eps) {
    // Validate first so a bad gradient cannot leave the store half-updated.
    for (const auto& [name, e] : store)
        if (!e.grad.all_finite()) throw NumericError("adam_step: nonfinite gradient in " + name);

    for (auto& [name, e] : store) {
        e.step += 1;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(e.step));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(e.step));
        for (std::int64_t i = 0; i < e.value.size(); ++i) {
            const double g = e.grad.data()[i];
            const double m = beta1 * e.m.data()[i] + (1.0 - beta1) * g;
            const double v = beta2 * e.v.data()[i] + (1.0 - beta2) * g * g;
            e.m.data()[i] = m;
            e.v.data()[i] = v;
            e.value.data()[i] -= lr * (m / bc1) / (std::sqrt(v / bc2) + eps);
        }
        e.grad.fill(0.0);
    }
}

}  // namespace ndconv
