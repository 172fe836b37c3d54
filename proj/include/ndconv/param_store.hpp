#pragma once

#include <map>
#include <string>
#include <vector>

#include "ndconv/tensor.hpp"

namespace ndconv {

// One named parameter: value, accumulated gradient, Adam moments, and a
// per-parameter step counter. All four tensors share one shape.
struct ParamEntry {
    Tensor value;
    Tensor grad;
    Tensor m;
    Tensor v;
    std::int64_t step = 0;
};

// Ordered name -> entry map. The ordering (std::map) fixes iteration order so
// checkpoints and update sweeps are deterministic. Single-writer contract:
// only gradient accumulation and adam_step mutate entries.
class ParameterStore {
public:
    Tensor& create(const std::string& name, const Tensor& init);

    bool has(const std::string& name) const { return entries_.count(name) != 0; }
    ParamEntry& entry(const std::string& name);
    const ParamEntry& entry(const std::string& name) const;
    Tensor& value(const std::string& name) { return entry(name).value; }
    const Tensor& value(const std::string& name) const { return entry(name).value; }

    void accumulate_grad(const std::string& name, const Tensor& g);
    void zero_grads();

    // Snap value and Adam moments to the float32 grid (the at-rest precision of
    // checkpoints); called by the harness after init and after each step so a
    // saved-and-reloaded run continues on exactly the same trajectory.
    void quantize_storage();

    std::vector<std::string> names() const;
    std::size_t size() const { return entries_.size(); }

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

private:
    std::map<std::string, ParamEntry> entries_;
};

// Standard Adam with bias correction. Verifies every gradient is finite before
// touching any value (a nonfinite gradient aborts the whole step and names the
// offending parameter); increments each step counter; zeroes gradients after
// the update.
void adam_step(ParameterStore& store, double lr, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8);

}  // namespace ndconv
