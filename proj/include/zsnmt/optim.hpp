// Named parameter sets and the two optimizers used here: Adam (pretraining,
// with the inverse-sqrt warmup schedule supplied by the caller) and plain SGD
// (alignment fine-tuning).
#pragma once

#include <string>
#include <vector>

#include "zsnmt/tensor.hpp"

namespace zsnmt {

// Ordered, named collection of trainable tensors. The order is the canonical
// one used for checkpoints and optimizer state.
struct ParamSet {
  std::vector<std::pair<std::string, Tensor>> items;

  Tensor& add(const std::string& name, Tensor t) {
    t.requires_grad = true;
    items.emplace_back(name, std::move(t));
    return items.back().second;
  }
  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : items)
      if (n == name) return &t;
    return nullptr;
  }
  Tensor* find(const std::string& name) {
    for (auto& [n, t] : items)
      if (n == name) return &t;
    return nullptr;
  }
  int64_t total_params() const {
    int64_t n = 0;
    for (const auto& [name, t] : items) n += t.numel();
    return n;
  }
};

struct OptimizerState {
  enum class Kind { adam, sgd };
  Kind kind = Kind::adam;
  int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  // Per-parameter moment accumulators, aligned with the ParamSet order
  // (adam only; empty for sgd).
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  static OptimizerState adam(double beta1 = 0.9, double beta2 = 0.98, double eps = 1e-9) {
    OptimizerState s;
    s.kind = Kind::adam;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.eps = eps;
    return s;
  }
  static OptimizerState sgd() {
    OptimizerState s;
    s.kind = Kind::sgd;
    return s;
  }
};

// In-place update of every parameter that received a gradient. Parameters
// without a gradient entry are treated as zero-gradient. Throws NumericError
// naming the parameter if its gradient contains NaN.
void optimizer_step(OptimizerState& state, ParamSet& params, const GradMap& grads, double lr);

}  // namespace zsnmt
