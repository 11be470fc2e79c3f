#include "zsnmt/optim.hpp"

#include <cmath>

namespace zsnmt {

void optimizer_step(OptimizerState& state, ParamSet& params, const GradMap& grads, double lr) {
  const size_t np = params.items.size();
  if (state.kind == OptimizerState::Kind::adam && state.m.empty()) {
    state.m.reserve(np);
    state.v.reserve(np);
    for (const auto& [name, p] : params.items) {
      state.m.push_back(Tensor::zeros(p.shape));
      state.v.push_back(Tensor::zeros(p.shape));
    }
  }
  if (state.kind == OptimizerState::Kind::adam && state.m.size() != np) {
    throw Error("optimizer_step: moment count does not match parameter count");
  }
  state.step += 1;

  for (size_t i = 0; i < np; ++i) {
    auto& [name, p] = params.items[i];
    const auto it = grads.find(p.id);
    const Tensor* g = it == grads.end() ? nullptr : &it->second;
    if (g != nullptr) {
      if (g->shape != p.shape) {
        throw ShapeError("optimizer_step: gradient shape " + shape_str(g->shape) +
                         " does not match parameter " + name + " " + shape_str(p.shape));
      }
      for (double gv : *g->data) {
        if (std::isnan(gv)) {
          throw NumericError("optimizer_step: NaN gradient for parameter " + name);
        }
      }
    }
    const int64_t n = p.numel();
    double* pp = p.ptr();
    if (state.kind == OptimizerState::Kind::sgd) {
      if (!g) continue;
      const double* pg = g->ptr();
      for (int64_t j = 0; j < n; ++j) pp[j] -= lr * pg[j];
    } else {
      double* pm = state.m[i].ptr();
      double* pv = state.v[i].ptr();
      const double b1 = state.beta1, b2 = state.beta2;
      const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
      const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
      for (int64_t j = 0; j < n; ++j) {
        const double gv = g ? g->ptr()[j] : 0.0;
        pm[j] = b1 * pm[j] + (1.0 - b1) * gv;
        pv[j] = b2 * pv[j] + (1.0 - b2) * gv * gv;
        const double mhat = pm[j] / bc1;
        const double vhat = pv[j] / bc2;
        pp[j] -= lr * mhat / (std::sqrt(vhat) + state.eps);
      }
    }
  }
}

}  // namespace zsnmt
