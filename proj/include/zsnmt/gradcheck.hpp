// Finite-difference verification of tape gradients.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "zsnmt/optim.hpp"
#include "zsnmt/tensor.hpp"

namespace zsnmt {

// Builds a scalar loss from the current parameter values. Called with a tape
// for the analytic pass and with nullptr for each finite-difference probe;
// it must be deterministic across calls.
using LossBuilder = std::function<Tensor(Tape*)>;

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  int entries_checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> per_param;
  double worst_rel_err = 0.0;
  bool within(double tol) const { return worst_rel_err <= tol; }
};

struct GradCheckOptions {
  double h = 1e-5;           // central-difference step
  int sample_per_param = 0;  // 0: check every entry; else sample this many
  uint64_t sample_seed = 0;
};

// Compares backward-pass gradients against central finite differences
// |f(p+h) - f(p-h)| / 2h for each (sampled) parameter entry. Relative error
// uses max(1, |analytic|, |numeric|) in the denominator so tiny gradients are
// judged on absolute terms. Report-only: never throws on mismatches.
GradCheckReport check_gradients(const LossBuilder& builder, ParamSet& params,
                                const GradCheckOptions& opts = {});

}  // namespace zsnmt
