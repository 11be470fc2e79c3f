#include "zsnmt/gradcheck.hpp"

#include <cmath>

#include "zsnmt/common.hpp"

namespace zsnmt {

GradCheckReport check_gradients(const LossBuilder& builder, ParamSet& params,
                                const GradCheckOptions& opts) {
  Tape tape;
  Tensor loss = builder(&tape);
  GradMap grads = tape.backward(loss);

  GradCheckReport report;
  Rng pick(fnv1a_u64(opts.sample_seed, fnv1a("gradcheck")));
  for (auto& [name, p] : params.items) {
    GradCheckEntry entry;
    entry.name = name;
    const auto git = grads.find(p.id);
    const int64_t n = p.numel();

    std::vector<int64_t> indices;
    if (opts.sample_per_param <= 0 || opts.sample_per_param >= n) {
      indices.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) indices[static_cast<size_t>(i)] = i;
    } else {
      for (int i = 0; i < opts.sample_per_param; ++i) {
        indices.push_back(pick.below(static_cast<int>(n)));
      }
    }

    for (int64_t idx : indices) {
      const double analytic = git == grads.end() ? 0.0 : git->second.ptr()[idx];
      double* slot = p.ptr() + idx;
      const double saved = *slot;
      *slot = saved + opts.h;
      const double up = builder(nullptr).value();
      *slot = saved - opts.h;
      const double down = builder(nullptr).value();
      *slot = saved;
      const double numeric = (up - down) / (2.0 * opts.h);
      const double abs_err = std::abs(analytic - numeric);
      const double rel =
          abs_err / std::max({1.0, std::abs(analytic), std::abs(numeric)});
      entry.max_abs_err = std::max(entry.max_abs_err, abs_err);
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
      ++entry.entries_checked;
    }
    report.worst_rel_err = std::max(report.worst_rel_err, entry.max_rel_err);
    report.per_param.push_back(std::move(entry));
  }
  return report;
}

}  // namespace zsnmt
