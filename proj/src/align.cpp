#include "zsnmt/align.hpp"

#include <cmath>

namespace zsnmt {

namespace {

Tensor glorot(Shape shape, Rng& rng) {
  Tensor t = Tensor::zeros(shape);
  const double limit = std::sqrt(6.0 / (shape[0] + (shape.size() > 1 ? shape[1] : 1)));
  for (double& v : *t.data) v = rng.uniform(-limit, limit);
  return t;
}

Tensor as_row_matrix(Tape* tape, const Tensor& x) {
  if (x.shape.size() == 2) return x;
  return concat(tape, {x}, 0);  // [d] -> [1, d]
}

Tensor disc_forward(Tape* tape, const ParamSet& set, const Tensor& pooled, bool frozen) {
  auto weight = [&](const char* name) {
    const Tensor* t = set.find(name);
    if (t == nullptr) throw Error(std::string("discriminator: missing parameter ") + name);
    return frozen ? t->detached() : *t;
  };
  Tensor h = as_row_matrix(tape, pooled);
  h = leaky_relu(tape, add(tape, matmul(tape, h, weight("disc/w0")), weight("disc/b0")), 0.1);
  h = leaky_relu(tape, add(tape, matmul(tape, h, weight("disc/w1")), weight("disc/b1")), 0.1);
  h = leaky_relu(tape, add(tape, matmul(tape, h, weight("disc/w2")), weight("disc/b2")), 0.1);
  return add(tape, matmul(tape, h, weight("disc/w_out")), weight("disc/b_out"));
}

}  // namespace

std::string align_method_name(AlignMethod m) {
  switch (m) {
    case AlignMethod::none: return "none";
    case AlignMethod::adversarial: return "adversarial";
    case AlignMethod::pool_cosine: return "cosine";
  }
  return "?";
}

AlignMethod align_method_from_name(const std::string& s) {
  if (s == "none") return AlignMethod::none;
  if (s == "adversarial") return AlignMethod::adversarial;
  if (s == "cosine" || s == "pool_cosine" || s == "pool-cosine") return AlignMethod::pool_cosine;
  throw ConfigError("unknown alignment method: " + s);
}

void AlignConfig::validate() const {
  if (lambda < 0.0) throw ConfigError("align.lambda must be >= 0");
  if (disc_lr <= 0.0) throw ConfigError("align.disc_lr must be > 0");
}

Tensor Discriminator::logit(Tape* tape, const Tensor& pooled) const {
  return disc_forward(tape, set, pooled, /*frozen=*/false);
}

Tensor Discriminator::logit_frozen(Tape* tape, const Tensor& pooled) const {
  return disc_forward(tape, set, pooled, /*frozen=*/true);
}

double Discriminator::predict(const Tensor& pooled) const {
  const Tensor l = disc_forward(nullptr, set, pooled, /*frozen=*/true);
  return sigmoid(nullptr, l).at(0);
}

Discriminator make_discriminator(int d_model, Rng& init) {
  Discriminator d;
  d.in_dim = d_model;
  d.hidden = 4 * d_model;
  d.set.add("disc/w0", glorot({d_model, d.hidden}, init));
  d.set.add("disc/b0", Tensor::zeros({d.hidden}));
  d.set.add("disc/w1", glorot({d.hidden, d.hidden}, init));
  d.set.add("disc/b1", Tensor::zeros({d.hidden}));
  d.set.add("disc/w2", glorot({d.hidden, d.hidden}, init));
  d.set.add("disc/b2", Tensor::zeros({d.hidden}));
  // Zero output layer: the untrained discriminator predicts exactly 0.5.
  d.set.add("disc/w_out", Tensor::zeros({d.hidden, 1}));
  d.set.add("disc/b_out", Tensor::zeros({1}));
  return d;
}

int64_t expected_discriminator_param_count(int d_model) {
  const int64_t h = 4 * d_model;
  return d_model * h + h + 2 * (h * h + h) + h + 1;
}

Tensor cosine_alignment_loss(Tape* tape, std::span<const EncoderStates> enc_src,
                             std::span<const EncoderStates> enc_paired) {
  if (enc_src.empty() || enc_src.size() != enc_paired.size()) {
    throw Error("cosine_alignment_loss: need equal, non-empty encoding lists");
  }
  Tensor total = Tensor::scalar(0.0);
  for (size_t i = 0; i < enc_src.size(); ++i) {
    const Tensor a = pooled_encoding(tape, enc_src[i]);
    const Tensor b = pooled_encoding(tape, enc_paired[i]);
    const Tensor dist =
        add(tape, Tensor::scalar(1.0), scale(tape, cosine_similarity(tape, a, b), -1.0));
    total = add(tape, total, dist);
  }
  return scale(tape, total, 1.0 / static_cast<double>(enc_src.size()));
}

AdversarialLosses adversarial_losses(Tape* tape, const std::vector<Tensor>& pooled_en,
                                     const std::vector<Tensor>& pooled_t,
                                     const Discriminator& disc) {
  if (pooled_en.empty() || pooled_t.empty()) {
    throw Error("adversarial_losses: both language groups must be non-empty");
  }
  std::vector<Tensor> en_rows, t_rows;
  for (const Tensor& p : pooled_en) en_rows.push_back(p);
  for (const Tensor& p : pooled_t) t_rows.push_back(p);
  const Tensor en = concat(tape, en_rows, 0);
  const Tensor tt = concat(tape, t_rows, 0);

  // Discriminator branch: live weights, detached inputs.
  const Tensor disc_loss =
      add(tape, logistic_nll(tape, disc.logit(tape, en.detached()), /*positive_class=*/true),
          logistic_nll(tape, disc.logit(tape, tt.detached()), /*positive_class=*/false));
  // Encoder branch: frozen weights, live inputs, negated objective.
  const Tensor enc_bce =
      add(tape, logistic_nll(tape, disc.logit_frozen(tape, en), /*positive_class=*/true),
          logistic_nll(tape, disc.logit_frozen(tape, tt), /*positive_class=*/false));
  return AdversarialLosses{disc_loss, scale(tape, enc_bce, -1.0)};
}

Tensor combined_loss(Tape* tape, const Tensor& ce, const Tensor& omega, double lambda) {
  if (lambda == 0.0) return ce;
  return add(tape, ce, scale(tape, omega, lambda));
}

}  // namespace zsnmt
