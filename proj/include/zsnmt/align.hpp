// Auxiliary losses that make encoder representations source-language
// invariant: a binary domain discriminator over pooled encodings (trained
// against the encoder) and a cosine loss between pooled encodings of
// translation pairs. Combined with the translation loss as CE + lambda * omega.
#pragma once

#include <string>
#include <vector>

#include "zsnmt/model.hpp"
#include "zsnmt/optim.hpp"
#include "zsnmt/tensor.hpp"

namespace zsnmt {

enum class AlignMethod { none, adversarial, pool_cosine };

std::string align_method_name(AlignMethod m);
AlignMethod align_method_from_name(const std::string& s);

struct AlignConfig {
  AlignMethod method = AlignMethod::none;
  double lambda = 1.0;
  double disc_lr = 1e-4;
  // <tl:..> fed with the paired (target-side) sentence when it is encoded for
  // the alignment loss: the pair's source language by default.
  bool paired_tl_is_src_lang = true;

  void validate() const;
};

// Binary predictor over pooled encoder outputs, independent of how many
// languages are trained jointly. 3 hidden layers of width 4*d_model with
// leaky ReLU(0.1); the output layer starts at zero so the initial prediction
// is exactly 0.5.
struct Discriminator {
  int in_dim = 0;
  int hidden = 0;
  ParamSet set;  // all names under "disc/"

  // Raw logit(s); input is a pooled vector [d] or a stack [n, d].
  Tensor logit(Tape* tape, const Tensor& pooled) const;
  // Same forward with the weights detached: gradients flow into the input
  // (the encoder) but not into the discriminator parameters.
  Tensor logit_frozen(Tape* tape, const Tensor& pooled) const;
  // Probability the input came from the pivot-language group, in (0,1).
  double predict(const Tensor& pooled) const;
};

Discriminator make_discriminator(int d_model, Rng& init);
int64_t expected_discriminator_param_count(int d_model);

// Mean over pairs of (1 - cos(pool(enc_src), pool(enc_paired))); gradients
// flow into the encoder through both sides.
Tensor cosine_alignment_loss(Tape* tape, std::span<const EncoderStates> enc_src,
                             std::span<const EncoderStates> enc_paired);

struct AdversarialLosses {
  Tensor disc_loss;     // updates the discriminator only
  Tensor enc_adv_loss;  // = -disc_loss value; updates the encoder only
};

// disc_loss = mean[-log D(pooled_en)] + mean[-log(1 - D(pooled_t))], built so
// that one backward pass gives the discriminator its own-gradient and the
// encoder the reversed gradient, with no cross-contamination.
AdversarialLosses adversarial_losses(Tape* tape, const std::vector<Tensor>& pooled_en,
                                     const std::vector<Tensor>& pooled_t,
                                     const Discriminator& disc);

// CE + lambda * omega. lambda == 0 returns ce itself (bitwise identity).
Tensor combined_loss(Tape* tape, const Tensor& ce, const Tensor& omega, double lambda);

}  // namespace zsnmt
