// Shared-encoder / shared-decoder transformer for many-to-many translation.
// The desired output language is requested by prepending its <tl:..> token to
// the encoder input. One embedding table serves encoder input, decoder input,
// and (transposed) the output projection.
#pragma once

#include <span>
#include <vector>

#include "zsnmt/corpus.hpp"
#include "zsnmt/optim.hpp"
#include "zsnmt/tensor.hpp"

namespace zsnmt {

struct ModelConfig {
  int d_model = 64;
  int n_heads = 4;
  int enc_layers = 2;
  int dec_layers = 2;
  int ffn = 128;
  double dropout = 0.1;
  int max_len = 32;
  // 0 selects the default 1/sqrt(d_model)
  double emb_init_scale = 0.0;

  void validate() const;
  double effective_emb_scale() const;
};

// Forward-pass context: tape for gradient recording (nullptr in inference),
// dropout stream, and the train/eval switch. `dropout` < 0 means "use the
// model config's rate".
struct RunCtx {
  Tape* tape = nullptr;
  Rng* drop_rng = nullptr;
  bool train = false;
  double dropout = -1.0;
};

struct AttnWeights {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};
struct LayerNormW {
  Tensor gain, bias;
};
struct FfnWeights {
  Tensor w1, b1, w2, b2;
};
struct EncLayer {
  LayerNormW ln1;
  AttnWeights self_attn;
  LayerNormW ln2;
  FfnWeights ffn;
};
struct DecLayer {
  LayerNormW ln1;
  AttnWeights self_attn;
  LayerNormW ln2;
  AttnWeights cross_attn;
  LayerNormW ln3;
  FfnWeights ffn;
};

struct ModelParams {
  ModelConfig config;
  int vocab_size = 0;
  int n_languages = 0;
  uint64_t vocab_hash = 0;

  ParamSet set;  // canonical named order; the structured views below share storage
  Tensor embedding;
  std::vector<EncLayer> enc;
  LayerNormW enc_final;
  std::vector<DecLayer> dec;
  LayerNormW dec_final;
  Tensor pos_table;  // sinusoidal, constant

  int tl_token(int lang) const;
};

ModelParams make_model(const ModelConfig& config, const Vocab& vocab, Rng& init);
// Closed-form parameter count; guards wiring errors.
int64_t expected_param_count(const ModelConfig& config, int vocab_size);

struct EncoderStates {
  Tensor states;      // [src_len + 1, d_model]
  int valid_len = 0;  // positions beyond this are padding
};

// Prepends <tl:lang> and runs the encoder. Trailing PAD tokens in `src` are
// masked out of attention and pooling; PAD before a real token is an error.
EncoderStates encode(const ModelParams& params, std::span<const int> src, int tl_lang,
                     const RunCtx& ctx = {});

// BOS-shifted teacher forcing helpers.
std::vector<int> teacher_input(std::span<const int> tgt);
std::vector<int> teacher_target(std::span<const int> tgt);

struct DecodeResult {
  Tensor logits;         // [len(dec_input), vocab]
  Tensor context_trace;  // last decoder layer cross-attention context, [len, d_model]
};

DecodeResult decode_train(const ModelParams& params, const EncoderStates& enc,
                          std::span<const int> dec_input, const RunCtx& ctx = {});

struct Translation {
  std::vector<int> tokens;
  bool truncated = false;
};

// Greedy argmax decoding until EOS or max_len. Deterministic.
Translation translate(const ModelParams& params, std::span<const int> src, int tl_lang,
                      int max_len);

struct PivotTranslation {
  std::vector<int> tokens;
  std::vector<int> intermediate;  // the pivot-language hop, kept for inspection
  bool truncated = false;
};

// Two-hop translation through L0. Degenerate hops collapse: an L0 source skips
// the first hop, an L0 target skips the second.
PivotTranslation pivot_translate(const ModelParams& params, std::span<const int> src,
                                 int src_lang, int tl_lang, int max_len);

// Elementwise max over the non-pad encoder positions.
Tensor pooled_encoding(Tape* tape, const EncoderStates& enc);

}  // namespace zsnmt
