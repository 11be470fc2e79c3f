#include "zsnmt/model.hpp"

#include <cmath>

namespace zsnmt {

namespace {

constexpr double kMaskedOut = -1e30;

Tensor glorot(Shape shape, Rng& rng) {
  Tensor t = Tensor::zeros(shape);
  const double limit = std::sqrt(6.0 / (shape[0] + (shape.size() > 1 ? shape[1] : 1)));
  for (double& v : *t.data) v = rng.uniform(-limit, limit);
  return t;
}

AttnWeights add_attention(ParamSet& set, const std::string& prefix, int d, Rng& rng) {
  AttnWeights w;
  w.wq = set.add(prefix + "/wq", glorot({d, d}, rng));
  w.bq = set.add(prefix + "/bq", Tensor::zeros({d}));
  w.wk = set.add(prefix + "/wk", glorot({d, d}, rng));
  w.bk = set.add(prefix + "/bk", Tensor::zeros({d}));
  w.wv = set.add(prefix + "/wv", glorot({d, d}, rng));
  w.bv = set.add(prefix + "/bv", Tensor::zeros({d}));
  w.wo = set.add(prefix + "/wo", glorot({d, d}, rng));
  w.bo = set.add(prefix + "/bo", Tensor::zeros({d}));
  return w;
}

LayerNormW add_layer_norm(ParamSet& set, const std::string& prefix, int d) {
  LayerNormW w;
  w.gain = set.add(prefix + "/gain", Tensor::full({d}, 1.0));
  w.bias = set.add(prefix + "/bias", Tensor::zeros({d}));
  return w;
}

FfnWeights add_ffn(ParamSet& set, const std::string& prefix, int d, int ffn, Rng& rng) {
  FfnWeights w;
  w.w1 = set.add(prefix + "/w1", glorot({d, ffn}, rng));
  w.b1 = set.add(prefix + "/b1", Tensor::zeros({ffn}));
  w.w2 = set.add(prefix + "/w2", glorot({ffn, d}, rng));
  w.b2 = set.add(prefix + "/b2", Tensor::zeros({d}));
  return w;
}

Tensor sinusoidal_positions(int max_len, int d) {
  Tensor t = Tensor::zeros({max_len, d});
  for (int pos = 0; pos < max_len; ++pos) {
    for (int i = 0; i < d; i += 2) {
      const double angle = pos / std::pow(10000.0, static_cast<double>(i) / d);
      t.at(pos, i) = std::sin(angle);
      if (i + 1 < d) t.at(pos, i + 1) = std::cos(angle);
    }
  }
  return t;
}

struct ResolvedCtx {
  Tape* tape;
  Rng* rng;
  double rate;  // 0 disables dropout
};

ResolvedCtx resolve(const ModelParams& params, const RunCtx& ctx) {
  double rate = 0.0;
  if (ctx.train) {
    rate = ctx.dropout >= 0.0 ? ctx.dropout : params.config.dropout;
    if (rate > 0.0 && ctx.drop_rng == nullptr) {
      throw Error("model forward: training with dropout requires a dropout rng");
    }
  }
  return {ctx.tape, ctx.drop_rng, rate};
}

Tensor maybe_dropout(const ResolvedCtx& rc, const Tensor& x) {
  if (rc.rate <= 0.0) return x;
  return dropout(rc.tape, x, rc.rate, *rc.rng);
}

// Number of leading non-PAD tokens; PAD may only appear as a suffix.
int leading_valid(std::span<const int> tokens, const char* where) {
  int valid = 0;
  bool in_pad = false;
  for (int id : tokens) {
    if (id == Vocab::PAD) {
      in_pad = true;
    } else {
      if (in_pad) throw ShapeError(std::string(where) + ": PAD before a real token");
      ++valid;
    }
  }
  return valid;
}

void check_ids(const ModelParams& params, std::span<const int> tokens, const char* where) {
  for (int id : tokens) {
    if (id < 0 || id >= params.vocab_size) {
      throw ShapeError(std::string(where) + ": token id " + std::to_string(id) +
                       " outside vocab of " + std::to_string(params.vocab_size));
    }
  }
}

// Additive attention mask [tq, tk]: 0 where attending is allowed, else a large
// negative constant. Causal restricts to k <= q; valid_k masks padded keys.
Tensor attn_mask(int tq, int tk, int valid_k, bool causal) {
  Tensor m = Tensor::zeros({tq, tk});
  for (int q = 0; q < tq; ++q) {
    for (int k = 0; k < tk; ++k) {
      const bool blocked = k >= valid_k || (causal && k > q);
      if (blocked) m.at(q, k) = kMaskedOut;
    }
  }
  return m;
}

Tensor positions_for(const ModelParams& params, int len) {
  Tensor t = Tensor::zeros({len, params.config.d_model});
  std::copy_n(params.pos_table.ptr(), static_cast<size_t>(len) * params.config.d_model, t.ptr());
  return t;
}

Tensor attention(const ResolvedCtx& rc, const AttnWeights& w, const Tensor& q_in,
                 const Tensor& kv_in, const Tensor* mask, int n_heads,
                 Tensor* context_out) {
  Tape* tape = rc.tape;
  const int d = q_in.shape[1];
  const int dh = d / n_heads;
  const Tensor q = add(tape, matmul(tape, q_in, w.wq), w.bq);
  const Tensor k = add(tape, matmul(tape, kv_in, w.wk), w.bk);
  const Tensor v = add(tape, matmul(tape, kv_in, w.wv), w.bv);
  std::vector<Tensor> heads;
  heads.reserve(static_cast<size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    const Tensor qh = slice_cols(tape, q, h * dh, (h + 1) * dh);
    const Tensor kh = slice_cols(tape, k, h * dh, (h + 1) * dh);
    const Tensor vh = slice_cols(tape, v, h * dh, (h + 1) * dh);
    Tensor scores = scale(tape, matmul(tape, qh, transpose(tape, kh)), 1.0 / std::sqrt(dh));
    if (mask != nullptr) scores = add(tape, scores, *mask);
    const Tensor attn = softmax(tape, scores);
    heads.push_back(matmul(tape, attn, vh));
  }
  const Tensor context = concat(tape, heads, 1);
  if (context_out != nullptr) *context_out = context;
  return add(tape, matmul(tape, context, w.wo), w.bo);
}

Tensor feed_forward(const ResolvedCtx& rc, const FfnWeights& w, const Tensor& x) {
  Tape* tape = rc.tape;
  const Tensor h = leaky_relu(tape, add(tape, matmul(tape, x, w.w1), w.b1), 0.0);
  return add(tape, matmul(tape, h, w.w2), w.b2);
}

Tensor embed_input(const ModelParams& params, const ResolvedCtx& rc,
                   std::span<const int> ids) {
  Tape* tape = rc.tape;
  const Tensor emb = embedding_lookup(tape, params.embedding, ids);
  const Tensor scaled = scale(tape, emb, std::sqrt(static_cast<double>(params.config.d_model)));
  const Tensor with_pos = add(tape, scaled, positions_for(params, static_cast<int>(ids.size())));
  return maybe_dropout(rc, with_pos);
}

}  // namespace

void ModelConfig::validate() const {
  if (d_model < 2 || n_heads < 1 || d_model % n_heads != 0) {
    throw ConfigError("model: d_model must be positive and divisible by n_heads");
  }
  if (enc_layers < 1 || dec_layers < 1 || ffn < 1) {
    throw ConfigError("model: layer and ffn sizes must be >= 1");
  }
  if (dropout < 0.0 || dropout >= 1.0) {
    throw ConfigError("model: dropout must be in [0,1)");
  }
  if (max_len < 4) throw ConfigError("model: max_len must be >= 4");
}

double ModelConfig::effective_emb_scale() const {
  return emb_init_scale > 0.0 ? emb_init_scale : 1.0 / std::sqrt(static_cast<double>(d_model));
}

int ModelParams::tl_token(int lang) const {
  if (lang < 0 || lang >= n_languages) {
    throw Error("tl_token: bad language " + std::to_string(lang));
  }
  return Vocab::kReserved + lang;
}

ModelParams make_model(const ModelConfig& config, const Vocab& vocab, Rng& init) {
  config.validate();
  ModelParams mp;
  mp.config = config;
  mp.vocab_size = vocab.size();
  mp.n_languages = vocab.n_languages;
  mp.vocab_hash = vocab.hash();

  const int d = config.d_model;
  Tensor emb = Tensor::zeros({mp.vocab_size, d});
  const double scale = config.effective_emb_scale();
  for (double& v : *emb.data) v = init.normal() * scale;
  mp.embedding = mp.set.add("emb/table", std::move(emb));

  for (int l = 0; l < config.enc_layers; ++l) {
    const std::string base = "enc/" + std::to_string(l);
    EncLayer layer;
    layer.ln1 = add_layer_norm(mp.set, base + "/ln1", d);
    layer.self_attn = add_attention(mp.set, base + "/self", d, init);
    layer.ln2 = add_layer_norm(mp.set, base + "/ln2", d);
    layer.ffn = add_ffn(mp.set, base + "/ffn", d, config.ffn, init);
    mp.enc.push_back(std::move(layer));
  }
  mp.enc_final = add_layer_norm(mp.set, "enc/final_ln", d);

  for (int l = 0; l < config.dec_layers; ++l) {
    const std::string base = "dec/" + std::to_string(l);
    DecLayer layer;
    layer.ln1 = add_layer_norm(mp.set, base + "/ln1", d);
    layer.self_attn = add_attention(mp.set, base + "/self", d, init);
    layer.ln2 = add_layer_norm(mp.set, base + "/ln2", d);
    layer.cross_attn = add_attention(mp.set, base + "/cross", d, init);
    layer.ln3 = add_layer_norm(mp.set, base + "/ln3", d);
    layer.ffn = add_ffn(mp.set, base + "/ffn", d, config.ffn, init);
    mp.dec.push_back(std::move(layer));
  }
  mp.dec_final = add_layer_norm(mp.set, "dec/final_ln", d);
  mp.pos_table = sinusoidal_positions(config.max_len, d);
  return mp;
}

int64_t expected_param_count(const ModelConfig& c, int vocab_size) {
  const int64_t d = c.d_model, f = c.ffn;
  const int64_t ln = 2 * d;
  const int64_t attn = 4 * (d * d + d);
  const int64_t ffn = d * f + f + f * d + d;
  const int64_t enc_layer = ln + attn + ln + ffn;
  const int64_t dec_layer = ln + attn + ln + attn + ln + ffn;
  return static_cast<int64_t>(vocab_size) * d + c.enc_layers * enc_layer + ln +
         c.dec_layers * dec_layer + ln;
}

EncoderStates encode(const ModelParams& params, std::span<const int> src, int tl_lang,
                     const RunCtx& ctx) {
  const ResolvedCtx rc = resolve(params, ctx);
  check_ids(params, src, "encode");
  const int src_valid = leading_valid(src, "encode");
  std::vector<int> ids;
  ids.reserve(src.size() + 1);
  ids.push_back(params.tl_token(tl_lang));
  ids.insert(ids.end(), src.begin(), src.end());
  const int t_len = static_cast<int>(ids.size());
  if (t_len > params.config.max_len) {
    throw ShapeError("encode: input length " + std::to_string(t_len) + " exceeds max_len " +
                     std::to_string(params.config.max_len));
  }
  const int valid = src_valid + 1;

  Tape* tape = rc.tape;
  Tensor x = embed_input(params, rc, ids);
  const Tensor mask = attn_mask(t_len, t_len, valid, /*causal=*/false);
  for (const EncLayer& layer : params.enc) {
    const Tensor h1 = layer_norm(tape, x, layer.ln1.gain, layer.ln1.bias);
    x = add(tape, x,
            maybe_dropout(rc, attention(rc, layer.self_attn, h1, h1, &mask,
                                        params.config.n_heads, nullptr)));
    const Tensor h2 = layer_norm(tape, x, layer.ln2.gain, layer.ln2.bias);
    x = add(tape, x, maybe_dropout(rc, feed_forward(rc, layer.ffn, h2)));
  }
  x = layer_norm(tape, x, params.enc_final.gain, params.enc_final.bias);
  return EncoderStates{x, valid};
}

std::vector<int> teacher_input(std::span<const int> tgt) {
  std::vector<int> in;
  in.reserve(tgt.size() + 1);
  in.push_back(Vocab::BOS);
  in.insert(in.end(), tgt.begin(), tgt.end());
  return in;
}

std::vector<int> teacher_target(std::span<const int> tgt) {
  std::vector<int> out(tgt.begin(), tgt.end());
  out.push_back(Vocab::EOS);
  return out;
}

DecodeResult decode_train(const ModelParams& params, const EncoderStates& enc,
                          std::span<const int> dec_input, const RunCtx& ctx) {
  if (dec_input.empty()) throw ShapeError("decode_train: empty decoder input");
  const ResolvedCtx rc = resolve(params, ctx);
  check_ids(params, dec_input, "decode_train");
  const int t_len = static_cast<int>(dec_input.size());
  if (t_len > params.config.max_len) {
    throw ShapeError("decode_train: target length " + std::to_string(t_len) +
                     " exceeds max_len " + std::to_string(params.config.max_len));
  }
  const int valid = leading_valid(dec_input, "decode_train");
  if (valid == 0) throw ShapeError("decode_train: decoder input is all padding");

  Tape* tape = rc.tape;
  Tensor x = embed_input(params, rc, dec_input);
  const Tensor self_mask = attn_mask(t_len, t_len, valid, /*causal=*/true);
  const Tensor cross_mask = attn_mask(t_len, enc.states.shape[0], enc.valid_len,
                                      /*causal=*/false);
  Tensor trace;
  for (size_t l = 0; l < params.dec.size(); ++l) {
    const DecLayer& layer = params.dec[l];
    const bool last = l + 1 == params.dec.size();
    const Tensor h1 = layer_norm(tape, x, layer.ln1.gain, layer.ln1.bias);
    x = add(tape, x,
            maybe_dropout(rc, attention(rc, layer.self_attn, h1, h1, &self_mask,
                                        params.config.n_heads, nullptr)));
    const Tensor h2 = layer_norm(tape, x, layer.ln2.gain, layer.ln2.bias);
    x = add(tape, x,
            maybe_dropout(rc, attention(rc, layer.cross_attn, h2, enc.states, &cross_mask,
                                        params.config.n_heads, last ? &trace : nullptr)));
    const Tensor h3 = layer_norm(tape, x, layer.ln3.gain, layer.ln3.bias);
    x = add(tape, x, maybe_dropout(rc, feed_forward(rc, layer.ffn, h3)));
  }
  x = layer_norm(tape, x, params.dec_final.gain, params.dec_final.bias);
  const Tensor logits = matmul(tape, x, transpose(tape, params.embedding));
  return DecodeResult{logits, trace};
}

Translation translate(const ModelParams& params, std::span<const int> src, int tl_lang,
                      int max_len) {
  const EncoderStates enc = encode(params, src, tl_lang);
  std::vector<int> emitted;
  const int limit = std::min(max_len, params.config.max_len - 1);
  while (static_cast<int>(emitted.size()) < limit) {
    const std::vector<int> dec_in = teacher_input(emitted);
    const DecodeResult out = decode_train(params, enc, dec_in);
    const int last = out.logits.shape[0] - 1;
    int best = 0;
    for (int v = 1; v < out.logits.shape[1]; ++v) {
      if (out.logits.at(last, v) > out.logits.at(last, best)) best = v;
    }
    if (best == Vocab::EOS) return Translation{std::move(emitted), false};
    emitted.push_back(best);
  }
  return Translation{std::move(emitted), true};
}

PivotTranslation pivot_translate(const ModelParams& params, std::span<const int> src,
                                 int src_lang, int tl_lang, int max_len) {
  PivotTranslation out;
  if (src_lang == 0) {
    out.intermediate.assign(src.begin(), src.end());
  } else {
    Translation hop = translate(params, src, 0, max_len);
    out.truncated = hop.truncated;
    out.intermediate = std::move(hop.tokens);
  }
  if (tl_lang == 0) {
    out.tokens = out.intermediate;
    return out;
  }
  Translation hop2 = translate(params, out.intermediate, tl_lang, max_len);
  out.truncated = out.truncated || hop2.truncated;
  out.tokens = std::move(hop2.tokens);
  return out;
}

Tensor pooled_encoding(Tape* tape, const EncoderStates& enc) {
  return max_pool_time(tape, enc.states, enc.valid_len);
}

}  // namespace zsnmt
