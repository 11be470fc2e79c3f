// Procedural toy-language corpora: N languages over a shared concept space,
// disjoint surface lexicons, one deterministic word-order transform per
// language. Training data exists only for pivot<->other pairs; dev/test are
// N-way parallel so every direction has exact references.
#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "zsnmt/common.hpp"

namespace zsnmt {

enum class Reorder { identity, reverse, adjacent_swap, rotate };

struct ToyLanguageSpec {
  int language_id = 0;
  std::string prefix;        // lexicon token = prefix + concept id
  Reorder reorder = Reorder::identity;
  int rotate_k = 0;          // used when reorder == rotate
};

std::string reorder_name(Reorder r);
// Position permutation for a sentence of length n: output[j] = input[perm[j]].
std::vector<int> reorder_positions(Reorder r, int rotate_k, int n);

struct Vocab {
  static constexpr int PAD = 0;
  static constexpr int BOS = 1;
  static constexpr int EOS = 2;
  static constexpr int UNK = 3;
  static constexpr int kReserved = 4;

  int n_languages = 0;
  int n_concepts = 0;
  std::vector<std::string> tokens;  // id -> surface string

  int size() const { return static_cast<int>(tokens.size()); }
  int tl_token(int lang) const;
  int lexicon_token(int lang, int concept) const;
  // Language owning a lexicon token, or nullopt for reserved ids.
  std::optional<int> lang_of_token(int id) const;
  int concept_of_token(int id) const;
  const std::string& token_string(int id) const;
  int lookup(const std::string& token) const;  // UNK when absent
  uint64_t hash() const;
};

struct CorpusConfig {
  int n_languages = 3;
  int n_concepts = 64;
  int min_len = 3;
  int max_len = 12;
  std::vector<int> pair_sizes;  // train pairs for L0<->Li, i = 1..N-1
  int dev_size = 200;
  int test_size = 200;
};

struct MultiwayCorpus {
  CorpusConfig config;
  uint64_t seed = 0;
  std::vector<ToyLanguageSpec> languages;
  Vocab vocab;
  // train_pairs[i]: concept sentences of the (L0, L_{i+1}) training pair
  std::vector<std::vector<std::vector<int>>> train_pairs;
  std::vector<std::vector<int>> dev;   // N-way parallel by construction
  std::vector<std::vector<int>> test;

  uint64_t content_hash() const;
};

MultiwayCorpus generate_corpus(const CorpusConfig& config, uint64_t seed);

// Surface rendering as vocab ids: apply the language's reorder, then its
// lexicon map. Length-preserving.
std::vector<int> render(std::span<const int> concepts, const ToyLanguageSpec& lang,
                        const Vocab& vocab);
// Inverse of render for well-formed sentences of this language.
std::vector<int> unrender(std::span<const int> tokens, const ToyLanguageSpec& lang,
                          const Vocab& vocab);
std::string render_text(std::span<const int> concepts, const ToyLanguageSpec& lang,
                        const Vocab& vocab);

struct BatchRow {
  std::vector<int> src_tokens;   // lexicon ids only; specials added by the model
  std::vector<int> tgt_tokens;
  std::vector<int> paired_tgt;   // the target-side sentence used by alignment losses
  int src_lang = 0;
  int tgt_lang = 0;
};

struct Batch {
  std::vector<BatchRow> rows;
  bool empty() const { return rows.empty(); }
  int size() const { return static_cast<int>(rows.size()); }
};

// Deterministic epoch schedule over directed training examples. With
// oversampling every pair contributes max-pair-size examples per epoch
// (smaller pairs cycle); directions alternate within each pair's list.
class BatchPlanner {
 public:
  BatchPlanner(const MultiwayCorpus* corpus, int batch_size, bool oversample, uint64_t seed);

  int epoch_size() const { return epoch_size_; }
  int batches_per_epoch() const { return batches_per_epoch_; }
  Batch batch_for_step(int64_t step);

 private:
  struct Item {
    int pair;
    int sent;
    bool forward;  // true: L0 -> Li
  };
  void build_epoch(int64_t epoch);

  const MultiwayCorpus* corpus_;
  int batch_size_;
  bool oversample_;
  uint64_t seed_;
  int epoch_size_ = 0;
  int batches_per_epoch_ = 0;
  int64_t cached_epoch_ = -1;
  std::vector<Item> items_;
};

struct LangIdResult {
  enum class Kind { language, mixed, empty };
  Kind kind = Kind::empty;
  int lang = -1;
};

// Exact language identification by lexicon membership: majority language if it
// holds a unique >= 80% majority of the non-reserved tokens, `mixed` otherwise,
// `empty` when no lexicon token is present.
LangIdResult language_of(std::span<const int> tokens, const Vocab& vocab);

// Line-oriented parallel text files plus a manifest recording config and seed.
void save_corpus(const MultiwayCorpus& corpus, const std::string& dir);
MultiwayCorpus load_corpus(const std::string& dir);
// True if `dir` already holds a corpus generated from exactly this config+seed.
bool corpus_matches(const std::string& dir, const CorpusConfig& config, uint64_t seed);

}  // namespace zsnmt
