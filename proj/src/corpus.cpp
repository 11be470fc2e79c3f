#include "zsnmt/corpus.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

namespace zsnmt {

namespace fs = std::filesystem;
using nlohmann::json;

std::string reorder_name(Reorder r) {
  switch (r) {
    case Reorder::identity: return "identity";
    case Reorder::reverse: return "reverse";
    case Reorder::adjacent_swap: return "adjacent_swap";
    case Reorder::rotate: return "rotate";
  }
  return "?";
}

static Reorder reorder_from_name(const std::string& s) {
  if (s == "identity") return Reorder::identity;
  if (s == "reverse") return Reorder::reverse;
  if (s == "adjacent_swap") return Reorder::adjacent_swap;
  if (s == "rotate") return Reorder::rotate;
  throw ConfigError("unknown reorder kind: " + s);
}

std::vector<int> reorder_positions(Reorder r, int rotate_k, int n) {
  std::vector<int> perm(static_cast<size_t>(n));
  switch (r) {
    case Reorder::identity:
      std::iota(perm.begin(), perm.end(), 0);
      break;
    case Reorder::reverse:
      for (int j = 0; j < n; ++j) perm[static_cast<size_t>(j)] = n - 1 - j;
      break;
    case Reorder::adjacent_swap:
      for (int j = 0; j < n; ++j) {
        int p = (j % 2 == 0) ? j + 1 : j - 1;
        perm[static_cast<size_t>(j)] = p < n ? p : j;
      }
      break;
    case Reorder::rotate:
      for (int j = 0; j < n; ++j) perm[static_cast<size_t>(j)] = (j + rotate_k) % n;
      break;
  }
  return perm;
}

// ---------------------------------------------------------------------------
// Vocab
// ---------------------------------------------------------------------------

static Vocab build_vocab(int n_languages, int n_concepts,
                         const std::vector<ToyLanguageSpec>& langs) {
  Vocab v;
  v.n_languages = n_languages;
  v.n_concepts = n_concepts;
  v.tokens = {"<pad>", "<bos>", "<eos>", "<unk>"};
  for (int k = 0; k < n_languages; ++k) v.tokens.push_back("<tl:L" + std::to_string(k) + ">");
  for (int k = 0; k < n_languages; ++k) {
    for (int c = 0; c < n_concepts; ++c) {
      v.tokens.push_back(langs[static_cast<size_t>(k)].prefix + std::to_string(c));
    }
  }
  return v;
}

int Vocab::tl_token(int lang) const {
  if (lang < 0 || lang >= n_languages) throw Error("tl_token: bad language " + std::to_string(lang));
  return kReserved + lang;
}

int Vocab::lexicon_token(int lang, int concept) const {
  if (lang < 0 || lang >= n_languages || concept < 0 || concept >= n_concepts) {
    throw Error("lexicon_token: bad (lang, concept) = (" + std::to_string(lang) + "," +
                std::to_string(concept) + ")");
  }
  return kReserved + n_languages + lang * n_concepts + concept;
}

std::optional<int> Vocab::lang_of_token(int id) const {
  const int base = kReserved + n_languages;
  if (id < base || id >= size()) return std::nullopt;
  return (id - base) / n_concepts;
}

int Vocab::concept_of_token(int id) const {
  const int base = kReserved + n_languages;
  if (id < base || id >= size()) throw Error("concept_of_token: not a lexicon token");
  return (id - base) % n_concepts;
}

const std::string& Vocab::token_string(int id) const {
  if (id < 0 || id >= size()) throw Error("token_string: id out of range");
  return tokens[static_cast<size_t>(id)];
}

int Vocab::lookup(const std::string& token) const {
  for (int i = 0; i < size(); ++i) {
    if (tokens[static_cast<size_t>(i)] == token) return i;
  }
  return UNK;
}

uint64_t Vocab::hash() const {
  uint64_t h = kFnvOffset;
  for (const auto& t : tokens) {
    h = fnv1a(t, h);
    h = fnv1a("\n", h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

static std::string lang_prefix(int k) {
  if (k < 26) return std::string(1, static_cast<char>('a' + k));
  return "q" + std::to_string(k) + "_";
}

static ToyLanguageSpec make_language(int k) {
  ToyLanguageSpec spec;
  spec.language_id = k;
  spec.prefix = lang_prefix(k);
  if (k == 0) {
    spec.reorder = Reorder::identity;
  } else if (k == 1) {
    spec.reorder = Reorder::reverse;
  } else if (k == 2) {
    spec.reorder = Reorder::adjacent_swap;
  } else {
    spec.reorder = Reorder::rotate;
    spec.rotate_k = k - 2;
  }
  return spec;
}

static uint64_t sentence_hash(const std::vector<int>& s) {
  uint64_t h = kFnvOffset;
  for (int c : s) h = fnv1a_u64(static_cast<uint64_t>(c), h);
  return h;
}

static void validate_config(const CorpusConfig& cfg) {
  if (cfg.n_languages < 3) {
    throw ConfigError("corpus.n_languages: zero-shot needs >= 3 languages, got " +
                      std::to_string(cfg.n_languages));
  }
  if (cfg.min_len < 1 || cfg.max_len < cfg.min_len) {
    throw ConfigError("corpus length bounds invalid: [" + std::to_string(cfg.min_len) + "," +
                      std::to_string(cfg.max_len) + "]");
  }
  if (cfg.n_concepts < 2 * cfg.max_len) {
    throw ConfigError("corpus.n_concepts: need >= 2*max_len = " +
                      std::to_string(2 * cfg.max_len) + ", got " +
                      std::to_string(cfg.n_concepts));
  }
  if (static_cast<int>(cfg.pair_sizes.size()) != cfg.n_languages - 1) {
    throw ConfigError("corpus.pair_sizes: expected " + std::to_string(cfg.n_languages - 1) +
                      " entries, got " + std::to_string(cfg.pair_sizes.size()));
  }
  for (int s : cfg.pair_sizes) {
    if (s < 1) throw ConfigError("corpus.pair_sizes: entries must be >= 1");
  }
  if (cfg.dev_size < 1 || cfg.test_size < 1) {
    throw ConfigError("corpus.dev_size/test_size must be >= 1");
  }
}

// Concepts are sampled without replacement so sentences never repeat a token;
// n-gram precision then measures transduction, not local copying.
static std::vector<int> sample_sentence(const CorpusConfig& cfg, Rng& rng,
                                        std::vector<int>& pool) {
  const int len = cfg.min_len + rng.below(cfg.max_len - cfg.min_len + 1);
  for (int j = 0; j < len; ++j) {
    const int pick = j + rng.below(cfg.n_concepts - j);
    std::swap(pool[static_cast<size_t>(j)], pool[static_cast<size_t>(pick)]);
  }
  return std::vector<int>(pool.begin(), pool.begin() + len);
}

MultiwayCorpus generate_corpus(const CorpusConfig& config, uint64_t seed) {
  validate_config(config);
  MultiwayCorpus corpus;
  corpus.config = config;
  corpus.seed = seed;
  for (int k = 0; k < config.n_languages; ++k) corpus.languages.push_back(make_language(k));
  corpus.vocab = build_vocab(config.n_languages, config.n_concepts, corpus.languages);

  std::vector<int> pool(static_cast<size_t>(config.n_concepts));
  std::iota(pool.begin(), pool.end(), 0);

  std::unordered_set<uint64_t> train_seen;
  Rng rng = Rng::stream(seed, "corpus/train");
  corpus.train_pairs.resize(config.pair_sizes.size());
  for (size_t p = 0; p < config.pair_sizes.size(); ++p) {
    auto& sentences = corpus.train_pairs[p];
    std::unordered_set<uint64_t> pair_seen;
    while (static_cast<int>(sentences.size()) < config.pair_sizes[p]) {
      auto s = sample_sentence(config, rng, pool);
      const uint64_t h = sentence_hash(s);
      if (!pair_seen.insert(h).second) continue;
      train_seen.insert(h);
      sentences.push_back(std::move(s));
    }
  }

  auto fill_split = [&](std::vector<std::vector<int>>& out, int target, const char* name) {
    Rng srng = Rng::stream(seed, name);
    std::unordered_set<uint64_t> seen;
    while (static_cast<int>(out.size()) < target) {
      auto s = sample_sentence(config, srng, pool);
      const uint64_t h = sentence_hash(s);
      if (train_seen.count(h) || !seen.insert(h).second) continue;
      out.push_back(std::move(s));
    }
    for (const auto& s : out) train_seen.insert(sentence_hash(s));
  };
  fill_split(corpus.dev, config.dev_size, "corpus/dev");
  fill_split(corpus.test, config.test_size, "corpus/test");
  return corpus;
}

uint64_t MultiwayCorpus::content_hash() const {
  uint64_t h = fnv1a_u64(seed);
  auto mix = [&h](const std::vector<std::vector<int>>& block) {
    for (const auto& s : block) {
      for (int c : s) h = fnv1a_u64(static_cast<uint64_t>(c), h);
      h = fnv1a_u64(0xffffffffull, h);
    }
  };
  for (const auto& pair : train_pairs) mix(pair);
  mix(dev);
  mix(test);
  return h;
}

std::vector<int> render(std::span<const int> concepts, const ToyLanguageSpec& lang,
                        const Vocab& vocab) {
  const int n = static_cast<int>(concepts.size());
  const auto perm = reorder_positions(lang.reorder, lang.rotate_k, n);
  std::vector<int> out(static_cast<size_t>(n));
  for (int j = 0; j < n; ++j) {
    const int concept = concepts[static_cast<size_t>(perm[static_cast<size_t>(j)])];
    if (concept < 0 || concept >= vocab.n_concepts) {
      throw Error("render: unknown concept id " + std::to_string(concept));
    }
    out[static_cast<size_t>(j)] = vocab.lexicon_token(lang.language_id, concept);
  }
  return out;
}

std::vector<int> unrender(std::span<const int> tokens, const ToyLanguageSpec& lang,
                          const Vocab& vocab) {
  const int n = static_cast<int>(tokens.size());
  std::vector<int> reordered(static_cast<size_t>(n));
  for (int j = 0; j < n; ++j) {
    const auto owner = vocab.lang_of_token(tokens[static_cast<size_t>(j)]);
    if (!owner || *owner != lang.language_id) {
      throw Error("unrender: token " + std::to_string(tokens[static_cast<size_t>(j)]) +
                  " is not in language L" + std::to_string(lang.language_id));
    }
    reordered[static_cast<size_t>(j)] = vocab.concept_of_token(tokens[static_cast<size_t>(j)]);
  }
  const auto perm = reorder_positions(lang.reorder, lang.rotate_k, n);
  std::vector<int> concepts(static_cast<size_t>(n));
  for (int j = 0; j < n; ++j) {
    concepts[static_cast<size_t>(perm[static_cast<size_t>(j)])] = reordered[static_cast<size_t>(j)];
  }
  return concepts;
}

std::string render_text(std::span<const int> concepts, const ToyLanguageSpec& lang,
                        const Vocab& vocab) {
  const auto ids = render(concepts, lang, vocab);
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += vocab.token_string(ids[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

BatchPlanner::BatchPlanner(const MultiwayCorpus* corpus, int batch_size, bool oversample,
                           uint64_t seed)
    : corpus_(corpus), batch_size_(batch_size), oversample_(oversample), seed_(seed) {
  if (batch_size < 1) throw Error("make_batches: batch_size must be >= 1");
  int max_pair = 0;
  for (const auto& pair : corpus->train_pairs) {
    if (pair.empty()) throw Error("make_batches: empty training pair");
    max_pair = std::max(max_pair, static_cast<int>(pair.size()));
  }
  for (const auto& pair : corpus->train_pairs) {
    epoch_size_ += oversample_ ? max_pair : static_cast<int>(pair.size());
  }
  batches_per_epoch_ = std::max(1, epoch_size_ / batch_size_);
}

void BatchPlanner::build_epoch(int64_t epoch) {
  items_.clear();
  items_.reserve(static_cast<size_t>(epoch_size_));
  int max_pair = 0;
  for (const auto& pair : corpus_->train_pairs) {
    max_pair = std::max(max_pair, static_cast<int>(pair.size()));
  }
  for (size_t p = 0; p < corpus_->train_pairs.size(); ++p) {
    const int own = static_cast<int>(corpus_->train_pairs[p].size());
    const int count = oversample_ ? max_pair : own;
    for (int j = 0; j < count; ++j) {
      items_.push_back(Item{static_cast<int>(p), j % own, (j % 2) == 0});
    }
  }
  Rng order = Rng::stream(seed_, "order", static_cast<uint64_t>(epoch));
  order.shuffle(items_);
  cached_epoch_ = epoch;
}

Batch BatchPlanner::batch_for_step(int64_t step) {
  const int64_t epoch = step / batches_per_epoch_;
  const int64_t index = step % batches_per_epoch_;
  if (epoch != cached_epoch_) build_epoch(epoch);
  Batch batch;
  const int64_t begin = index * batch_size_;
  const int64_t end = std::min<int64_t>(begin + batch_size_, static_cast<int64_t>(items_.size()));
  for (int64_t i = begin; i < end; ++i) {
    const Item& item = items_[static_cast<size_t>(i)];
    const auto& concepts = corpus_->train_pairs[static_cast<size_t>(item.pair)]
                                               [static_cast<size_t>(item.sent)];
    const int other = item.pair + 1;
    const int src_lang = item.forward ? 0 : other;
    const int tgt_lang = item.forward ? other : 0;
    BatchRow row;
    row.src_lang = src_lang;
    row.tgt_lang = tgt_lang;
    row.src_tokens = render(concepts, corpus_->languages[static_cast<size_t>(src_lang)],
                            corpus_->vocab);
    row.tgt_tokens = render(concepts, corpus_->languages[static_cast<size_t>(tgt_lang)],
                            corpus_->vocab);
    row.paired_tgt = row.tgt_tokens;
    batch.rows.push_back(std::move(row));
  }
  return batch;
}

LangIdResult language_of(std::span<const int> tokens, const Vocab& vocab) {
  std::vector<int> counts(static_cast<size_t>(vocab.n_languages), 0);
  int total = 0;
  for (int id : tokens) {
    const auto lang = vocab.lang_of_token(id);
    if (!lang) continue;  // reserved tokens ignored
    ++counts[static_cast<size_t>(*lang)];
    ++total;
  }
  LangIdResult result;
  if (total == 0) {
    result.kind = LangIdResult::Kind::empty;
    return result;
  }
  int best = 0;
  for (int k = 1; k < vocab.n_languages; ++k) {
    if (counts[static_cast<size_t>(k)] > counts[static_cast<size_t>(best)]) best = k;
  }
  int ties = 0;
  for (int k = 0; k < vocab.n_languages; ++k) {
    if (counts[static_cast<size_t>(k)] == counts[static_cast<size_t>(best)]) ++ties;
  }
  if (ties > 1 || 5 * counts[static_cast<size_t>(best)] < 4 * total) {
    result.kind = LangIdResult::Kind::mixed;
    return result;
  }
  result.kind = LangIdResult::Kind::language;
  result.lang = best;
  return result;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

static json config_to_json(const CorpusConfig& cfg) {
  return json{{"n_languages", cfg.n_languages}, {"n_concepts", cfg.n_concepts},
              {"min_len", cfg.min_len},         {"max_len", cfg.max_len},
              {"pair_sizes", cfg.pair_sizes},   {"dev_size", cfg.dev_size},
              {"test_size", cfg.test_size}};
}

static CorpusConfig config_from_json(const json& j) {
  CorpusConfig cfg;
  cfg.n_languages = j.at("n_languages").get<int>();
  cfg.n_concepts = j.at("n_concepts").get<int>();
  cfg.min_len = j.at("min_len").get<int>();
  cfg.max_len = j.at("max_len").get<int>();
  cfg.pair_sizes = j.at("pair_sizes").get<std::vector<int>>();
  cfg.dev_size = j.at("dev_size").get<int>();
  cfg.test_size = j.at("test_size").get<int>();
  return cfg;
}

static void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& line : lines) out << line << '\n';
}

static std::string concepts_line(const std::vector<int>& s) {
  std::string line;
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) line += ' ';
    line += std::to_string(s[i]);
  }
  return line;
}

void save_corpus(const MultiwayCorpus& corpus, const std::string& dir) {
  fs::create_directories(dir);
  const fs::path root(dir);

  json manifest;
  manifest["format"] = "zsnmt-corpus-v1";
  manifest["seed"] = corpus.seed;
  manifest["config"] = config_to_json(corpus.config);
  manifest["vocab_hash"] = hex64(corpus.vocab.hash());
  manifest["content_hash"] = hex64(corpus.content_hash());
  json langs = json::array();
  for (const auto& l : corpus.languages) {
    langs.push_back({{"id", l.language_id},
                     {"prefix", l.prefix},
                     {"reorder", reorder_name(l.reorder)},
                     {"rotate_k", l.rotate_k}});
  }
  manifest["languages"] = langs;
  {
    std::ofstream out(root / "manifest.json");
    if (!out) throw IoError("cannot write corpus manifest in " + dir);
    out << manifest.dump(2) << '\n';
  }

  for (size_t p = 0; p < corpus.train_pairs.size(); ++p) {
    const int other = static_cast<int>(p) + 1;
    const std::string stem = "train.L0-L" + std::to_string(other);
    std::vector<std::string> concepts, side0, side1;
    for (const auto& s : corpus.train_pairs[p]) {
      concepts.push_back(concepts_line(s));
      side0.push_back(render_text(s, corpus.languages[0], corpus.vocab));
      side1.push_back(render_text(s, corpus.languages[static_cast<size_t>(other)], corpus.vocab));
    }
    write_lines(root / (stem + ".concepts.txt"), concepts);
    write_lines(root / (stem + ".L0.txt"), side0);
    write_lines(root / (stem + ".L" + std::to_string(other) + ".txt"), side1);
  }

  auto write_split = [&](const char* name, const std::vector<std::vector<int>>& split) {
    std::vector<std::string> concepts;
    for (const auto& s : split) concepts.push_back(concepts_line(s));
    write_lines(root / (std::string(name) + ".concepts.txt"), concepts);
    for (int k = 0; k < corpus.config.n_languages; ++k) {
      std::vector<std::string> lines;
      for (const auto& s : split) {
        lines.push_back(render_text(s, corpus.languages[static_cast<size_t>(k)], corpus.vocab));
      }
      write_lines(root / (std::string(name) + ".L" + std::to_string(k) + ".txt"), lines);
    }
  };
  write_split("dev", corpus.dev);
  write_split("test", corpus.test);
}

static std::vector<std::vector<int>> read_concepts(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::vector<int>> out;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<int> s;
    std::istringstream ls(line);
    int c;
    while (ls >> c) s.push_back(c);
    if (!s.empty()) out.push_back(std::move(s));
  }
  return out;
}

MultiwayCorpus load_corpus(const std::string& dir) {
  const fs::path root(dir);
  std::ifstream in(root / "manifest.json");
  if (!in) throw IoError("no corpus manifest in " + dir);
  json manifest = json::parse(in);
  if (manifest.value("format", "") != "zsnmt-corpus-v1") {
    throw IoError("unrecognized corpus format in " + dir);
  }

  MultiwayCorpus corpus;
  corpus.config = config_from_json(manifest.at("config"));
  corpus.seed = manifest.at("seed").get<uint64_t>();
  for (const auto& lj : manifest.at("languages")) {
    ToyLanguageSpec spec;
    spec.language_id = lj.at("id").get<int>();
    spec.prefix = lj.at("prefix").get<std::string>();
    spec.reorder = reorder_from_name(lj.at("reorder").get<std::string>());
    spec.rotate_k = lj.at("rotate_k").get<int>();
    corpus.languages.push_back(spec);
  }
  corpus.vocab = build_vocab(corpus.config.n_languages, corpus.config.n_concepts,
                             corpus.languages);
  if (hex64(corpus.vocab.hash()) != manifest.at("vocab_hash").get<std::string>()) {
    throw IoError("corpus vocab hash mismatch in " + dir);
  }
  for (int p = 1; p < corpus.config.n_languages; ++p) {
    corpus.train_pairs.push_back(
        read_concepts(root / ("train.L0-L" + std::to_string(p) + ".concepts.txt")));
  }
  corpus.dev = read_concepts(root / "dev.concepts.txt");
  corpus.test = read_concepts(root / "test.concepts.txt");
  if (hex64(corpus.content_hash()) != manifest.at("content_hash").get<std::string>()) {
    throw IoError("corpus content hash mismatch in " + dir);
  }
  return corpus;
}

bool corpus_matches(const std::string& dir, const CorpusConfig& config, uint64_t seed) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) return false;
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (...) {
    return false;
  }
  if (manifest.value("format", "") != "zsnmt-corpus-v1") return false;
  if (manifest.value("seed", uint64_t{0}) != seed) return false;
  try {
    return config_to_json(config) == manifest.at("config");
  } catch (...) {
    return false;
  }
}

}  // namespace zsnmt
