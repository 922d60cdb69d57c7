#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "redbert/error.hpp"
#include "redbert/instance.hpp"
#include "redbert/random.hpp"
#include "redbert/tokenizer.hpp"

namespace redbert {

enum class DocSource { kCatalog, kChat };

const char* source_name(DocSource source);

struct CorpusDoc {
  std::string doc_id;
  DocSource source = DocSource::kCatalog;
  std::vector<std::string> sentences;

  friend bool operator==(const CorpusDoc&, const CorpusDoc&) = default;
};

using Corpus = std::vector<CorpusDoc>;

// Throws DataError for a doc without a non-empty sentence.
void validate_doc(const CorpusDoc& doc);

// JSON-lines: {"doc_id": ..., "source": "catalog"|"chat", "sentences": [...]}
void write_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus read_corpus(const std::filesystem::path& path);

// Splits running text on sentence punctuation (. ! ?), keeping the mark.
std::vector<std::string> split_sentences(const std::string& text);

struct SentencePair {
  std::string seg_a;
  std::string seg_b;
  std::int32_t label = kNotNext;
  std::size_t doc_a = 0;  // corpus indices of the sources
  std::size_t doc_b = 0;
};

// Endless deterministic stream of NSP pairs: with probability 1/2 two
// consecutive sentences of one document (is-next), otherwise segment A with a
// random sentence of a different document (not-next). Single-sentence
// documents only ever donate negative B segments.
class NspPairSampler {
 public:
  NspPairSampler(const Corpus& corpus, std::uint64_t seed, double positive_rate = 0.5);

  SentencePair next();

 private:
  const Corpus& corpus_;
  Rng rng_;
  double positive_rate_;
  std::vector<std::size_t> anchors_;  // (doc, sentence) starts, flattened
  std::vector<std::size_t> anchor_doc_;
};

std::vector<SentencePair> make_nsp_pairs(const Corpus& corpus, std::size_t count,
                                         std::uint64_t seed);

struct MaskingConfig {
  double select_rate = 0.15;
  double mask_rate = 0.8;    // of selected: replaced by [MASK]
  double random_rate = 0.1;  // of selected: replaced by a random token
};

// Selects each non-special real token independently; labels keep the
// original ids.
TrainingInstance apply_masking(const TokenizedPair& pair, std::int32_t nsp_label,
                               const Vocab& vocab, std::uint64_t seed,
                               const MaskingConfig& config = {});

struct SplitSpec {
  double train_fraction = 0.9;
  std::uint64_t seed = 0;
};

std::pair<Corpus, Corpus> split_corpus(const Corpus& corpus, const SplitSpec& spec);

std::vector<TrainingInstance> build_pretraining_instances(const Corpus& corpus,
                                                          const Vocab& vocab,
                                                          std::size_t count,
                                                          std::size_t max_len,
                                                          std::uint64_t seed,
                                                          const MaskingConfig& masking = {});

// Length-prefixed binary records: u32 byte length, then the payload.
std::string serialize_instance(const TrainingInstance& inst);
TrainingInstance parse_instance(const std::string& bytes);
void write_instance_shard(const std::vector<TrainingInstance>& instances,
                          const std::filesystem::path& path);
std::vector<TrainingInstance> read_instance_shard(const std::filesystem::path& path);

// Shuffled index order (Fisher-Yates over 0..n-1).
std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng);

// Document-level shuffle then cut: |train| = round(train_fraction * N).
template <typename T>
std::pair<std::vector<T>, std::vector<T>> split(const std::vector<T>& items,
                                                const SplitSpec& spec) {
  if (items.empty()) throw DataError("cannot split an empty collection");
  if (spec.train_fraction < 0 || spec.train_fraction > 1) {
    throw ConfigError("train_fraction must be in [0, 1]");
  }
  Rng rng(spec.seed);
  const auto order = shuffled_indices(items.size(), rng);
  const auto n_train = static_cast<std::size_t>(
      std::llround(spec.train_fraction * static_cast<double>(items.size())));
  std::pair<std::vector<T>, std::vector<T>> out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_train ? out.first : out.second).push_back(items[order[i]]);
  }
  return out;
}

}  // namespace redbert
