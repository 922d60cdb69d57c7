#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "redbert/datapipe.hpp"
#include "redbert/tasks.hpp"
#include "redbert/tokenizer.hpp"

namespace redbert {

struct GrammarTemplate {
  std::string label;                // intent / sentiment label, empty otherwise
  std::vector<std::string> tokens;  // literal words and {slot} markers
};

struct FlowRule {
  std::string intent;
  std::string after;  // required intent of the previous turn, empty = any
  std::string next;
};

struct Grammar {
  // "brand.electronics", "product.home", "color", ...; entries keep their
  // underscores (one entry may span several words).
  std::map<std::string, std::vector<std::string>> lexicon;
  std::vector<std::string> groups;  // product families, in file order
  std::vector<std::pair<std::string, double>> intent_priors;
  std::vector<std::pair<std::string, double>> sentiment_priors;
  std::vector<GrammarTemplate> intent_templates;
  std::vector<GrammarTemplate> sentiment_templates;
  std::vector<GrammarTemplate> title_templates;
  std::vector<GrammarTemplate> desc_templates;
  std::vector<FlowRule> flows;
  std::map<std::string, std::vector<std::string>> pieces;

  std::vector<std::string> intents() const;
  std::vector<std::string> sentiments() const;
  // First matching flow rule; conditional rules are listed before the
  // unconditional fallback of the same intent.
  const std::string& next_intent(const std::string& current, const std::string& previous) const;
};

// Throws ConfigError with the offending line number.
Grammar parse_grammar(std::string_view text);
Grammar load_grammar(const std::filesystem::path& path);
// data/retail_grammar.txt of the source tree.
std::filesystem::path default_grammar_path();

// Which lexicon entries a sampler may draw. With holdout_fraction f, a fixed
// round(f * n) entries of every lexicon list form the held-out part.
enum class LexiconPart { kAll, kSeen, kHeldOut };

struct LexiconView {
  LexiconPart part = LexiconPart::kAll;
  double holdout_fraction = 0.0;
};

// Entries of one lexicon list visible through the view.
std::vector<std::string> lexicon_entries(const Grammar& grammar, const std::string& key,
                                         const LexiconView& view);

TaskDataset generate_task(const Grammar& grammar, TaskKind kind, std::size_t count,
                          std::uint64_t seed, const LexiconView& view = {});

struct SyntheticSpec {
  std::size_t num_docs = 2000;
  double chat_fraction = 0.2;
  std::size_t examples_per_task = 1000;
  std::uint64_t seed = 0;
};

struct SyntheticData {
  Corpus corpus;
  std::map<TaskKind, TaskDataset> tasks;
};

// Exactly round(chat_fraction * num_docs) chat documents; the rest are
// catalog documents. Pure function of (grammar, spec).
SyntheticData generate_synthetic_corpus(const Grammar& grammar, const SyntheticSpec& spec);
Corpus generate_corpus(const Grammar& grammar, const SyntheticSpec& spec);

// Specials, single characters with their ## forms, then every grammar word
// (words listed under `pieces` contribute their pieces instead).
Vocab build_vocab(const Grammar& grammar);

// Word vectors that cluster by grammatical role (brand, product, adjective,
// numeral); other words get isolated random directions.
std::vector<std::pair<std::string, std::vector<double>>> synthesize_dep_embeddings(
    const Grammar& grammar, std::size_t dim, std::uint64_t seed);

}  // namespace redbert
