#include "redbert/synthetic.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "redbert/error.hpp"
#include "redbert/random.hpp"

namespace redbert {

namespace {

constexpr std::uint64_t kDocSalt = 0x6A09E667F3BCC908ULL;
constexpr std::uint64_t kTaskSalt = 0xBB67AE8584CAA73BULL;

// Slots drawn per product family.
bool grouped_slot(const std::string& slot) {
  return slot == "brand" || slot == "product" || slot == "attr";
}

std::string entity_of(const std::string& slot) {
  if (slot == "brand") return "brand";
  if (slot == "product") return "product";
  if (slot == "qty") return "quantity";
  return "";
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

std::vector<std::string> entry_words(const std::string& entry) {
  std::vector<std::string> out;
  std::string w;
  for (char c : entry) {
    if (c == '_') {
      if (!w.empty()) out.push_back(w);
      w.clear();
    } else {
      w.push_back(c);
    }
  }
  if (!w.empty()) out.push_back(w);
  return out;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

struct Slot {
  std::string name;
  char flag = 0;       // '?', '+', '-' or 0
  std::string suffix;  // literal text glued after the closing brace
};

// Parses "{name?}," style tokens; returns false for literals.
bool parse_slot(const std::string& token, Slot& slot) {
  if (token.empty() || token[0] != '{') return false;
  const auto close = token.find('}');
  if (close == std::string::npos) throw ConfigError("unclosed slot '" + token + "'");
  std::string inner = token.substr(1, close - 1);
  slot.flag = 0;
  if (!inner.empty() && (inner.back() == '?' || inner.back() == '+' || inner.back() == '-')) {
    slot.flag = inner.back();
    inner.pop_back();
  }
  slot.name = inner;
  slot.suffix = token.substr(close + 1);
  return true;
}

const std::set<std::string>& known_slots() {
  static const std::set<std::string> slots = {"item",  "brand", "product", "attr",   "color",
                                              "qty",   "pos",   "neg",     "feature"};
  return slots;
}

void check_template(const GrammarTemplate& t) {
  for (const auto& tok : t.tokens) {
    Slot s;
    if (parse_slot(tok, s) && !known_slots().count(s.name)) {
      throw ConfigError("unknown slot {" + s.name + "}");
    }
  }
}

void add_prior(std::vector<std::pair<std::string, double>>& priors, const std::string& label,
               double weight) {
  if (!(weight > 0)) throw ConfigError("prior for '" + label + "' must be positive");
  for (const auto& [l, w] : priors) {
    if (l == label) throw ConfigError("prior for '" + label + "' given twice");
  }
  priors.emplace_back(label, weight);
}

void validate(const Grammar& g) {
  if (g.groups.empty()) throw ConfigError("grammar defines no product family");
  for (const auto& group : g.groups) {
    for (const char* slot : {"brand", "product", "attr"}) {
      const std::string key = std::string(slot) + "." + group;
      if (!g.lexicon.count(key)) throw ConfigError("grammar lacks lexicon " + key);
    }
  }
  for (const char* key : {"color", "qty", "pos", "neg", "feature"}) {
    if (!g.lexicon.count(key)) throw ConfigError(std::string("grammar lacks lexicon ") + key);
  }
  if (g.intent_priors.empty()) throw ConfigError("grammar defines no intent");
  if (g.sentiment_priors.empty()) throw ConfigError("grammar defines no sentiment");
  auto has_template = [](const std::vector<GrammarTemplate>& ts, const std::string& label) {
    return std::any_of(ts.begin(), ts.end(), [&](const auto& t) { return t.label == label; });
  };
  for (const auto& [label, w] : g.intent_priors) {
    if (!has_template(g.intent_templates, label)) {
      throw ConfigError("intent '" + label + "' has no template");
    }
    const bool fallback = std::any_of(g.flows.begin(), g.flows.end(), [&](const FlowRule& r) {
      return r.intent == label && r.after.empty();
    });
    if (!fallback) throw ConfigError("intent '" + label + "' has no unconditional flow rule");
  }
  for (const auto& [label, w] : g.sentiment_priors) {
    if (!has_template(g.sentiment_templates, label)) {
      throw ConfigError("sentiment '" + label + "' has no template");
    }
  }
  for (const auto& t : g.intent_templates) {
    if (std::none_of(g.intent_priors.begin(), g.intent_priors.end(),
                     [&](const auto& p) { return p.first == t.label; })) {
      throw ConfigError("template for intent '" + t.label + "' has no prior");
    }
  }
  const auto intents = g.intents();
  auto known = [&](const std::string& i) {
    return std::find(intents.begin(), intents.end(), i) != intents.end();
  };
  for (const auto& r : g.flows) {
    if (!known(r.intent) || !known(r.next) || (!r.after.empty() && !known(r.after))) {
      throw ConfigError("flow rule " + r.intent + " -> " + r.next + " names an unknown intent");
    }
  }
  if (g.title_templates.empty()) throw ConfigError("grammar defines no title template");
  if (g.desc_templates.empty()) throw ConfigError("grammar defines no description template");
}

// ---------------------------------------------------------------------------
// Sampling

struct Word {
  std::string text;
  std::string entity;  // brand / product / quantity or empty
  bool begins = false; // first word of an entity entry
  bool keep = false;   // title compression target
};

std::string render(const std::vector<Word>& words) {
  std::string out;
  for (const auto& w : words) {
    const bool punct = w.text.size() == 1 && std::ispunct(static_cast<unsigned char>(w.text[0]));
    if (!out.empty() && !punct) out += ' ';
    out += w.text;
  }
  return out;
}

std::vector<std::string> bio_tags(const std::vector<Word>& words) {
  std::vector<std::string> tags;
  for (const auto& w : words) {
    if (w.entity.empty()) {
      tags.emplace_back("O");
    } else {
      tags.push_back((w.begins ? "B-" : "I-") + w.entity);
    }
  }
  return tags;
}

std::vector<EntitySpan> spans_of(const std::vector<Word>& words) {
  std::vector<EntitySpan> out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (!words[i].begins) continue;
    std::size_t j = i + 1;
    while (j < words.size() && !words[j].begins && words[j].entity == words[i].entity) ++j;
    out.push_back({i, j, words[i].entity});
  }
  return out;
}

std::size_t categorical(Rng& rng, const std::vector<std::pair<std::string, double>>& priors) {
  double total = 0;
  for (const auto& p : priors) total += p.second;
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < priors.size(); ++i) {
    u -= priors[i].second;
    if (u < 0) return i;
  }
  return priors.size() - 1;
}

class Sampler {
 public:
  Sampler(const Grammar& g, Rng& rng, LexiconView view) : g_(g), rng_(rng), view_(view) {}

  // Fixed slot values of a catalog document.
  std::map<std::string, std::string> fixed;
  std::string group;

  const std::string& pick(const std::string& key) {
    auto it = cache_.find(key);
    if (it == cache_.end()) {
      it = cache_.emplace(key, lexicon_entries(g_, key, view_)).first;
      if (it->second.empty()) throw ConfigError("lexicon " + key + " is empty in this view");
    }
    return it->second[rng_.below(it->second.size())];
  }

  const GrammarTemplate& choose(const std::vector<GrammarTemplate>& ts, const std::string& label) {
    std::vector<const GrammarTemplate*> match;
    for (const auto& t : ts) {
      if (t.label == label) match.push_back(&t);
    }
    return *match[rng_.below(match.size())];
  }

  const GrammarTemplate& any(const std::vector<GrammarTemplate>& ts) {
    return ts[rng_.below(ts.size())];
  }

  std::vector<Word> expand(const GrammarTemplate& t) {
    std::string g = group.empty() ? g_.groups[rng_.below(g_.groups.size())] : group;
    std::vector<Word> out;
    for (const auto& tok : t.tokens) {
      Slot s;
      if (!parse_slot(tok, s)) {
        literal(tok, out);
        continue;
      }
      if (s.flag == '?' && !rng_.bernoulli(0.5)) {
        literal(s.suffix, out);
        continue;
      }
      const bool keep = s.flag == '+';
      if (s.name == "item") {
        if (rng_.bernoulli(0.6)) fill("brand", g, keep, out);
        if (rng_.bernoulli(0.4)) fill("attr", g, keep, out);
        fill("product", g, keep, out);
      } else {
        fill(s.name, g, keep, out);
      }
      literal(s.suffix, out);
    }
    return out;
  }

 private:
  void literal(const std::string& text, std::vector<Word>& out) {
    for (auto& w : basic_split(text)) out.push_back({std::move(w), "", false, false});
  }

  void fill(const std::string& slot, const std::string& g, bool keep, std::vector<Word>& out) {
    std::string entry;
    if (auto it = fixed.find(slot); it != fixed.end()) {
      entry = it->second;
    } else {
      entry = pick(grouped_slot(slot) ? slot + "." + g : slot);
    }
    const std::string entity = entity_of(slot);
    bool first = true;
    for (auto& w : entry_words(entry)) {
      out.push_back({w, entity, first && !entity.empty(), keep});
      first = false;
    }
  }

  const Grammar& g_;
  Rng& rng_;
  LexiconView view_;
  std::map<std::string, std::vector<std::string>> cache_;
};

std::vector<std::string> chain_intents(const Grammar& g, Rng& rng, std::size_t length) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < length; ++i) {
    if (i > 0 && rng.bernoulli(0.7)) {
      out.push_back(g.next_intent(out.back(), i > 1 ? out[i - 2] : ""));
    } else {
      out.push_back(g.intent_priors[categorical(rng, g.intent_priors)].first);
    }
  }
  return out;
}

std::vector<std::string> ner_labels() {
  return {"O",         "B-brand",    "I-brand",   "B-product",
          "I-product", "B-quantity", "I-quantity"};
}

TaskExample make_example(TaskKind kind, const Grammar& g, Sampler& s, Rng& rng) {
  TaskExample ex;
  switch (kind) {
    case TaskKind::kIntent: {
      ex.label = g.intent_priors[categorical(rng, g.intent_priors)].first;
      ex.text = render(s.expand(s.choose(g.intent_templates, ex.label)));
      break;
    }
    case TaskKind::kSentiment: {
      ex.label = g.sentiment_priors[categorical(rng, g.sentiment_priors)].first;
      ex.text = render(s.expand(s.choose(g.sentiment_templates, ex.label)));
      break;
    }
    case TaskKind::kNer: {
      const auto& t = rng.bernoulli(0.7) ? s.any(g.intent_templates) : s.any(g.sentiment_templates);
      const auto words = s.expand(t);
      ex.text = render(words);
      ex.tags = bio_tags(words);
      ex.spans = spans_of(words);
      break;
    }
    case TaskKind::kTitle: {
      const auto words = s.expand(s.any(g.title_templates));
      ex.text = render(words);
      for (const auto& w : words) ex.tags.emplace_back(w.keep ? "keep" : "drop");
      break;
    }
    case TaskKind::kProactive: {
      const std::size_t history = rng.below(4);
      const auto intents = chain_intents(g, rng, history + 1);
      std::vector<std::string> turns;
      for (const auto& intent : intents) {
        turns.push_back(render(s.expand(s.choose(g.intent_templates, intent))));
      }
      ex.text = turns.back();
      ex.current_intent = intents.back();
      for (std::size_t i = 0; i < history; ++i) {
        if (i) ex.history += " . ";
        ex.history += turns[i];
      }
      ex.label = g.next_intent(intents.back(), history ? intents[history - 1] : "");
      break;
    }
  }
  return ex;
}

}  // namespace

std::vector<std::string> Grammar::intents() const {
  std::vector<std::string> out;
  for (const auto& p : intent_priors) out.push_back(p.first);
  return out;
}

std::vector<std::string> Grammar::sentiments() const {
  std::vector<std::string> out;
  for (const auto& p : sentiment_priors) out.push_back(p.first);
  return out;
}

const std::string& Grammar::next_intent(const std::string& current,
                                        const std::string& previous) const {
  for (const auto& r : flows) {
    if (r.intent == current && (r.after.empty() || r.after == previous)) return r.next;
  }
  throw ConfigError("no flow rule for intent '" + current + "'");
}

Grammar parse_grammar(std::string_view text) {
  Grammar g;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    try {
      const auto colon = line.find(':');
      const auto words = split_ws(line.substr(0, colon == std::string::npos ? line.size() : colon));
      const std::string body = colon == std::string::npos ? "" : trim(line.substr(colon + 1));
      const std::string& kw = words.at(0);
      if (kw == "lexicon") {
        if (words.size() < 2 || words.size() > 3) throw ConfigError("expected lexicon <category> [group]:");
        std::string key = words[1];
        if (words.size() == 3) {
          key += "." + words[2];
          if (std::find(g.groups.begin(), g.groups.end(), words[2]) == g.groups.end()) {
            g.groups.push_back(words[2]);
          }
        }
        auto entries = split_ws(body);
        if (entries.empty()) throw ConfigError("lexicon " + key + " is empty");
        auto& list = g.lexicon[key];
        list.insert(list.end(), entries.begin(), entries.end());
      } else if (kw == "prior") {
        if (words.size() != 4) throw ConfigError("expected prior <intent|sentiment> <label> <weight>");
        const double w = std::stod(words[3]);
        if (words[1] == "intent") {
          add_prior(g.intent_priors, words[2], w);
        } else if (words[1] == "sentiment") {
          add_prior(g.sentiment_priors, words[2], w);
        } else {
          throw ConfigError("unknown prior kind '" + words[1] + "'");
        }
      } else if (kw == "template") {
        GrammarTemplate t;
        t.tokens = split_ws(body);
        if (t.tokens.empty()) throw ConfigError("empty template");
        check_template(t);
        if (words.size() == 3 && words[1] == "intent") {
          t.label = words[2];
          g.intent_templates.push_back(std::move(t));
        } else if (words.size() == 3 && words[1] == "sentiment") {
          t.label = words[2];
          g.sentiment_templates.push_back(std::move(t));
        } else if (words.size() == 2 && words[1] == "title") {
          g.title_templates.push_back(std::move(t));
        } else if (words.size() == 2 && words[1] == "desc") {
          g.desc_templates.push_back(std::move(t));
        } else {
          throw ConfigError("expected template intent|sentiment <label>: or template title|desc:");
        }
      } else if (kw == "flow") {
        const auto parts = split_ws(line);
        FlowRule r;
        if (parts.size() == 4 && parts[2] == "->") {
          r = {parts[1], "", parts[3]};
        } else if (parts.size() == 6 && parts[2] == "after" && parts[4] == "->") {
          r = {parts[1], parts[3], parts[5]};
        } else {
          throw ConfigError("expected flow <intent> [after <intent>] -> <intent>");
        }
        g.flows.push_back(std::move(r));
      } else if (kw == "pieces") {
        if (words.size() != 2) throw ConfigError("expected pieces <word>: <pieces>");
        auto p = split_ws(body);
        if (p.empty()) throw ConfigError("pieces for '" + words[1] + "' are empty");
        g.pieces[words[1]] = std::move(p);
      } else {
        throw ConfigError("unknown directive '" + kw + "'");
      }
    } catch (const ConfigError& e) {
      throw ConfigError("grammar line " + std::to_string(line_no) + ": " + e.what());
    } catch (const std::logic_error&) {
      throw ConfigError("grammar line " + std::to_string(line_no) + ": malformed '" + line + "'");
    }
  }
  // Conditional flow rules take precedence over the fallback of their intent.
  std::stable_partition(g.flows.begin(), g.flows.end(),
                        [](const FlowRule& r) { return !r.after.empty(); });
  validate(g);
  return g;
}

Grammar load_grammar(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open grammar " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_grammar(ss.str());
}

std::filesystem::path default_grammar_path() {
  return std::filesystem::path(REDBERT_DATA_DIR) / "retail_grammar.txt";
}

std::vector<std::string> lexicon_entries(const Grammar& grammar, const std::string& key,
                                         const LexiconView& view) {
  auto it = grammar.lexicon.find(key);
  if (it == grammar.lexicon.end()) throw ConfigError("grammar has no lexicon " + key);
  const auto& all = it->second;
  if (view.part == LexiconPart::kAll) return all;
  if (view.holdout_fraction < 0 || view.holdout_fraction >= 1) {
    throw ConfigError("holdout_fraction must be in [0, 1)");
  }
  const std::size_t n = all.size();
  std::size_t held = static_cast<std::size_t>(std::llround(view.holdout_fraction * n));
  if (held >= n) held = n - 1;
  Rng rng(fnv1a(key));
  const auto order = shuffled_indices(n, rng);
  std::vector<bool> is_held(n, false);
  for (std::size_t i = 0; i < held; ++i) is_held[order[i]] = true;
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (is_held[i] == (view.part == LexiconPart::kHeldOut)) out.push_back(all[i]);
  }
  return out;
}

TaskDataset generate_task(const Grammar& grammar, TaskKind kind, std::size_t count,
                          std::uint64_t seed, const LexiconView& view) {
  TaskDataset ds;
  ds.kind = kind;
  switch (kind) {
    case TaskKind::kIntent: ds.labels = grammar.intents(); break;
    case TaskKind::kSentiment: ds.labels = grammar.sentiments(); break;
    case TaskKind::kNer: ds.labels = ner_labels(); break;
    case TaskKind::kTitle: ds.labels = {"drop", "keep"}; break;
    case TaskKind::kProactive:
      ds.labels = grammar.intents();
      ds.intent_labels = grammar.intents();
      break;
  }
  Rng rng(seed);
  Sampler sampler(grammar, rng, view);
  ds.examples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    ds.examples.push_back(make_example(kind, grammar, sampler, rng));
  }
  return ds;
}

Corpus generate_corpus(const Grammar& grammar, const SyntheticSpec& spec) {
  if (!(spec.chat_fraction >= 0 && spec.chat_fraction <= 1)) {
    throw ConfigError("chat_fraction must be in [0, 1], got " + std::to_string(spec.chat_fraction));
  }
  Rng rng(spec.seed ^ kDocSalt);
  const auto n_chat = static_cast<std::size_t>(
      std::llround(spec.chat_fraction * static_cast<double>(spec.num_docs)));
  const auto order = shuffled_indices(spec.num_docs, rng);
  std::vector<bool> chat(spec.num_docs, false);
  for (std::size_t i = 0; i < n_chat; ++i) chat[order[i]] = true;

  Corpus corpus;
  corpus.reserve(spec.num_docs);
  for (std::size_t d = 0; d < spec.num_docs; ++d) {
    Rng doc_rng(rng.next_u64());
    Sampler s(grammar, doc_rng, {});
    CorpusDoc doc;
    char id[32];
    std::snprintf(id, sizeof id, "doc-%06zu", d);
    doc.doc_id = id;
    if (chat[d]) {
      doc.source = DocSource::kChat;
      const auto intents = chain_intents(grammar, doc_rng, 2 + doc_rng.below(5));
      for (const auto& intent : intents) {
        doc.sentences.push_back(render(s.expand(s.choose(grammar.intent_templates, intent))));
      }
    } else {
      doc.source = DocSource::kCatalog;
      s.group = grammar.groups[doc_rng.below(grammar.groups.size())];
      for (const char* slot : {"brand", "product", "attr"}) {
        s.fixed[slot] = s.pick(std::string(slot) + "." + s.group);
      }
      s.fixed["color"] = s.pick("color");
      doc.sentences.push_back(render(s.expand(s.any(grammar.title_templates))));
      const std::size_t n_desc = 2 + doc_rng.below(4);
      for (std::size_t i = 0; i < n_desc; ++i) {
        doc.sentences.push_back(render(s.expand(s.any(grammar.desc_templates))));
      }
    }
    corpus.push_back(std::move(doc));
  }
  return corpus;
}

SyntheticData generate_synthetic_corpus(const Grammar& grammar, const SyntheticSpec& spec) {
  SyntheticData out;
  out.corpus = generate_corpus(grammar, spec);
  std::uint64_t k = 1;
  for (auto kind : kAllTasks) {
    out.tasks[kind] = generate_task(grammar, kind, spec.examples_per_task,
                                    spec.seed ^ (kTaskSalt * k++));
  }
  return out;
}

namespace {

std::set<std::string> grammar_words(const Grammar& g) {
  std::set<std::string> words;
  for (const auto& [key, entries] : g.lexicon) {
    for (const auto& e : entries) {
      for (const auto& w : entry_words(e)) {
        for (const auto& piece : basic_split(w)) words.insert(piece);
      }
    }
  }
  auto add_templates = [&](const std::vector<GrammarTemplate>& ts) {
    for (const auto& t : ts) {
      for (const auto& tok : t.tokens) {
        Slot s;
        const std::string lit = parse_slot(tok, s) ? s.suffix : tok;
        for (const auto& w : basic_split(lit)) words.insert(w);
      }
    }
  };
  add_templates(g.intent_templates);
  add_templates(g.sentiment_templates);
  add_templates(g.title_templates);
  add_templates(g.desc_templates);
  return words;
}

}  // namespace

Vocab build_vocab(const Grammar& grammar) {
  std::vector<std::string> tokens = {std::string(kPadToken), std::string(kUnkToken),
                                     std::string(kClsToken), std::string(kSepToken),
                                     std::string(kMaskToken)};
  std::set<std::string> seen(tokens.begin(), tokens.end());
  auto add = [&](const std::string& t) {
    if (seen.insert(t).second) tokens.push_back(t);
  };
  for (int c = 33; c < 127; ++c) {
    if (std::ispunct(c)) add(std::string(1, static_cast<char>(c)));
  }
  for (char c = '0'; c <= '9'; ++c) add(std::string(1, c));
  for (char c = 'a'; c <= 'z'; ++c) add(std::string(1, c));
  for (char c = '0'; c <= '9'; ++c) add("##" + std::string(1, c));
  for (char c = 'a'; c <= 'z'; ++c) add("##" + std::string(1, c));
  for (const auto& w : grammar_words(grammar)) {
    if (auto it = grammar.pieces.find(w); it != grammar.pieces.end()) {
      for (const auto& p : it->second) add(p);
    } else {
      add(w);
    }
  }
  return Vocab(std::move(tokens));
}

std::vector<std::pair<std::string, std::vector<double>>> synthesize_dep_embeddings(
    const Grammar& grammar, std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw ConfigError("embedding dimension must be positive");
  Rng rng(seed);
  auto unit = [&] {
    std::vector<double> v(dim);
    double n = 0;
    for (auto& x : v) {
      x = rng.normal();
      n += x * x;
    }
    n = std::sqrt(n);
    for (auto& x : v) x /= n;
    return v;
  };
  std::map<std::string, std::vector<double>> centroids;
  for (const char* role : {"brand", "noun", "adjective", "numeral"}) centroids[role] = unit();

  auto role_of = [](const std::string& key) -> std::string {
    const std::string cat = key.substr(0, key.find('.'));
    if (cat == "brand") return "brand";
    if (cat == "product" || cat == "feature") return "noun";
    if (cat == "qty") return "numeral";
    return "adjective";
  };
  std::map<std::string, std::string> roles;
  for (const auto& [key, entries] : grammar.lexicon) {
    for (const auto& e : entries) {
      for (const auto& w : entry_words(e)) roles.emplace(w, role_of(key));
    }
  }
  std::map<std::string, std::vector<double>> rows;
  for (const auto& w : grammar_words(grammar)) {
    std::vector<double> v = unit();
    if (auto it = roles.find(w); it != roles.end()) {
      const auto& c = centroids[it->second];
      for (std::size_t i = 0; i < dim; ++i) v[i] = c[i] + 0.35 * v[i];
    }
    rows[w] = v;
    // Split words also give their vector to the leading piece.
    if (auto p = grammar.pieces.find(w); p != grammar.pieces.end()) {
      rows.emplace(p->second.front(), v);
    }
  }
  return {rows.begin(), rows.end()};
}

}  // namespace redbert
