#include "redbert/datapipe.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "redbert/error.hpp"

namespace redbert {

const char* source_name(DocSource source) {
  return source == DocSource::kChat ? "chat" : "catalog";
}

void validate_doc(const CorpusDoc& doc) {
  for (const auto& s : doc.sentences) {
    if (!s.empty()) return;
  }
  throw DataError("document '" + doc.doc_id + "' has no non-empty sentence");
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write corpus " + path.string());
  for (const auto& doc : corpus) {
    nlohmann::json j = {{"doc_id", doc.doc_id},
                        {"source", source_name(doc.source)},
                        {"sentences", doc.sentences}};
    out << j.dump() << '\n';
  }
}

Corpus read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus " + path.string());
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      CorpusDoc doc;
      doc.doc_id = j.at("doc_id").get<std::string>();
      const auto source = j.at("source").get<std::string>();
      if (source == "chat") {
        doc.source = DocSource::kChat;
      } else if (source == "catalog") {
        doc.source = DocSource::kCatalog;
      } else {
        throw DataError("unknown source '" + source + "'");
      }
      doc.sentences = j.at("sentences").get<std::vector<std::string>>();
      validate_doc(doc);
      corpus.push_back(std::move(doc));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("corpus line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("corpus line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return corpus;
}

std::vector<std::string> split_sentences(const std::string& text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    const auto b = current.find_first_not_of(' ');
    if (b != std::string::npos) {
      const auto e = current.find_last_not_of(' ');
      out.push_back(current.substr(b, e - b + 1));
    }
    current.clear();
  };
  for (char c : text) {
    current.push_back(c);
    if (c == '.' || c == '!' || c == '?') flush();
  }
  flush();
  return out;
}

NspPairSampler::NspPairSampler(const Corpus& corpus, std::uint64_t seed, double positive_rate)
    : corpus_(corpus), rng_(seed), positive_rate_(positive_rate) {
  if (corpus.size() < 2) {
    throw ConfigError("NSP pair sampling needs at least 2 documents, got " +
                      std::to_string(corpus.size()));
  }
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    const std::size_t n = corpus[d].sentences.size();
    for (std::size_t s = 0; s + 1 < n; ++s) {
      anchors_.push_back(s);
      anchor_doc_.push_back(d);
    }
  }
  if (anchors_.empty()) {
    throw ConfigError("NSP pair sampling needs a document with at least 2 sentences");
  }
}

SentencePair NspPairSampler::next() {
  const std::size_t k = rng_.below(anchors_.size());
  const std::size_t doc = anchor_doc_[k];
  const std::size_t sent = anchors_[k];
  SentencePair p;
  p.seg_a = corpus_[doc].sentences[sent];
  p.doc_a = doc;
  if (rng_.bernoulli(positive_rate_)) {
    p.seg_b = corpus_[doc].sentences[sent + 1];
    p.doc_b = doc;
    p.label = kIsNext;
  } else {
    std::size_t other = rng_.below(corpus_.size() - 1);
    if (other >= doc) ++other;
    const auto& sentences = corpus_[other].sentences;
    p.seg_b = sentences[rng_.below(sentences.size())];
    p.doc_b = other;
    p.label = kNotNext;
  }
  return p;
}

std::vector<SentencePair> make_nsp_pairs(const Corpus& corpus, std::size_t count,
                                         std::uint64_t seed) {
  NspPairSampler sampler(corpus, seed);
  std::vector<SentencePair> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(sampler.next());
  return out;
}

TrainingInstance apply_masking(const TokenizedPair& pair, std::int32_t nsp_label,
                               const Vocab& vocab, std::uint64_t seed,
                               const MaskingConfig& config) {
  Rng rng(seed);
  TrainingInstance inst;
  inst.pair = pair;
  inst.nsp_label = nsp_label;
  // Random replacements come from the non-special part of the vocabulary.
  std::vector<std::int32_t> ordinary;
  ordinary.reserve(vocab.size());
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    if (!vocab.is_special(static_cast<std::int32_t>(i))) {
      ordinary.push_back(static_cast<std::int32_t>(i));
    }
  }
  for (std::size_t i = 0; i < pair.ids.size(); ++i) {
    const std::int32_t id = pair.ids[i];
    if (!pair.attention_mask[i] || id == vocab.cls_id() || id == vocab.sep_id() ||
        id == vocab.pad_id()) {
      continue;
    }
    if (!rng.bernoulli(config.select_rate)) continue;
    inst.masked_positions.push_back(i);
    inst.mlm_labels.push_back(id);
    const double r = rng.uniform();
    if (r < config.mask_rate) {
      inst.pair.ids[i] = vocab.mask_id();
    } else if (r < config.mask_rate + config.random_rate && !ordinary.empty()) {
      inst.pair.ids[i] = ordinary[rng.below(ordinary.size())];
    }
  }
  return inst;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    std::swap(idx[i - 1], idx[rng.below(i)]);
  }
  return idx;
}

std::pair<Corpus, Corpus> split_corpus(const Corpus& corpus, const SplitSpec& spec) {
  return split(corpus, spec);
}

std::vector<TrainingInstance> build_pretraining_instances(const Corpus& corpus,
                                                          const Vocab& vocab, std::size_t count,
                                                          std::size_t max_len, std::uint64_t seed,
                                                          const MaskingConfig& masking) {
  NspPairSampler sampler(corpus, seed);
  Rng mask_seeds(seed ^ 0xA0761D6478BD642FULL);
  std::vector<TrainingInstance> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const SentencePair p = sampler.next();
    const TokenizedPair pair = encode_pair(p.seg_a, std::string_view(p.seg_b), vocab, max_len);
    out.push_back(apply_masking(pair, p.label, vocab, mask_seeds.next_u64(), masking));
  }
  return out;
}

namespace {

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
void put_vec(std::string& out, const std::vector<T>& v) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(v.size()));
  for (const auto& x : v) put(out, x);
}

class Cursor {
 public:
  explicit Cursor(const std::string& s) : s_(s) {}
  template <typename T>
  T get() {
    if (s_.size() - pos_ < sizeof(T)) throw DataError("instance record is truncated");
    T v;
    std::memcpy(&v, s_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  template <typename T>
  std::vector<T> get_vec() {
    const auto n = get<std::uint32_t>();
    if ((s_.size() - pos_) / sizeof(T) < n) throw DataError("instance record is truncated");
    std::vector<T> v(n);
    for (auto& x : v) x = get<T>();
    return v;
  }
  bool done() const { return pos_ == s_.size(); }

 private:
  const std::string& s_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_instance(const TrainingInstance& inst) {
  std::string out;
  put_vec(out, inst.pair.ids);
  put_vec(out, inst.pair.segment_ids);
  put_vec(out, inst.pair.attention_mask);
  put_vec(out, inst.pair.word_index);
  std::vector<std::uint64_t> positions(inst.masked_positions.begin(), inst.masked_positions.end());
  put_vec(out, positions);
  put_vec(out, inst.mlm_labels);
  put<std::int32_t>(out, inst.nsp_label);
  return out;
}

TrainingInstance parse_instance(const std::string& bytes) {
  Cursor c(bytes);
  TrainingInstance inst;
  inst.pair.ids = c.get_vec<std::int32_t>();
  inst.pair.segment_ids = c.get_vec<std::int32_t>();
  inst.pair.attention_mask = c.get_vec<std::uint8_t>();
  inst.pair.word_index = c.get_vec<std::int32_t>();
  for (auto p : c.get_vec<std::uint64_t>()) inst.masked_positions.push_back(p);
  inst.mlm_labels = c.get_vec<std::int32_t>();
  inst.nsp_label = c.get<std::int32_t>();
  if (!c.done()) throw DataError("trailing bytes in instance record");
  const std::size_t n = inst.pair.ids.size();
  if (inst.pair.segment_ids.size() != n || inst.pair.attention_mask.size() != n ||
      inst.masked_positions.size() != inst.mlm_labels.size()) {
    throw DataError("instance record has inconsistent field lengths");
  }
  return inst;
}

void write_instance_shard(const std::vector<TrainingInstance>& instances,
                          const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write instance shard " + path.string());
  for (const auto& inst : instances) {
    const std::string rec = serialize_instance(inst);
    std::string len;
    put<std::uint32_t>(len, static_cast<std::uint32_t>(rec.size()));
    out.write(len.data(), static_cast<std::streamsize>(len.size()));
    out.write(rec.data(), static_cast<std::streamsize>(rec.size()));
  }
  if (!out) throw IoError("failed writing instance shard " + path.string());
}

std::vector<TrainingInstance> read_instance_shard(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open instance shard " + path.string());
  std::vector<TrainingInstance> out;
  for (;;) {
    std::uint32_t len = 0;
    if (!in.read(reinterpret_cast<char*>(&len), sizeof len)) break;
    std::string rec(len, '\0');
    if (!in.read(rec.data(), len)) throw DataError("instance shard is truncated");
    out.push_back(parse_instance(rec));
  }
  return out;
}

}  // namespace redbert
