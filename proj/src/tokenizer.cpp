#include "redbert/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include "redbert/error.hpp"

namespace redbert {

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.empty()) throw ConfigError("vocabulary is empty");
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<std::int32_t>(i)).second) {
      throw ConfigError("duplicate vocabulary token '" + tokens_[i] + "' at line " +
                        std::to_string(i + 1));
    }
  }
  std::string missing;
  for (auto special : {kPadToken, kUnkToken, kClsToken, kSepToken, kMaskToken}) {
    if (!find(special)) {
      if (!missing.empty()) missing += ", ";
      missing += special;
    }
  }
  if (!missing.empty()) {
    throw ConfigError("vocabulary is missing special tokens: " + missing);
  }
  pad_ = *find(kPadToken);
  unk_ = *find(kUnkToken);
  cls_ = *find(kClsToken);
  sep_ = *find(kSepToken);
  mask_ = *find(kMaskToken);
  if (pad_ != 0) throw ConfigError("[PAD] must be the first vocabulary entry (id 0)");
}

std::optional<std::int32_t> Vocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::int32_t Vocab::id(std::string_view token) const {
  auto found = find(token);
  if (!found) throw DataError("token '" + std::string(token) + "' not in vocabulary");
  return *found;
}

const std::string& Vocab::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw IndexError("token id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocab::is_special(std::int32_t id) const {
  return id == pad_ || id == unk_ || id == cls_ || id == sep_ || id == mask_;
}

Vocab load_vocab(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary file " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  // A trailing newline does not introduce an empty token.
  while (!tokens.empty() && tokens.back().empty()) tokens.pop_back();
  return Vocab(std::move(tokens));
}

void save_vocab(const Vocab& vocab, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write vocabulary file " + path.string());
  for (const auto& t : vocab.tokens()) out << t << '\n';
}

std::vector<std::string> basic_split(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) words.push_back(std::move(current));
    current.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (c < 128 && std::ispunct(c)) {
      flush();
      words.emplace_back(1, ch);
    } else {
      current.push_back(c < 128 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return words;
}

std::vector<std::string> wordpiece_word(std::string_view word, const Vocab& vocab) {
  const std::string unk(kUnkToken);
  if (word.size() > kMaxCharsPerWord) return {unk};
  std::vector<std::string> pieces;
  std::size_t start = 0;
  while (start < word.size()) {
    std::size_t end = word.size();
    std::string match;
    while (start < end) {
      std::string candidate(word.substr(start, end - start));
      if (start > 0) candidate = "##" + candidate;
      if (vocab.find(candidate)) {
        match = std::move(candidate);
        break;
      }
      --end;
    }
    if (match.empty()) return {unk};
    pieces.push_back(std::move(match));
    start = end;
  }
  return pieces;
}

std::vector<std::string> wordpiece_tokenize(std::string_view text, const Vocab& vocab) {
  std::vector<std::string> out;
  for (const auto& word : basic_split(text)) {
    auto pieces = wordpiece_word(word, vocab);
    out.insert(out.end(), std::make_move_iterator(pieces.begin()),
               std::make_move_iterator(pieces.end()));
  }
  return out;
}

std::string detokenize(const std::vector<std::string>& pieces) {
  std::string out;
  for (const auto& p : pieces) {
    if (p.rfind("##", 0) == 0) {
      out += p.substr(2);
    } else {
      if (!out.empty()) out += ' ';
      out += p;
    }
  }
  return out;
}

std::size_t TokenizedPair::real_length() const {
  return static_cast<std::size_t>(std::count(attention_mask.begin(), attention_mask.end(), 1));
}

namespace {

struct Pieces {
  std::vector<std::int32_t> ids;
  std::vector<std::int32_t> words;
};

Pieces to_pieces(const std::vector<std::string>& words, const Vocab& vocab,
                 std::int32_t first_word) {
  Pieces p;
  for (std::size_t w = 0; w < words.size(); ++w) {
    for (const auto& piece : wordpiece_word(words[w], vocab)) {
      p.ids.push_back(vocab.id(piece));
      p.words.push_back(first_word + static_cast<std::int32_t>(w));
    }
  }
  return p;
}

}  // namespace

TokenizedPair encode_words(const std::vector<std::string>& words_a,
                           const std::vector<std::string>& words_b, bool has_b,
                           const Vocab& vocab, std::size_t max_len) {
  if (max_len < 3) {
    throw ConfigError("max_len must be at least 3, got " + std::to_string(max_len));
  }
  Pieces a = to_pieces(words_a, vocab, 0);
  Pieces b = has_b ? to_pieces(words_b, vocab, static_cast<std::int32_t>(words_a.size()))
                   : Pieces{};
  const std::size_t specials = has_b ? 3 : 2;
  while (a.ids.size() + b.ids.size() + specials > max_len) {
    Pieces& longer = a.ids.size() > b.ids.size() ? a : b;
    longer.ids.pop_back();
    longer.words.pop_back();
  }

  TokenizedPair out;
  out.ids.reserve(max_len);
  auto push = [&](std::int32_t id, std::int32_t segment, std::int32_t word) {
    out.ids.push_back(id);
    out.segment_ids.push_back(segment);
    out.attention_mask.push_back(1);
    out.word_index.push_back(word);
  };
  push(vocab.cls_id(), 0, -1);
  for (std::size_t i = 0; i < a.ids.size(); ++i) push(a.ids[i], 0, a.words[i]);
  push(vocab.sep_id(), 0, -1);
  if (has_b) {
    for (std::size_t i = 0; i < b.ids.size(); ++i) push(b.ids[i], 1, b.words[i]);
    push(vocab.sep_id(), 1, -1);
  }
  while (out.ids.size() < max_len) {
    out.ids.push_back(vocab.pad_id());
    // Padding keeps the last segment id so segment ids stay non-decreasing.
    out.segment_ids.push_back(has_b ? 1 : 0);
    out.attention_mask.push_back(0);
    out.word_index.push_back(-1);
  }
  return out;
}

TokenizedPair encode_pair(std::string_view seg_a, std::optional<std::string_view> seg_b,
                          const Vocab& vocab, std::size_t max_len) {
  return encode_words(basic_split(seg_a), seg_b ? basic_split(*seg_b) : std::vector<std::string>{},
                      seg_b.has_value(), vocab, max_len);
}

}  // namespace redbert
