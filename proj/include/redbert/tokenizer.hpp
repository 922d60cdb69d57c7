#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace redbert {

inline constexpr std::string_view kPadToken = "[PAD]";
inline constexpr std::string_view kUnkToken = "[UNK]";
inline constexpr std::string_view kClsToken = "[CLS]";
inline constexpr std::string_view kSepToken = "[SEP]";
inline constexpr std::string_view kMaskToken = "[MASK]";

// BERT-style vocabulary: id is the zero-based line number of the token.
class Vocab {
 public:
  // Throws ConfigError on duplicates, missing special tokens, a [PAD] that is
  // not id 0, or an empty token list.
  explicit Vocab(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  std::optional<std::int32_t> find(std::string_view token) const;
  std::int32_t id(std::string_view token) const;  // throws DataError if absent
  const std::string& token(std::int32_t id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::int32_t pad_id() const { return pad_; }
  std::int32_t unk_id() const { return unk_; }
  std::int32_t cls_id() const { return cls_; }
  std::int32_t sep_id() const { return sep_; }
  std::int32_t mask_id() const { return mask_; }
  bool is_special(std::int32_t id) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
  std::int32_t pad_ = 0, unk_ = 0, cls_ = 0, sep_ = 0, mask_ = 0;
};

Vocab load_vocab(const std::filesystem::path& path);
void save_vocab(const Vocab& vocab, const std::filesystem::path& path);

inline constexpr std::size_t kMaxCharsPerWord = 200;

// Lowercases and splits on whitespace and ASCII punctuation (each punctuation
// character becomes its own word).
std::vector<std::string> basic_split(std::string_view text);

// Greedy longest-match-first WordPiece over basic_split(text).
std::vector<std::string> wordpiece_tokenize(std::string_view text, const Vocab& vocab);

// Pieces for one pre-split word; [UNK] alone if any piece fails to match.
std::vector<std::string> wordpiece_word(std::string_view word, const Vocab& vocab);

// Joins pieces, gluing "##" continuations onto the previous piece.
std::string detokenize(const std::vector<std::string>& pieces);

struct TokenizedPair {
  std::vector<std::int32_t> ids;
  std::vector<std::int32_t> segment_ids;
  std::vector<std::uint8_t> attention_mask;
  // Index of the source word for every position, -1 for specials/padding.
  // Word indices of segment B continue after those of segment A.
  std::vector<std::int32_t> word_index;

  std::size_t length() const { return ids.size(); }
  std::size_t real_length() const;

  friend bool operator==(const TokenizedPair&, const TokenizedPair&) = default;
};

inline constexpr std::size_t kDefaultMaxLen = 128;

// [CLS] A [SEP] (B [SEP]) then [PAD] up to max_len. While too long, the
// currently longer segment loses its last piece.
TokenizedPair encode_pair(std::string_view seg_a, std::optional<std::string_view> seg_b,
                          const Vocab& vocab, std::size_t max_len = kDefaultMaxLen);

// Same packing from already-split words.
TokenizedPair encode_words(const std::vector<std::string>& words_a,
                           const std::vector<std::string>& words_b, bool has_b,
                           const Vocab& vocab, std::size_t max_len = kDefaultMaxLen);

}  // namespace redbert
