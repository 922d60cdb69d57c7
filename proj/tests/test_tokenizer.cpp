#include <algorithm>

#include "doctest.h"
#include "redbert/error.hpp"
#include "redbert/random.hpp"
#include "redbert/tokenizer.hpp"
#include "test_util.hpp"

using namespace redbert;
using testutil::small_vocab;

namespace {

const Vocab& shop_vocab() {
  static const Vocab v = small_vocab({"run", "##ning", "shoe", "##s", "remove", "an", "item",
                                      "from", "cart", "add", "to", "red", "the", "?", ".", "a",
                                      "##a", "##b"});
  return v;
}

void check_pair_invariants(const TokenizedPair& p, const Vocab& vocab, std::size_t max_len) {
  REQUIRE(p.length() == max_len);
  CHECK(p.segment_ids.size() == max_len);
  CHECK(p.attention_mask.size() == max_len);
  CHECK(p.ids[0] == vocab.cls_id());
  CHECK(std::count(p.ids.begin(), p.ids.end(), vocab.cls_id()) == 1);
  CHECK(std::is_sorted(p.segment_ids.begin(), p.segment_ids.end()));
  CHECK(std::is_sorted(p.attention_mask.rbegin(), p.attention_mask.rend()));
  for (std::size_t i = 0; i < max_len; ++i) {
    CHECK((p.attention_mask[i] == 0) == (p.ids[i] == vocab.pad_id()));
  }
}

}  // namespace

TEST_CASE("greedy longest match splits running shoes") {
  const auto pieces = wordpiece_tokenize("running shoes", shop_vocab());
  CHECK(pieces == std::vector<std::string>{"run", "##ning", "shoe", "##s"});
}

TEST_CASE("lowercases before matching") {
  CHECK(wordpiece_tokenize("Running SHOES", shop_vocab()) ==
        std::vector<std::string>{"run", "##ning", "shoe", "##s"});
}

TEST_CASE("empty input gives no pieces") {
  CHECK(wordpiece_tokenize("", shop_vocab()).empty());
  CHECK(wordpiece_tokenize("   ", shop_vocab()).empty());
}

TEST_CASE("a word with an unmatched piece becomes [UNK]") {
  CHECK(wordpiece_tokenize("zzzz", shop_vocab()) == std::vector<std::string>{"[UNK]"});
  // "shoez": shoe matches but ##z does not, so the whole word is unknown.
  CHECK(wordpiece_tokenize("red shoez", shop_vocab()) == std::vector<std::string>{"red", "[UNK]"});
  CHECK(wordpiece_word(std::string(kMaxCharsPerWord + 1, 'a'), shop_vocab()) ==
        std::vector<std::string>{"[UNK]"});
}

TEST_CASE("punctuation splits off as its own word") {
  CHECK(basic_split("cart?add") == std::vector<std::string>{"cart", "?", "add"});
}

TEST_CASE("padding arithmetic for a two-token segment") {
  const Vocab& v = shop_vocab();
  const TokenizedPair p = encode_pair("red cart", std::nullopt, v, 8);
  const std::vector<std::int32_t> ids{v.cls_id(), v.id("red"), v.id("cart"), v.sep_id(), 0, 0, 0, 0};
  CHECK(p.ids == ids);
  CHECK(p.attention_mask == std::vector<std::uint8_t>{1, 1, 1, 1, 0, 0, 0, 0});
  CHECK(p.real_length() == 4);
  check_pair_invariants(p, v, 8);
}

TEST_CASE("long pairs truncate to exactly max_len") {
  const Vocab v = testutil::word_vocab(20);
  std::string a, b;
  for (int i = 0; i < 100; ++i) {
    a += "w1 ";
    b += "w2 ";
  }
  const TokenizedPair p = encode_pair(a, b, v, 128);
  check_pair_invariants(p, v, 128);
  CHECK(p.real_length() == 128);
  CHECK(std::count(p.ids.begin(), p.ids.end(), v.sep_id()) == 2);
  // 125 content slots shared by two equally long segments: 63 and 62.
  const auto n1 = std::count(p.ids.begin(), p.ids.end(), v.id("w1"));
  const auto n2 = std::count(p.ids.begin(), p.ids.end(), v.id("w2"));
  CHECK(n1 + n2 == 125);
  CHECK(std::abs(n1 - n2) == 1);
}

TEST_CASE("the longer segment is truncated first") {
  const Vocab v = testutil::word_vocab(20);
  const TokenizedPair p = encode_pair("w1 w1 w1 w1 w1 w1", "w2 w2", v, 9);
  CHECK(std::count(p.ids.begin(), p.ids.end(), v.id("w1")) == 4);
  CHECK(std::count(p.ids.begin(), p.ids.end(), v.id("w2")) == 2);
}

TEST_CASE("segment ids switch after the first [SEP]") {
  const Vocab& v = shop_vocab();
  const TokenizedPair p = encode_pair("remove an item from cart", "add a red shoe to the cart", v, 32);
  const auto first_sep = std::find(p.ids.begin(), p.ids.end(), v.sep_id()) - p.ids.begin();
  CHECK(first_sep == 6);
  for (std::size_t i = 0; i < p.length(); ++i) {
    if (p.attention_mask[i] == 0) continue;
    CHECK(p.segment_ids[i] == (static_cast<long>(i) <= first_sep ? 0 : 1));
  }
  CHECK(p.segment_ids[first_sep + 1] == 1);
  check_pair_invariants(p, v, 32);
}

TEST_CASE("max_len below 3 is rejected") {
  CHECK_THROWS_AS(encode_pair("red", std::nullopt, shop_vocab(), 2), ConfigError);
}

TEST_CASE("vocab files load by line order and reject bad content") {
  testutil::TempDir dir("vocab");
  testutil::write_file(dir / "ok.txt", "[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\nred\nshoe\n##s\ncart\n");
  const Vocab v = load_vocab(dir / "ok.txt");
  CHECK(v.size() == 9);
  CHECK(v.id("red") == 5);
  CHECK(v.token(8) == "cart");
  CHECK(v.pad_id() == 0);

  testutil::write_file(dir / "nomask.txt", "[PAD]\n[UNK]\n[CLS]\n[SEP]\nred\n");
  CHECK_THROWS_WITH_AS(load_vocab(dir / "nomask.txt"), doctest::Contains("[MASK]"), ConfigError);

  testutil::write_file(dir / "dup.txt", "[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\nred\nred\n");
  CHECK_THROWS_WITH_AS(load_vocab(dir / "dup.txt"), doctest::Contains("red"), ConfigError);

  testutil::write_file(dir / "empty.txt", "");
  CHECK_THROWS_AS(load_vocab(dir / "empty.txt"), ConfigError);

  save_vocab(v, dir / "copy.txt");
  CHECK(load_vocab(dir / "copy.txt").tokens() == v.tokens());
}

TEST_CASE("property: detokenize reproduces in-vocab sentences") {
  const Vocab& v = shop_vocab();
  const std::vector<std::string> words{"running", "shoes", "remove", "an", "item", "cart",
                                       "red", "the", "?", "aab", "run", "shoe"};
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    std::string sentence;
    const std::size_t n = 1 + rng.below(8);
    for (std::size_t i = 0; i < n; ++i) {
      if (i) sentence += ' ';
      sentence += words[rng.below(words.size())];
    }
    const auto pieces = wordpiece_tokenize(sentence, v);
    CHECK(std::find(pieces.begin(), pieces.end(), "[UNK]") == pieces.end());
    CHECK(detokenize(pieces) == sentence);
    // Pure function.
    CHECK(wordpiece_tokenize(sentence, v) == pieces);
  }
}

TEST_CASE("property: random pairs satisfy the packing invariants") {
  const Vocab v = testutil::word_vocab(30);
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    auto words = [&](std::size_t n) {
      std::string s;
      for (std::size_t i = 0; i < n; ++i) s += "w" + std::to_string(rng.below(25)) + " ";
      return s;
    };
    const std::size_t max_len = 3 + rng.below(30);
    const std::string a = words(rng.below(40));
    const bool has_b = rng.bernoulli(0.5);
    const std::string b = words(rng.below(40));
    const TokenizedPair p =
        encode_pair(a, has_b ? std::optional<std::string_view>(b) : std::nullopt, v, max_len);
    check_pair_invariants(p, v, max_len);
  }
}
