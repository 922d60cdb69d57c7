#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "redbert/tokenizer.hpp"

namespace redbert {

inline constexpr std::int32_t kIsNext = 1;
inline constexpr std::int32_t kNotNext = 0;

// One packed pretraining example.
struct TrainingInstance {
  TokenizedPair pair;
  std::vector<std::size_t> masked_positions;  // ascending
  std::vector<std::int32_t> mlm_labels;       // original ids at masked_positions
  std::int32_t nsp_label = kNotNext;

  friend bool operator==(const TrainingInstance&, const TrainingInstance&) = default;
};

}  // namespace redbert
