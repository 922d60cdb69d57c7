#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "redbert/layers.hpp"
#include "redbert/tokenizer.hpp"

namespace redbert {

struct ModelConfig {
  std::size_t num_layers = 2;
  std::size_t hidden_size = 64;
  std::size_t num_heads = 4;
  std::size_t ff_size = 256;
  std::size_t vocab_size = 0;
  std::size_t max_len = kDefaultMaxLen;
  // Rows of the position table; 0 means max_len.
  std::size_t max_positions = 0;
  double dropout = 0.1;
  std::size_t dep_dim = 300;
  std::size_t dep_heads = 4;
  bool use_segment_embeddings = true;
  std::size_t type_vocab_size = 2;

  std::size_t position_rows() const { return max_positions ? max_positions : max_len; }

  // Throws ConfigError describing the first violated constraint.
  void validate() const;

  // 768-wide, 12-head, 30522-token configuration with 512 positions.
  static ModelConfig full_size(std::size_t layers);

  std::map<std::string, std::string> to_map() const;
  static ModelConfig from_map(const std::map<std::string, std::string>& values);
};

bool operator==(const ModelConfig& a, const ModelConfig& b);

// All learned tensors of the transformer encoder.
struct EncoderState {
  ModelConfig config;
  Tensor token_embeddings;     // V x H
  Tensor position_embeddings;  // P x H
  Tensor segment_embeddings;   // 2 x H, undefined when segments are disabled
  LayerNorm embedding_norm;
  std::vector<EncoderBlock> layers;

  ParamList params() const;
};

// Hidden states for a packed batch: states is (batch*seq) x width.
struct EncoderOutput {
  Tensor states;
  std::size_t batch = 0;
  std::size_t seq = 0;

  std::size_t width() const { return states.dim(1); }
  Shape shape() const { return {batch, seq, width()}; }
  Tensor cls() const;  // batch x width, row 0 of each example
};

SequenceBatch make_batch(std::span<const TokenizedPair> pairs);

EncoderState init_random(const ModelConfig& config, std::uint64_t seed);

// rng is required in train mode when dropout > 0.
EncoderOutput forward(const SequenceBatch& batch, const EncoderState& state, Mode mode,
                      Rng* rng = nullptr);

std::size_t count_parameters(const EncoderState& state);

void encoder_param_shapes(const ModelConfig& config, std::vector<ParamShape>& out,
                          const std::string& prefix = "encoder.");

}  // namespace redbert
