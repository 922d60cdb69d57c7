#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "redbert/random.hpp"
#include "redbert/tensor.hpp"

namespace redbert {

struct NamedParam {
  std::string name;
  Tensor tensor;
};

using ParamList = std::vector<NamedParam>;

void append_params(ParamList& out, const std::string& prefix, const ParamList& params);
std::vector<Tensor> tensors_of(const ParamList& params);
std::size_t count_elements(const ParamList& params);

// Shape-only description of a parameter, so sizes can be computed without
// allocating full-size models.
struct ParamShape {
  std::string name;
  Shape shape;
};
std::size_t count_elements(const std::vector<ParamShape>& shapes);

enum class Mode { kTrain, kEval };

inline constexpr double kInitStddev = 0.02;

Tensor truncated_normal(Shape shape, Rng& rng, double stddev = kInitStddev);

// y = x W + b, W stored as in x out.
struct Linear {
  Tensor weight;
  Tensor bias;

  static Linear init(std::size_t in, std::size_t out, Rng& rng);
  static void shapes(std::vector<ParamShape>& out, const std::string& prefix,
                     std::size_t in, std::size_t out_dim);
  Tensor operator()(const Tensor& x) const;
  ParamList params() const;
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;

  static LayerNorm init(std::size_t dim);
  static void shapes(std::vector<ParamShape>& out, const std::string& prefix,
                     std::size_t dim);
  Tensor operator()(const Tensor& x) const;
  ParamList params() const;
};

// Packed batch of equal-length sequences; row b*seq + i is token i of
// example b.
struct SequenceBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<std::int32_t> ids;
  std::vector<std::int32_t> segment_ids;
  std::vector<std::uint8_t> attention_mask;

  std::size_t rows() const { return batch * seq; }
  // Row index of position 0 ([CLS]) for every example.
  std::vector<std::size_t> cls_rows() const;
  // Position index (0..seq-1) of every row.
  std::vector<std::int32_t> position_ids() const;
};

// Post-norm transformer block: x = LN(x + Attn(x)); x = LN(x + FF(x)).
struct EncoderBlock {
  Linear query, key, value, attn_out;
  LayerNorm attn_norm;
  Linear ff_in, ff_out;
  LayerNorm ff_norm;
  std::size_t heads = 1;

  static EncoderBlock init(std::size_t hidden, std::size_t heads, std::size_t ff,
                           Rng& rng);
  static void shapes(std::vector<ParamShape>& out, const std::string& prefix,
                     std::size_t hidden, std::size_t ff);
  Tensor forward(const Tensor& x, std::size_t batch, std::size_t seq,
                 std::span<const std::uint8_t> mask, real dropout_p, Mode mode,
                 Rng* rng) const;
  ParamList params() const;
};

// Dropout that requires an rng only in train mode.
Tensor apply_dropout(const Tensor& x, real p, Mode mode, Rng* rng);

}  // namespace redbert
