#pragma once

#include <cstdint>
#include <filesystem>
#include <span>

#include "redbert/encoder.hpp"
#include "redbert/objectives.hpp"

namespace redbert {

// Dependency-based word embedding matrix, one row per WordPiece vocab entry.
// Row 0 ([PAD]) is pinned to zero and never receives gradient.
struct DepEmbeddingTable {
  Tensor weights;  // V x dep_dim
  bool fine_tune = true;

  std::size_t rows() const { return weights.dim(0); }
  std::size_t dim() const { return weights.dim(1); }

  // Truncated-normal rows with a zero [PAD] row.
  static DepEmbeddingTable init_random(std::size_t vocab_size, std::size_t dep_dim, Rng& rng);
  void set_fine_tune(bool flag);
};

struct DepLoadStats {
  std::size_t file_rows = 0;
  std::size_t matched = 0;  // vocab entries filled from the file
};

// word2vec text format: "count dim" header, then "token v1 ... v_dim" lines.
// Vocab entries absent from the file (including "##" pieces) keep their
// random initialization; [PAD] stays zero.
DepEmbeddingTable load_dep_embeddings(const std::filesystem::path& path, const Vocab& vocab,
                                      std::size_t dep_dim, std::uint64_t seed,
                                      DepLoadStats* stats = nullptr);

void write_dep_embeddings(const std::filesystem::path& path,
                          const std::vector<std::pair<std::string, std::vector<double>>>& rows);

// D = rows of the table for ids, (ids.size()) x dep_dim.
Tensor dep_lookup(std::span<const std::int32_t> ids, const DepEmbeddingTable& table);

// One encoder block over dep_dim features with its own position table.
struct SideTransformer {
  Tensor position_embeddings;  // positions x dep_dim
  EncoderBlock block;

  static SideTransformer init(std::size_t dep_dim, std::size_t heads, std::size_t positions,
                              Rng& rng);
  ParamList params() const;
};

// T = Block(D + P) with padded keys masked.
Tensor side_transform(const Tensor& d, const SideTransformer& side, std::size_t batch,
                      std::size_t seq, std::span<const std::uint8_t> attention_mask,
                      real dropout_p = real(0), Mode mode = Mode::kEval, Rng* rng = nullptr);

// C = [T ; H] per time step.
Tensor inject(const Tensor& t, const Tensor& h);

struct DepInjector {
  DepEmbeddingTable table;
  SideTransformer side;

  static DepInjector init(const ModelConfig& config, Rng& rng);
  // Table is listed only while fine-tuning is enabled.
  ParamList params() const;
  ParamList all_params() const;
  Tensor forward(const SequenceBatch& batch, const Tensor& h, real dropout_p, Mode mode,
                 Rng* rng) const;
};

// Heads over C: same contracts as classify/tag, with the input width checked
// against hidden + dep_dim.
HeadOutput dep_classify(const Tensor& c_cls, std::span<const std::int64_t> labels,
                        const ClassifierHead& head, std::size_t hidden, std::size_t dep_dim);
HeadOutput dep_tag(const Tensor& c, std::span<const std::int64_t> tags,
                   const TaggerHead& head, std::size_t hidden, std::size_t dep_dim);

void dep_param_shapes(const ModelConfig& config, std::vector<ParamShape>& out,
                      const std::string& prefix = "dep.");

}  // namespace redbert
