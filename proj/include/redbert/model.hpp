#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "redbert/checkpoint.hpp"
#include "redbert/depinject.hpp"
#include "redbert/encoder.hpp"
#include "redbert/objectives.hpp"
#include "redbert/tasks.hpp"

namespace redbert {

// Encoder plus, in dependency-injection mode, the side path whose output is
// concatenated in front of the encoder states.
struct Backbone {
  EncoderState encoder;
  std::optional<DepInjector> injector;

  static Backbone init(const ModelConfig& config, bool inject_deps, std::uint64_t seed);

  const ModelConfig& config() const { return encoder.config; }
  bool injects() const { return injector.has_value(); }
  // hidden, or dep_dim + hidden with injection.
  std::size_t output_width() const;

  EncoderOutput forward(const SequenceBatch& batch, Mode mode, Rng* rng) const;
  // Replaces the dependency table (ConfigError without injection or on a
  // shape mismatch); the current fine-tune setting is kept.
  void set_dep_table(DepEmbeddingTable table);
  // Trainable tensors (a frozen dependency table is excluded).
  ParamList params() const;
  // Everything that goes into a checkpoint.
  ParamList all_params() const;
};

struct PretrainWeights {
  double nsp = 1.0;
  double mlm = 1.0;
};

struct PretrainLoss {
  Tensor total;
  HeadOutput nsp;
  HeadOutput mlm;
};

struct PretrainModel {
  Backbone backbone;
  MLMHead mlm;
  NSPHead nsp;

  static PretrainModel init(const ModelConfig& config, bool inject_deps, std::uint64_t seed);
  ParamList params() const;
  ParamList all_params() const;
};

// weights.nsp * L_NSP + weights.mlm * L_MLM over a batch of instances.
PretrainLoss joint_pretrain_loss(const PretrainModel& model,
                                 std::span<const TrainingInstance> instances, Mode mode,
                                 Rng* rng, PretrainWeights weights = {});

// Exact parameter count of a pretraining model, from shapes only.
std::size_t pretrain_parameter_count(const ModelConfig& config, bool inject_deps);

using TaskHead = std::variant<ClassifierHead, TaggerHead, ProactiveHead>;

struct TaskModel {
  TaskKind kind = TaskKind::kIntent;
  Backbone backbone;
  TaskHead head;
  std::vector<std::string> labels;
  std::vector<std::string> intent_labels;  // proactive only
  bool freeze_encoder = false;

  static TaskModel init(TaskKind kind, Backbone backbone, std::vector<std::string> labels,
                        std::vector<std::string> intent_labels, std::uint64_t seed,
                        std::size_t intent_dim = 32);

  HeadOutput forward(const TaskBatch& batch, Mode mode, Rng* rng) const;
  ParamList head_params() const;
  // Trainable tensors; the head only when freeze_encoder is set.
  ParamList params() const;
  ParamList all_params() const;
};

Checkpoint to_checkpoint(const PretrainModel& model);
PretrainModel pretrain_model_from(const Checkpoint& ckpt);
Checkpoint to_checkpoint(const TaskModel& model);
TaskModel task_model_from(const Checkpoint& ckpt);
// Backbone of any checkpoint (pretraining or fine-tuned).
Backbone backbone_from(const Checkpoint& ckpt);

}  // namespace redbert
