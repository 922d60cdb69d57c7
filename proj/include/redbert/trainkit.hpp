#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "redbert/model.hpp"
#include "redbert/tasks.hpp"
#include "redbert/tokenizer.hpp"

namespace redbert {

struct TrainRunConfig {
  std::size_t batch_size = 32;
  double learning_rate = 2e-5;
  std::size_t max_epochs = 10;
  std::size_t patience = 3;
  std::uint64_t seed = 0;
  std::size_t eval_every = 0;  // validate every n steps; 0 = once per epoch
  std::size_t max_steps = 0;   // 0 = no limit
  double clip_norm = 1.0;      // global gradient norm; 0 disables clipping
  double validation_fraction = 0.1;

  void validate() const;  // throws ConfigError
};

struct ClassMetrics {
  std::string label;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  std::size_t support = 0;    // gold count
  std::size_t predicted = 0;  // predicted count
};

enum class MetricScheme { kClassification, kTagging };

struct MetricReport {
  MetricScheme scheme = MetricScheme::kClassification;
  std::vector<ClassMetrics> classes;  // one row per label, in label order
  double macro_f1 = 0;   // over labels with gold support
  double micro_f1 = 0;   // all labels counted; equals accuracy
  double accuracy = 0;
  // Tagging with an "O" label: micro-F1 over the other labels. Otherwise
  // equal to micro_f1.
  double entity_f1 = 0;
  std::size_t total = 0;
  double loss = 0;

  // Headline score used for model selection and reports.
  double f1() const { return entity_f1; }
};

// predictions/gold aligned one-to-one. Tagging skips positions whose gold is
// kIgnoreLabel (padding and special tokens). Throws DataError on length
// mismatch or an out-of-range label.
MetricReport evaluate_f1(std::span<const std::int64_t> predictions,
                         std::span<const std::int64_t> gold,
                         const std::vector<std::string>& labels, MetricScheme scheme);

// label,precision,recall,f1,support rows, then macro/micro/headline summary rows.
std::string render_report_csv(const MetricReport& report);

// Counts validation rounds without improvement; stop() after `patience` of them.
class EarlyStopping {
 public:
  EarlyStopping(std::size_t patience, bool maximize);

  // Returns true when value is a new best.
  bool update(double value);
  bool stop() const { return bad_rounds_ >= patience_; }
  double best() const { return best_; }
  std::size_t bad_rounds() const { return bad_rounds_; }

 private:
  std::size_t patience_;
  bool maximize_;
  bool has_best_ = false;
  double best_ = 0;
  std::size_t bad_rounds_ = 0;
};

// Metrics CSV (step,split,loss,f1) holds only deterministic values; wall
// clock goes to the JSON-lines run log.
class RunLogger {
 public:
  RunLogger() = default;
  RunLogger(const std::filesystem::path& metrics_csv, const std::filesystem::path& run_log);

  void metric(std::size_t step, const std::string& split, double loss,
              std::optional<double> f1 = std::nullopt);
  // Appends {"event": name, ...fields} where fields is a JSON object text.
  void event(const std::string& name, const std::string& fields_json);

 private:
  std::ofstream csv_;
  std::ofstream log_;
};

struct PretrainResult {
  std::vector<double> train_loss;       // per step
  std::vector<double> validation_loss;  // per validation round
  double best_validation_loss = 0;
  std::size_t best_round = 0;
  std::size_t steps = 0;
  std::size_t epochs = 0;
  bool stopped_early = false;
};

// Adam on joint_pretrain_loss. With a non-empty validation set the model
// ends at its best validation-loss state; checkpoint_path (optional)
// receives every new best. A non-finite loss restores the last finite state,
// saves it, and throws RunError.
PretrainResult pretrain(PretrainModel& model, const std::vector<TrainingInstance>& train,
                        const std::vector<TrainingInstance>& validation,
                        const TrainRunConfig& config, RunLogger* log = nullptr,
                        const std::optional<std::filesystem::path>& checkpoint_path = {});

// Mean joint loss over instances, evaluation mode, no graph.
double pretrain_eval_loss(const PretrainModel& model, const std::vector<TrainingInstance>& data,
                          std::size_t batch_size);

struct FineTuneResult {
  std::vector<double> train_loss;
  std::vector<double> validation_f1;
  MetricReport best_validation;
  std::size_t steps = 0;
  std::size_t epochs = 0;
  bool stopped_early = false;
};

// Full-model updates unless model.freeze_encoder. Ends at the best
// validation-F1 state. Throws ConfigError when the model's label set differs
// from the dataset's.
FineTuneResult fine_tune(TaskModel& model, const TaskDataset& train,
                         const TaskDataset& validation, const Vocab& vocab, std::size_t max_len,
                         const TrainRunConfig& config, RunLogger* log = nullptr,
                         const std::optional<std::filesystem::path>& checkpoint_path = {});

MetricReport evaluate_task(const TaskModel& model, const TaskDataset& data, const Vocab& vocab,
                           std::size_t max_len, std::size_t batch_size = 64);

// Deterministic validation carve-out: (train, validation).
std::pair<TaskDataset, TaskDataset> carve_validation(const TaskDataset& data, double fraction,
                                                     std::uint64_t seed);

}  // namespace redbert
