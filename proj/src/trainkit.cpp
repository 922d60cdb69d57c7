#include "redbert/trainkit.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <cstdio>

#include <json.hpp>

#include "redbert/datapipe.hpp"
#include "redbert/error.hpp"
#include "redbert/optim.hpp"

namespace redbert {

void TrainRunConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("learning rate must be positive");
  if (clip_norm < 0) throw ConfigError("clip_norm must be >= 0");
  if (validation_fraction < 0 || validation_fraction >= 1) {
    throw ConfigError("validation_fraction must be in [0, 1)");
  }
}

MetricReport evaluate_f1(std::span<const std::int64_t> predictions,
                         std::span<const std::int64_t> gold,
                         const std::vector<std::string>& labels, MetricScheme scheme) {
  if (predictions.size() != gold.size()) {
    throw DataError("predictions (" + std::to_string(predictions.size()) + ") and gold (" +
                    std::to_string(gold.size()) + ") are not aligned");
  }
  const auto k = static_cast<std::int64_t>(labels.size());
  std::vector<std::size_t> tp(labels.size()), pred(labels.size()), sup(labels.size());
  MetricReport r;
  r.scheme = scheme;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const std::int64_t g = gold[i];
    if (scheme == MetricScheme::kTagging && g == kIgnoreLabel) continue;
    const std::int64_t p = predictions[i];
    if (g < 0 || g >= k || p < 0 || p >= k) {
      throw DataError("label out of range at position " + std::to_string(i) + " (gold " +
                      std::to_string(g) + ", predicted " + std::to_string(p) + ", " +
                      std::to_string(k) + " labels)");
    }
    ++r.total;
    ++sup[g];
    ++pred[p];
    if (p == g) {
      ++tp[g];
      ++correct;
    }
  }
  auto f1_of = [](double p, double rc) { return p + rc > 0 ? 2 * p * rc / (p + rc) : 0.0; };
  double macro = 0;
  std::size_t macro_n = 0;
  const auto outside = std::find(labels.begin(), labels.end(), "O");
  const bool has_outside = scheme == MetricScheme::kTagging && outside != labels.end();
  std::size_t ent_tp = 0, ent_pred = 0, ent_sup = 0;
  for (std::size_t c = 0; c < labels.size(); ++c) {
    ClassMetrics m;
    m.label = labels[c];
    m.support = sup[c];
    m.predicted = pred[c];
    m.precision = pred[c] ? static_cast<double>(tp[c]) / pred[c] : 0.0;
    m.recall = sup[c] ? static_cast<double>(tp[c]) / sup[c] : 0.0;
    m.f1 = f1_of(m.precision, m.recall);
    if (sup[c]) {
      macro += m.f1;
      ++macro_n;
    }
    if (!has_outside || labels[c] != "O") {
      ent_tp += tp[c];
      ent_pred += pred[c];
      ent_sup += sup[c];
    }
    r.classes.push_back(m);
  }
  r.macro_f1 = macro_n ? macro / macro_n : 0.0;
  r.accuracy = r.total ? static_cast<double>(correct) / r.total : 0.0;
  r.micro_f1 = r.accuracy;
  const double ep = ent_pred ? static_cast<double>(ent_tp) / ent_pred : 0.0;
  const double er = ent_sup ? static_cast<double>(ent_tp) / ent_sup : 0.0;
  r.entity_f1 = has_outside ? f1_of(ep, er) : r.micro_f1;
  return r;
}

std::string render_report_csv(const MetricReport& r) {
  std::string out = "label,precision,recall,f1,support\n";
  char buf[256];
  for (const auto& c : r.classes) {
    std::snprintf(buf, sizeof buf, "%s,%.9g,%.9g,%.9g,%zu\n", c.label.c_str(), c.precision,
                  c.recall, c.f1, c.support);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "macro,,,%.9g,%zu\nmicro,,,%.9g,%zu\nheadline,,,%.9g,%zu\n",
                r.macro_f1, r.total, r.micro_f1, r.total, r.f1(), r.total);
  out += buf;
  return out;
}

EarlyStopping::EarlyStopping(std::size_t patience, bool maximize)
    : patience_(patience), maximize_(maximize) {
  if (patience < 1) throw ConfigError("patience must be >= 1");
}

bool EarlyStopping::update(double value) {
  const bool better = !has_best_ || (maximize_ ? value > best_ : value < best_);
  if (better) {
    best_ = value;
    has_best_ = true;
    bad_rounds_ = 0;
  } else {
    ++bad_rounds_;
  }
  return better;
}

RunLogger::RunLogger(const std::filesystem::path& metrics_csv,
                     const std::filesystem::path& run_log)
    : csv_(metrics_csv), log_(run_log, std::ios::app) {
  if (!csv_) throw IoError("cannot write metrics " + metrics_csv.string());
  if (!log_) throw IoError("cannot write run log " + run_log.string());
  csv_ << "step,split,loss,f1\n";
}

void RunLogger::metric(std::size_t step, const std::string& split, double loss,
                       std::optional<double> f1) {
  if (!csv_.is_open()) return;
  char buf[128];
  if (f1) {
    std::snprintf(buf, sizeof buf, "%zu,%s,%.9g,%.9g\n", step, split.c_str(), loss, *f1);
  } else {
    std::snprintf(buf, sizeof buf, "%zu,%s,%.9g,\n", step, split.c_str(), loss);
  }
  csv_ << buf;
  csv_.flush();
}

void RunLogger::event(const std::string& name, const std::string& fields_json) {
  if (!log_.is_open()) return;
  nlohmann::json j = fields_json.empty() ? nlohmann::json::object()
                                         : nlohmann::json::parse(fields_json);
  j["event"] = name;
  j["time"] = std::chrono::duration<double>(
                  std::chrono::system_clock::now().time_since_epoch())
                  .count();
  log_ << j.dump() << '\n';
  log_.flush();
}

namespace {

constexpr std::uint64_t kShuffleSalt = 0x3C6EF372FE94F82BULL;
constexpr std::uint64_t kDropoutSalt = 0xA54FF53A5F1D36F1ULL;

using Snapshot = std::vector<std::vector<real>>;

Snapshot snapshot(const ParamList& params) {
  Snapshot s;
  s.reserve(params.size());
  for (const auto& p : params) s.push_back(p.tensor.to_vector());
  return s;
}

void restore(const ParamList& params, const Snapshot& s) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    std::copy(s[i].begin(), s[i].end(), t.mutable_data().begin());
  }
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fields(std::initializer_list<std::pair<const char*, nlohmann::json>> kv) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : kv) j[k] = v;
  return j.dump();
}

struct LoopState {
  std::size_t steps = 0;
  std::size_t epochs = 0;
  bool stopped_early = false;
};

// Epoch/step/validation driver shared by both loops. step_fn trains on one
// batch of indices; validate_fn returns true when training should stop.
template <typename StepFn, typename ValidateFn>
LoopState run_loop(std::size_t n_train, const TrainRunConfig& config, RunLogger* log,
                   StepFn step_fn, ValidateFn validate_fn) {
  LoopState st;
  Rng shuffle_rng(config.seed ^ kShuffleSalt);
  bool done = false;
  for (std::size_t epoch = 0; epoch < config.max_epochs && !done; ++epoch) {
    const auto t0 = Clock::now();
    const auto order = shuffled_indices(n_train, shuffle_rng);
    for (std::size_t start = 0; start < n_train && !done; start += config.batch_size) {
      const std::size_t end = std::min(n_train, start + config.batch_size);
      step_fn(std::span<const std::size_t>(order.data() + start, end - start));
      ++st.steps;
      if (config.eval_every && st.steps % config.eval_every == 0) {
        if (validate_fn(st.steps)) {
          st.stopped_early = true;
          done = true;
        }
      }
      if (config.max_steps && st.steps >= config.max_steps) done = true;
    }
    ++st.epochs;
    if (!config.eval_every && !st.stopped_early) {
      if (validate_fn(st.steps)) {
        st.stopped_early = true;
        done = true;
      }
    }
    if (log) {
      log->event("epoch", fields({{"epoch", epoch + 1},
                                  {"steps", st.steps},
                                  {"seconds", seconds_since(t0)}}));
    }
  }
  return st;
}

}  // namespace

double pretrain_eval_loss(const PretrainModel& model, const std::vector<TrainingInstance>& data,
                          std::size_t batch_size) {
  NoGradGuard no_grad;
  double total = 0;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, data.size() - start);
    const auto loss = joint_pretrain_loss(
        model, std::span<const TrainingInstance>(data.data() + start, n), Mode::kEval, nullptr);
    total += static_cast<double>(loss.total.item()) * static_cast<double>(n);
  }
  return data.empty() ? 0.0 : total / static_cast<double>(data.size());
}

PretrainResult pretrain(PretrainModel& model, const std::vector<TrainingInstance>& train,
                        const std::vector<TrainingInstance>& validation,
                        const TrainRunConfig& config, RunLogger* log,
                        const std::optional<std::filesystem::path>& checkpoint_path) {
  config.validate();
  if (train.empty()) throw DataError("pretraining data is empty");
  const ParamList trainable = model.params();
  std::vector<Tensor> tensors = tensors_of(trainable);
  const ParamList everything = model.all_params();
  AdamState adam;
  adam.learning_rate = config.learning_rate;
  Rng dropout_rng(config.seed ^ kDropoutSalt);
  PretrainResult result;
  EarlyStopping stopper(config.patience, false);
  Snapshot best = snapshot(everything);
  Snapshot last_finite;
  std::vector<TrainingInstance> batch;

  auto step_fn = [&](std::span<const std::size_t> idx) {
    batch.clear();
    for (auto i : idx) batch.push_back(train[i]);
    zero_grads(tensors);
    // Ops reject NaN inputs with NumericError; both forms count as divergence.
    std::optional<PretrainLoss> loss;
    try {
      loss = joint_pretrain_loss(model, batch, Mode::kTrain, &dropout_rng);
    } catch (const NumericError&) {
    }
    const double value = loss ? loss->total.item() : std::numeric_limits<double>::quiet_NaN();
    if (!std::isfinite(value)) {
      if (!last_finite.empty()) restore(everything, last_finite);
      if (checkpoint_path) save_checkpoint(to_checkpoint(model), *checkpoint_path);
      if (log) log->event("diverged", fields({{"step", result.steps + 1}}));
      throw RunError("pretraining loss became non-finite at step " +
                     std::to_string(result.steps + 1));
    }
    last_finite = snapshot(everything);
    backward(loss->total);
    if (config.clip_norm > 0) clip_grad_norm(tensors, config.clip_norm);
    adam_step(tensors, adam);
    ++result.steps;
    result.train_loss.push_back(value);
    if (log) log->metric(result.steps, "train", value);
  };
  auto validate_fn = [&](std::size_t step) {
    if (validation.empty()) return false;
    const double v = pretrain_eval_loss(model, validation, config.batch_size);
    result.validation_loss.push_back(v);
    if (log) log->metric(step, "validation", v);
    if (stopper.update(v)) {
      best = snapshot(everything);
      result.best_validation_loss = v;
      result.best_round = result.validation_loss.size() - 1;
      if (checkpoint_path) save_checkpoint(to_checkpoint(model), *checkpoint_path);
    }
    return stopper.stop();
  };
  const LoopState st = run_loop(train.size(), config, log, step_fn, validate_fn);
  result.epochs = st.epochs;
  result.stopped_early = st.stopped_early;
  if (!validation.empty()) {
    restore(everything, best);
  } else if (checkpoint_path) {
    save_checkpoint(to_checkpoint(model), *checkpoint_path);
  }
  return result;
}

MetricReport evaluate_task(const TaskModel& model, const TaskDataset& data, const Vocab& vocab,
                           std::size_t max_len, std::size_t batch_size) {
  NoGradGuard no_grad;
  std::vector<std::int64_t> predictions, gold;
  double loss_sum = 0;
  std::size_t loss_count = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.examples.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.examples.size(), start + batch_size); ++i) {
      idx.push_back(i);
    }
    const TaskBatch batch = encode_task_batch(data, idx, vocab, max_len);
    const HeadOutput out = model.forward(batch, Mode::kEval, nullptr);
    predictions.insert(predictions.end(), out.predictions.begin(), out.predictions.end());
    gold.insert(gold.end(), batch.labels.begin(), batch.labels.end());
    loss_sum += static_cast<double>(out.loss.item()) * static_cast<double>(out.count);
    loss_count += out.count;
  }
  MetricReport r = evaluate_f1(predictions, gold, model.labels,
                               is_tagging(model.kind) ? MetricScheme::kTagging
                                                      : MetricScheme::kClassification);
  r.loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
  return r;
}

FineTuneResult fine_tune(TaskModel& model, const TaskDataset& train,
                         const TaskDataset& validation, const Vocab& vocab, std::size_t max_len,
                         const TrainRunConfig& config, RunLogger* log,
                         const std::optional<std::filesystem::path>& checkpoint_path) {
  config.validate();
  if (train.kind != model.kind) {
    throw ConfigError(std::string("model is for task ") + task_name(model.kind) +
                      " but the dataset is " + task_name(train.kind));
  }
  if (train.labels != model.labels) {
    throw ConfigError("label set of the dataset does not match the model's label set");
  }
  if (model.kind == TaskKind::kProactive && train.intent_labels != model.intent_labels) {
    throw ConfigError("intent label set of the dataset does not match the model's");
  }
  check_label_set(train);
  if (!validation.examples.empty()) check_label_set(validation);
  if (train.examples.empty()) throw DataError("fine-tuning data is empty");

  const ParamList trainable = model.params();
  std::vector<Tensor> tensors = tensors_of(trainable);
  const ParamList everything = model.all_params();
  AdamState adam;
  adam.learning_rate = config.learning_rate;
  Rng dropout_rng(config.seed ^ kDropoutSalt);
  FineTuneResult result;
  EarlyStopping stopper(config.patience, true);
  Snapshot best = snapshot(everything);

  auto step_fn = [&](std::span<const std::size_t> idx) {
    const TaskBatch batch = encode_task_batch(train, idx, vocab, max_len);
    zero_grads(tensors);
    std::optional<HeadOutput> maybe;
    try {
      maybe = model.forward(batch, Mode::kTrain, &dropout_rng);
    } catch (const NumericError&) {
    }
    const double value = maybe ? maybe->loss.item() : std::numeric_limits<double>::quiet_NaN();
    if (!std::isfinite(value)) {
      restore(everything, best);
      if (checkpoint_path) save_checkpoint(to_checkpoint(model), *checkpoint_path);
      throw RunError("fine-tuning loss became non-finite at step " +
                     std::to_string(result.steps + 1));
    }
    const HeadOutput& out = *maybe;
    if (out.count > 0) {
      backward(out.loss);
      if (config.clip_norm > 0) clip_grad_norm(tensors, config.clip_norm);
      adam_step(tensors, adam);
    }
    ++result.steps;
    result.train_loss.push_back(value);
    if (log) log->metric(result.steps, "train", value);
  };
  auto validate_fn = [&](std::size_t step) {
    if (validation.examples.empty()) return false;
    const MetricReport r = evaluate_task(model, validation, vocab, max_len, 64);
    result.validation_f1.push_back(r.f1());
    if (log) log->metric(step, "validation", r.loss, r.f1());
    if (stopper.update(r.f1())) {
      best = snapshot(everything);
      result.best_validation = r;
      if (checkpoint_path) save_checkpoint(to_checkpoint(model), *checkpoint_path);
    }
    return stopper.stop();
  };
  const LoopState st = run_loop(train.examples.size(), config, log, step_fn, validate_fn);
  result.epochs = st.epochs;
  result.stopped_early = st.stopped_early;
  if (!validation.examples.empty()) {
    restore(everything, best);
  } else if (checkpoint_path) {
    save_checkpoint(to_checkpoint(model), *checkpoint_path);
  }
  return result;
}

std::pair<TaskDataset, TaskDataset> carve_validation(const TaskDataset& data, double fraction,
                                                     std::uint64_t seed) {
  TaskDataset train = data, val = data;
  train.examples.clear();
  val.examples.clear();
  if (fraction <= 0) {
    train.examples = data.examples;
    return {train, val};
  }
  auto [a, b] = split(data.examples, SplitSpec{1.0 - fraction, seed});
  train.examples = std::move(a);
  val.examples = std::move(b);
  return {train, val};
}

}  // namespace redbert
