#include "redbert/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "redbert/error.hpp"

namespace redbert {

ClassifierHead ClassifierHead::init(std::size_t in, std::size_t num_classes, Rng& rng) {
  if (num_classes < 2) {
    throw ConfigError("a classifier needs at least 2 classes, got " +
                      std::to_string(num_classes));
  }
  return {Linear::init(in, num_classes, rng)};
}

NSPHead NSPHead::init(std::size_t hidden, Rng& rng) {
  return {ClassifierHead::init(hidden, 2, rng)};
}

MLMHead MLMHead::init(std::size_t in, std::size_t hidden, std::size_t vocab, Rng& rng) {
  return {Linear::init(in, hidden, rng), LayerNorm::init(hidden), Tensor::zeros({vocab}, true)};
}

ParamList MLMHead::params() const {
  ParamList out;
  append_params(out, "transform.", transform.params());
  append_params(out, "norm.", norm.params());
  out.push_back({"output_bias", output_bias});
  return out;
}

TaggerHead TaggerHead::init(std::size_t in, std::size_t num_tags, Rng& rng) {
  return {ClassifierHead::init(in, num_tags, rng)};
}

ProactiveHead ProactiveHead::init(std::size_t hidden, std::size_t num_intents,
                                  std::size_t intent_dim, std::size_t num_next, Rng& rng) {
  if (num_intents == 0 || intent_dim == 0) {
    throw ConfigError("proactive head needs positive intent count and width");
  }
  ProactiveHead h;
  h.intent_in = Linear::init(num_intents, intent_dim, rng);
  h.intent_out = Linear::init(intent_dim, intent_dim, rng);
  h.classifier = ClassifierHead::init(hidden + intent_dim, num_next, rng);
  return h;
}

ParamList ProactiveHead::params() const {
  ParamList out;
  append_params(out, "intent_in.", intent_in.params());
  append_params(out, "intent_out.", intent_out.params());
  append_params(out, "classifier.", classifier.params());
  return out;
}

namespace {

std::vector<std::int64_t> argmax_rows(const Tensor& scores) {
  const std::size_t n = scores.dim(0);
  const std::size_t c = scores.dim(1);
  std::vector<std::int64_t> out(n);
  const auto d = scores.data();
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = d.subspan(i * c, c);
    out[i] = std::max_element(row.begin(), row.end()) - row.begin();
  }
  return out;
}

Tensor exp_values(const Tensor& log_probs) {
  std::vector<real> p(log_probs.data().begin(), log_probs.data().end());
  for (auto& v : p) v = std::exp(v);
  return Tensor::from(log_probs.shape(), std::move(p));
}

// Shared tail of every head: log-softmax rows, pick labeled rows, mean NLL.
HeadOutput score_rows(const Tensor& logits, std::span<const std::int64_t> labels) {
  HeadOutput out;
  Tensor logp = log_softmax(logits, -1);
  out.probs = exp_values(logp);
  out.predictions = argmax_rows(logits);
  if (labels.empty()) {
    out.loss = Tensor::scalar(real(0));
    return out;
  }
  if (labels.size() != logits.dim(0)) {
    throw DataError("expected " + std::to_string(logits.dim(0)) + " labels, got " +
                    std::to_string(labels.size()));
  }
  const std::size_t c = logits.dim(1);
  std::vector<std::size_t> rows;
  std::vector<std::int64_t> targets;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == kIgnoreLabel) continue;
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw DataError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                      " is out of range for " + std::to_string(c) + " classes");
    }
    rows.push_back(i);
    targets.push_back(labels[i]);
  }
  out.count = rows.size();
  if (rows.empty()) {
    out.loss = Tensor::scalar(real(0));
    return out;
  }
  out.loss = rows.size() == logits.dim(0) ? nll_loss(logp, targets)
                                          : nll_loss(gather_rows(logp, rows), targets);
  return out;
}

}  // namespace

HeadOutput classify_rows(const Tensor& x, std::span<const std::int64_t> labels,
                         const ClassifierHead& head) {
  if (x.rank() != 2 || x.dim(1) != head.proj.in_features()) {
    throw ShapeError("head expects rows of width " + std::to_string(head.proj.in_features()) +
                     ", got " + shape_string(x.shape()));
  }
  return score_rows(head.proj(x), labels);
}

HeadOutput nsp_loss(const Tensor& h_cls, std::span<const std::int64_t> labels,
                    const NSPHead& head) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != kIsNext && labels[i] != kNotNext) {
      throw DataError("NSP label must be 0 or 1, got " + std::to_string(labels[i]) +
                      " at row " + std::to_string(i));
    }
  }
  return classify_rows(h_cls, labels, head.head);
}

HeadOutput mlm_loss(const Tensor& states, std::span<const std::size_t> masked_rows,
                    std::span<const std::int32_t> labels, const MLMHead& head,
                    const Tensor& decoder) {
  if (labels.size() != states.dim(0)) {
    throw DataError("MLM labels must cover every row: " + std::to_string(labels.size()) +
                    " labels for " + std::to_string(states.dim(0)) + " rows");
  }
  if (masked_rows.empty()) {
    HeadOutput out;
    out.loss = Tensor::scalar(real(0));
    return out;
  }
  std::vector<std::int64_t> targets;
  targets.reserve(masked_rows.size());
  for (std::size_t r : masked_rows) {
    if (r >= states.dim(0)) {
      throw DataError("masked row " + std::to_string(r) + " is out of range for " +
                      std::to_string(states.dim(0)) + " rows");
    }
    targets.push_back(labels[r]);
  }
  Tensor picked = gather_rows(states, masked_rows);
  Tensor h = head.norm(gelu(head.transform(picked)));
  Tensor logits = add(matmul(h, transpose(decoder)), head.output_bias);
  HeadOutput out = score_rows(logits, targets);
  return out;
}

HeadOutput mlm_loss(const Tensor& states, std::size_t seq,
                    std::span<const TrainingInstance> instances, const MLMHead& head,
                    const Tensor& decoder) {
  std::vector<std::size_t> rows;
  std::vector<std::int32_t> labels(states.dim(0), 0);
  for (std::size_t b = 0; b < instances.size(); ++b) {
    const auto& inst = instances[b];
    if (inst.masked_positions.size() != inst.mlm_labels.size()) {
      throw DataError("instance " + std::to_string(b) + " has " +
                      std::to_string(inst.masked_positions.size()) + " masked positions but " +
                      std::to_string(inst.mlm_labels.size()) + " labels");
    }
    for (std::size_t k = 0; k < inst.masked_positions.size(); ++k) {
      const std::size_t pos = inst.masked_positions[k];
      if (pos >= seq) {
        throw DataError("masked position " + std::to_string(pos) +
                        " is beyond sequence length " + std::to_string(seq));
      }
      rows.push_back(b * seq + pos);
      labels.at(b * seq + pos) = inst.mlm_labels[k];
    }
  }
  return mlm_loss(states, rows, labels, head, decoder);
}

Tensor distill_loss(const Tensor& student_logits, const Tensor& teacher_probs,
                    real temperature) {
  if (student_logits.shape() != teacher_probs.shape() || student_logits.rank() != 2) {
    throw ShapeError("distill_loss: student " + shape_string(student_logits.shape()) +
                     " and teacher " + shape_string(teacher_probs.shape()) +
                     " must be matching 2-D tensors");
  }
  if (!(temperature > 0)) throw ConfigError("distillation temperature must be positive");
  const std::size_t n = teacher_probs.dim(0);
  const std::size_t c = teacher_probs.dim(1);
  const auto t = teacher_probs.data();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < c; ++j) {
      if (t[i * c + j] < 0) throw DataError("teacher probabilities must be non-negative");
      s += t[i * c + j];
    }
    if (std::abs(s - 1.0) > 1e-5) {
      throw DataError("teacher row " + std::to_string(i) + " sums to " + std::to_string(s) +
                      ", not 1");
    }
  }
  Tensor logs = log_softmax(scale(student_logits, real(1) / temperature), -1);
  return scale(sum(mul(logs, teacher_probs.detach())), real(-1) / static_cast<real>(n));
}

HeadOutput classify(const Tensor& h_cls, std::span<const std::int64_t> labels,
                    const ClassifierHead& head) {
  return classify_rows(h_cls, labels, head);
}

HeadOutput tag(const Tensor& states, std::span<const std::int64_t> tags,
               const TaggerHead& head) {
  if (!tags.empty() && tags.size() != states.dim(0)) {
    throw DataError("tag sequence has " + std::to_string(tags.size()) +
                    " entries but the batch has " + std::to_string(states.dim(0)) +
                    " token positions");
  }
  return classify_rows(states, tags, head.head);
}

HeadOutput proactive_forward(const Tensor& h_cls, const Tensor& current_intents,
                             std::span<const std::int64_t> labels,
                             const ProactiveHead& head) {
  if (current_intents.rank() != 2 || current_intents.dim(0) != h_cls.dim(0) ||
      current_intents.dim(1) != head.num_intents()) {
    throw ShapeError("current intents must be " + std::to_string(h_cls.dim(0)) + " x " +
                     std::to_string(head.num_intents()) + ", got " +
                     shape_string(current_intents.shape()));
  }
  const auto x = current_intents.data();
  const std::size_t k = head.num_intents();
  for (std::size_t i = 0; i < current_intents.dim(0); ++i) {
    std::size_t ones = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const real v = x[i * k + j];
      if (v == real(1)) {
        ++ones;
      } else if (v != real(0)) {
        ones = 2;
        break;
      }
    }
    if (ones != 1) {
      throw DataError("current intent row " + std::to_string(i) + " is not one-hot");
    }
  }
  Tensor intent = head.intent_out(gelu(head.intent_in(current_intents)));
  return classify_rows(concat({h_cls, intent}), labels, head.classifier);
}

}  // namespace redbert
