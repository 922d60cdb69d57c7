#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "redbert/instance.hpp"
#include "redbert/layers.hpp"

namespace redbert {

// Loss plus the per-row distributions and argmax predictions it was built from.
struct HeadOutput {
  Tensor loss;   // scalar; mean over the rows that carry a label
  Tensor probs;  // rows x classes (undefined when no row carries a label)
  std::vector<std::int64_t> predictions;
  std::size_t count = 0;  // rows that contributed to the loss
};

inline constexpr std::int64_t kIgnoreLabel = -1;

// Softmax over an affine map: P = softmax(x W + b). Used by every head.
struct ClassifierHead {
  Linear proj;

  static ClassifierHead init(std::size_t in, std::size_t num_classes, Rng& rng);
  std::size_t num_classes() const { return proj.out_features(); }
  ParamList params() const { return proj.params(); }
};

// Next-sentence prediction: two classes {not-next = 0, is-next = 1}.
struct NSPHead {
  ClassifierHead head;

  static NSPHead init(std::size_t hidden, Rng& rng);
  ParamList params() const { return head.params(); }
};

// Masked-token prediction. The decoder weight is the token embedding table
// (passed at call time); the head owns the transform and the output bias.
struct MLMHead {
  Linear transform;  // in x hidden
  LayerNorm norm;
  Tensor output_bias;  // vocab

  static MLMHead init(std::size_t in, std::size_t hidden, std::size_t vocab, Rng& rng);
  ParamList params() const;
};

// Per-token tagging (BIO entities or keep/drop).
struct TaggerHead {
  ClassifierHead head;

  static TaggerHead init(std::size_t in, std::size_t num_tags, Rng& rng);
  std::size_t num_tags() const { return head.num_classes(); }
  ParamList params() const { return head.params(); }
};

// Next-intent prediction from [CLS] state plus an encoded current intent:
// I = W2 gelu(W1 x_I), features = concat(h_cls, I).
struct ProactiveHead {
  Linear intent_in;   // num_intents x d_I
  Linear intent_out;  // d_I x d_I
  ClassifierHead classifier;  // (hidden + d_I) x num_next

  static ProactiveHead init(std::size_t hidden, std::size_t num_intents,
                            std::size_t intent_dim, std::size_t num_next, Rng& rng);
  std::size_t num_intents() const { return intent_in.in_features(); }
  std::size_t intent_dim() const { return intent_out.out_features(); }
  ParamList params() const;
};

// Rows of x scored by head; rows whose label is kIgnoreLabel are skipped in
// the loss. labels may be empty (prediction only).
HeadOutput classify_rows(const Tensor& x, std::span<const std::int64_t> labels,
                         const ClassifierHead& head);

HeadOutput nsp_loss(const Tensor& h_cls, std::span<const std::int64_t> labels,
                    const NSPHead& head);

// Cross-entropy over masked rows only. labels holds one id per row of states;
// entries at rows not listed in masked_rows are never read. An empty
// masked_rows yields a zero loss with count 0.
HeadOutput mlm_loss(const Tensor& states, std::span<const std::size_t> masked_rows,
                    std::span<const std::int32_t> labels, const MLMHead& head,
                    const Tensor& decoder);

// Instance-level form: states is (instances.size() * seq) x width.
HeadOutput mlm_loss(const Tensor& states, std::size_t seq,
                    std::span<const TrainingInstance> instances, const MLMHead& head,
                    const Tensor& decoder);

// Mean over rows of -sum_c t_c log softmax(z / T)_c.
Tensor distill_loss(const Tensor& student_logits, const Tensor& teacher_probs,
                    real temperature = real(1));

HeadOutput classify(const Tensor& h_cls, std::span<const std::int64_t> labels,
                    const ClassifierHead& head);

// tags has one entry per row of states; kIgnoreLabel marks pad/special rows.
HeadOutput tag(const Tensor& states, std::span<const std::int64_t> tags,
               const TaggerHead& head);

// current_intents is batch x num_intents and must be one-hot per row.
HeadOutput proactive_forward(const Tensor& h_cls, const Tensor& current_intents,
                             std::span<const std::int64_t> labels,
                             const ProactiveHead& head);

}  // namespace redbert
