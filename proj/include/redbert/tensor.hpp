#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "redbert/random.hpp"

#ifndef REDBERT_REAL
#define REDBERT_REAL float
#endif

namespace redbert {

// Element type of every tensor. Training builds use float; the gradient
// checking build compiles the same sources with double.
using real = REDBERT_REAL;

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Reference-counted handle to a node of the autodiff graph. Copies share the
// underlying buffer; ops never mutate their inputs.
class Tensor {
 public:
  struct Node;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, real value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<real> values,
                     bool requires_grad = false);
  static Tensor scalar(real value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const real> data() const;
  // Direct write access, for optimizers and initializers only.
  std::span<real> mutable_data();
  real item() const;
  std::vector<real> to_vector() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const real> grad() const;
  std::span<real> mutable_grad();
  void zero_grad();

  // Same values, no graph history.
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;

  friend Tensor make_result(Shape shape, std::vector<real> values,
                            std::vector<Tensor> parents,
                            std::function<void(Node&)> backward);
};

struct Tensor::Node {
  Shape shape;
  std::vector<real> data;
  std::vector<real> grad;  // empty until first needed
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad();
};

// Builds an op output. The node records parents and a backward closure only
// when some parent requires a gradient and recording is enabled.
Tensor make_result(Shape shape, std::vector<real> values,
                   std::vector<Tensor> parents,
                   std::function<void(Tensor::Node&)> backward);

// Disables graph recording for its lifetime (evaluation passes).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Reverse pass from a scalar loss. Leaf gradients accumulate across calls;
// intermediate gradients are scratch and reset on every call.
void backward(const Tensor& loss);

// ---- ops -------------------------------------------------------------------

// Matrix product over the last two axes. Either operand may carry one leading
// batch axis; a missing or size-1 batch axis broadcasts.
Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise with suffix broadcasting: b's shape must equal a trailing
// suffix of a's shape (bias rows, per-feature scales).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, real factor);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// axis may be negative (counted from the end).
Tensor softmax(const Tensor& x, int axis = -1);
Tensor log_softmax(const Tensor& x, int axis = -1);

// -log p[target] for a single log-probability row.
Tensor cross_entropy(const Tensor& log_probs, std::size_t target);

// Mean of -log p[row, target[row]] over rows (log_probs is N x C).
Tensor nll_loss(const Tensor& log_probs, std::span<const std::int64_t> targets);

// Normalizes over the last axis, then applies per-feature gamma/beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  real eps = static_cast<real>(1e-12));

// Exact (erf) GELU.
Tensor gelu(const Tensor& x);

// Rows of table (V x H) selected by ids; gradient scatter-adds into table.
// Lookups of padding_id (when >= 0) contribute no gradient to that row.
Tensor embedding_lookup(const Tensor& table, std::span<const std::int32_t> ids,
                        std::int32_t padding_id = -1);

// Inverted dropout; identity when !train or p == 0.
Tensor dropout(const Tensor& x, real p, Rng& rng, bool train);

// Concatenation along the last axis. Leading axes must agree.
Tensor concat(const std::vector<Tensor>& parts);

// Rows of a 2-D tensor, in the given order (repeats allowed).
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);

Tensor reshape(const Tensor& x, Shape shape);

// Transpose of a 2-D tensor.
Tensor transpose(const Tensor& x);

// Multi-head scaled dot-product attention on packed (batch*seq) x hidden
// inputs. key_mask holds 1 for real tokens and 0 for padding, per row; padded
// keys get -inf logits so they carry exactly zero weight.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 std::size_t batch, std::size_t seq, std::size_t heads,
                 std::span<const std::uint8_t> key_mask);

}  // namespace redbert
