#include "redbert/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "redbert/error.hpp"

namespace redbert {

namespace {

thread_local bool g_grad_enabled = true;

using NodePtr = std::shared_ptr<Tensor::Node>;

std::vector<real>& parent_grad(Tensor::Node& self, std::size_t i) {
  auto& p = *self.parents[i];
  p.ensure_grad();
  return p.grad;
}

bool wants_grad(const Tensor::Node& self, std::size_t i) {
  return self.parents[i]->requires_grad;
}

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

// b's shape must be a suffix of a's. Returns the size of b (the period).
std::size_t suffix_period(const Shape& a, const Shape& b, const char* op) {
  if (b.size() > a.size() ||
      !std::equal(b.rbegin(), b.rend(), a.rbegin())) {
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_string(b) +
                     " onto " + shape_string(a));
  }
  return shape_numel(b);
}

// C (m x n) += A (m x k) * B (k x n)
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const real* a,
             const real* b, real* c) {
  for (std::size_t i = 0; i < m; ++i) {
    real* crow = c + i * n;
    const real* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const real av = arow[p];
      if (av == real(0)) continue;
      const real* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C (m x k) += A (m x n) * B^T, with B (k x n)
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const real* a,
             const real* b, real* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const real* arow = a + i * n;
    real* crow = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const real* brow = b + p * n;
      real acc = 0;
      for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      crow[p] += acc;
    }
  }
}

// C (k x n) += A^T * B, with A (m x k), B (m x n)
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const real* a,
             const real* b, real* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const real* arow = a + i * k;
    const real* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const real av = arow[p];
      if (av == real(0)) continue;
      real* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

void Tensor::Node::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), real(0));
}

// ---- Tensor ------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), real(0), requires_grad);
}

Tensor Tensor::full(Shape shape, real value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<real>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<real> values, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " +
                                 shape_string(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("shape " + shape_string(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(real value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_string(shape()));
  }
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->data.size(); }

std::span<const real> Tensor::data() const { return node_->data; }
std::span<real> Tensor::mutable_data() { return node_->data; }

real Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + shape_string(shape()));
  }
  return node_->data[0];
}

std::vector<real> Tensor::to_vector() const { return node_->data; }

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool flag) { node_->requires_grad = flag; }
bool Tensor::is_leaf() const { return node_->leaf; }

bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const real> Tensor::grad() const { return node_->grad; }
std::span<real> Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  node_->ensure_grad();
  std::fill(node_->grad.begin(), node_->grad.end(), real(0));
}

Tensor Tensor::detach() const { return from(shape(), node_->data, false); }

Tensor make_result(Shape shape, std::vector<real> values,
                   std::vector<Tensor> parents,
                   std::function<void(Tensor::Node&)> backward) {
  Tensor out = Tensor::from(std::move(shape), std::move(values));
  if (!g_grad_enabled) return out;
  const bool needs = std::any_of(parents.begin(), parents.end(),
                                 [](const Tensor& p) { return p.requires_grad(); });
  if (!needs) return out;
  auto& node = *out.node_;
  node.requires_grad = true;
  node.leaf = false;
  node.parents.reserve(parents.size());
  for (auto& p : parents) node.parents.push_back(p.node_);
  node.backward_fn = std::move(backward);
  return out;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

void backward(const Tensor& loss) {
  require_defined(loss, "backward");
  if (loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward: loss is not part of a recorded computation");
  }

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Tensor::Node*> order;
  std::unordered_set<Tensor::Node*> seen;
  std::vector<std::pair<Tensor::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Tensor::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Tensor::Node* node : order) {
    if (!node->leaf) node->grad.assign(node->data.size(), real(0));
  }
  Tensor::Node& root = *loss.node();
  root.ensure_grad();
  root.grad[0] += real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

// ---- ops -----------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  auto mismatch = [&] {
    return ShapeError("matmul: incompatible shapes " + shape_string(sa) + " and " +
                      shape_string(sb));
  };
  if (sa.size() < 2 || sa.size() > 3 || sb.size() < 2 || sb.size() > 3) {
    throw mismatch();
  }
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t k = sa[sa.size() - 1];
  const std::size_t kb = sb[sb.size() - 2];
  const std::size_t n = sb[sb.size() - 1];
  if (k != kb) throw mismatch();
  const std::size_t ba = sa.size() == 3 ? sa[0] : 1;
  const std::size_t bb = sb.size() == 3 ? sb[0] : 1;
  if (ba != bb && ba != 1 && bb != 1) throw mismatch();
  const std::size_t batch = std::max(ba, bb);
  const std::size_t stride_a = ba == 1 ? 0 : m * k;
  const std::size_t stride_b = bb == 1 ? 0 : k * n;

  std::vector<real> out(batch * m * n, real(0));
  for (std::size_t i = 0; i < batch; ++i) {
    gemm_nn(m, n, k, a.data().data() + i * stride_a, b.data().data() + i * stride_b,
            out.data() + i * m * n);
  }
  Shape shape = (sa.size() == 3 || sb.size() == 3) ? Shape{batch, m, n} : Shape{m, n};
  return make_result(std::move(shape), std::move(out), {a, b},
                     [=](Tensor::Node& self) {
                       const auto& A = self.parents[0]->data;
                       const auto& B = self.parents[1]->data;
                       const real* g = self.grad.data();
                       if (wants_grad(self, 0)) {
                         auto& ga = parent_grad(self, 0);
                         for (std::size_t i = 0; i < batch; ++i) {
                           gemm_nt(m, n, k, g + i * m * n, B.data() + i * stride_b,
                                   ga.data() + i * stride_a);
                         }
                       }
                       if (wants_grad(self, 1)) {
                         auto& gb = parent_grad(self, 1);
                         for (std::size_t i = 0; i < batch; ++i) {
                           gemm_tn(m, n, k, A.data() + i * stride_a, g + i * m * n,
                                   gb.data() + i * stride_b);
                         }
                       }
                     });
}

namespace {

enum class BinaryKind { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* name) {
  require_defined(a, name);
  require_defined(b, name);
  const std::size_t period = suffix_period(a.shape(), b.shape(), name);
  const auto& x = a.data();
  const auto& y = b.data();
  std::vector<real> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const real yv = y[i % period];
    switch (kind) {
      case BinaryKind::kAdd: out[i] = x[i] + yv; break;
      case BinaryKind::kSub: out[i] = x[i] - yv; break;
      case BinaryKind::kMul: out[i] = x[i] * yv; break;
    }
  }
  return make_result(a.shape(), std::move(out), {a, b},
                     [period, kind](Tensor::Node& self) {
                       const auto& g = self.grad;
                       const auto& X = self.parents[0]->data;
                       const auto& Y = self.parents[1]->data;
                       if (wants_grad(self, 0)) {
                         auto& ga = parent_grad(self, 0);
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           ga[i] += kind == BinaryKind::kMul ? g[i] * Y[i % period] : g[i];
                         }
                       }
                       if (wants_grad(self, 1)) {
                         auto& gb = parent_grad(self, 1);
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           switch (kind) {
                             case BinaryKind::kAdd: gb[i % period] += g[i]; break;
                             case BinaryKind::kSub: gb[i % period] -= g[i]; break;
                             case BinaryKind::kMul: gb[i % period] += g[i] * X[i]; break;
                           }
                         }
                       }
                     });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kMul, "mul"); }

Tensor scale(const Tensor& a, real factor) {
  require_defined(a, "scale");
  std::vector<real> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return make_result(a.shape(), std::move(out), {a}, [factor](Tensor::Node& self) {
    auto& ga = parent_grad(self, 0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += factor * self.grad[i];
  });
}

Tensor sum(const Tensor& a) {
  require_defined(a, "sum");
  real total = 0;
  for (real v : a.data()) total += v;
  return make_result({1}, {total}, {a}, [](Tensor::Node& self) {
    auto& ga = parent_grad(self, 0);
    for (auto& v : ga) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  return scale(sum(a), real(1) / static_cast<real>(a.numel()));
}

namespace {

struct AxisLayout {
  std::size_t outer, len, inner;
};

AxisLayout axis_layout(const Shape& shape, int axis) {
  const std::size_t ax = normalize_axis(axis, shape.size());
  AxisLayout l{1, shape[ax], 1};
  for (std::size_t i = 0; i < ax; ++i) l.outer *= shape[i];
  for (std::size_t i = ax + 1; i < shape.size(); ++i) l.inner *= shape[i];
  return l;
}

void check_finite(std::span<const real> values, const char* op) {
  for (real v : values) {
    if (std::isnan(v)) throw NumericError(std::string(op) + ": NaN input");
  }
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
  require_defined(x, "softmax");
  check_finite(x.data(), "softmax");
  const AxisLayout l = axis_layout(x.shape(), axis);
  const auto& in = x.data();
  std::vector<real> out(in.size());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t s = 0; s < l.inner; ++s) {
      const std::size_t base = o * l.len * l.inner + s;
      real mx = -std::numeric_limits<real>::infinity();
      for (std::size_t i = 0; i < l.len; ++i) mx = std::max(mx, in[base + i * l.inner]);
      real z = 0;
      for (std::size_t i = 0; i < l.len; ++i) {
        const real e = std::exp(in[base + i * l.inner] - mx);
        out[base + i * l.inner] = e;
        z += e;
      }
      for (std::size_t i = 0; i < l.len; ++i) out[base + i * l.inner] /= z;
    }
  }
  return make_result(x.shape(), std::move(out), {x}, [l](Tensor::Node& self) {
    auto& gx = parent_grad(self, 0);
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t s = 0; s < l.inner; ++s) {
        const std::size_t base = o * l.len * l.inner + s;
        real dot = 0;
        for (std::size_t i = 0; i < l.len; ++i) {
          const std::size_t at = base + i * l.inner;
          dot += g[at] * y[at];
        }
        for (std::size_t i = 0; i < l.len; ++i) {
          const std::size_t at = base + i * l.inner;
          gx[at] += y[at] * (g[at] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& x, int axis) {
  require_defined(x, "log_softmax");
  check_finite(x.data(), "log_softmax");
  const AxisLayout l = axis_layout(x.shape(), axis);
  const auto& in = x.data();
  std::vector<real> out(in.size());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t s = 0; s < l.inner; ++s) {
      const std::size_t base = o * l.len * l.inner + s;
      real mx = -std::numeric_limits<real>::infinity();
      for (std::size_t i = 0; i < l.len; ++i) mx = std::max(mx, in[base + i * l.inner]);
      real z = 0;
      for (std::size_t i = 0; i < l.len; ++i) z += std::exp(in[base + i * l.inner] - mx);
      const real lse = mx + std::log(z);
      for (std::size_t i = 0; i < l.len; ++i) {
        out[base + i * l.inner] = in[base + i * l.inner] - lse;
      }
    }
  }
  return make_result(x.shape(), std::move(out), {x}, [l](Tensor::Node& self) {
    auto& gx = parent_grad(self, 0);
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t s = 0; s < l.inner; ++s) {
        const std::size_t base = o * l.len * l.inner + s;
        real gsum = 0;
        for (std::size_t i = 0; i < l.len; ++i) gsum += g[base + i * l.inner];
        for (std::size_t i = 0; i < l.len; ++i) {
          const std::size_t at = base + i * l.inner;
          gx[at] += g[at] - std::exp(y[at]) * gsum;
        }
      }
    }
  });
}

Tensor cross_entropy(const Tensor& log_probs, std::size_t target) {
  require_defined(log_probs, "cross_entropy");
  const auto& lp = log_probs.data();
  if (target >= lp.size()) {
    throw IndexError("cross_entropy: target " + std::to_string(target) +
                     " out of range for " + std::to_string(lp.size()) + " classes");
  }
  double z = 0;
  for (real v : lp) z += std::exp(static_cast<double>(v));
  if (std::abs(std::log(z)) > 1e-5) {
    throw ContractError("cross_entropy: input is not a log-probability row");
  }
  return make_result({1}, {-lp[target]}, {log_probs}, [target](Tensor::Node& self) {
    parent_grad(self, 0)[target] -= self.grad[0];
  });
}

Tensor nll_loss(const Tensor& log_probs, std::span<const std::int64_t> targets) {
  require_defined(log_probs, "nll_loss");
  if (log_probs.rank() != 2 || log_probs.dim(0) != targets.size()) {
    throw ShapeError("nll_loss: expected " + std::to_string(targets.size()) +
                     " rows, got " + shape_string(log_probs.shape()));
  }
  const std::size_t n = log_probs.dim(0);
  const std::size_t c = log_probs.dim(1);
  const auto& lp = log_probs.data();
  real total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= c) {
      throw IndexError("nll_loss: target " + std::to_string(targets[i]) +
                       " out of range for " + std::to_string(c) + " classes");
    }
    total -= lp[i * c + static_cast<std::size_t>(targets[i])];
  }
  std::vector<std::int64_t> tgt(targets.begin(), targets.end());
  // Reciprocal multiply, matching scale(), so soft-target losses with a one-hot
  // teacher reproduce this value bit for bit.
  return make_result({1}, {total * (real(1) / static_cast<real>(n))}, {log_probs},
                     [tgt = std::move(tgt), n, c](Tensor::Node& self) {
                       auto& g = parent_grad(self, 0);
                       const real w = self.grad[0] / static_cast<real>(n);
                       for (std::size_t i = 0; i < n; ++i) {
                         g[i * c + static_cast<std::size_t>(tgt[i])] -= w;
                       }
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, real eps) {
  require_defined(x, "layer_norm");
  const std::size_t h = x.shape().back();
  if (gamma.shape() != Shape{h} || beta.shape() != Shape{h}) {
    throw ShapeError("layer_norm: gamma/beta must be [" + std::to_string(h) + "], got " +
                     shape_string(gamma.shape()) + " and " + shape_string(beta.shape()));
  }
  const std::size_t rows = x.numel() / h;
  const auto& in = x.data();
  const auto& gm = gamma.data();
  const auto& bt = beta.data();
  std::vector<real> out(in.size());
  std::vector<real> xhat(in.size());
  std::vector<real> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const real* row = in.data() + r * h;
    real mu = 0;
    for (std::size_t j = 0; j < h; ++j) mu += row[j];
    mu /= static_cast<real>(h);
    real var = 0;
    for (std::size_t j = 0; j < h; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<real>(h);
    const real is = real(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < h; ++j) {
      const real xh = (row[j] - mu) * is;
      xhat[r * h + j] = xh;
      out[r * h + j] = xh * gm[j] + bt[j];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [h, rows, xhat = std::move(xhat),
                      inv_std = std::move(inv_std)](Tensor::Node& self) {
                       const auto& g = self.grad;
                       const auto& gm = self.parents[1]->data;
                       if (wants_grad(self, 0)) {
                         auto& gx = parent_grad(self, 0);
                         for (std::size_t r = 0; r < rows; ++r) {
                           real sum_dy = 0, sum_dy_xh = 0;
                           for (std::size_t j = 0; j < h; ++j) {
                             const real dy = g[r * h + j] * gm[j];
                             sum_dy += dy;
                             sum_dy_xh += dy * xhat[r * h + j];
                           }
                           const real inv_h = real(1) / static_cast<real>(h);
                           for (std::size_t j = 0; j < h; ++j) {
                             const real dy = g[r * h + j] * gm[j];
                             gx[r * h + j] += inv_std[r] *
                                              (dy - inv_h * sum_dy -
                                               xhat[r * h + j] * inv_h * sum_dy_xh);
                           }
                         }
                       }
                       if (wants_grad(self, 1)) {
                         auto& gg = parent_grad(self, 1);
                         for (std::size_t i = 0; i < g.size(); ++i) gg[i % h] += g[i] * xhat[i];
                       }
                       if (wants_grad(self, 2)) {
                         auto& gb = parent_grad(self, 2);
                         for (std::size_t i = 0; i < g.size(); ++i) gb[i % h] += g[i];
                       }
                     });
}

Tensor gelu(const Tensor& x) {
  require_defined(x, "gelu");
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  const auto& in = x.data();
  std::vector<real> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double v = in[i];
    out[i] = static_cast<real>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
  }
  return make_result(x.shape(), std::move(out), {x}, [](Tensor::Node& self) {
    auto& gx = parent_grad(self, 0);
    const auto& in = self.parents[0]->data;
    for (std::size_t i = 0; i < in.size(); ++i) {
      const double v = in[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      gx[i] += self.grad[i] * static_cast<real>(cdf + v * pdf);
    }
  });
}

Tensor embedding_lookup(const Tensor& table, std::span<const std::int32_t> ids,
                        std::int32_t padding_id) {
  require_defined(table, "embedding_lookup");
  if (table.rank() != 2) {
    throw ShapeError("embedding_lookup: table must be 2-D, got " +
                     shape_string(table.shape()));
  }
  if (ids.empty()) throw ShapeError("embedding_lookup: empty id sequence");
  const std::size_t vocab = table.dim(0);
  const std::size_t h = table.dim(1);
  std::vector<real> out(ids.size() * h);
  const auto& t = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw IndexError("embedding_lookup: id " + std::to_string(ids[i]) +
                       " at position " + std::to_string(i) + " out of range for " +
                       std::to_string(vocab) + " rows");
    }
    std::copy_n(t.begin() + static_cast<std::ptrdiff_t>(ids[i]) * h, h,
                out.begin() + static_cast<std::ptrdiff_t>(i * h));
  }
  std::vector<std::int32_t> idv(ids.begin(), ids.end());
  return make_result({ids.size(), h}, std::move(out), {table},
                     [idv = std::move(idv), h, padding_id](Tensor::Node& self) {
                       auto& gt = parent_grad(self, 0);
                       for (std::size_t i = 0; i < idv.size(); ++i) {
                         if (idv[i] == padding_id) continue;
                         real* dst = gt.data() + static_cast<std::size_t>(idv[i]) * h;
                         const real* src = self.grad.data() + i * h;
                         for (std::size_t j = 0; j < h; ++j) dst[j] += src[j];
                       }
                     });
}

Tensor dropout(const Tensor& x, real p, Rng& rng, bool train) {
  require_defined(x, "dropout");
  if (p < 0 || p >= 1) throw ConfigError("dropout: p must be in [0, 1)");
  if (!train || p == 0) return x;
  const real keep_scale = real(1) / (real(1) - p);
  std::vector<real> mask(x.numel());
  for (auto& m : mask) m = rng.bernoulli(p) ? real(0) : keep_scale;
  std::vector<real> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * mask[i];
  return make_result(x.shape(), std::move(out), {x},
                     [mask = std::move(mask)](Tensor::Node& self) {
                       auto& gx = parent_grad(self, 0);
                       for (std::size_t i = 0; i < gx.size(); ++i) {
                         gx[i] += self.grad[i] * mask[i];
                       }
                     });
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  for (const auto& p : parts) require_defined(p, "concat");
  Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape pl(p.shape().begin(), p.shape().end() - 1);
    if (pl != lead) {
      throw ShapeError("concat: leading shapes differ: " + shape_string(parts[0].shape()) +
                       " vs " + shape_string(p.shape()));
    }
    widths.push_back(p.shape().back());
    total += widths.back();
  }
  const std::size_t rows = shape_numel(lead);
  std::vector<real> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& d = parts[k].data();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(r * widths[k]), widths[k],
                  out.begin() + static_cast<std::ptrdiff_t>(r * total + offset));
    }
    offset += widths[k];
  }
  Shape shape = lead;
  shape.push_back(total);
  return make_result(std::move(shape), std::move(out), parts,
                     [widths, rows, total](Tensor::Node& self) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < widths.size(); ++k) {
                         if (wants_grad(self, k)) {
                           auto& g = parent_grad(self, k);
                           for (std::size_t r = 0; r < rows; ++r) {
                             for (std::size_t j = 0; j < widths[k]; ++j) {
                               g[r * widths[k] + j] += self.grad[r * total + off + j];
                             }
                           }
                         }
                         off += widths[k];
                       }
                     });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_defined(x, "gather_rows");
  if (x.rank() != 2) {
    throw ShapeError("gather_rows: expected 2-D input, got " + shape_string(x.shape()));
  }
  if (rows.empty()) throw ShapeError("gather_rows: no rows selected");
  const std::size_t n = x.dim(0);
  const std::size_t h = x.dim(1);
  std::vector<real> out(rows.size() * h);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n) {
      throw IndexError("gather_rows: row " + std::to_string(rows[i]) +
                       " out of range for " + std::to_string(n) + " rows");
    }
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(rows[i] * h), h,
                out.begin() + static_cast<std::ptrdiff_t>(i * h));
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result({rows.size(), h}, std::move(out), {x},
                     [idx = std::move(idx), h](Tensor::Node& self) {
                       auto& gx = parent_grad(self, 0);
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         for (std::size_t j = 0; j < h; ++j) {
                           gx[idx[i] * h + j] += self.grad[i * h + j];
                         }
                       }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_string(x.shape()) + " as " +
                     shape_string(shape));
  }
  return make_result(std::move(shape), x.to_vector(), {x}, [](Tensor::Node& self) {
    auto& gx = parent_grad(self, 0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

Tensor transpose(const Tensor& x) {
  require_defined(x, "transpose");
  if (x.rank() != 2) {
    throw ShapeError("transpose: expected 2-D input, got " + shape_string(x.shape()));
  }
  const std::size_t r = x.dim(0);
  const std::size_t c = x.dim(1);
  std::vector<real> out(r * c);
  const auto& in = x.data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
  }
  return make_result({c, r}, std::move(out), {x}, [r, c](Tensor::Node& self) {
    auto& gx = parent_grad(self, 0);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += self.grad[j * r + i];
    }
  });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t batch,
                 std::size_t seq, std::size_t heads, std::span<const std::uint8_t> key_mask) {
  require_defined(q, "attention");
  require_defined(k, "attention");
  require_defined(v, "attention");
  if (q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape() ||
      q.dim(0) != batch * seq) {
    throw ShapeError("attention: q/k/v must all be [" + std::to_string(batch * seq) +
                     ",H], got " + shape_string(q.shape()) + ", " +
                     shape_string(k.shape()) + ", " + shape_string(v.shape()));
  }
  if (key_mask.size() != batch * seq) {
    throw ShapeError("attention: mask length " + std::to_string(key_mask.size()) +
                     " does not match " + std::to_string(batch * seq) + " rows");
  }
  const std::size_t hidden = q.dim(1);
  if (heads == 0 || hidden % heads != 0) {
    throw ShapeError("attention: hidden " + std::to_string(hidden) +
                     " not divisible by heads " + std::to_string(heads));
  }
  const std::size_t dh = hidden / heads;
  const real inv_scale = real(1) / std::sqrt(static_cast<real>(dh));
  const auto& Q = q.data();
  const auto& K = k.data();
  const auto& V = v.data();

  // probs[b][h][i][j]
  std::vector<real> probs(batch * heads * seq * seq, real(0));
  std::vector<real> out(batch * seq * hidden, real(0));
  for (std::size_t b = 0; b < batch; ++b) {
    const std::uint8_t* mask = key_mask.data() + b * seq;
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < seq; ++i) {
        real* p = probs.data() + ((b * heads + h) * seq + i) * seq;
        const real* qi = Q.data() + (b * seq + i) * hidden + h * dh;
        real mx = -std::numeric_limits<real>::infinity();
        for (std::size_t j = 0; j < seq; ++j) {
          if (!mask[j]) continue;
          const real* kj = K.data() + (b * seq + j) * hidden + h * dh;
          real s = 0;
          for (std::size_t d = 0; d < dh; ++d) s += qi[d] * kj[d];
          p[j] = s * inv_scale;
          mx = std::max(mx, p[j]);
        }
        real z = 0;
        for (std::size_t j = 0; j < seq; ++j) {
          if (!mask[j]) continue;
          p[j] = std::exp(p[j] - mx);
          z += p[j];
        }
        if (z == 0) continue;  // fully padded sequence
        real* oi = out.data() + (b * seq + i) * hidden + h * dh;
        for (std::size_t j = 0; j < seq; ++j) {
          if (!mask[j]) continue;
          p[j] /= z;
          const real* vj = V.data() + (b * seq + j) * hidden + h * dh;
          for (std::size_t d = 0; d < dh; ++d) oi[d] += p[j] * vj[d];
        }
      }
    }
  }
  return make_result(
      q.shape(), std::move(out), {q, k, v},
      [probs = std::move(probs), batch, seq, heads, dh, hidden,
       inv_scale](Tensor::Node& self) {
        const auto& Q = self.parents[0]->data;
        const auto& K = self.parents[1]->data;
        const auto& V = self.parents[2]->data;
        const auto& G = self.grad;
        const bool gq = wants_grad(self, 0), gk = wants_grad(self, 1),
                   gv = wants_grad(self, 2);
        std::vector<real>* dQ = gq ? &parent_grad(self, 0) : nullptr;
        std::vector<real>* dK = gk ? &parent_grad(self, 1) : nullptr;
        std::vector<real>* dV = gv ? &parent_grad(self, 2) : nullptr;
        std::vector<real> dp(seq);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < seq; ++i) {
              const real* p = probs.data() + ((b * heads + h) * seq + i) * seq;
              const real* gi = G.data() + (b * seq + i) * hidden + h * dh;
              real dot = 0;
              for (std::size_t j = 0; j < seq; ++j) {
                if (p[j] == 0) {
                  dp[j] = 0;
                  continue;
                }
                const std::size_t row_j = (b * seq + j) * hidden + h * dh;
                real s = 0;
                for (std::size_t d = 0; d < dh; ++d) s += gi[d] * V[row_j + d];
                dp[j] = s;
                dot += s * p[j];
                if (dV) {
                  for (std::size_t d = 0; d < dh; ++d) (*dV)[row_j + d] += p[j] * gi[d];
                }
              }
              const std::size_t row_i = (b * seq + i) * hidden + h * dh;
              for (std::size_t j = 0; j < seq; ++j) {
                if (p[j] == 0) continue;
                const real ds = p[j] * (dp[j] - dot) * inv_scale;
                const std::size_t row_j = (b * seq + j) * hidden + h * dh;
                if (dQ) {
                  for (std::size_t d = 0; d < dh; ++d) (*dQ)[row_i + d] += ds * K[row_j + d];
                }
                if (dK) {
                  for (std::size_t d = 0; d < dh; ++d) (*dK)[row_j + d] += ds * Q[row_i + d];
                }
              }
            }
          }
        }
      });
}

}  // namespace redbert
