#include "redbert/optim.hpp"

#include <cmath>

#include "redbert/error.hpp"

namespace redbert {

void adam_step(std::span<Tensor> params, std::span<const std::vector<real>> grads,
               AdamState& state) {
  if (grads.size() != params.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].numel()) {
      throw ShapeError("adam_step: gradient " + std::to_string(i) + " has " +
                       std::to_string(grads[i].size()) + " values for parameter of shape " +
                       shape_string(params[i].shape()));
    }
  }
  if (state.first_moment.empty() && state.step_count == 0) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.numel(), real(0));
      state.second_moment.emplace_back(p.numel(), real(0));
    }
  }
  if (state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw ShapeError("adam_step: optimizer tracks " +
                     std::to_string(state.first_moment.size()) + " parameters, got " +
                     std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].size() != params[i].numel() ||
        state.second_moment[i].size() != params[i].numel()) {
      throw ShapeError("adam_step: moment buffer " + std::to_string(i) +
                       " does not match parameter shape " + shape_string(params[i].shape()));
    }
  }

  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto data = params[i].mutable_data();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double gj = g[j];
      m[j] = static_cast<real>(state.beta1 * m[j] + (1.0 - state.beta1) * gj);
      v[j] = static_cast<real>(state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj);
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      data[j] -= static_cast<real>(state.learning_rate * mhat /
                                   (std::sqrt(vhat) + state.epsilon));
    }
  }
}

void adam_step(std::span<Tensor> params, AdamState& state) {
  std::vector<std::vector<real>> grads;
  grads.reserve(params.size());
  for (const auto& p : params) {
    if (p.has_grad()) {
      grads.emplace_back(p.grad().begin(), p.grad().end());
    } else {
      grads.emplace_back(p.numel(), real(0));
    }
  }
  adam_step(params, grads, state);
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  double sq = 0;
  for (const auto& p : params) {
    for (real g : p.grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) return norm;
  if (norm > max_norm && norm > 0) {
    const real factor = static_cast<real>(max_norm / norm);
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (auto& g : p.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

void zero_grads(std::span<Tensor> params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace redbert
