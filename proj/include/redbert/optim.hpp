#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "redbert/tensor.hpp"

namespace redbert {

// Moments and hyperparameters for Adam with a constant learning rate.
struct AdamState {
  std::uint64_t step_count = 0;
  std::vector<std::vector<real>> first_moment;
  std::vector<std::vector<real>> second_moment;
  double learning_rate = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// One bias-corrected Adam update using each parameter's accumulated gradient.
// Parameters without a gradient buffer are treated as having zero gradient.
// Moment buffers are sized on the first call; later calls must pass the same
// parameter list.
void adam_step(std::span<Tensor> params, AdamState& state);

// Same update with gradients supplied explicitly (one buffer per parameter).
void adam_step(std::span<Tensor> params, std::span<const std::vector<real>> grads,
               AdamState& state);

// Rescales all gradients so their joint L2 norm is at most max_norm. Returns
// the norm before clipping.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

void zero_grads(std::span<Tensor> params);

}  // namespace redbert
