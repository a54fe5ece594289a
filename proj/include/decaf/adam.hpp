#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "decaf/matrix.hpp"

namespace decaf::num {

struct AdamConfig {
  double learningRate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weightDecay = 1e-5;
};

/// Adam accumulators for one group of parameters. Weight decay is coupled:
/// it is added into the gradient before the moment updates.
struct AdamState {
  AdamConfig config;
  std::vector<Matrix> firstMoment;
  std::vector<Matrix> secondMoment;
  std::uint64_t stepCount = 0;

  AdamState() = default;
  AdamState(AdamConfig cfg, std::span<const Matrix> params);
};

void adam_step(std::span<Matrix> params, std::span<const Matrix> grads, AdamState& state);

/// Mean softmax cross-entropy of logits against integer labels.
double softmax_cross_entropy(const Matrix& logits, std::span<const int> labels);

}  // namespace decaf::num
