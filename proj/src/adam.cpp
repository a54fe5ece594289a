#include "decaf/adam.hpp"

#include <cmath>
#include <string>

#include "decaf/error.hpp"
#include "decaf/tape.hpp"

namespace decaf::num {

AdamState::AdamState(AdamConfig cfg, std::span<const Matrix> params) : config(cfg) {
  firstMoment.reserve(params.size());
  secondMoment.reserve(params.size());
  for (const Matrix& p : params) {
    firstMoment.emplace_back(p.rows(), p.cols());
    secondMoment.emplace_back(p.rows(), p.cols());
  }
}

void adam_step(std::span<Matrix> params, std::span<const Matrix> grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.firstMoment.size() ||
      params.size() != state.secondMoment.size()) {
    throw ShapeError("adam_step: parameter, gradient and accumulator counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].same_shape(grads[i]) || !params[i].same_shape(state.firstMoment[i]) ||
        !params[i].same_shape(state.secondMoment[i])) {
      throw ShapeError("adam_step: shape mismatch in parameter " + std::to_string(i));
    }
  }

  const AdamConfig& c = state.config;
  state.stepCount += 1;
  const double t = static_cast<double>(state.stepCount);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].values();
    auto g = grads[i].values();
    auto m = state.firstMoment[i].values();
    auto v = state.secondMoment[i].values();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j] + c.weightDecay * p[j];
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
      const double mhat = m[j] / correction1;
      const double vhat = v[j] / correction2;
      p[j] -= c.learningRate * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  }
}

double softmax_cross_entropy(const Matrix& logits, std::span<const int> labels) {
  Tape tape;
  Var z = tape.constant(logits);
  return tape.scalar(tape.softmax_cross_entropy(z, std::vector<int>(labels.begin(), labels.end())));
}

}  // namespace decaf::num
