#include "decaf/metrics.hpp"

#include <string>
#include <vector>

#include "decaf/error.hpp"

namespace decaf::metrics {

namespace {

struct Counts {
  std::vector<double> tp, fp, fn;
};

Counts confusion(std::span<const int> yTrue, std::span<const int> yPred, std::size_t k) {
  if (yTrue.size() != yPred.size()) {
    throw Error("metrics: length mismatch " + std::to_string(yTrue.size()) + " vs " + std::to_string(yPred.size()));
  }
  Counts c{std::vector<double>(k, 0.0), std::vector<double>(k, 0.0), std::vector<double>(k, 0.0)};
  for (std::size_t i = 0; i < yTrue.size(); ++i) {
    const int t = yTrue[i];
    const int p = yPred[i];
    if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= k || static_cast<std::size_t>(p) >= k) {
      throw Error("metrics: label outside [0, " + std::to_string(k) + ")");
    }
    if (t == p) {
      c.tp[static_cast<std::size_t>(t)] += 1.0;
    } else {
      c.fp[static_cast<std::size_t>(p)] += 1.0;
      c.fn[static_cast<std::size_t>(t)] += 1.0;
    }
  }
  return c;
}

double f1(double tp, double fp, double fn) {
  const double denom = 2.0 * tp + fp + fn;
  return tp > 0.0 ? 2.0 * tp / denom : 0.0;
}

}  // namespace

double macro_f1(std::span<const int> yTrue, std::span<const int> yPred, std::size_t k) {
  if (k == 0) throw Error("metrics: k must be positive");
  const Counts c = confusion(yTrue, yPred, k);
  double total = 0.0;
  for (std::size_t j = 0; j < k; ++j) total += f1(c.tp[j], c.fp[j], c.fn[j]);
  return total / static_cast<double>(k);
}

double micro_f1(std::span<const int> yTrue, std::span<const int> yPred, std::size_t k) {
  const Counts c = confusion(yTrue, yPred, k);
  double tp = 0.0, fp = 0.0, fn = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    tp += c.tp[j];
    fp += c.fp[j];
    fn += c.fn[j];
  }
  return f1(tp, fp, fn);
}

double binary_f1(std::span<const int> yTrue, std::span<const int> yPred) {
  const Counts c = confusion(yTrue, yPred, 2);
  return f1(c.tp[1], c.fp[1], c.fn[1]);
}

double accuracy(std::span<const int> yTrue, std::span<const int> yPred) {
  if (yTrue.size() != yPred.size()) throw Error("metrics: length mismatch");
  if (yTrue.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < yTrue.size(); ++i) hit += yTrue[i] == yPred[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(yTrue.size());
}

}  // namespace decaf::metrics
