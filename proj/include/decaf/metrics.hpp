#pragma once

#include <cstddef>
#include <span>

namespace decaf::metrics {

/// Unweighted mean of per-class F1 over all k classes. A class with no true
/// positives scores 0.
double macro_f1(std::span<const int> yTrue, std::span<const int> yPred, std::size_t k);
/// Pooled F1 over all classes; equals accuracy for single-label predictions.
double micro_f1(std::span<const int> yTrue, std::span<const int> yPred, std::size_t k);
/// F1 of the positive class (label 1).
double binary_f1(std::span<const int> yTrue, std::span<const int> yPred);
double accuracy(std::span<const int> yTrue, std::span<const int> yPred);

}  // namespace decaf::metrics
