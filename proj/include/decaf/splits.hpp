#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace decaf::splits {

struct SplitMasks {
  std::vector<bool> train;
  std::vector<bool> val;
  std::vector<bool> test;

  static std::vector<int> indices(const std::vector<bool>& mask);
  std::vector<int> train_indices() const { return indices(train); }
  std::vector<int> val_indices() const { return indices(val); }
  std::vector<int> test_indices() const { return indices(test); }
};

/// Class group of a label when numClasses labels are cut into numGroups
/// contiguous runs in label order.
std::size_t class_group(int label, std::size_t numClasses, std::size_t numGroups);

/// Split s (0 = train, 1 = val, 2 = test) takes majorShare of group s and
/// (1 - majorShare) / (numGroups - 1) of every other group, class by class.
/// Counts round down; remainders go to the majority split. numGroups is 2
/// (train/test) or 3 (train/val/test).
SplitMasks soft_label_leaveout(std::span<const int> labels, std::size_t numGroups, double majorShare,
                               std::uint64_t seed);

/// Uniform random split with the given train and validation fractions.
SplitMasks random_split(std::size_t n, double trainFraction, double valFraction, std::uint64_t seed);

}  // namespace decaf::splits
