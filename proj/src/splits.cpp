#include "decaf/splits.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "decaf/error.hpp"
#include "decaf/random.hpp"

namespace decaf::splits {

std::vector<int> SplitMasks::indices(const std::vector<bool>& mask) {
  std::vector<int> out;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) out.push_back(static_cast<int>(i));
  return out;
}

std::size_t class_group(int label, std::size_t numClasses, std::size_t numGroups) {
  return static_cast<std::size_t>(label) * numGroups / numClasses;
}

SplitMasks soft_label_leaveout(std::span<const int> labels, std::size_t numGroups, double majorShare,
                               std::uint64_t seed) {
  if (numGroups < 2 || numGroups > 3) throw Error("soft_label_leaveout: numGroups must be 2 or 3");
  if (!(majorShare > 1.0 / static_cast<double>(numGroups) && majorShare < 1.0)) {
    throw Error("soft_label_leaveout: majorShare must lie in (1/numGroups, 1)");
  }
  if (labels.empty()) throw Error("soft_label_leaveout: no labels");
  int maxLabel = 0;
  for (int y : labels) {
    if (y < 0) throw Error("soft_label_leaveout: negative label");
    maxLabel = std::max(maxLabel, y);
  }
  const std::size_t numClasses = static_cast<std::size_t>(maxLabel) + 1;
  if (numClasses < numGroups) throw Error("soft_label_leaveout: fewer classes than groups");

  std::vector<std::vector<int>> members(numClasses);
  for (std::size_t i = 0; i < labels.size(); ++i) members[static_cast<std::size_t>(labels[i])].push_back(static_cast<int>(i));

  const std::size_t n = labels.size();
  SplitMasks masks{std::vector<bool>(n, false), std::vector<bool>(n, false), std::vector<bool>(n, false)};
  std::vector<std::vector<bool>*> split = {&masks.train, numGroups == 3 ? &masks.val : &masks.test, &masks.test};
  const double minorShare = (1.0 - majorShare) / static_cast<double>(numGroups - 1);

  Rng rng(seed);
  for (std::size_t c = 0; c < numClasses; ++c) {
    auto& ids = members[c];
    if (ids.empty()) continue;
    if (ids.size() < numGroups) {
      throw Error("soft_label_leaveout: class " + std::to_string(c) + " has fewer than " +
                  std::to_string(numGroups) + " samples");
    }
    std::shuffle(ids.begin(), ids.end(), rng);
    const std::size_t major = class_group(static_cast<int>(c), numClasses, numGroups);
    // Guard against 0.1 * 100 evaluating to 9.999...
    const auto minorCount = static_cast<std::size_t>(std::floor(minorShare * static_cast<double>(ids.size()) + 1e-9));
    std::size_t pos = 0;
    for (std::size_t s = 0; s < numGroups; ++s) {
      if (s == major) continue;
      for (std::size_t t = 0; t < minorCount; ++t) (*split[s])[static_cast<std::size_t>(ids[pos++])] = true;
    }
    while (pos < ids.size()) (*split[major])[static_cast<std::size_t>(ids[pos++])] = true;
  }
  return masks;
}

SplitMasks random_split(std::size_t n, double trainFraction, double valFraction, std::uint64_t seed) {
  if (trainFraction <= 0.0 || valFraction < 0.0 || trainFraction + valFraction > 1.0) {
    throw Error("random_split: fractions must satisfy 0 < train, 0 <= val, train + val <= 1");
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto nTrain = static_cast<std::size_t>(std::floor(trainFraction * static_cast<double>(n) + 1e-9));
  const auto nVal = static_cast<std::size_t>(std::floor(valFraction * static_cast<double>(n) + 1e-9));
  SplitMasks masks{std::vector<bool>(n, false), std::vector<bool>(n, false), std::vector<bool>(n, false)};
  for (std::size_t i = 0; i < n; ++i) {
    const auto id = static_cast<std::size_t>(order[i]);
    if (i < nTrain) {
      masks.train[id] = true;
    } else if (i < nTrain + nVal) {
      masks.val[id] = true;
    } else {
      masks.test[id] = true;
    }
  }
  return masks;
}

}  // namespace decaf::splits
