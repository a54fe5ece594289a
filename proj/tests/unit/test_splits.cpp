#include <algorithm>
#include <cmath>
#include <numeric>

#include "decaf/error.hpp"
#include "decaf/random.hpp"
#include "decaf/splits.hpp"
#include "doctest.h"

using decaf::splits::SplitMasks;
using decaf::splits::soft_label_leaveout;

namespace {

std::vector<int> balanced_labels(std::size_t perClass, int k, std::uint64_t seed) {
  std::vector<int> labels;
  for (int c = 0; c < k; ++c) labels.insert(labels.end(), perClass, c);
  decaf::Rng rng(seed);
  std::shuffle(labels.begin(), labels.end(), rng);
  return labels;
}

// counts[split][class]
std::vector<std::vector<int>> class_counts(const SplitMasks& m, const std::vector<int>& labels, int k) {
  std::vector<std::vector<int>> out(3, std::vector<int>(static_cast<std::size_t>(k), 0));
  const std::vector<bool>* masks[3] = {&m.train, &m.val, &m.test};
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t i = 0; i < labels.size(); ++i)
      if ((*masks[s])[i]) out[s][static_cast<std::size_t>(labels[i])] += 1;
  return out;
}

void check_partition(const SplitMasks& m, std::size_t n) {
  REQUIRE(m.train.size() == n);
  REQUIRE(m.val.size() == n);
  REQUIRE(m.test.size() == n);
  for (std::size_t i = 0; i < n; ++i) CHECK(int(m.train[i]) + int(m.val[i]) + int(m.test[i]) == 1);
}

}  // namespace

TEST_SUITE("splits") {

TEST_CASE("class groups follow label order") {
  using decaf::splits::class_group;
  CHECK(class_group(0, 6, 3) == 0);
  CHECK(class_group(1, 6, 3) == 0);
  CHECK(class_group(2, 6, 3) == 1);
  CHECK(class_group(5, 6, 3) == 2);
  CHECK(class_group(3, 4, 2) == 1);
}

TEST_CASE("six classes in three groups: 80/10/10 per class") {
  const std::vector<int> labels = balanced_labels(100, 6, 1);
  const SplitMasks m = soft_label_leaveout(labels, 3, 0.8, 7);
  check_partition(m, labels.size());
  const auto counts = class_counts(m, labels, 6);
  for (int s = 0; s < 3; ++s)
    for (int c = 0; c < 6; ++c) {
      const int expected = c / 2 == s ? 80 : 10;
      CHECK(counts[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)] == expected);
    }
}

TEST_CASE("600 balanced samples match the counting oracle within one") {
  for (int k : {3, 4, 6}) {
    CAPTURE(k);
    const std::vector<int> labels = balanced_labels(600 / static_cast<std::size_t>(k), k, 3);
    const SplitMasks m = soft_label_leaveout(labels, 3, 0.8, 11);
    check_partition(m, 600);
    const auto counts = class_counts(m, labels, k);
    for (std::size_t s = 0; s < 3; ++s)
      for (std::size_t g = 0; g < 3; ++g) {
        int got = 0;
        double groupSize = 0.0;
        for (int c = 0; c < k; ++c) {
          if (decaf::splits::class_group(c, static_cast<std::size_t>(k), 3) != g) continue;
          got += counts[s][static_cast<std::size_t>(c)];
          groupSize += 600.0 / k;
        }
        const double share = s == g ? 0.8 : 0.1;
        CHECK(std::abs(got - share * groupSize) <= 1.0 * (k / 3 + ((k % 3) != 0)));
      }
  }
}

TEST_CASE("uneven classes put remainders in the majority split") {
  std::vector<int> labels(7, 0);
  labels.insert(labels.end(), 13, 1);
  const SplitMasks m = soft_label_leaveout(labels, 2, 0.8, 5);
  check_partition(m, labels.size());
  const auto counts = class_counts(m, labels, 2);
  // Class 0 (group 0, major train): test gets floor(0.2 * 7) = 1.
  CHECK(counts[2][0] == 1);
  CHECK(counts[0][0] == 6);
  // Class 1 (group 1, major test): train gets floor(0.2 * 13) = 2.
  CHECK(counts[0][1] == 2);
  CHECK(counts[2][1] == 11);
  CHECK(m.val_indices().empty());
}

TEST_CASE("split distributions differ") {
  const std::vector<int> labels = balanced_labels(100, 6, 2);
  const auto counts = class_counts(soft_label_leaveout(labels, 3, 0.8, 4), labels, 6);
  CHECK(counts[0] != counts[1]);
  CHECK(counts[1] != counts[2]);
}

TEST_CASE("determinism and seed dependence") {
  const std::vector<int> labels = balanced_labels(50, 3, 9);
  const SplitMasks a = soft_label_leaveout(labels, 3, 0.8, 1);
  const SplitMasks b = soft_label_leaveout(labels, 3, 0.8, 1);
  const SplitMasks c = soft_label_leaveout(labels, 3, 0.8, 2);
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
  CHECK_FALSE(a.train == c.train);
}

TEST_CASE("precondition errors") {
  std::vector<int> labels = balanced_labels(10, 3, 1);
  labels.push_back(3);
  labels.push_back(3);
  CHECK_THROWS_AS(soft_label_leaveout(labels, 3, 0.8, 1), decaf::Error);
  const std::vector<int> ok = balanced_labels(10, 3, 1);
  CHECK_THROWS_AS(soft_label_leaveout(ok, 3, 0.3, 1), decaf::Error);
  CHECK_THROWS_AS(soft_label_leaveout(ok, 3, 1.0, 1), decaf::Error);
  CHECK_THROWS_AS(soft_label_leaveout(ok, 4, 0.8, 1), decaf::Error);
}

TEST_CASE("random split fractions") {
  const SplitMasks m = decaf::splits::random_split(1000, 0.6, 0.2, 3);
  check_partition(m, 1000);
  CHECK(m.train_indices().size() == 600);
  CHECK(m.val_indices().size() == 200);
  CHECK(m.test_indices().size() == 200);
  CHECK_THROWS_AS(decaf::splits::random_split(10, 0.9, 0.2, 1), decaf::Error);
}

}
