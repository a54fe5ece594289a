#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "decaf/checkpoint.hpp"
#include "decaf/dataset_io.hpp"
#include "decaf/error.hpp"
#include "decaf/experiment.hpp"
#include "doctest.h"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace decaf::harness;
using decaf::num::Matrix;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("decaf_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.dataset.nodes = 120;
  cfg.dataset.meanDegree = 6.0;
  cfg.shift.kind = decaf::scm::ShiftKind::ConceptA;
  cfg.hyper.embeddingDim = 4;
  cfg.hyper.hiddenDim = 8;
  cfg.hyper.cfSamples = 4;
  cfg.train.epochs = 3;
  cfg.seed = 11;
  return cfg;
}

struct EnvGuard {
  explicit EnvGuard(const char* value) {
    if (value) setenv("DECAF_THREADS", value, 1);
    else unsetenv("DECAF_THREADS");
  }
  ~EnvGuard() { unsetenv("DECAF_THREADS"); }
};

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("dataset round trip is exact") {
  decaf::Rng rng(1);
  auto g = testing::random_graph(30, 0.2, 3, 3, rng);
  g.features(0, 0) = 0.1;
  g.features(1, 1) = 1.0 / 3.0;
  g.features(2, 2) = -2.5e-300;
  const fs::path dir = scratch_dir("roundtrip");
  decaf::io::save_dataset(g, dir, {{"source", "unit"}});
  const auto back = decaf::io::load_dataset(dir);
  CHECK(back == g);
  CHECK(decaf::io::fingerprint(back) == decaf::io::fingerprint(g));
  CHECK(decaf::io::load_meta(dir)["provenance"]["source"] == "unit");
  CHECK(decaf::io::format_double(0.1) == "0.1");
}

TEST_CASE("malformed dataset files are rejected") {
  decaf::Rng rng(2);
  const auto g = testing::random_graph(6, 0.5, 2, 2, rng);
  const fs::path dir = scratch_dir("malformed");
  decaf::io::save_dataset(g, dir);

  SUBCASE("asymmetric edge listing") {
    write(dir / "edges.csv", "0,1\n2,3\n1,0\n");
    CHECK_THROWS_AS(decaf::io::load_dataset(dir), decaf::ParseError);
  }
  SUBCASE("both directions are accepted") {
    write(dir / "edges.csv", "0,1\n1,0\n2,4\n4,2\n");
    CHECK(decaf::io::load_dataset(dir).edge_count() == 2);
  }
  SUBCASE("label out of range") {
    write(dir / "labels.csv", "0\n1\n2\n0\n1\n0\n");
    try {
      decaf::io::load_dataset(dir);
      FAIL("expected a parse error");
    } catch (const decaf::ParseError& e) {
      CHECK(std::string(e.what()).find("labels.csv") != std::string::npos);
      CHECK(std::string(e.what()).find(":3") != std::string::npos);
    }
  }
  SUBCASE("self loop and bad number") {
    write(dir / "edges.csv", "0,0\n");
    CHECK_THROWS_AS(decaf::io::load_dataset(dir), decaf::ParseError);
    write(dir / "edges.csv", "0,x\n");
    CHECK_THROWS_AS(decaf::io::load_dataset(dir), decaf::ParseError);
  }
}

TEST_CASE("config json round trip and strictness") {
  ExperimentConfig cfg = tiny_config();
  cfg.method = "erm";
  cfg.hyper.gamma = 0.3;
  cfg.hyper.cfMode = decaf::model::CounterfactualMode::OwnConfounder;
  cfg.train.batchSize = 32;
  const auto j = to_json(cfg);
  const ExperimentConfig back = config_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(config_fingerprint(back) == config_fingerprint(cfg));

  ExperimentConfig other = cfg;
  other.seed += 1;
  CHECK(config_fingerprint(other) != config_fingerprint(cfg));

  nlohmann::json bad = j;
  bad["hyper"]["gama"] = 0.2;
  CHECK_THROWS_AS(config_from_json(bad), decaf::Error);
  nlohmann::json partial = {{"seed", 4}, {"shift", {{"kind", "covariate"}}}};
  const ExperimentConfig p = config_from_json(partial);
  CHECK(p.seed == 4);
  CHECK(p.shift.kind == decaf::scm::ShiftKind::Covariate);
  CHECK(p.hyper.cfSamples == ExperimentConfig{}.hyper.cfSamples);

  ExperimentConfig invalid = cfg;
  invalid.hyper.gamma = 1.2;
  CHECK_THROWS_AS(invalid.validate(), decaf::Error);
}

TEST_CASE("stage seeds are distinct") {
  const StageSeeds s = stage_seeds(3);
  const std::vector<std::uint64_t> all{s.recipe, s.latents, s.graph, s.shift, s.shiftLatents,
                                       s.shiftGraph, s.split, s.train, s.background};
  for (std::size_t i = 0; i < all.size(); ++i)
    for (std::size_t j = i + 1; j < all.size(); ++j) CHECK(all[i] != all[j]);
  CHECK(stage_seeds(3).train == s.train);
}

TEST_CASE("split json round trip") {
  const auto masks = decaf::splits::random_split(20, 0.5, 0.25, 1);
  const auto back = split_from_json(split_to_json(masks), 20);
  CHECK(back.train == masks.train);
  CHECK(back.val == masks.val);
  CHECK(back.test == masks.test);
  CHECK_THROWS_AS(split_from_json(split_to_json(masks), 21), decaf::Error);
}

TEST_CASE("evaluation and aggregation") {
  const SplitMetrics m = evaluate({0, 0, 1, 1}, {0, 1, 1, 1}, 2);
  CHECK(m.count == 4);
  CHECK(m.macroF1 == doctest::Approx(0.7333333333333333));
  CHECK(m.binaryF1.has_value());

  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
  CHECK(quantile({1.0, 2.0, 3.0, 4.0, 5.0}, 0.25) == 2.0);

  std::vector<nlohmann::json> reports;
  const double scores[5] = {0.5, 0.1, 0.3, 0.9, 0.2};
  for (int s = 0; s < 5; ++s) {
    reports.push_back({{"method", "decaf"},
                       {"recipe", "h-feat"},
                       {"shift", "concept-a"},
                       {"magnitude", 0.8},
                       {"seed", s},
                       {"metrics", {{"test", {{"count", 10}, {"macro_f1", scores[s]}}}}}});
  }
  reports.push_back({{"method", "erm"},
                     {"recipe", "h-feat"},
                     {"shift", "concept-a"},
                     {"magnitude", 0.8},
                     {"seed", 0},
                     {"metrics", {{"test", {{"count", 10}, {"macro_f1", 0.4}}}}}});
  const auto agg = aggregate_reports(reports);
  REQUIRE(agg.size() == 2);
  const auto& d = agg[0]["method"] == "decaf" ? agg[0] : agg[1];
  const auto& f1 = d["metrics"]["test"]["macro_f1"];
  CHECK(f1["median"] == 0.3);
  CHECK(f1["q1"] == 0.2);
  CHECK(f1["q3"] == 0.5);
  CHECK(f1["iqr"].get<double>() == doctest::Approx(0.3));
  CHECK(f1["n"] == 5);
  CHECK(f1["mean"].get<double>() == doctest::Approx(0.4));
  CHECK(d["seeds"].size() == 5);
}

TEST_CASE("thread budget from the environment") {
  {
    EnvGuard env(nullptr);
    CHECK(thread_budget() == 1);
  }
  {
    EnvGuard env("3");
    CHECK(thread_budget() == 3);
  }
  {
    EnvGuard env("0");
    CHECK_THROWS_AS(thread_budget(), decaf::Error);
  }
  {
    EnvGuard env("two");
    CHECK_THROWS_AS(thread_budget(), decaf::Error);
  }
}

TEST_CASE("shifted datasets share the base graph and vary the test graph") {
  const ExperimentConfig cfg = tiny_config();
  const Dataset ds = build_dataset(cfg, 1);
  REQUIRE(ds.shifted.has_value());
  CHECK(ds.base.node_count() == 120);
  CHECK(ds.shifted->node_count() == 120);
  ExperimentConfig none = cfg;
  none.shift.kind = decaf::scm::ShiftKind::None;
  const Dataset plain = build_dataset(none, 1);
  CHECK(plain.base == ds.base);
  CHECK_FALSE(plain.shifted.has_value());
  CHECK(decaf::io::fingerprint(build_dataset(cfg, 4).base) == decaf::io::fingerprint(ds.base));
}

TEST_CASE("experiments are reproducible and methods share the dataset") {
  const ExperimentConfig cfg = tiny_config();
  const fs::path a = scratch_dir("run_a");
  const fs::path b = scratch_dir("run_b");
  const ExperimentOutcome ra = run_experiment(cfg, a);
  run_experiment(cfg, b);
  for (const char* f : {"report.json", "checkpoint.json", "predictions.csv"}) {
    CAPTURE(f);
    CHECK(slurp(a / f) == slurp(b / f));
  }
  CHECK(fs::exists(a / "timing.json"));
  CHECK(ra.report.splits.count("test") == 1);
  CHECK(ra.report.splits.count("test_iid") == 1);

  ExperimentConfig erm = cfg;
  erm.method = "erm";
  const ExperimentOutcome re = run_experiment(erm);
  CHECK(re.report.datasetFingerprint == ra.report.datasetFingerprint);
  CHECK(re.report.testDatasetFingerprint == ra.report.testDatasetFingerprint);
  CHECK(re.report.configFingerprint != ra.report.configFingerprint);
  CHECK_FALSE(re.checkpoint.is_decaf());
}

TEST_CASE("checkpoints reproduce predictions") {
  const ExperimentConfig cfg = tiny_config();
  const Dataset ds = build_dataset(cfg, 1);
  const auto masks = build_split(cfg, ds.base);
  const TrainedModel trained = train_model(cfg, ds.base, masks);
  const fs::path dir = scratch_dir("ckpt");
  decaf::io::save_checkpoint(trained.checkpoint, dir / "c.json");
  const auto loaded = decaf::io::load_checkpoint(dir / "c.json");
  CHECK(predict_with(loaded, *ds.shifted).probabilities == predict_with(trained.checkpoint, *ds.shifted).probabilities);
  CHECK(decaf::io::checkpoint_to_json(loaded) == decaf::io::checkpoint_to_json(trained.checkpoint));

  auto j = decaf::io::checkpoint_to_json(loaded);
  j["format_version"] = 99;
  CHECK_THROWS_AS(decaf::io::checkpoint_from_json(j), decaf::Error);
}

TEST_CASE("stage failures are labelled") {
  ExperimentConfig cfg = tiny_config();
  const fs::path dir = scratch_dir("broken");
  write(dir / "meta.json", "{\"n\": 3");
  cfg.dataset.path = dir.string();
  cfg.shift.kind = decaf::scm::ShiftKind::None;
  try {
    run_experiment(cfg);
    FAIL("expected a stage error");
  } catch (const decaf::StageError& e) {
    CHECK(e.stage() == "generate");
  }
  cfg.shift.kind = decaf::scm::ShiftKind::Covariate;
  try {
    run_experiment(cfg);
    FAIL("expected a stage error");
  } catch (const decaf::StageError& e) {
    CHECK(e.stage() == "config");
  }
}

}
