#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "decaf/checkpoint.hpp"
#include "decaf/graph.hpp"
#include "decaf/model.hpp"
#include "decaf/scm.hpp"
#include "decaf/splits.hpp"
#include "json.hpp"

namespace decaf::harness {

struct DatasetSpec {
  std::string recipe = "h-feat";
  /// Directory written by save_dataset; overrides the recipe when set.
  std::string path;
  /// Optional held-out graph for path datasets.
  std::string testPath;
  std::size_t nodes = 2000;
  double meanDegree = 20.0;
};

struct ShiftConfig {
  scm::ShiftKind kind = scm::ShiftKind::None;
  double magnitude = 0.8;
};

struct SplitSpec {
  std::string kind = "leaveout";  // leaveout | random
  std::size_t groups = 3;
  double majorShare = 0.8;
  double trainFraction = 0.6;
  double valFraction = 0.2;
};

struct Hyper {
  double gamma = 0.5;
  bool tuneGamma = false;
  int cfSamples = 16;
  model::CounterfactualMode cfMode = model::CounterfactualMode::BackgroundPair;
  int hops = 2;
  std::size_t embeddingDim = 64;
  std::size_t hiddenDim = 64;
  graph::EncoderKind encoder = graph::EncoderKind::Linear;
  bool binarySigmoid = false;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  ShiftConfig shift;
  SplitSpec split;
  std::string method = "decaf";  // decaf | erm
  graph::BackboneKind backbone = graph::BackboneKind::Sgc;
  Hyper hyper;
  model::TrainConfig train;
  std::uint64_t seed = 0;

  /// Throws decaf::Error on out-of-range values.
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
/// Missing keys keep their defaults; unknown keys are rejected.
ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& file);
/// FNV-1a of the canonical JSON dump.
std::string config_fingerprint(const ExperimentConfig& cfg);

model::DecafConfig decaf_config(const ExperimentConfig& cfg);
model::ErmConfig erm_config(const ExperimentConfig& cfg);

/// Seeds for every stage, derived from the experiment seed.
struct StageSeeds {
  std::uint64_t recipe, latents, graph, shift, shiftLatents, shiftGraph, split, train, background;
};
StageSeeds stage_seeds(std::uint64_t seed);

/// DECAF_THREADS, default 1.
unsigned thread_budget();

struct Dataset {
  graph::GraphData base;
  /// Shifted (or separately loaded) evaluation graph.
  std::optional<graph::GraphData> shifted;
  std::optional<scm::ScmParams> params;
  std::optional<scm::ScmParams> shiftedParams;
  nlohmann::json provenance;
};

Dataset build_dataset(const ExperimentConfig& cfg, unsigned threads);
splits::SplitMasks build_split(const ExperimentConfig& cfg, const graph::GraphData& g);

nlohmann::json split_to_json(const splits::SplitMasks& masks);
splits::SplitMasks split_from_json(const nlohmann::json& j, std::size_t n);

struct SplitMetrics {
  std::size_t count = 0;
  double macroF1 = 0.0;
  double microF1 = 0.0;
  double accuracy = 0.0;
  std::optional<double> binaryF1;
};

SplitMetrics evaluate(const std::vector<int>& yTrue, const std::vector<int>& yPred, std::size_t k);

struct MetricsReport {
  std::string configFingerprint;
  std::string datasetFingerprint;
  std::string testDatasetFingerprint;
  std::uint64_t seed = 0;
  std::string method;
  double gamma = 0.0;
  std::map<std::string, SplitMetrics> splits;
  std::map<std::string, int> epochs;
  ExperimentConfig config;

  nlohmann::json to_json() const;
};

struct TrainedModel {
  io::Checkpoint checkpoint;
  std::map<std::string, int> epochs;
};

TrainedModel train_model(const ExperimentConfig& cfg, const graph::GraphData& g, const splits::SplitMasks& masks);
model::Prediction predict_with(const io::Checkpoint& checkpoint, const graph::GraphData& g);

struct ExperimentOutcome {
  MetricsReport report;
  io::Checkpoint checkpoint;
  model::Prediction testPrediction;
  double wallSeconds = 0.0;
};

/// generate -> shift -> split -> train -> predict -> evaluate. When outDir is
/// given, writes report.json, checkpoint.json, predictions.csv and
/// timing.json (wall time is kept out of the report so reruns compare equal).
ExperimentOutcome run_experiment(const ExperimentConfig& cfg,
                                 const std::optional<std::filesystem::path>& outDir = std::nullopt);

/// Median, IQR, mean and sample std of every split metric, grouped by method,
/// recipe, shift and magnitude.
nlohmann::json aggregate_reports(const std::vector<nlohmann::json>& reports);

double median(std::vector<double> v);
double quantile(std::vector<double> v, double q);

}  // namespace decaf::harness
