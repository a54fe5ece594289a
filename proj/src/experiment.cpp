#include "decaf/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>

#include "decaf/dataset_io.hpp"
#include "decaf/error.hpp"
#include "decaf/metrics.hpp"
#include "decaf/random.hpp"

namespace decaf::harness {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

/// Overlays known keys of `j` onto defaults, rejecting anything else.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw Error("config: '" + where_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw Error("config: " + where_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw Error("config: unknown key '" + where_ + "." + key + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

std::vector<int> labels_of(const graph::GraphData& g, const std::vector<int>& rows) {
  std::vector<int> out;
  for (int r : rows) out.push_back(g.labels[static_cast<std::size_t>(r)]);
  return out;
}

std::vector<int> pick(const std::vector<int>& values, const std::vector<int>& rows) {
  std::vector<int> out;
  for (int r : rows) out.push_back(values[static_cast<std::size_t>(r)]);
  return out;
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error("cannot write " + file.string());
  out << text;
}

json metrics_json(const SplitMetrics& m) {
  json j{{"count", m.count}, {"macro_f1", m.macroF1}, {"micro_f1", m.microF1}, {"accuracy", m.accuracy}};
  if (m.binaryF1) j["binary_f1"] = *m.binaryF1;
  return j;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void ExperimentConfig::validate() const {
  if (dataset.path.empty()) scm::make_recipe(dataset.recipe, 0, {8, dataset.meanDegree});
  if (!dataset.path.empty() && shift.kind != scm::ShiftKind::None) {
    throw Error("config: shifts need a recipe dataset; use dataset.test_path for loaded graphs");
  }
  if (dataset.nodes < 8) throw Error("config: dataset.nodes must be at least 8");
  if (shift.magnitude < 0.0 || shift.magnitude > 1.0) throw Error("config: shift.magnitude must lie in [0, 1]");
  if (split.kind != "leaveout" && split.kind != "random") throw Error("config: split.kind must be leaveout or random");
  if (method != "decaf" && method != "erm") throw Error("config: method must be decaf or erm");
  if (hyper.gamma < 0.0 || hyper.gamma > 1.0) throw Error("config: gamma must lie in [0, 1]");
  if (hyper.cfSamples < 1) throw Error("config: cf_samples must be at least 1");
  if (hyper.hops < 1) throw Error("config: hops must be at least 1");
  if (hyper.embeddingDim == 0 || hyper.hiddenDim == 0) throw Error("config: layer widths must be positive");
  if (train.learningRate <= 0.0 || train.weightDecay < 0.0) throw Error("config: bad optimizer settings");
  if (train.epochs < 1 || train.patience < 0 || train.stepRatio < 1) throw Error("config: bad training schedule");
}

json to_json(const ExperimentConfig& c) {
  return json{
      {"dataset",
       {{"recipe", c.dataset.recipe},
        {"path", c.dataset.path},
        {"test_path", c.dataset.testPath},
        {"nodes", c.dataset.nodes},
        {"mean_degree", c.dataset.meanDegree}}},
      {"shift", {{"kind", scm::to_string(c.shift.kind)}, {"magnitude", c.shift.magnitude}}},
      {"split",
       {{"kind", c.split.kind},
        {"groups", c.split.groups},
        {"major_share", c.split.majorShare},
        {"train_fraction", c.split.trainFraction},
        {"val_fraction", c.split.valFraction}}},
      {"method", c.method},
      {"backbone", graph::to_string(c.backbone)},
      {"hyper",
       {{"gamma", c.hyper.gamma},
        {"tune_gamma", c.hyper.tuneGamma},
        {"cf_samples", c.hyper.cfSamples},
        {"cf_mode", model::to_string(c.hyper.cfMode)},
        {"hops", c.hyper.hops},
        {"embedding_dim", c.hyper.embeddingDim},
        {"hidden_dim", c.hyper.hiddenDim},
        {"encoder", graph::to_string(c.hyper.encoder)},
        {"binary_sigmoid", c.hyper.binarySigmoid}}},
      {"train",
       {{"lr", c.train.learningRate},
        {"weight_decay", c.train.weightDecay},
        {"epochs", c.train.epochs},
        {"patience", c.train.patience},
        {"step_ratio", c.train.stepRatio},
        {"batch", c.train.batchSize}}},
      {"seed", c.seed},
  };
}

ExperimentConfig config_from_json(const json& j, ExperimentConfig c) {
  Reader top(j, "config");
  if (const json* d = top.child("dataset")) {
    Reader r(*d, "dataset");
    r.get("recipe", c.dataset.recipe);
    r.get("path", c.dataset.path);
    r.get("test_path", c.dataset.testPath);
    r.get("nodes", c.dataset.nodes);
    r.get("mean_degree", c.dataset.meanDegree);
    r.finish();
  }
  if (const json* s = top.child("shift")) {
    Reader r(*s, "shift");
    std::string kind = scm::to_string(c.shift.kind);
    r.get("kind", kind);
    c.shift.kind = scm::parse_shift(kind);
    r.get("magnitude", c.shift.magnitude);
    r.finish();
  }
  if (const json* s = top.child("split")) {
    Reader r(*s, "split");
    r.get("kind", c.split.kind);
    r.get("groups", c.split.groups);
    r.get("major_share", c.split.majorShare);
    r.get("train_fraction", c.split.trainFraction);
    r.get("val_fraction", c.split.valFraction);
    r.finish();
  }
  top.get("method", c.method);
  std::string backbone = graph::to_string(c.backbone);
  top.get("backbone", backbone);
  c.backbone = graph::parse_backbone(backbone);
  if (const json* h = top.child("hyper")) {
    Reader r(*h, "hyper");
    r.get("gamma", c.hyper.gamma);
    r.get("tune_gamma", c.hyper.tuneGamma);
    r.get("cf_samples", c.hyper.cfSamples);
    std::string mode = model::to_string(c.hyper.cfMode);
    r.get("cf_mode", mode);
    c.hyper.cfMode = model::parse_cf_mode(mode);
    r.get("hops", c.hyper.hops);
    r.get("embedding_dim", c.hyper.embeddingDim);
    r.get("hidden_dim", c.hyper.hiddenDim);
    std::string encoder = graph::to_string(c.hyper.encoder);
    r.get("encoder", encoder);
    c.hyper.encoder = graph::parse_encoder(encoder);
    r.get("binary_sigmoid", c.hyper.binarySigmoid);
    r.finish();
  }
  if (const json* t = top.child("train")) {
    Reader r(*t, "train");
    r.get("lr", c.train.learningRate);
    r.get("weight_decay", c.train.weightDecay);
    r.get("epochs", c.train.epochs);
    r.get("patience", c.train.patience);
    r.get("step_ratio", c.train.stepRatio);
    r.get("batch", c.train.batchSize);
    r.finish();
  }
  top.get("seed", c.seed);
  top.finish();
  return c;
}

ExperimentConfig load_config(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error("cannot read " + file.string());
  try {
    return config_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ParseError(file.string(), 0, e.what());
  }
}

std::string config_fingerprint(const ExperimentConfig& cfg) { return io::fnv1a_hex(to_json(cfg).dump()); }

StageSeeds stage_seeds(std::uint64_t seed) {
  return StageSeeds{derive_seed(seed, 1), derive_seed(seed, 2), derive_seed(seed, 3),
                    derive_seed(seed, 4), derive_seed(seed, 5), derive_seed(seed, 6),
                    derive_seed(seed, 7), derive_seed(seed, 8), derive_seed(seed, 9)};
}

model::DecafConfig decaf_config(const ExperimentConfig& cfg) {
  model::DecafConfig d;
  d.gamma = cfg.hyper.gamma;
  d.tuneGamma = cfg.hyper.tuneGamma;
  d.cfSamples = cfg.hyper.cfSamples;
  d.cfMode = cfg.hyper.cfMode;
  d.hops = cfg.hyper.hops;
  d.embeddingDim = cfg.hyper.embeddingDim;
  d.hiddenDim = cfg.hyper.hiddenDim;
  d.encoder = cfg.hyper.encoder;
  d.binarySigmoid = cfg.hyper.binarySigmoid;
  d.train = cfg.train;
  d.seed = stage_seeds(cfg.seed).train;
  return d;
}

model::ErmConfig erm_config(const ExperimentConfig& cfg) {
  model::ErmConfig e;
  e.backbone = cfg.backbone;
  e.hops = cfg.hyper.hops;
  e.hiddenDim = cfg.hyper.hiddenDim;
  e.train = cfg.train;
  e.seed = stage_seeds(cfg.seed).train;
  return e;
}

unsigned thread_budget() {
  const char* env = std::getenv("DECAF_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1 || v > 1024) throw Error("DECAF_THREADS must be a positive integer");
  return static_cast<unsigned>(v);
}

// ---------------------------------------------------------------------------
// Dataset and split

Dataset build_dataset(const ExperimentConfig& cfg, unsigned threads) {
  Dataset ds;
  if (!cfg.dataset.path.empty()) {
    ds.base = io::load_dataset(cfg.dataset.path);
    ds.provenance = {{"source", "path"}, {"path", cfg.dataset.path}};
    if (!cfg.dataset.testPath.empty()) {
      ds.shifted = io::load_dataset(cfg.dataset.testPath);
      ds.provenance["test_path"] = cfg.dataset.testPath;
      if (ds.shifted->numClasses != ds.base.numClasses || ds.shifted->feature_dim() != ds.base.feature_dim()) {
        throw Error("test graph does not match training graph dimensions");
      }
    }
    return ds;
  }
  const StageSeeds seeds = stage_seeds(cfg.seed);
  const scm::RecipeOptions opts{cfg.dataset.nodes, cfg.dataset.meanDegree};
  ds.params = scm::make_recipe(cfg.dataset.recipe, seeds.recipe, opts);
  const scm::LatentSample z = scm::sample_latents(*ds.params, cfg.dataset.nodes, seeds.latents);
  ds.base = scm::generate_graph(*ds.params, z, seeds.graph, threads);
  ds.provenance = {{"source", "recipe"},
                   {"recipe", cfg.dataset.recipe},
                   {"seed", cfg.seed},
                   {"density", ds.params->density},
                   {"shift", scm::to_string(cfg.shift.kind)},
                   {"magnitude", cfg.shift.magnitude}};
  if (cfg.shift.kind != scm::ShiftKind::None) {
    ds.shiftedParams = scm::apply_shift(*ds.params, {cfg.shift.kind, cfg.shift.magnitude, seeds.shift});
    const scm::LatentSample z2 = scm::sample_latents(*ds.shiftedParams, cfg.dataset.nodes, seeds.shiftLatents);
    ds.shifted = scm::generate_graph(*ds.shiftedParams, z2, seeds.shiftGraph, threads);
  }
  return ds;
}

splits::SplitMasks build_split(const ExperimentConfig& cfg, const graph::GraphData& g) {
  const std::uint64_t seed = stage_seeds(cfg.seed).split;
  if (cfg.split.kind == "random") {
    return splits::random_split(g.node_count(), cfg.split.trainFraction, cfg.split.valFraction, seed);
  }
  return splits::soft_label_leaveout(g.labels, cfg.split.groups, cfg.split.majorShare, seed);
}

json split_to_json(const splits::SplitMasks& masks) {
  return json{{"n", masks.train.size()},
              {"train", masks.train_indices()},
              {"val", masks.val_indices()},
              {"test", masks.test_indices()}};
}

splits::SplitMasks split_from_json(const json& j, std::size_t n) {
  if (j.at("n").get<std::size_t>() != n) throw Error("split does not match graph size");
  splits::SplitMasks m{std::vector<bool>(n, false), std::vector<bool>(n, false), std::vector<bool>(n, false)};
  auto fill = [&](const char* key, std::vector<bool>& mask) {
    for (int i : j.at(key).get<std::vector<int>>()) {
      if (i < 0 || static_cast<std::size_t>(i) >= n) throw Error(std::string("split: index out of range in ") + key);
      mask[static_cast<std::size_t>(i)] = true;
    }
  };
  fill("train", m.train);
  fill("val", m.val);
  fill("test", m.test);
  for (std::size_t i = 0; i < n; ++i) {
    if (int(m.train[i]) + int(m.val[i]) + int(m.test[i]) > 1) throw Error("split: overlapping masks");
  }
  return m;
}

// ---------------------------------------------------------------------------
// Training, prediction, evaluation

SplitMetrics evaluate(const std::vector<int>& yTrue, const std::vector<int>& yPred, std::size_t k) {
  SplitMetrics m;
  m.count = yTrue.size();
  if (yTrue.empty()) return m;
  m.macroF1 = metrics::macro_f1(yTrue, yPred, k);
  m.microF1 = metrics::micro_f1(yTrue, yPred, k);
  m.accuracy = metrics::accuracy(yTrue, yPred);
  if (k == 2) m.binaryF1 = metrics::binary_f1(yTrue, yPred);
  return m;
}

TrainedModel train_model(const ExperimentConfig& cfg, const graph::GraphData& g, const splits::SplitMasks& masks) {
  TrainedModel out;
  out.checkpoint.configFingerprint = config_fingerprint(cfg);
  out.checkpoint.datasetFingerprint = io::fingerprint(g);
  if (cfg.method == "decaf") {
    model::DecafConfig dc = decaf_config(cfg);
    model::DecafTrainResult r = model::train_decaf(g, masks, dc);
    out.epochs = {{"encoder", r.encoderLog.epochsRun},
                  {"scm_a_stage1", r.stage1Log.epochsRun},
                  {"scm_a_stage2", r.stage2Log.epochsRun},
                  {"scm_x", r.scmXLog.epochsRun}};
    out.checkpoint.payload = io::DecafCheckpoint{std::move(r.model), std::move(r.background)};
  } else {
    model::ErmResult r = model::train_erm(g, masks, erm_config(cfg));
    out.epochs = {{"erm", r.log.epochsRun}};
    out.checkpoint.payload = std::move(r.model);
  }
  return out;
}

model::Prediction predict_with(const io::Checkpoint& checkpoint, const graph::GraphData& g) {
  if (const auto* d = std::get_if<io::DecafCheckpoint>(&checkpoint.payload)) {
    if (d->model.shared.encoder.weights.front().rows() != g.feature_dim()) {
      throw ShapeError("checkpoint feature dimension does not match graph");
    }
    const model::MaterializedShared shared = model::materialize_shared(d->model.shared, g);
    return model::predict(d->model, shared, g, d->background);
  }
  return model::predict_backbone(std::get<graph::BackboneModel>(checkpoint.payload), g);
}

json MetricsReport::to_json() const {
  json j;
  j["config_fingerprint"] = configFingerprint;
  j["dataset_fingerprint"] = datasetFingerprint;
  j["test_dataset_fingerprint"] = testDatasetFingerprint;
  j["seed"] = seed;
  j["method"] = method;
  j["gamma"] = gamma;
  j["recipe"] = config.dataset.path.empty() ? config.dataset.recipe : config.dataset.path;
  j["shift"] = scm::to_string(config.shift.kind);
  j["magnitude"] = config.shift.kind == scm::ShiftKind::None ? 0.0 : config.shift.magnitude;
  json s = json::object();
  for (const auto& [name, m] : splits) s[name] = metrics_json(m);
  j["metrics"] = s;
  j["epochs"] = epochs;
  j["config"] = harness::to_json(config);
  return j;
}

ExperimentOutcome run_experiment(const ExperimentConfig& cfg, const std::optional<fs::path>& outDir) {
  const auto start = std::chrono::steady_clock::now();
  run_stage("config", [&] {
    cfg.validate();
    return 0;
  });
  const unsigned threads = run_stage("config", [] { return thread_budget(); });
  Dataset ds = run_stage("generate", [&] { return build_dataset(cfg, threads); });
  const splits::SplitMasks masks = run_stage("split", [&] { return build_split(cfg, ds.base); });
  TrainedModel trained = run_stage("train", [&] { return train_model(cfg, ds.base, masks); });

  ExperimentOutcome out;
  MetricsReport& rep = out.report;
  rep.config = cfg;
  rep.configFingerprint = trained.checkpoint.configFingerprint;
  rep.datasetFingerprint = trained.checkpoint.datasetFingerprint;
  rep.seed = cfg.seed;
  rep.method = cfg.method;
  rep.epochs = trained.epochs;
  if (const auto* d = std::get_if<io::DecafCheckpoint>(&trained.checkpoint.payload)) rep.gamma = d->model.gamma;

  run_stage("predict", [&] {
    const model::Prediction basePred = predict_with(trained.checkpoint, ds.base);
    const std::size_t k = ds.base.numClasses;
    auto score = [&](const std::vector<int>& rows) {
      return evaluate(labels_of(ds.base, rows), pick(basePred.classIds, rows), k);
    };
    rep.splits["train"] = score(masks.train_indices());
    rep.splits["val"] = score(masks.val_indices());
    if (ds.shifted) {
      out.testPrediction = predict_with(trained.checkpoint, *ds.shifted);
      rep.splits["test"] = evaluate(ds.shifted->labels, out.testPrediction.classIds, k);
      rep.splits["test_iid"] = score(masks.test_indices());
      rep.testDatasetFingerprint = io::fingerprint(*ds.shifted);
    } else {
      const std::vector<int> rows = masks.test_indices();
      rep.splits["test"] = score(rows);
      out.testPrediction.probabilities = basePred.probabilities.select_rows(rows);
      out.testPrediction.classIds = pick(basePred.classIds, rows);
      rep.testDatasetFingerprint = rep.datasetFingerprint;
    }
    return 0;
  });
  out.checkpoint = std::move(trained.checkpoint);
  out.wallSeconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  if (outDir) {
    run_stage("write", [&] {
      fs::create_directories(*outDir);
      write_text(*outDir / "report.json", rep.to_json().dump(2) + "\n");
      io::save_checkpoint(out.checkpoint, *outDir / "checkpoint.json");
      std::string csv = "node,predicted\n";
      for (std::size_t i = 0; i < out.testPrediction.classIds.size(); ++i) {
        csv += std::to_string(i) + "," + std::to_string(out.testPrediction.classIds[i]) + "\n";
      }
      write_text(*outDir / "predictions.csv", csv);
      write_text(*outDir / "timing.json", json{{"wall_seconds", out.wallSeconds}}.dump(2) + "\n");
      return 0;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation

double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw Error("quantile of empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double median(std::vector<double> v) { return quantile(std::move(v), 0.5); }

json aggregate_reports(const std::vector<json>& reports) {
  // group -> split -> metric -> values
  std::map<std::string, std::map<std::string, std::map<std::string, std::vector<double>>>> values;
  std::map<std::string, json> keys;
  std::map<std::string, std::vector<std::uint64_t>> seeds;
  for (const json& r : reports) {
    const double magnitude = r.at("magnitude").get<double>();
    const std::string group = r.at("method").get<std::string>() + "|" + r.at("recipe").get<std::string>() + "|" +
                              r.at("shift").get<std::string>() + "|" + io::format_double(magnitude);
    keys[group] = {{"method", r.at("method")},
                   {"recipe", r.at("recipe")},
                   {"shift", r.at("shift")},
                   {"magnitude", magnitude}};
    seeds[group].push_back(r.at("seed").get<std::uint64_t>());
    for (const auto& [split, metrics] : r.at("metrics").items()) {
      for (const auto& [name, value] : metrics.items()) {
        if (name == "count") continue;
        values[group][split][name].push_back(value.get<double>());
      }
    }
  }
  json out = json::array();
  for (const auto& [group, splitMap] : values) {
    json g = keys[group];
    g["seeds"] = seeds[group];
    json s = json::object();
    for (const auto& [split, metricMap] : splitMap) {
      for (const auto& [name, v] : metricMap) {
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
        const double q1 = quantile(v, 0.25);
        const double q3 = quantile(v, 0.75);
        s[split][name] = {{"median", median(v)}, {"q1", q1},   {"q3", q3},      {"iqr", q3 - q1},
                          {"mean", mean},        {"std", sd}, {"n", v.size()}};
      }
    }
    g["metrics"] = s;
    out.push_back(g);
  }
  return out;
}

}  // namespace decaf::harness
