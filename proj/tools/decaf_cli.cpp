#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "decaf/checkpoint.hpp"
#include "decaf/dataset_io.hpp"
#include "decaf/diagnostics.hpp"
#include "decaf/error.hpp"
#include "decaf/experiment.hpp"
#include "decaf/random.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace decaf;

namespace {

struct Overrides {
  std::string config;
  std::uint64_t seed = 0;
  std::string method;
  std::string recipe;
  std::string shift;
  double magnitude = 0.0;
  double gamma = 0.5;
  int cfSamples = 16;
  std::size_t nodes = 0;
  int epochs = 0;

  CLI::Option* seedOpt = nullptr;
  CLI::Option* magnitudeOpt = nullptr;
  CLI::Option* gammaOpt = nullptr;
  CLI::Option* cfOpt = nullptr;
  CLI::Option* nodesOpt = nullptr;
  CLI::Option* epochsOpt = nullptr;
};

void add_common(CLI::App* cmd, Overrides& o, bool modelFlags) {
  cmd->add_option("--config", o.config, "JSON experiment config")->check(CLI::ExistingFile);
  o.seedOpt = cmd->add_option("--seed", o.seed, "Experiment seed");
  cmd->add_option("--recipe", o.recipe, "Synthetic recipe")->check(CLI::IsMember({"h-feat", "qtr-feat", "full-feat"}));
  cmd->add_option("--shift", o.shift, "Test-time shift")
      ->check(CLI::IsMember({"none", "covariate", "concept-x", "concept-a"}));
  o.magnitudeOpt = cmd->add_option("--magnitude", o.magnitude, "Shift magnitude in [0, 1]");
  o.nodesOpt = cmd->add_option("--nodes", o.nodes, "Nodes per generated graph");
  if (modelFlags) {
    cmd->add_option("--method", o.method, "Training method")->check(CLI::IsMember({"decaf", "erm"}));
    o.gammaOpt = cmd->add_option("--gamma", o.gamma, "Branch weight on the central-feature effect");
    o.cfOpt = cmd->add_option("--cf-samples", o.cfSamples, "Background samples for the counterfactual");
    o.epochsOpt = cmd->add_option("--epochs", o.epochs, "Epoch cap per training stage");
  }
}

harness::ExperimentConfig resolve(const Overrides& o) {
  harness::ExperimentConfig cfg = o.config.empty() ? harness::ExperimentConfig{} : harness::load_config(o.config);
  if (*o.seedOpt) cfg.seed = o.seed;
  if (!o.recipe.empty()) cfg.dataset.recipe = o.recipe;
  if (!o.shift.empty()) cfg.shift.kind = scm::parse_shift(o.shift);
  if (*o.magnitudeOpt) cfg.shift.magnitude = o.magnitude;
  if (*o.nodesOpt) cfg.dataset.nodes = o.nodes;
  if (!o.method.empty()) cfg.method = o.method;
  if (o.gammaOpt && *o.gammaOpt) cfg.hyper.gamma = o.gamma;
  if (o.cfOpt && *o.cfOpt) cfg.hyper.cfSamples = o.cfSamples;
  if (o.epochsOpt && *o.epochsOpt) cfg.train.epochs = o.epochs;
  cfg.validate();
  return cfg;
}

json read_json(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error("cannot read " + file.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(file.string(), 0, e.what());
  }
}

void write_json(const fs::path& file, const json& j) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error("cannot write " + file.string());
  out << j.dump(2) << '\n';
}

void print_metrics(const harness::MetricsReport& r) {
  for (const auto& [name, m] : r.splits) {
    std::printf("%-9s n=%-5zu macro-F1 %.4f  micro-F1 %.4f  acc %.4f\n", name.c_str(), m.count, m.macroF1, m.microF1,
                m.accuracy);
  }
}

std::vector<fs::path> collect_reports(const std::vector<std::string>& inputs) {
  std::vector<fs::path> out;
  for (const std::string& in : inputs) {
    const fs::path p(in);
    if (fs::is_directory(p)) {
      for (const auto& e : fs::recursive_directory_iterator(p)) {
        if (e.is_regular_file() && e.path().filename() == "report.json") out.push_back(e.path());
      }
    } else {
      out.push_back(p);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

int cmd_generate(const Overrides& o, const std::string& outDir) {
  const harness::ExperimentConfig cfg = run_stage("config", [&] { return resolve(o); });
  const unsigned threads = run_stage("config", [] { return harness::thread_budget(); });
  const harness::Dataset ds = run_stage("generate", [&] { return harness::build_dataset(cfg, threads); });
  const fs::path out(outDir);
  run_stage("write", [&] {
    io::save_dataset(ds.base, out / "base", ds.provenance);
    if (ds.shifted) io::save_dataset(*ds.shifted, out / "shifted", ds.provenance);
    return 0;
  });
  std::printf("base: n=%zu edges=%zu mean degree %.2f\n", ds.base.node_count(), ds.base.edge_count(),
              ds.base.mean_degree());
  if (ds.shifted) {
    std::printf("shifted: n=%zu edges=%zu mean degree %.2f\n", ds.shifted->node_count(), ds.shifted->edge_count(),
                ds.shifted->mean_degree());
  }
  return 0;
}

int cmd_split(const Overrides& o, const std::string& data, const std::string& outFile) {
  const harness::ExperimentConfig cfg = run_stage("config", [&] { return resolve(o); });
  const graph::GraphData g = run_stage("load", [&] { return io::load_dataset(data); });
  const splits::SplitMasks masks = run_stage("split", [&] { return harness::build_split(cfg, g); });
  run_stage("write", [&] {
    write_json(outFile, harness::split_to_json(masks));
    return 0;
  });
  std::printf("train %zu  val %zu  test %zu\n", masks.train_indices().size(), masks.val_indices().size(),
              masks.test_indices().size());
  return 0;
}

int cmd_train(const Overrides& o, const std::string& data, const std::string& splitFile, const std::string& outDir) {
  const harness::ExperimentConfig cfg = run_stage("config", [&] { return resolve(o); });
  const graph::GraphData g = run_stage("load", [&] { return io::load_dataset(data); });
  const splits::SplitMasks masks = run_stage("split", [&] {
    return splitFile.empty() ? harness::build_split(cfg, g)
                             : harness::split_from_json(read_json(splitFile), g.node_count());
  });
  const harness::TrainedModel trained = run_stage("train", [&] { return harness::train_model(cfg, g, masks); });
  run_stage("write", [&] {
    fs::create_directories(outDir);
    io::save_checkpoint(trained.checkpoint, fs::path(outDir) / "checkpoint.json");
    return 0;
  });
  for (const auto& [stage, epochs] : trained.epochs) std::printf("%s: %d epochs\n", stage.c_str(), epochs);
  return 0;
}

int cmd_predict(const std::string& checkpointFile, const std::string& data, const std::string& outFile) {
  const io::Checkpoint ckpt = run_stage("load", [&] { return io::load_checkpoint(checkpointFile); });
  const graph::GraphData g = run_stage("load", [&] { return io::load_dataset(data); });
  const model::Prediction p = run_stage("predict", [&] { return harness::predict_with(ckpt, g); });
  std::ofstream out(outFile, std::ios::binary);
  if (!out) throw StageError("write", "cannot write " + outFile);
  out << "node,predicted";
  for (std::size_t c = 0; c < p.probabilities.cols(); ++c) out << ",p" << c;
  out << '\n';
  for (std::size_t i = 0; i < p.classIds.size(); ++i) {
    out << i << ',' << p.classIds[i];
    for (std::size_t c = 0; c < p.probabilities.cols(); ++c) out << ',' << io::format_double(p.probabilities(i, c));
    out << '\n';
  }
  const harness::SplitMetrics m = harness::evaluate(g.labels, p.classIds, g.numClasses);
  std::printf("all       n=%-5zu macro-F1 %.4f  micro-F1 %.4f  acc %.4f\n", m.count, m.macroF1, m.microF1, m.accuracy);
  return 0;
}

int cmd_diagnose(const std::string& trainDir, const std::string& testDir, const std::string& checkpointFile,
                 bool allClasses, bool embedFeatures, std::uint64_t seed, std::size_t dim, const std::string& outDir) {
  const graph::GraphData a = run_stage("load", [&] { return io::load_dataset(trainDir); });
  const graph::GraphData b = run_stage("load", [&] { return io::load_dataset(testDir); });
  graph::EncoderWeights encoder;
  if (!checkpointFile.empty()) {
    const io::Checkpoint ckpt = run_stage("load", [&] { return io::load_checkpoint(checkpointFile); });
    if (!ckpt.is_decaf()) throw StageError("load", "diagnose needs a decaf checkpoint for its encoder");
    encoder = std::get<io::DecafCheckpoint>(ckpt.payload).model.shared.encoder;
  } else {
    Rng rng(derive_seed(seed, 31));
    encoder = graph::EncoderWeights::create(graph::EncoderKind::Linear, 2, a.feature_dim(), dim, rng);
  }
  diag::ShiftOptions opts;
  opts.scope = allClasses ? diag::ClassScope::All : diag::ClassScope::First;
  opts.embedFeatures = embedFeatures;
  const diag::ShiftReport r = run_stage("diagnose", [&] { return diag::shift_report(a, b, encoder, opts); });
  fs::create_directories(outDir);
  std::ofstream(fs::path(outDir) / "shift.csv") << r.to_csv();
  write_json(fs::path(outDir) / "shift.json", r.to_json());
  std::fputs(r.to_csv().c_str(), stdout);
  for (int c : r.omittedClasses) std::printf("class %d omitted (fewer than two samples)\n", c);
  return 0;
}

int cmd_run(const Overrides& o, const std::string& outDir) {
  const harness::ExperimentConfig cfg = run_stage("config", [&] { return resolve(o); });
  const harness::ExperimentOutcome out = harness::run_experiment(cfg, fs::path(outDir));
  print_metrics(out.report);
  std::printf("fingerprint %s  %.1fs\n", out.report.configFingerprint.c_str(), out.wallSeconds);
  return 0;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& outFile) {
  std::vector<json> reports;
  for (const fs::path& p : collect_reports(inputs)) reports.push_back(run_stage("load", [&] { return read_json(p); }));
  if (reports.empty()) throw StageError("load", "no report.json files found");
  const json agg = run_stage("report", [&] { return harness::aggregate_reports(reports); });
  if (!outFile.empty()) write_json(outFile, agg);
  for (const json& g : agg) {
    const json& test = g.at("metrics").contains("test") ? g.at("metrics").at("test") : json::object();
    if (!test.contains("macro_f1")) continue;
    const json& f = test.at("macro_f1");
    std::printf("%-6s %-9s %-10s %.2f  n=%zu  test macro-F1 median %.4f  IQR %.4f  mean %.4f +- %.4f\n",
                g.at("method").get<std::string>().c_str(), g.at("recipe").get<std::string>().c_str(),
                g.at("shift").get<std::string>().c_str(), g.at("magnitude").get<double>(),
                f.at("n").get<std::size_t>(), f.at("median").get<double>(), f.at("iqr").get<double>(),
                f.at("mean").get<double>(), f.at("std").get<double>());
  }
  return 0;
}

/// One child process per (method, seed), at most `jobs` at a time.
int cmd_sweep(const Overrides& o, const std::vector<std::string>& methods, int seeds, int jobs,
              const std::string& outDir, const char* self) {
  harness::ExperimentConfig base = run_stage("config", [&] { return resolve(o); });
  struct Job {
    harness::ExperimentConfig cfg;
    fs::path dir;
  };
  std::vector<Job> queue;
  for (const std::string& method : methods) {
    for (int s = 0; s < seeds; ++s) {
      harness::ExperimentConfig c = base;
      c.method = method;
      c.seed = base.seed + static_cast<std::uint64_t>(s);
      run_stage("config", [&] {
        c.validate();
        return 0;
      });
      queue.push_back({c, fs::path(outDir) / method / ("seed-" + std::to_string(c.seed))});
    }
  }
  int failures = 0;
  int running = 0;
  auto reap = [&] {
    int status = 0;
    if (wait(&status) > 0) {
      --running;
      if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) ++failures;
    }
  };
  for (const Job& job : queue) {
    fs::create_directories(job.dir);
    const fs::path cfgFile = job.dir / "config.json";
    write_json(cfgFile, harness::to_json(job.cfg));
    while (running >= jobs) reap();
    const pid_t pid = fork();
    if (pid < 0) throw Error("sweep: fork failed");
    if (pid == 0) {
      const std::string cfgArg = cfgFile.string();
      const std::string outArg = job.dir.string();
      const std::string logFile = (job.dir / "log.txt").string();
      if (std::freopen(logFile.c_str(), "w", stdout) == nullptr) _exit(2);
      execl(self, self, "run", "--config", cfgArg.c_str(), "--out", outArg.c_str(), static_cast<char*>(nullptr));
      _exit(127);
    }
    ++running;
  }
  while (running > 0) reap();
  std::vector<std::string> inputs{outDir};
  cmd_report(inputs, (fs::path(outDir) / "summary.json").string());
  if (failures > 0) throw StageError("sweep", std::to_string(failures) + " run(s) failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DeCaf node classification under distribution shift"};
  app.require_subcommand(1);

  Overrides gen, spl, trn, run, swp;
  std::string genOut = "data";
  auto* generate = app.add_subcommand("generate", "Sample a synthetic graph (and its shifted twin)");
  add_common(generate, gen, false);
  generate->add_option("--out", genOut, "Output directory");

  std::string splData, splOut = "split.json";
  auto* split = app.add_subcommand("split", "Write train/val/test masks for a dataset");
  add_common(split, spl, false);
  split->add_option("--data", splData, "Dataset directory")->required();
  split->add_option("--out", splOut, "Output JSON file");

  std::string trnData, trnSplit, trnOut = "model";
  auto* train = app.add_subcommand("train", "Train DeCaf or the ERM baseline on a dataset");
  add_common(train, trn, true);
  train->add_option("--data", trnData, "Dataset directory")->required();
  train->add_option("--split", trnSplit, "Split JSON (default: derived from config)");
  train->add_option("--out", trnOut, "Output directory for checkpoint.json");

  std::string prdCkpt, prdData, prdOut = "predictions.csv";
  auto* predict = app.add_subcommand("predict", "Apply a checkpoint to a dataset");
  predict->add_option("--checkpoint", prdCkpt, "checkpoint.json")->required()->check(CLI::ExistingFile);
  predict->add_option("--data", prdData, "Dataset directory")->required();
  predict->add_option("--out", prdOut, "Output CSV");

  std::string dgTrain, dgTest, dgCkpt, dgOut = "diagnostics";
  bool dgAll = false, dgEmbed = false;
  std::uint64_t dgSeed = 0;
  std::size_t dgDim = 16;
  auto* diagnose = app.add_subcommand("diagnose", "Class-conditional Hotelling T^2 between two graphs");
  diagnose->add_option("--train", dgTrain, "Reference dataset directory")->required();
  diagnose->add_option("--test", dgTest, "Comparison dataset directory")->required();
  diagnose->add_option("--checkpoint", dgCkpt, "Use this DeCaf checkpoint's encoder");
  diagnose->add_flag("--all-classes", dgAll, "Report every class instead of the first");
  diagnose->add_flag("--embed-features", dgEmbed, "Compare embedded instead of raw features");
  diagnose->add_option("--seed", dgSeed, "Seed for a random encoder when no checkpoint is given");
  diagnose->add_option("--dim", dgDim, "Random encoder width");
  diagnose->add_option("--out", dgOut, "Output directory");

  std::string runOut = "run";
  auto* runCmd = app.add_subcommand("run", "End-to-end experiment");
  add_common(runCmd, run, true);
  runCmd->add_option("--out", runOut, "Output directory");

  std::vector<std::string> repIn;
  std::string repOut;
  auto* report = app.add_subcommand("report", "Median/IQR over report.json files");
  report->add_option("inputs", repIn, "report.json files or directories")->required();
  report->add_option("--out", repOut, "Write the aggregate as JSON");

  std::vector<std::string> swMethods{"decaf", "erm"};
  int swSeeds = 5;
  int swJobs = 0;
  std::string swOut = "sweep";
  auto* sweep = app.add_subcommand("sweep", "Run several seeds and methods as parallel processes");
  add_common(sweep, swp, true);
  sweep->add_option("--methods", swMethods, "Methods to run")->delimiter(',');
  sweep->add_option("--seeds", swSeeds, "Consecutive seeds starting at --seed")->check(CLI::PositiveNumber);
  sweep->add_option("--jobs", swJobs, "Concurrent runs (default DECAF_THREADS)");
  sweep->add_option("--out", swOut, "Output directory");

  CLI11_PARSE(app, argc, argv);

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (*generate) return cmd_generate(gen, genOut);
    if (*split) return cmd_split(spl, splData, splOut);
    if (*train) return cmd_train(trn, trnData, trnSplit, trnOut);
    if (*predict) return cmd_predict(prdCkpt, prdData, prdOut);
    if (*diagnose) return cmd_diagnose(dgTrain, dgTest, dgCkpt, dgAll, dgEmbed, dgSeed, dgDim, dgOut);
    if (*runCmd) return cmd_run(run, runOut);
    if (*report) return cmd_report(repIn, repOut);
    if (*sweep) {
      const int jobs =
          swJobs > 0 ? swJobs : static_cast<int>(run_stage("config", [] { return harness::thread_budget(); }));
      std::error_code ec;
      const fs::path exe = fs::read_symlink("/proc/self/exe", ec);
      const std::string self = ec ? std::string(argv[0]) : exe.string();
      return cmd_sweep(swp, swMethods, swSeeds, jobs, swOut, self.c_str());
    }
  } catch (const StageError& e) {
    std::fprintf(stderr, "decaf %s: %s\n", name.c_str(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "decaf %s: %s\n", name.c_str(), e.what());
    return 1;
  }
  return 0;
}
