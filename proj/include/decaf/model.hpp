#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "decaf/graph.hpp"
#include "decaf/matrix.hpp"
#include "decaf/mlp.hpp"
#include "decaf/splits.hpp"
#include "decaf/tape.hpp"

namespace decaf::model {

using graph::GraphData;
using num::Matrix;
using num::Mlp;

struct TrainConfig {
  double learningRate = 1e-3;
  double weightDecay = 1e-5;
  int epochs = 300;
  /// Epochs without validation improvement before stopping; 0 disables.
  int patience = 50;
  /// Treatment-function updates per propensity update.
  int stepRatio = 5;
  /// Rows per step; 0 means full batch.
  std::size_t batchSize = 0;
};

/// How the untreated outcome is estimated from the background sample.
enum class CounterfactualMode {
  /// Average of the background instances' own product terms.
  BackgroundPair,
  /// Each instance's own confounder against the background treatments.
  OwnConfounder,
};

std::string to_string(CounterfactualMode mode);
CounterfactualMode parse_cf_mode(const std::string& name);

struct DecafConfig {
  double gamma = 0.5;
  bool tuneGamma = false;
  int cfSamples = 16;
  CounterfactualMode cfMode = CounterfactualMode::BackgroundPair;
  int hops = 2;
  std::size_t embeddingDim = 64;  // o
  std::size_t hiddenDim = 64;     // MLP hidden width
  graph::EncoderKind encoder = graph::EncoderKind::Linear;
  bool binarySigmoid = false;
  TrainConfig train;
  std::uint64_t seed = 0;
};

/// Best-so-far validation score after each epoch, plus per-epoch loss.
struct TrainLog {
  std::vector<double> loss;
  std::vector<double> bestValScore;
  int bestEpoch = -1;
  int epochsRun = 0;
};

/// Neighborhood encoder p and head p'.
struct SharedEncoder {
  graph::EncoderWeights encoder;
  Mlp head;  // o -> k
};

/// SCM-A: confounder x, treatment a.
struct ScmABranch {
  Mlp outcome;     // m^A: x -> k
  Mlp confounder;  // g^A: x -> o*k
  Mlp propensity;  // e^A: x -> o
};

/// SCM-X: confounder a, treatment x.
struct ScmXBranch {
  Mlp treatment;   // h^X: x -> o*k
  Mlp propensity;  // e^X: a -> o*k
};

struct DecafModel {
  SharedEncoder shared;
  ScmABranch scmA;
  ScmXBranch scmX;
  double gamma = 0.5;
  int cfSamples = 16;
  CounterfactualMode cfMode = CounterfactualMode::BackgroundPair;
  bool binarySigmoid = false;
  std::size_t classes = 0;
  std::size_t embeddingDim = 0;
};

/// Neighborhood embeddings and their head projections, fixed once the
/// encoder is trained. The confounder g^X(a) and the treatment h^A(a) both
/// resolve to the rows of `a`.
struct MaterializedShared {
  Matrix a;    // n x o
  Matrix mA;   // n x k

  const Matrix& confounder_x() const { return a; }
  const Matrix& treatment_a() const { return a; }
};

struct BackgroundSample {
  std::vector<int> indices;
  std::uint64_t seed = 0;
  Matrix cfA;       // 1 x k, untreated outcome for the a-treatment branch
  Matrix cfX;       // 1 x k, untreated outcome for the x-treatment branch
  Matrix meanA;     // 1 x o, background mean of h^A(a)
  Matrix meanHX;    // 1 x o*k, background mean of h^X(x)
};

struct EffectEstimates {
  Matrix psiX;  // n x k
  Matrix psiA;  // n x k
};

struct Prediction {
  Matrix probabilities;
  std::vector<int> classIds;
};

// Stage objectives. Outputs are already restricted to the batch rows.

/// J_{p,p'}: cross-entropy of the head applied to the neighborhood encoding.
num::Var encoder_objective(num::Tape& tape, const graph::EncoderPlan& plan, std::span<const num::Var> encoder,
                           const num::MlpVars& head, const std::vector<int>& rows, const std::vector<int>& labels);
/// J_m: cross-entropy of m^A(x).
num::Var outcome_objective(num::Tape& tape, num::Var mOut, const std::vector<int>& labels);
/// J_g: cross-entropy of m^A(x) + g^A(x)^T (h^a - e^A(x)).
num::Var confounder_objective(num::Tape& tape, num::Var mOut, num::Var gOut, num::Var eOut, num::Var a,
                              const std::vector<int>& labels);
/// J_e for SCM-A: mean ||h^a - e^A(x)||^2.
num::Var propensity_a_objective(num::Tape& tape, num::Var eOut, num::Var a);
/// J_h: cross-entropy of m^a + (h^a)^T (h^X(x) - e^X(a)).
num::Var treatment_x_objective(num::Tape& tape, num::Var mA, num::Var hOut, num::Var eOut, num::Var a,
                               const std::vector<int>& labels);
/// J_e for SCM-X: mean ||h^X(x) - e^X(a)||^2.
num::Var propensity_x_objective(num::Tape& tape, num::Var hOut, num::Var eOut);

struct EncoderResult {
  SharedEncoder shared;
  TrainLog log;
};

EncoderResult train_encoder(const GraphData& g, const splits::SplitMasks& masks, const DecafConfig& cfg);
MaterializedShared materialize_shared(const SharedEncoder& shared, const GraphData& g);

struct ScmAResult {
  ScmABranch branch;
  TrainLog stage1;
  TrainLog stage2;
  double stage1FinalLoss = 0.0;
};

/// Optional initial weights let callers fix a starting point (e.g. a zeroed
/// g^A). Unset members are initialized from cfg.seed.
struct ScmAInit {
  const ScmABranch* branch = nullptr;
  bool skipStage1 = false;
};

ScmAResult train_scm_a(const GraphData& g, const MaterializedShared& shared, const splits::SplitMasks& masks,
                       const DecafConfig& cfg, const ScmAInit& init = {});

struct ScmXResult {
  ScmXBranch branch;
  TrainLog log;
};

ScmXResult train_scm_x(const GraphData& g, const MaterializedShared& shared, const splits::SplitMasks& masks,
                       const DecafConfig& cfg, const ScmXBranch* init = nullptr);

/// Fits `propensity` to regress `target` on `input` over `rows` with Adam on
/// the mean squared error. Returns the final mean squared residual.
double fit_regression(Mlp& propensity, const Matrix& input, const Matrix& target, const std::vector<int>& rows,
                      const TrainConfig& cfg, int steps);

/// g^A(x)^T h^A(a), n x k.
Matrix product_terms_a(const DecafModel& model, const MaterializedShared& shared, const GraphData& g);
/// g^X(a)^T h^X(x), n x k.
Matrix product_terms_x(const DecafModel& model, const MaterializedShared& shared, const GraphData& g);

/// Draws k indices from trainRows (without replacement when k fits) and
/// averages the background product terms.
BackgroundSample background_counterfactual(const DecafModel& model, const MaterializedShared& shared,
                                           const GraphData& g, std::span<const int> trainRows,
                                           std::uint64_t seed);

/// Factual minus counterfactual outcome per node.
EffectEstimates estimate_effects(const DecafModel& model, const MaterializedShared& shared, const GraphData& g,
                                 const BackgroundSample& background);

/// sigma(gamma psiX + (1 - gamma) psiA).
Prediction combine_effects(const EffectEstimates& effects, double gamma, bool binarySigmoid = false);
Prediction predict(const DecafModel& model, const MaterializedShared& shared, const GraphData& g,
                   const BackgroundSample& background);

struct DecafTrainResult {
  DecafModel model;
  BackgroundSample background;
  TrainLog encoderLog;
  TrainLog stage1Log;
  TrainLog stage2Log;
  TrainLog scmXLog;
};

/// Full pipeline on a training graph: encoder, shared materialization, both
/// branches, background selection and (optionally) gamma selection.
DecafTrainResult train_decaf(const GraphData& g, const splits::SplitMasks& masks, const DecafConfig& cfg);

struct ErmConfig {
  graph::BackboneKind backbone = graph::BackboneKind::Sgc;
  int hops = 2;
  std::size_t hiddenDim = 64;
  TrainConfig train;
  std::uint64_t seed = 0;
};

struct ErmResult {
  graph::BackboneModel model;
  TrainLog log;
};

ErmResult train_erm(const GraphData& g, const splits::SplitMasks& masks, const ErmConfig& cfg);
Prediction predict_backbone(const graph::BackboneModel& model, const GraphData& g);

}  // namespace decaf::model
