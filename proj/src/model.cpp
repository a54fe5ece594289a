#include "decaf/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "decaf/adam.hpp"
#include "decaf/error.hpp"
#include "decaf/metrics.hpp"
#include "decaf/random.hpp"

namespace decaf::model {

using num::MlpVars;
using num::Tape;
using num::Var;

std::string to_string(CounterfactualMode mode) {
  return mode == CounterfactualMode::BackgroundPair ? "background" : "own-confounder";
}

CounterfactualMode parse_cf_mode(const std::string& name) {
  if (name == "background") return CounterfactualMode::BackgroundPair;
  if (name == "own-confounder") return CounterfactualMode::OwnConfounder;
  throw Error("unknown counterfactual mode '" + name + "'");
}

namespace {

enum Stream : std::uint64_t {
  kEncoderInit = 11,
  kScmAInit = 12,
  kScmXInit = 13,
  kBatches = 14,
  kBackground = 15,
};

Matrix contract(const Matrix& g, const Matrix& r) {
  const std::size_t o = r.cols();
  const std::size_t k = g.cols() / o;
  Matrix out(g.rows(), k);
  for (std::size_t i = 0; i < g.rows(); ++i) {
    auto gi = g.row(i);
    auto ri = r.row(i);
    for (std::size_t c = 0; c < k; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < o; ++j) s += gi[c * o + j] * ri[j];
      out(i, c) = s;
    }
  }
  return out;
}

Matrix subtract_row(Matrix m, const Matrix& row) {
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) m(i, j) -= row(0, j);
  return m;
}

std::vector<int> labels_of(const GraphData& g, const std::vector<int>& rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (int r : rows) out.push_back(g.labels[static_cast<std::size_t>(r)]);
  return out;
}

double score(const Matrix& logits, const std::vector<int>& labels, std::size_t k) {
  return metrics::macro_f1(labels, num::argmax_rows(logits), k);
}

num::AdamConfig adam_config(const TrainConfig& cfg) {
  num::AdamConfig a;
  a.learningRate = cfg.learningRate;
  a.weightDecay = cfg.weightDecay;
  return a;
}

/// Splits the training rows into the mini-batches of one epoch.
std::vector<std::vector<int>> epoch_batches(const std::vector<int>& rows, std::size_t batchSize, Rng& rng) {
  if (batchSize == 0 || batchSize >= rows.size()) return {rows};
  std::vector<int> order = rows;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<int>> batches;
  for (std::size_t s = 0; s < order.size(); s += batchSize) {
    const std::size_t e = std::min(order.size(), s + batchSize);
    std::vector<int> b(order.begin() + static_cast<std::ptrdiff_t>(s), order.begin() + static_cast<std::ptrdiff_t>(e));
    std::sort(b.begin(), b.end());
    batches.push_back(std::move(b));
  }
  return batches;
}

/// Parameter groups updated together by one Adam state.
struct Group {
  std::vector<Matrix*> params;
  num::AdamState state;

  Group(std::vector<Matrix*> ps, const TrainConfig& cfg) : params(std::move(ps)) {
    std::vector<Matrix> copy;
    for (Matrix* p : params) copy.push_back(*p);
    state = num::AdamState(adam_config(cfg), copy);
  }

  void step(const std::vector<Matrix>& grads) {
    std::vector<Matrix> values;
    values.reserve(params.size());
    for (Matrix* p : params) values.push_back(std::move(*p));
    num::adam_step(values, grads, state);
    for (std::size_t i = 0; i < params.size(); ++i) *params[i] = std::move(values[i]);
  }
};

std::vector<Matrix*> mlp_params(Mlp& m) {
  std::vector<Matrix*> out;
  for (Matrix& p : m.params) out.push_back(&p);
  return out;
}

/// Tracks the best validation score and a snapshot of the weights that
/// produced it.
class EarlyStopper {
 public:
  EarlyStopper(std::vector<Matrix*> watched, int patience) : watched_(std::move(watched)), patience_(patience) {}

  /// Returns true when training should stop.
  bool update(double valScore, double loss, int epoch, TrainLog& log) {
    log.loss.push_back(loss);
    log.epochsRun = epoch + 1;
    if (valScore > best_ || log.bestEpoch < 0) {
      best_ = valScore;
      log.bestEpoch = epoch;
      snapshot_.clear();
      for (Matrix* p : watched_) snapshot_.push_back(*p);
    }
    log.bestValScore.push_back(best_);
    return patience_ > 0 && epoch - log.bestEpoch >= patience_;
  }

  void restore() {
    for (std::size_t i = 0; i < snapshot_.size(); ++i) *watched_[i] = snapshot_[i];
  }

 private:
  std::vector<Matrix*> watched_;
  int patience_;
  double best_ = -std::numeric_limits<double>::infinity();
  std::vector<Matrix> snapshot_;
};

template <typename F>
auto guarded(const std::string& stage, int epoch, F&& body) {
  try {
    return body();
  } catch (const NumericError&) {
    throw DivergenceError(stage, epoch);
  }
}

double checked_loss(const std::string& stage, int epoch, double loss) {
  if (!std::isfinite(loss)) throw DivergenceError(stage, epoch);
  return loss;
}

/// Rows used for early stopping: validation when present, otherwise train.
std::vector<int> selection_rows(const splits::SplitMasks& masks) {
  std::vector<int> val = masks.val_indices();
  return val.empty() ? masks.train_indices() : val;
}

std::vector<int> require_train(const splits::SplitMasks& masks, std::size_t n, const std::string& stage) {
  if (masks.train.size() != n) throw ShapeError(stage + ": split masks do not match graph size");
  std::vector<int> rows = masks.train_indices();
  if (rows.empty()) throw Error(stage + ": empty training split");
  return rows;
}

}  // namespace

// ---------------------------------------------------------------------------
// Objectives

Var encoder_objective(Tape& tape, const graph::EncoderPlan& plan, std::span<const Var> encoder, const MlpVars& head,
                      const std::vector<int>& rows, const std::vector<int>& labels) {
  Var a = tape.gather_rows(graph::encode(tape, plan, encoder), rows);
  return tape.softmax_cross_entropy(num::forward(tape, head, a), labels);
}

Var outcome_objective(Tape& tape, Var mOut, const std::vector<int>& labels) {
  return tape.softmax_cross_entropy(mOut, labels);
}

Var confounder_objective(Tape& tape, Var mOut, Var gOut, Var eOut, Var a, const std::vector<int>& labels) {
  Var logits = tape.add(mOut, tape.row_contract(gOut, tape.sub(a, eOut)));
  return tape.softmax_cross_entropy(logits, labels);
}

Var propensity_a_objective(Tape& tape, Var eOut, Var a) { return tape.mean_squared_error(a, eOut); }

Var treatment_x_objective(Tape& tape, Var mA, Var hOut, Var eOut, Var a, const std::vector<int>& labels) {
  Var logits = tape.add(mA, tape.row_contract(tape.sub(hOut, eOut), a));
  return tape.softmax_cross_entropy(logits, labels);
}

Var propensity_x_objective(Tape& tape, Var hOut, Var eOut) { return tape.mean_squared_error(hOut, eOut); }

// ---------------------------------------------------------------------------
// Shared encoder

EncoderResult train_encoder(const GraphData& g, const splits::SplitMasks& masks, const DecafConfig& cfg) {
  const std::string stage = "encoder";
  const std::vector<int> train = require_train(masks, g.node_count(), stage);
  const std::vector<int> sel = selection_rows(masks);
  const std::vector<int> selLabels = labels_of(g, sel);

  Rng rng(derive_seed(cfg.seed, kEncoderInit));
  EncoderResult res;
  res.shared.encoder = graph::EncoderWeights::create(cfg.encoder, cfg.hops, g.feature_dim(), cfg.embeddingDim, rng);
  res.shared.head = Mlp::create(cfg.embeddingDim, cfg.hiddenDim, g.numClasses, rng);
  const graph::EncoderPlan plan = graph::plan_encoder(g, cfg.encoder, cfg.hops);

  std::vector<Matrix*> params;
  for (Matrix& w : res.shared.encoder.weights) params.push_back(&w);
  for (Matrix* p : mlp_params(res.shared.head)) params.push_back(p);
  Group group(params, cfg.train);
  EarlyStopper stopper(params, cfg.train.patience);
  Rng batchRng(derive_seed(cfg.seed, kBatches));

  for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    double lossSum = 0.0;
    const auto batches = epoch_batches(train, cfg.train.batchSize, batchRng);
    for (const auto& batch : batches) {
      lossSum += guarded(stage, epoch, [&] {
        Tape tape;
        std::vector<Var> enc;
        for (const Matrix& w : res.shared.encoder.weights) enc.push_back(tape.parameter(w));
        MlpVars head = num::bind(tape, res.shared.head, true);
        Var loss = encoder_objective(tape, plan, enc, head, batch, labels_of(g, batch));
        auto grads = tape.backward(loss);
        group.step(grads.grads);
        return checked_loss(stage, epoch, grads.loss);
      });
    }
    const MaterializedShared m = materialize_shared(res.shared, g);
    const double val = score(m.mA.select_rows(sel), selLabels, g.numClasses);
    if (stopper.update(val, lossSum / static_cast<double>(batches.size()), epoch, res.log)) break;
  }
  stopper.restore();
  return res;
}

MaterializedShared materialize_shared(const SharedEncoder& shared, const GraphData& g) {
  MaterializedShared m;
  m.a = graph::neighborhood_encode(g, shared.encoder);
  m.mA = shared.head.forward(m.a);
  return m;
}

// ---------------------------------------------------------------------------
// SCM-A

ScmAResult train_scm_a(const GraphData& g, const MaterializedShared& shared, const splits::SplitMasks& masks,
                       const DecafConfig& cfg, const ScmAInit& init) {
  const std::vector<int> train = require_train(masks, g.node_count(), "scm-a");
  const std::vector<int> sel = selection_rows(masks);
  const std::vector<int> selLabels = labels_of(g, sel);
  const std::size_t d = g.feature_dim();
  const std::size_t o = shared.a.cols();
  const std::size_t k = g.numClasses;
  if (shared.a.rows() != g.node_count()) throw ShapeError("scm-a: shared embeddings do not match graph");

  ScmAResult res;
  if (init.branch != nullptr) {
    res.branch = *init.branch;
  } else {
    Rng rng(derive_seed(cfg.seed, kScmAInit));
    res.branch.outcome = Mlp::create(d, cfg.hiddenDim, k, rng);
    res.branch.confounder = Mlp::create(d, cfg.hiddenDim, o * k, rng);
    res.branch.propensity = Mlp::create(d, cfg.hiddenDim, o, rng);
  }
  Rng batchRng(derive_seed(cfg.seed, kBatches + 100));
  const Matrix& x = g.features;
  const Matrix& a = shared.treatment_a();

  // Stage 1: m^A on J_m.
  if (!init.skipStage1) {
    const std::string stage = "scm-a stage 1";
    Group group(mlp_params(res.branch.outcome), cfg.train);
    EarlyStopper stopper(mlp_params(res.branch.outcome), cfg.train.patience);
    const Matrix xSel = x.select_rows(sel);
    for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
      double lossSum = 0.0;
      const auto batches = epoch_batches(train, cfg.train.batchSize, batchRng);
      for (const auto& batch : batches) {
        lossSum += guarded(stage, epoch, [&] {
          Tape tape;
          MlpVars m = num::bind(tape, res.branch.outcome, true);
          Var loss = outcome_objective(tape, num::forward(tape, m, tape.constant(x.select_rows(batch))),
                                       labels_of(g, batch));
          auto grads = tape.backward(loss);
          group.step(grads.grads);
          return checked_loss(stage, epoch, grads.loss);
        });
      }
      res.stage1FinalLoss = lossSum / static_cast<double>(batches.size());
      const double val = score(res.branch.outcome.forward(xSel), selLabels, k);
      if (stopper.update(val, res.stage1FinalLoss, epoch, res.stage1)) break;
    }
    stopper.restore();
  }

  // Stage 2: alternate stepRatio updates of g^A on J_g with one of e^A on J_e.
  const std::string stage = "scm-a stage 2";
  Group gGroup(mlp_params(res.branch.confounder), cfg.train);
  Group eGroup(mlp_params(res.branch.propensity), cfg.train);
  std::vector<Matrix*> watched = mlp_params(res.branch.confounder);
  for (Matrix* p : mlp_params(res.branch.propensity)) watched.push_back(p);
  EarlyStopper stopper(watched, cfg.train.patience);
  const Matrix mAll = res.branch.outcome.forward(x);
  const Matrix xSel = x.select_rows(sel);
  const Matrix aSel = a.select_rows(sel);
  const Matrix mSel = mAll.select_rows(sel);

  for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    double lossSum = 0.0;
    const auto batches = epoch_batches(train, cfg.train.batchSize, batchRng);
    for (const auto& batch : batches) {
      const Matrix xb = x.select_rows(batch);
      const Matrix ab = a.select_rows(batch);
      const Matrix mb = mAll.select_rows(batch);
      const std::vector<int> yb = labels_of(g, batch);
      const Matrix eb = res.branch.propensity.forward(xb);
      for (int s = 0; s < cfg.train.stepRatio; ++s) {
        lossSum += guarded(stage, epoch, [&] {
          Tape tape;
          MlpVars gv = num::bind(tape, res.branch.confounder, true);
          Var xv = tape.constant(xb);
          Var loss = confounder_objective(tape, tape.constant(mb), num::forward(tape, gv, xv), tape.constant(eb),
                                          tape.constant(ab), yb);
          auto grads = tape.backward(loss);
          gGroup.step(grads.grads);
          return checked_loss(stage, epoch, grads.loss);
        });
      }
      guarded(stage, epoch, [&] {
        Tape tape;
        MlpVars ev = num::bind(tape, res.branch.propensity, true);
        Var loss = propensity_a_objective(tape, num::forward(tape, ev, tape.constant(xb)), tape.constant(ab));
        auto grads = tape.backward(loss);
        eGroup.step(grads.grads);
        return checked_loss(stage, epoch, grads.loss);
      });
    }
    const Matrix logits =
        mSel + contract(res.branch.confounder.forward(xSel), aSel - res.branch.propensity.forward(xSel));
    const double val = score(logits, selLabels, k);
    const double meanLoss = lossSum / static_cast<double>(batches.size() * static_cast<std::size_t>(cfg.train.stepRatio));
    if (stopper.update(val, meanLoss, epoch, res.stage2)) break;
  }
  stopper.restore();
  return res;
}

// ---------------------------------------------------------------------------
// SCM-X

ScmXResult train_scm_x(const GraphData& g, const MaterializedShared& shared, const splits::SplitMasks& masks,
                       const DecafConfig& cfg, const ScmXBranch* init) {
  const std::string stage = "scm-x";
  const std::vector<int> train = require_train(masks, g.node_count(), stage);
  const std::vector<int> sel = selection_rows(masks);
  const std::vector<int> selLabels = labels_of(g, sel);
  const std::size_t d = g.feature_dim();
  const std::size_t o = shared.a.cols();
  const std::size_t k = g.numClasses;
  if (shared.a.rows() != g.node_count()) throw ShapeError("scm-x: shared embeddings do not match graph");

  ScmXResult res;
  if (init != nullptr) {
    res.branch = *init;
  } else {
    Rng rng(derive_seed(cfg.seed, kScmXInit));
    res.branch.treatment = Mlp::create(d, cfg.hiddenDim, o * k, rng);
    res.branch.propensity = Mlp::create(o, cfg.hiddenDim, o * k, rng);
  }
  Rng batchRng(derive_seed(cfg.seed, kBatches + 200));
  const Matrix& x = g.features;
  const Matrix& a = shared.confounder_x();

  Group hGroup(mlp_params(res.branch.treatment), cfg.train);
  Group eGroup(mlp_params(res.branch.propensity), cfg.train);
  std::vector<Matrix*> watched = mlp_params(res.branch.treatment);
  for (Matrix* p : mlp_params(res.branch.propensity)) watched.push_back(p);
  EarlyStopper stopper(watched, cfg.train.patience);
  const Matrix xSel = x.select_rows(sel);
  const Matrix aSel = a.select_rows(sel);
  const Matrix mSel = shared.mA.select_rows(sel);

  for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    double lossSum = 0.0;
    const auto batches = epoch_batches(train, cfg.train.batchSize, batchRng);
    for (const auto& batch : batches) {
      const Matrix xb = x.select_rows(batch);
      const Matrix ab = a.select_rows(batch);
      const Matrix mb = shared.mA.select_rows(batch);
      const std::vector<int> yb = labels_of(g, batch);
      const Matrix eb = res.branch.propensity.forward(ab);
      for (int s = 0; s < cfg.train.stepRatio; ++s) {
        lossSum += guarded(stage, epoch, [&] {
          Tape tape;
          MlpVars hv = num::bind(tape, res.branch.treatment, true);
          Var loss = treatment_x_objective(tape, tape.constant(mb), num::forward(tape, hv, tape.constant(xb)),
                                           tape.constant(eb), tape.constant(ab), yb);
          auto grads = tape.backward(loss);
          hGroup.step(grads.grads);
          return checked_loss(stage, epoch, grads.loss);
        });
      }
      const Matrix hb = res.branch.treatment.forward(xb);
      guarded(stage, epoch, [&] {
        Tape tape;
        MlpVars ev = num::bind(tape, res.branch.propensity, true);
        Var loss = propensity_x_objective(tape, tape.constant(hb), num::forward(tape, ev, tape.constant(ab)));
        auto grads = tape.backward(loss);
        eGroup.step(grads.grads);
        return checked_loss(stage, epoch, grads.loss);
      });
    }
    const Matrix logits =
        mSel + contract(res.branch.treatment.forward(xSel) - res.branch.propensity.forward(aSel), aSel);
    const double val = score(logits, selLabels, k);
    const double meanLoss = lossSum / static_cast<double>(batches.size() * static_cast<std::size_t>(cfg.train.stepRatio));
    if (stopper.update(val, meanLoss, epoch, res.log)) break;
  }
  stopper.restore();
  return res;
}

double fit_regression(Mlp& propensity, const Matrix& input, const Matrix& target, const std::vector<int>& rows,
                      const TrainConfig& cfg, int steps) {
  if (input.rows() != target.rows()) throw ShapeError("fit_regression: input and target row mismatch");
  const Matrix xb = input.select_rows(rows);
  const Matrix tb = target.select_rows(rows);
  Group group(mlp_params(propensity), cfg);
  for (int s = 0; s < steps; ++s) {
    guarded("regression", s, [&] {
      Tape tape;
      MlpVars ev = num::bind(tape, propensity, true);
      Var loss = tape.mean_squared_error(tape.constant(tb), num::forward(tape, ev, tape.constant(xb)));
      auto grads = tape.backward(loss);
      group.step(grads.grads);
      return checked_loss("regression", s, grads.loss);
    });
  }
  const Matrix r = tb - propensity.forward(xb);
  double sum = 0.0;
  for (double v : r.values()) sum += v * v;
  return sum / static_cast<double>(std::max<std::size_t>(1, rows.size()));
}

// ---------------------------------------------------------------------------
// Effects and prediction

Matrix product_terms_a(const DecafModel& model, const MaterializedShared& shared, const GraphData& g) {
  return contract(model.scmA.confounder.forward(g.features), shared.treatment_a());
}

Matrix product_terms_x(const DecafModel& model, const MaterializedShared& shared, const GraphData& g) {
  return contract(model.scmX.treatment.forward(g.features), shared.confounder_x());
}

BackgroundSample background_counterfactual(const DecafModel& model, const MaterializedShared& shared,
                                           const GraphData& g, std::span<const int> trainRows, std::uint64_t seed) {
  if (trainRows.empty()) throw Error("background: empty training set");
  if (model.cfSamples < 1) throw Error("background: cf-samples must be positive");
  const auto want = static_cast<std::size_t>(model.cfSamples);
  Rng rng(derive_seed(seed, kBackground));
  BackgroundSample bg;
  bg.seed = seed;
  if (want <= trainRows.size()) {
    std::vector<int> pool(trainRows.begin(), trainRows.end());
    for (std::size_t i = 0; i < want; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    bg.indices.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(want));
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, trainRows.size() - 1);
    for (std::size_t i = 0; i < want; ++i) bg.indices.push_back(trainRows[pick(rng)]);
  }

  const Matrix xb = g.features.select_rows(bg.indices);
  const Matrix ab = shared.a.select_rows(bg.indices);
  const Matrix gb = model.scmA.confounder.forward(xb);
  const Matrix hb = model.scmX.treatment.forward(xb);
  bg.cfA = num::column_means(contract(gb, ab));
  bg.cfX = num::column_means(contract(hb, ab));
  bg.meanA = num::column_means(ab);
  bg.meanHX = num::column_means(hb);
  return bg;
}

EffectEstimates estimate_effects(const DecafModel& model, const MaterializedShared& shared, const GraphData& g,
                                 const BackgroundSample& background) {
  if (shared.a.rows() != g.node_count()) throw ShapeError("effects: shared embeddings do not match graph");
  EffectEstimates eff;
  const Matrix gx = model.scmA.confounder.forward(g.features);
  const Matrix hx = model.scmX.treatment.forward(g.features);
  const Matrix& a = shared.a;
  if (model.cfMode == CounterfactualMode::BackgroundPair) {
    eff.psiA = subtract_row(contract(gx, a), background.cfA);
    eff.psiX = subtract_row(contract(hx, a), background.cfX);
  } else {
    eff.psiA = contract(gx, subtract_row(a, background.meanA));
    eff.psiX = contract(subtract_row(hx, background.meanHX), a);
  }
  return eff;
}

Prediction combine_effects(const EffectEstimates& effects, double gamma, bool binarySigmoid) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw Error("gamma must lie in [0, 1]");
  if (!effects.psiX.same_shape(effects.psiA)) throw ShapeError("effects: branch shapes differ");
  const Matrix logits = effects.psiX * gamma + effects.psiA * (1.0 - gamma);
  Prediction p;
  if (binarySigmoid && logits.cols() == 1) {
    p.probabilities = Matrix(logits.rows(), 2);
    for (std::size_t i = 0; i < logits.rows(); ++i) {
      const double pos = 1.0 / (1.0 + std::exp(-logits(i, 0)));
      p.probabilities(i, 0) = 1.0 - pos;
      p.probabilities(i, 1) = pos;
    }
  } else {
    p.probabilities = num::softmax_rows(logits);
  }
  p.classIds = num::argmax_rows(p.probabilities);
  return p;
}

Prediction predict(const DecafModel& model, const MaterializedShared& shared, const GraphData& g,
                   const BackgroundSample& background) {
  return combine_effects(estimate_effects(model, shared, g, background), model.gamma, model.binarySigmoid);
}

DecafTrainResult train_decaf(const GraphData& g, const splits::SplitMasks& masks, const DecafConfig& cfg) {
  if (!(cfg.gamma >= 0.0 && cfg.gamma <= 1.0)) throw Error("gamma must lie in [0, 1]");
  DecafTrainResult out;
  EncoderResult enc = train_encoder(g, masks, cfg);
  out.encoderLog = std::move(enc.log);
  const MaterializedShared shared = materialize_shared(enc.shared, g);
  ScmAResult a = train_scm_a(g, shared, masks, cfg);
  ScmXResult x = train_scm_x(g, shared, masks, cfg);
  out.stage1Log = std::move(a.stage1);
  out.stage2Log = std::move(a.stage2);
  out.scmXLog = std::move(x.log);

  DecafModel& m = out.model;
  m.shared = std::move(enc.shared);
  m.scmA = std::move(a.branch);
  m.scmX = std::move(x.branch);
  m.gamma = cfg.gamma;
  m.cfSamples = cfg.cfSamples;
  m.cfMode = cfg.cfMode;
  m.binarySigmoid = cfg.binarySigmoid;
  m.classes = g.numClasses;
  m.embeddingDim = shared.a.cols();

  const std::vector<int> train = masks.train_indices();
  out.background = background_counterfactual(m, shared, g, train, cfg.seed);

  if (cfg.tuneGamma) {
    const std::vector<int> sel = selection_rows(masks);
    const std::vector<int> selLabels = labels_of(g, sel);
    const EffectEstimates eff = estimate_effects(m, shared, g, out.background);
    const EffectEstimates effSel{eff.psiX.select_rows(sel), eff.psiA.select_rows(sel)};
    double best = -1.0;
    for (int step = 1; step <= 9; ++step) {
      const double gamma = 0.1 * step;
      const Prediction p = combine_effects(effSel, gamma, m.binarySigmoid);
      const double f = metrics::macro_f1(selLabels, p.classIds, g.numClasses);
      if (f > best) {
        best = f;
        m.gamma = gamma;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// ERM baseline

ErmResult train_erm(const GraphData& g, const splits::SplitMasks& masks, const ErmConfig& cfg) {
  const std::string stage = "erm " + graph::to_string(cfg.backbone);
  const std::vector<int> train = require_train(masks, g.node_count(), stage);
  const std::vector<int> sel = selection_rows(masks);
  const std::vector<int> selLabels = labels_of(g, sel);

  Rng rng(derive_seed(cfg.seed, kEncoderInit + 50));
  ErmResult res;
  res.model = graph::BackboneModel::create(cfg.backbone, cfg.hops, g.feature_dim(), cfg.hiddenDim, g.numClasses, rng);
  const graph::BackbonePlan plan = graph::plan_backbone(g, cfg.backbone, res.model.hops);

  std::vector<Matrix*> params;
  for (Matrix& w : res.model.weights) params.push_back(&w);
  Group group(params, cfg.train);
  EarlyStopper stopper(params, cfg.train.patience);
  Rng batchRng(derive_seed(cfg.seed, kBatches + 300));

  auto forward = [&](Tape& tape) {
    std::vector<Var> w;
    for (const Matrix& m : res.model.weights) w.push_back(tape.parameter(m));
    return graph::backbone_forward(tape, plan, w);
  };

  for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    double lossSum = 0.0;
    const auto batches = epoch_batches(train, cfg.train.batchSize, batchRng);
    for (const auto& batch : batches) {
      lossSum += guarded(stage, epoch, [&] {
        Tape tape;
        Var logits = tape.gather_rows(forward(tape), batch);
        Var loss = tape.softmax_cross_entropy(logits, labels_of(g, batch));
        auto grads = tape.backward(loss);
        group.step(grads.grads);
        return checked_loss(stage, epoch, grads.loss);
      });
    }
    Tape tape;
    std::vector<Var> w;
    for (const Matrix& m : res.model.weights) w.push_back(tape.constant(m));
    const Matrix logits = tape.value(graph::backbone_forward(tape, plan, w)).select_rows(sel);
    const double val = score(logits, selLabels, g.numClasses);
    if (stopper.update(val, lossSum / static_cast<double>(batches.size()), epoch, res.log)) break;
  }
  stopper.restore();
  return res;
}

Prediction predict_backbone(const graph::BackboneModel& model, const GraphData& g) {
  Prediction p;
  p.probabilities = num::softmax_rows(graph::backbone_forward(model, g));
  p.classIds = num::argmax_rows(p.probabilities);
  return p;
}

}  // namespace decaf::model
