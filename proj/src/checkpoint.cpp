#include "decaf/checkpoint.hpp"

#include <fstream>

#include "decaf/error.hpp"

namespace decaf::io {

using nlohmann::json;

namespace {

json mlp_to_json(const num::Mlp& m) {
  json arr = json::array();
  for (const num::Matrix& p : m.params) arr.push_back(matrix_to_json(p));
  return arr;
}

num::Mlp mlp_from_json(const json& j) {
  num::Mlp m;
  for (const json& p : j) m.params.push_back(matrix_from_json(p));
  if (m.params.size() != 4) throw Error("checkpoint: MLP needs four parameter matrices");
  return m;
}

json weights_to_json(const std::vector<num::Matrix>& ws) {
  json arr = json::array();
  for (const num::Matrix& w : ws) arr.push_back(matrix_to_json(w));
  return arr;
}

std::vector<num::Matrix> weights_from_json(const json& j) {
  std::vector<num::Matrix> out;
  for (const json& w : j) out.push_back(matrix_from_json(w));
  return out;
}

}  // namespace

json matrix_to_json(const num::Matrix& m) {
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.values()}};
}

num::Matrix matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<std::size_t>();
  const auto cols = j.at("cols").get<std::size_t>();
  auto data = j.at("data").get<std::vector<double>>();
  if (data.size() != rows * cols) throw Error("checkpoint: matrix data does not match its shape");
  return num::Matrix(rows, cols, std::move(data));
}

json checkpoint_to_json(const Checkpoint& c) {
  json j;
  j["format_version"] = kCheckpointVersion;
  j["config_fingerprint"] = c.configFingerprint;
  j["dataset_fingerprint"] = c.datasetFingerprint;
  if (const auto* d = std::get_if<DecafCheckpoint>(&c.payload)) {
    const model::DecafModel& m = d->model;
    j["kind"] = "decaf";
    j["encoder"] = {{"kind", graph::to_string(m.shared.encoder.kind)},
                    {"layers", m.shared.encoder.layers},
                    {"weights", weights_to_json(m.shared.encoder.weights)}};
    j["head"] = mlp_to_json(m.shared.head);
    j["scm_a"] = {{"outcome", mlp_to_json(m.scmA.outcome)},
                  {"confounder", mlp_to_json(m.scmA.confounder)},
                  {"propensity", mlp_to_json(m.scmA.propensity)}};
    j["scm_x"] = {{"treatment", mlp_to_json(m.scmX.treatment)}, {"propensity", mlp_to_json(m.scmX.propensity)}};
    j["gamma"] = m.gamma;
    j["cf_samples"] = m.cfSamples;
    j["cf_mode"] = model::to_string(m.cfMode);
    j["binary_sigmoid"] = m.binarySigmoid;
    j["classes"] = m.classes;
    j["embedding_dim"] = m.embeddingDim;
    const model::BackgroundSample& b = d->background;
    j["background"] = {{"indices", b.indices},
                       {"seed", b.seed},
                       {"cf_a", matrix_to_json(b.cfA)},
                       {"cf_x", matrix_to_json(b.cfX)},
                       {"mean_a", matrix_to_json(b.meanA)},
                       {"mean_hx", matrix_to_json(b.meanHX)}};
  } else {
    const auto& b = std::get<graph::BackboneModel>(c.payload);
    j["kind"] = "erm";
    j["backbone"] = {{"kind", graph::to_string(b.kind)}, {"hops", b.hops}, {"weights", weights_to_json(b.weights)}};
  }
  return j;
}

Checkpoint checkpoint_from_json(const json& j) {
  try {
    if (j.at("format_version").get<int>() != kCheckpointVersion) throw Error("checkpoint: unsupported format version");
    Checkpoint c;
    c.configFingerprint = j.at("config_fingerprint").get<std::string>();
    c.datasetFingerprint = j.at("dataset_fingerprint").get<std::string>();
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "decaf") {
      DecafCheckpoint d;
      model::DecafModel& m = d.model;
      const json& enc = j.at("encoder");
      m.shared.encoder.kind = graph::parse_encoder(enc.at("kind").get<std::string>());
      m.shared.encoder.layers = enc.at("layers").get<int>();
      m.shared.encoder.weights = weights_from_json(enc.at("weights"));
      m.shared.head = mlp_from_json(j.at("head"));
      m.scmA.outcome = mlp_from_json(j.at("scm_a").at("outcome"));
      m.scmA.confounder = mlp_from_json(j.at("scm_a").at("confounder"));
      m.scmA.propensity = mlp_from_json(j.at("scm_a").at("propensity"));
      m.scmX.treatment = mlp_from_json(j.at("scm_x").at("treatment"));
      m.scmX.propensity = mlp_from_json(j.at("scm_x").at("propensity"));
      m.gamma = j.at("gamma").get<double>();
      m.cfSamples = j.at("cf_samples").get<int>();
      m.cfMode = model::parse_cf_mode(j.at("cf_mode").get<std::string>());
      m.binarySigmoid = j.at("binary_sigmoid").get<bool>();
      m.classes = j.at("classes").get<std::size_t>();
      m.embeddingDim = j.at("embedding_dim").get<std::size_t>();
      const json& b = j.at("background");
      d.background.indices = b.at("indices").get<std::vector<int>>();
      d.background.seed = b.at("seed").get<std::uint64_t>();
      d.background.cfA = matrix_from_json(b.at("cf_a"));
      d.background.cfX = matrix_from_json(b.at("cf_x"));
      d.background.meanA = matrix_from_json(b.at("mean_a"));
      d.background.meanHX = matrix_from_json(b.at("mean_hx"));
      c.payload = std::move(d);
    } else if (kind == "erm") {
      graph::BackboneModel b;
      const json& bj = j.at("backbone");
      b.kind = graph::parse_backbone(bj.at("kind").get<std::string>());
      b.hops = bj.at("hops").get<int>();
      b.weights = weights_from_json(bj.at("weights"));
      c.payload = std::move(b);
    } else {
      throw Error("checkpoint: unknown kind '" + kind + "'");
    }
    return c;
  } catch (const json::exception& e) {
    throw Error(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error("cannot write " + file.string());
  out << checkpoint_to_json(c).dump() << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error("cannot read " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(file.string(), 0, e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace decaf::io
