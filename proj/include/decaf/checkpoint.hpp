#pragma once

#include <filesystem>
#include <string>
#include <variant>

#include "decaf/model.hpp"
#include "json.hpp"

namespace decaf::io {

inline constexpr int kCheckpointVersion = 1;

nlohmann::json matrix_to_json(const num::Matrix& m);
num::Matrix matrix_from_json(const nlohmann::json& j);

struct DecafCheckpoint {
  model::DecafModel model;
  model::BackgroundSample background;
};

struct Checkpoint {
  std::string configFingerprint;
  std::string datasetFingerprint;
  std::variant<DecafCheckpoint, graph::BackboneModel> payload;

  bool is_decaf() const { return std::holds_alternative<DecafCheckpoint>(payload); }
};

nlohmann::json checkpoint_to_json(const Checkpoint& c);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& file);
Checkpoint load_checkpoint(const std::filesystem::path& file);

}  // namespace decaf::io
