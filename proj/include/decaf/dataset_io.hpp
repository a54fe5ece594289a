#pragma once

#include <filesystem>
#include <string>

#include "decaf/graph.hpp"
#include "json.hpp"

namespace decaf::io {

/// Directory layout: meta.json (n, d, k, provenance), features.csv,
/// labels.csv and edges.csv with one "u,v" pair per line, u < v.
void save_dataset(const graph::GraphData& g, const std::filesystem::path& dir,
                  const nlohmann::json& provenance = nlohmann::json::object());

/// Parse errors carry the file and line. An edge file must either list each
/// pair once as u < v or list both directions of every pair.
graph::GraphData load_dataset(const std::filesystem::path& dir);

nlohmann::json load_meta(const std::filesystem::path& dir);

/// Shortest text that parses back to the same double.
std::string format_double(double v);

/// FNV-1a over features, labels and edges, as 16 hex digits.
std::string fingerprint(const graph::GraphData& g);
std::string fnv1a_hex(const std::string& bytes);

}  // namespace decaf::io
