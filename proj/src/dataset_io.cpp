#include "decaf/dataset_io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string_view>
#include <system_error>
#include <utility>

#include "decaf/error.hpp"

namespace decaf::io {

namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  return out;
}

std::ifstream open_in(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read " + p.string());
  return in;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view field, const fs::path& file, std::size_t line) {
  while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
  while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r')) field.remove_suffix(1);
  T value{};
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) {
    throw ParseError(file.string(), line, "malformed number '" + std::string(field) + "'");
  }
  return value;
}

/// Lines with content, numbered from 1.
template <typename F>
void for_each_line(const fs::path& file, F&& body) {
  std::ifstream in = open_in(file);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    body(std::string_view(line), number);
  }
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw Error("format_double failed");
  return std::string(buf, ptr);
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string fingerprint(const graph::GraphData& g) {
  std::string bytes;
  auto append = [&](const void* p, std::size_t n) { bytes.append(static_cast<const char*>(p), n); };
  const std::size_t dims[3] = {g.node_count(), g.feature_dim(), g.numClasses};
  append(dims, sizeof dims);
  append(g.features.values().data(), g.features.values().size() * sizeof(double));
  append(g.labels.data(), g.labels.size() * sizeof(int));
  append(g.rowStarts.data(), g.rowStarts.size() * sizeof(std::size_t));
  append(g.columnIds.data(), g.columnIds.size() * sizeof(int));
  return fnv1a_hex(bytes);
}

void save_dataset(const graph::GraphData& g, const fs::path& dir, const nlohmann::json& provenance) {
  g.validate(false);
  fs::create_directories(dir);
  nlohmann::json meta;
  meta["format_version"] = 1;
  meta["n"] = g.node_count();
  meta["d"] = g.feature_dim();
  meta["k"] = g.numClasses;
  meta["provenance"] = provenance;
  open_out(dir / "meta.json") << meta.dump(2) << '\n';

  std::ofstream features = open_out(dir / "features.csv");
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    for (std::size_t j = 0; j < g.feature_dim(); ++j) {
      if (j > 0) features << ',';
      features << format_double(g.features(i, j));
    }
    features << '\n';
  }
  std::ofstream labels = open_out(dir / "labels.csv");
  for (int y : g.labels) labels << y << '\n';
  std::ofstream edges = open_out(dir / "edges.csv");
  for (const auto& [u, v] : g.edge_list()) edges << u << ',' << v << '\n';
}

nlohmann::json load_meta(const fs::path& dir) {
  std::ifstream in = open_in(dir / "meta.json");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError((dir / "meta.json").string(), 0, e.what());
  }
}

graph::GraphData load_dataset(const fs::path& dir) {
  const nlohmann::json meta = load_meta(dir);
  std::size_t n = 0, d = 0, k = 0;
  try {
    n = meta.at("n").get<std::size_t>();
    d = meta.at("d").get<std::size_t>();
    k = meta.at("k").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError((dir / "meta.json").string(), 0, e.what());
  }

  const fs::path featFile = dir / "features.csv";
  num::Matrix features(n, d);
  std::size_t row = 0;
  for_each_line(featFile, [&](std::string_view line, std::size_t number) {
    if (row >= n) throw ParseError(featFile.string(), number, "more rows than n = " + std::to_string(n));
    const auto fields = split_commas(line);
    if (fields.size() != d) {
      throw ParseError(featFile.string(), number, "expected " + std::to_string(d) + " columns, got " +
                                                      std::to_string(fields.size()));
    }
    for (std::size_t j = 0; j < d; ++j) features(row, j) = parse_number<double>(fields[j], featFile, number);
    ++row;
  });
  if (row != n) throw ParseError(featFile.string(), row, "expected " + std::to_string(n) + " rows");

  const fs::path labelFile = dir / "labels.csv";
  std::vector<int> labels;
  for_each_line(labelFile, [&](std::string_view line, std::size_t number) {
    const int y = parse_number<int>(line, labelFile, number);
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw ParseError(labelFile.string(), number, "label " + std::to_string(y) + " outside [0, " +
                                                       std::to_string(k) + ")");
    }
    labels.push_back(y);
  });
  if (labels.size() != n) throw ParseError(labelFile.string(), labels.size(), "expected " + std::to_string(n) + " labels");

  const fs::path edgeFile = dir / "edges.csv";
  std::set<std::pair<int, int>> forward, backward;
  std::size_t lastLine = 0;
  for_each_line(edgeFile, [&](std::string_view line, std::size_t number) {
    lastLine = number;
    const auto fields = split_commas(line);
    if (fields.size() != 2) throw ParseError(edgeFile.string(), number, "expected 'u,v'");
    const int u = parse_number<int>(fields[0], edgeFile, number);
    const int v = parse_number<int>(fields[1], edgeFile, number);
    if (u < 0 || v < 0 || static_cast<std::size_t>(u) >= n || static_cast<std::size_t>(v) >= n) {
      throw ParseError(edgeFile.string(), number, "node id out of range");
    }
    if (u == v) throw ParseError(edgeFile.string(), number, "self-loop");
    if (u < v) {
      forward.emplace(u, v);
    } else {
      backward.emplace(v, u);
    }
  });
  if (!backward.empty() && backward != forward) {
    throw ParseError(edgeFile.string(), lastLine, "asymmetric edge list: pairs listed in one direction only");
  }
  const std::vector<std::pair<int, int>> edges(forward.begin(), forward.end());
  graph::GraphData g = graph::GraphData::from_edges(std::move(features), std::move(labels), k, edges);
  g.validate(false);
  return g;
}

}  // namespace decaf::io
