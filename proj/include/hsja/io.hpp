#pragma once

// File formats: ModelFile JSON (MLP / tree ensemble), prediction fixtures,
// and sample vectors as JSON arrays or single-row CSV.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hsja/core.hpp"
#include "hsja/oracle.hpp"

namespace hsja {

inline constexpr int kModelFileSchemaVersion = 1;

namespace detail {

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <class F>
auto with_field(const std::string& field, F&& fn) {
  try {
    return fn();
  } catch (const nlohmann::json::exception& e) {
    throw ModelLoadError(field + ": " + e.what());
  }
}

inline const nlohmann::json& require(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ModelLoadError(where + key + ": missing field");
  return j.at(key);
}

inline std::vector<double> real_array(const nlohmann::json& j, const std::string& field) {
  if (!j.is_array()) throw ModelLoadError(field + ": expected an array of numbers");
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number()) throw ModelLoadError(field + ": expected an array of numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

inline std::shared_ptr<MlpModel> parse_mlp(const nlohmann::json& j) {
  const auto dim = with_field("input_dim", [&] { return require(j, "input_dim", "").get<std::size_t>(); });
  const auto classes = with_field("n_classes", [&] { return require(j, "n_classes", "").get<int>(); });
  const auto& layers_json = require(j, "layers", "");
  if (!layers_json.is_array()) throw ModelLoadError("layers: expected an array");
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l < layers_json.size(); ++l) {
    const auto where = "layers[" + std::to_string(l) + "].";
    const auto& lj = layers_json[l];
    DenseLayer layer;
    const auto& rows = require(lj, "weights", where);
    if (!rows.is_array() || rows.empty()) throw ModelLoadError(where + "weights: expected a non-empty matrix");
    layer.out = rows.size();
    for (std::size_t r = 0; r < rows.size(); ++r) {
      auto row = real_array(rows[r], where + "weights[" + std::to_string(r) + "]");
      if (r == 0) layer.in = row.size();
      if (row.size() != layer.in) throw ModelLoadError(where + "weights: ragged matrix at row " + std::to_string(r));
      layer.weights.insert(layer.weights.end(), row.begin(), row.end());
    }
    layer.bias = real_array(require(lj, "bias", where), where + "bias");
    const auto& act = require(lj, "activation", where);
    if (act == "relu")
      layer.activation = Activation::Relu;
    else if (act == "identity")
      layer.activation = Activation::Identity;
    else
      throw ModelLoadError(where + "activation: unknown activation " + act.dump());
    layers.push_back(std::move(layer));
  }
  return std::make_shared<MlpModel>(dim, classes, std::move(layers));
}

inline std::shared_ptr<TreeEnsembleModel> parse_tree_ensemble(const nlohmann::json& j) {
  const auto dim = with_field("input_dim", [&] { return require(j, "input_dim", "").get<std::size_t>(); });
  const auto classes = with_field("n_classes", [&] { return require(j, "n_classes", "").get<int>(); });
  std::optional<double> threshold;
  if (j.contains("binarize_threshold") && !j.at("binarize_threshold").is_null()) {
    if (!j.at("binarize_threshold").is_number()) throw ModelLoadError("binarize_threshold: expected a number or null");
    threshold = j.at("binarize_threshold").get<double>();
  }
  const auto& trees_json = require(j, "trees", "");
  if (!trees_json.is_array()) throw ModelLoadError("trees: expected an array");
  std::vector<Tree> trees;
  for (std::size_t t = 0; t < trees_json.size(); ++t) {
    const auto where = "trees[" + std::to_string(t) + "].";
    const auto& nodes_json = require(trees_json[t], "nodes", where);
    if (!nodes_json.is_array()) throw ModelLoadError(where + "nodes: expected an array");
    Tree tree;
    for (std::size_t n = 0; n < nodes_json.size(); ++n) {
      const auto& nj = nodes_json[n];
      const auto here = where + "nodes[" + std::to_string(n) + "]";
      tree.nodes.push_back(with_field(here, [&]() -> TreeNode {
        if (nj.contains("leaf")) return TreeLeaf{nj.at("leaf").get<int>()};
        const auto left = nj.at("left").get<long long>();
        const auto right = nj.at("right").get<long long>();
        const auto feature = nj.at("feature").get<long long>();
        if (left < 0 || right < 0) throw ModelLoadError(here + ": dangling child index");
        if (feature < 0) throw ModelLoadError(here + ".feature: index out of range");
        return TreeSplit{static_cast<std::size_t>(feature), nj.at("threshold").get<double>(),
                         static_cast<std::size_t>(left), static_cast<std::size_t>(right)};
      }));
    }
    trees.push_back(std::move(tree));
  }
  return std::make_shared<TreeEnsembleModel>(dim, classes, threshold, std::move(trees));
}

}  // namespace detail

inline ClassifierPtr parse_model(const nlohmann::json& j) {
  if (!j.is_object()) throw ModelLoadError("model: expected a JSON object");
  const auto& type = detail::require(j, "type", "");
  if (type == "mlp") return detail::parse_mlp(j);
  if (type == "tree_ensemble") return detail::parse_tree_ensemble(j);
  throw ModelLoadError("type: unknown model type " + type.dump());
}

inline ClassifierPtr load_model(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ModelLoadError(path.string() + ": " + e.what());
  } catch (const std::runtime_error& e) {
    throw ModelLoadError(e.what());
  }
  return parse_model(j);
}

// -------------------------------------------------------------------------
// Fixtures: { "inputs": [[...], ...], "labels": [int, ...] }

struct Fixtures {
  std::vector<Sample> inputs;
  std::vector<int> labels;
};

inline Fixtures load_fixtures(const std::filesystem::path& path) {
  const auto j = nlohmann::json::parse(detail::read_text(path));
  Fixtures f;
  const auto& inputs = detail::require(j, "inputs", "");
  const auto& labels = detail::require(j, "labels", "");
  for (std::size_t i = 0; i < inputs.size(); ++i)
    f.inputs.push_back(detail::real_array(inputs[i], "inputs[" + std::to_string(i) + "]"));
  f.labels = labels.get<std::vector<int>>();
  if (f.inputs.size() != f.labels.size()) throw ModelLoadError("fixtures: inputs and labels differ in length");
  return f;
}

/// "<name>.model.json" -> "<name>.fixtures.json"; otherwise "<path>.fixtures.json".
inline std::filesystem::path fixtures_path_for(const std::filesystem::path& model_path) {
  const std::string s = model_path.string();
  const std::string suffix = ".model.json";
  if (s.size() > suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0)
    return s.substr(0, s.size() - suffix.size()) + ".fixtures.json";
  if (model_path.extension() == ".json") {
    auto p = model_path;
    return p.replace_extension(".fixtures.json");
  }
  return s + ".fixtures.json";
}

struct FixtureCheck {
  std::size_t total = 0;
  std::size_t matched = 0;
  std::size_t mismatches() const { return total - matched; }
};

inline FixtureCheck check_fixtures(const Classifier& model, const Fixtures& fixtures) {
  FixtureCheck r;
  r.total = fixtures.inputs.size();
  for (std::size_t i = 0; i < r.total; ++i)
    if (model.classify(fixtures.inputs[i]) == fixtures.labels[i]) ++r.matched;
  return r;
}

// -------------------------------------------------------------------------
// Samples

inline Sample parse_sample_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  return detail::real_array(j, "sample");
}

inline Sample parse_sample_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Sample out;
    std::istringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) {
      try {
        std::size_t used = 0;
        out.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw InvalidInput("sample csv: cannot parse '" + cell + "' as a number");
      }
    }
    return out;
  }
  throw InvalidInput("sample csv: no data row");
}

/// Reads a sample; ".csv" files are parsed as CSV, anything else as JSON.
inline Sample read_sample(const std::filesystem::path& path) {
  const auto text = detail::read_text(path);
  try {
    return path.extension() == ".csv" ? parse_sample_csv(text) : parse_sample_json(text);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
}

inline void write_sample(const std::filesystem::path& path, ConstVec x) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  if (path.extension() == ".csv") {
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (i) out << ',';
      out << nlohmann::json(x[i]).dump();
    }
    out << '\n';
  } else {
    out << nlohmann::json(std::vector<double>(x.begin(), x.end())).dump() << '\n';
  }
}

}  // namespace hsja
