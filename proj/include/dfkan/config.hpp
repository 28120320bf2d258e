#pragma once

#include "dfkan/datasets.hpp"
#include "dfkan/model.hpp"
#include "dfkan/optim.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace dfkan {

using Json = nlohmann::json;

// Where the rows come from: a named generator or a delimited file.
struct DataConfig {
  std::string generator;  // empty when `path` is set
  long long n = 5000;
  double noise = 0.0;
  bool relative_noise = false;
  std::string path;
  std::string target;
  char delimiter = ',';
  bool standardize = false;
  double train_frac = 0.70;
  double val_frac = 0.15;
  double test_frac = 0.15;

  bool operator==(const DataConfig&) const = default;
};

// Shorthand for a whole model; input width comes from the dataset.
struct PresetConfig {
  std::string kind;  // mlp | vanilla_kan | hybrid
  std::vector<int> hidden;
  FixedFn activation = FixedFn::Tanh;
  int order = 6;
  int spline_order = 3;
  int grid = 5;

  bool operator==(const PresetConfig&) const = default;
};

struct RunConfig {
  std::string name = "run";
  std::uint64_t seed = 0;
  DataConfig data;
  std::optional<PresetConfig> preset;
  ModelConfig model;  // resolved layers (filled from the preset when one is given)
  TrainConfig train;
};

// Errors carry the JSON path of the offending field, or the line and column
// for syntax errors.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

// Fills model.layers from the preset using the dataset width; no-op for
// explicit layer lists. Seeds model and train from the run seed.
void resolve(RunConfig& cfg, int n_features);

Json to_json(const BasisSpec& b);
Json to_json(const RegConfig& r);
Json to_json(const LayerConfig& l);
Json to_json(const ModelConfig& m);
Json to_json(const TrainConfig& t);
Json to_json(const DataConfig& d);
Json to_json(const PresetConfig& p);
Json to_json(const RunConfig& c);

BasisSpec basis_from_json(const Json& j, const std::string& where);
LayerConfig layer_from_json(const Json& j, const RegConfig& default_reg, const std::string& where);
ModelConfig model_from_json(const Json& j, const std::string& where);

// Canonical text: compact JSON with sorted keys over the resolved config.
std::string canonical_text(const RunConfig& c);
std::uint64_t fnv1a64(const std::string& text);
std::uint64_t config_hash(const RunConfig& c);
std::string hex64(std::uint64_t v);
std::string run_id(const RunConfig& c);

Dataset load_dataset(const DataConfig& d, std::uint64_t seed);

// Binary checkpoint: 16-byte magic, u64 config hash, u64 parameter count,
// parameters as little-endian doubles in walk order, then buffers (batch-norm
// running statistics, normalizers) with their own count prefix.
void save_checkpoint(const std::string& path, Model& model, std::uint64_t hash);
// Loads into a model built from the matching config; throws ConfigError on a
// hash or size mismatch.
void load_checkpoint(const std::string& path, Model& model, std::uint64_t hash);

}  // namespace dfkan
