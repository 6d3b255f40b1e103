#pragma once

// Experiment configuration: one JSON document with dataset, preprocessing,
// corruption, model, train, evaluation and benchmark blocks. Parsing is
// strict: unknown keys and ill-typed values raise ConfigError naming the
// dot path of the offending key.

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "p2ssm/corruption.hpp"
#include "p2ssm/model.hpp"
#include "p2ssm/synthetic.hpp"
#include "p2ssm/training.hpp"

namespace p2ssm {

using Json = nlohmann::ordered_json;

struct DatasetConfig {
  std::optional<std::string> mesh_dir;  // directory of .ply/.obj meshes
  std::optional<CohortSpec> synthetic;  // used when mesh_dir is absent
  std::array<double, 3> split{0.8, 0.1, 0.1};
  std::uint64_t split_seed = 0;
};

struct PreprocessConfig {
  bool align = true;
  int icp_max_iters = 100;
  double icp_tol = 1e-12;
};

struct EvaluationConfig {
  std::vector<std::string> metrics{"cd", "emd", "p2f"};
  int specificity_samples = 1000;
  double variance_threshold = 0.95;
  int mode_walk_modes = 3;
  std::vector<double> mode_walk_steps{-2.0, -1.0, 0.0, 1.0, 2.0};
  bool export_maps = false;  // per-shape correspondence-map CSVs
  std::uint64_t seed = 0;
};

struct ModelVariant {
  std::string name;
  EncoderKind encoder = EncoderKind::dgcnn;
  HeadKind head = HeadKind::attn;
  BottleneckKind bottleneck = BottleneckKind::per_point;
  double alpha = 0.1;
};

// Grid axes. An empty axis means "use the base config value".
struct BenchmarkConfig {
  std::vector<ModelVariant> variants;
  std::vector<double> noise_sigma_mm;
  std::vector<double> partial_fraction;
  std::vector<std::optional<int>> train_subset_size;  // nullopt = all
  std::vector<int> input_size_n;
  std::vector<std::uint64_t> seeds;
  int workers = 1;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  PreprocessConfig preprocessing;
  CorruptionSpec corruption;  // input_size_n mirrors model.N
  ModelConfig model;
  TrainConfig train;
  EvaluationConfig evaluation;
  BenchmarkConfig benchmark;
  std::string output_dir = "runs/default";

  // Cross-block checks; throws ConfigError.
  void validate() const;
};

Json to_json(const ModelConfig& m);
ModelConfig model_config_from_json(const Json& j, const std::string& path = "model");
Json to_json(const ExperimentConfig& c);
ExperimentConfig config_from_json(const Json& j);

ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ExperimentConfig& c);

// "a.b.c=value"; value is parsed as JSON when possible, otherwise taken as a
// string. Intermediate objects are created as needed.
void apply_override(Json& doc, const std::string& assignment);

// Environment variable that, when set, roots relative output directories.
inline constexpr const char* kOutputRootEnv = "P2SSM_OUTPUT_ROOT";
std::filesystem::path resolve_output_dir(const ExperimentConfig& c);

}  // namespace p2ssm
