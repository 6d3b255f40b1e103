#pragma once

// The CLI commands as library functions. Every command is a function of
// (config, input files, seeds) and writes its artifacts plus a config echo
// under the resolved output directory:
//
//   preprocessed/  aligned meshes (mm), splits.csv, normalization.json
//   corrupted/     corrupted input clouds (mm), subset.csv
//   train/         checkpoint.bin, history.csv, summary.json
//   evaluate/      metrics.csv, summary.json, correspondences/<split>/*.particles
//   analyze/       compactness.csv, pca.bin, pca.json, stats.json, mean.particles, modes/
//   benchmark/     report.csv, runs/<cell>/

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "p2ssm/checkpoint.hpp"
#include "p2ssm/config.hpp"
#include "p2ssm/ssm_stats.hpp"

namespace p2ssm {

struct RunOptions {
  std::ostream* log = nullptr;
  int log_every = 10;  // epochs between progress lines
};

// Loads mesh_dir (sorted by file name) or generates the synthetic cohort.
// Meshes are in mm; no alignment or split yet.
Cohort build_cohort(const ExperimentConfig& cfg);

// Alignment, split and normalization fit; meshes stay in mm and the fitted
// parameters are attached to the cohort.
Cohort preprocess_cohort(const ExperimentConfig& cfg, AlignmentReport* report = nullptr);

void save_preprocessed(const std::filesystem::path& dir, const Cohort& cohort);
Cohort load_preprocessed(const std::filesystem::path& dir);

// Network-ready data for one experiment cell. Corruption is drawn once per
// shape on the full cohort (so a shape is corrupted identically whatever the
// training subset), then the training subset is applied.
struct PreparedData {
  Cohort cohort;                   // mm, after subsetting
  NormalizationParams norm;
  std::vector<PointCloud> inputs;  // normalized, possibly corrupted
  std::vector<PointCloud> targets; // normalized clean vertex clouds

  ShapeSet shape_set(Split s) const;
};
PreparedData prepare_data(const Cohort& preprocessed, const ExperimentConfig& cfg);

struct ShapeEvaluation {
  std::string id;
  Split split = Split::test;
  Points correspondences;  // mm
  nn::Mat<double> map;
  std::optional<double> cd_mm2, emd_mm, p2f_mean_mm, p2f_max_mm;
};

struct EvaluationResult {
  std::vector<ShapeEvaluation> shapes;  // every split; metrics on test only
  double mean_cd_mm2 = 0.0, mean_emd_mm = 0.0, mean_p2f_mm = 0.0;
  int n_test = 0;
};
EvaluationResult evaluate_model(const Network<float>& net, const PreparedData& data, const EvaluationConfig& ecfg);

struct AnalysisResult {
  PCAModel pca;
  Compactness compactness;
  Generalization generalization;
  Specificity specificity;
};
AnalysisResult analyze_sets(const std::vector<Points>& train_sets, const std::vector<Points>& test_sets,
                            const EvaluationConfig& ecfg);

// Commands.
Cohort cmd_preprocess(const ExperimentConfig& cfg, const RunOptions& opts = {});
void cmd_corrupt(const ExperimentConfig& cfg, const RunOptions& opts = {});
TrainResult cmd_train(const ExperimentConfig& cfg, const RunOptions& opts = {});
void cmd_infer(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint,
               const std::vector<std::filesystem::path>& inputs, const std::filesystem::path& out_dir,
               const RunOptions& opts = {});
EvaluationResult cmd_evaluate(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& checkpoint,
                              const RunOptions& opts = {});
AnalysisResult cmd_analyze(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& correspondences,
                           const RunOptions& opts = {});

struct BenchmarkRow {
  std::string cell;
  ModelVariant variant;
  int input_size_n = 0;
  double noise_sigma_mm = 0.0;
  double partial_fraction = 0.0;
  std::optional<int> train_subset_size;
  std::uint64_t seed = 0;
  std::string status = "ok";  // ok | numerical_abort
  std::string message;
  int epochs_run = 0, best_epoch = 0;
  double best_val_cd = 0.0;
  double test_cd_mm2 = 0.0, test_emd_mm = 0.0, test_p2f_mm = 0.0;
  int compactness = 0;
  double generalization_mm2 = 0.0, specificity_mm2 = 0.0;
  double mapping_error = 0.0;  // mean pairwise ME of test outputs (normalized units)
};

// Runs the full grid; cells that abort on non-finite values are reported with
// status numerical_abort and do not stop the rest of the grid.
std::vector<BenchmarkRow> cmd_benchmark(const ExperimentConfig& cfg, const RunOptions& opts = {});
void write_benchmark_report(const std::filesystem::path& path, const std::vector<BenchmarkRow>& rows);

}  // namespace p2ssm
