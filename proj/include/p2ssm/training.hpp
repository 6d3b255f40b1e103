#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "p2ssm/losses.hpp"
#include "p2ssm/model.hpp"

namespace p2ssm {

struct TrainConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 8;
  int patience = 100;
  int max_epochs = 5000;
  int max_target_points = 5000;  // FPS cap on the Chamfer targets
  LossConfig loss;
  std::uint64_t seed = 0;

  void validate() const;
};

// Normalized shapes handed to the optimizer: network input clouds (possibly
// corrupted) and the complete clouds S they should reconstruct.
struct ShapeSet {
  std::vector<std::string> ids;
  std::vector<PointCloud> inputs;
  std::vector<PointCloud> targets;

  std::size_t size() const { return ids.size(); }
};

// Random partition into train/val/test by `ratios` (summing to 1). Val and
// test get round(n * ratio) shapes but at least one each; train gets the rest.
Cohort split_cohort(const Cohort& cohort, const std::array<double, 3>& ratios, std::uint64_t seed);

struct HistoryRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_cd = 0.0;
};

struct TrainResult {
  ModelParams best;
  double best_val_cd = 0.0;
  int best_epoch = 0;
  int epochs_run = 0;
  std::vector<HistoryRow> history;
};

class Adam {
 public:
  Adam(const nn::ParamSet<float>& like, double lr, double beta1, double beta2, double eps);
  void step(nn::ParamSet<float>& params, const nn::ParamSet<float>& grads);
  long steps() const { return t_; }

 private:
  nn::ParamSet<float> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

// Deterministic network input for evaluation: FPS (start 0) down to N points,
// or the whole cloud when it already has at most N points.
PointsT<float> evaluation_input(const PointCloud& cloud, int n_input);

// Mean CD (normalized units) of the network on deterministic inputs.
double validate(const Network<float>& net, const ShapeSet& shapes);
double validate(const ModelParams& params, const ShapeSet& shapes);

using EpochCallback = std::function<void(const HistoryRow&)>;

// Adam on the batch objective with per-iteration random input resampling and
// early stopping on validation CD. Returns the best-validation parameters.
// Throws NumericalError on a non-finite loss.
TrainResult train(const ModelConfig& model_config, const TrainConfig& train_config, const ShapeSet& train_set,
                  const ShapeSet& val_set, const EpochCallback& on_epoch = {});

// Whether training should stop after an epoch given the best epoch so far.
bool early_stop(int epoch, int best_epoch, int patience);

void write_history_csv(const std::filesystem::path& path, const std::vector<HistoryRow>& history);

struct InferenceResult {
  Points points;  // M x 3, mm
  nn::Mat<double> map;
  double seconds = 0.0;
};

// Normalizes a raw (mm) cloud with the cohort parameters, runs one forward
// pass and maps the correspondences back to mm.
InferenceResult infer(const Network<float>& net, const PointCloud& cloud_mm, const NormalizationParams& norm);

}  // namespace p2ssm
