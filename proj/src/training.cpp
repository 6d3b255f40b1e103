#include "p2ssm/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "p2ssm/errors.hpp"

namespace p2ssm {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ValidationError("train.LR must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ValidationError("train.beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ValidationError("train.beta2 must lie in [0, 1)");
  if (batch_size < 1) throw ValidationError("train.B must be >= 1");
  if (patience < 1) throw ValidationError("train.ES must be >= 1");
  if (max_epochs < 1) throw ValidationError("train.max_epochs must be >= 1");
  if (max_target_points < 1) throw ValidationError("train.max_target_points must be >= 1");
  if (!(loss.alpha >= 0.0)) throw ValidationError("train.alpha must be >= 0");
  if (loss.k_neighbors < 1) throw ValidationError("train.K must be >= 1");
}

Cohort split_cohort(const Cohort& cohort, const std::array<double, 3>& ratios, std::uint64_t seed) {
  const std::size_t n = cohort.size();
  if (n < 3) throw ValidationError("a cohort needs at least 3 shapes to split");
  for (double r : ratios) {
    if (!(r >= 0.0)) throw ValidationError("split ratios must be non-negative");
  }
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) throw ValidationError("split ratios must sum to 1");

  const auto count = [n](double r) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(n) * r)));
  };
  const std::size_t n_val = count(ratios[1]);
  const std::size_t n_test = count(ratios[2]);
  if (n_val + n_test >= n) throw ValidationError("split leaves no training shapes");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  Cohort out = cohort;
  out.splits.assign(n, Split::train);
  for (std::size_t i = 0; i < n_val; ++i) out.splits[order[i]] = Split::val;
  for (std::size_t i = n_val; i < n_val + n_test; ++i) out.splits[order[i]] = Split::test;
  return out;
}

Adam::Adam(const nn::ParamSet<float>& like, double lr, double beta1, double beta2, double eps)
    : m_(like.zeros_like()), v_(like.zeros_like()), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(nn::ParamSet<float>& params, const nn::ParamSet<float>& grads) {
  ++t_;
  const auto b1 = static_cast<float>(beta1_);
  const auto b2 = static_cast<float>(beta2_);
  const auto step = static_cast<float>(lr_ / (1.0 - std::pow(beta1_, static_cast<double>(t_))));
  const auto v_corr = static_cast<float>(1.0 / (1.0 - std::pow(beta2_, static_cast<double>(t_))));
  const auto eps = static_cast<float>(eps_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = m_[i];
    auto& v = v_[i];
    const auto& g = grads[i];
    m = b1 * m + (1.0f - b1) * g;
    v = b2 * v + ((1.0f - b2) * g.array().square()).matrix();
    params[i].array() -= step * m.array() / ((v.array() * v_corr).sqrt() + eps);
  }
}

PointsT<float> evaluation_input(const PointCloud& cloud, int n_input) {
  if (cloud.count() <= n_input) return cloud.points.cast<float>();
  return farthest_point_sample(cloud, n_input, 0).cloud.points.cast<float>();
}

double validate(const Network<float>& net, const ShapeSet& shapes) {
  if (shapes.size() == 0) throw ValidationError("validation set is empty");
  double total = 0.0;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto out = net.forward(evaluation_input(shapes.inputs[i], net.config().n_input));
    total += static_cast<double>(chamfer_distance<float>(out.points, shapes.targets[i].points.cast<float>()));
  }
  return total / static_cast<double>(shapes.size());
}

double validate(const ModelParams& params, const ShapeSet& shapes) {
  const Network<float> net(params);
  return validate(net, shapes);
}

bool early_stop(int epoch, int best_epoch, int patience) { return epoch - best_epoch >= patience; }

namespace {

PointsT<float> capped_target(const PointCloud& full, int cap) {
  if (full.count() <= cap) return full.points.cast<float>();
  return farthest_point_sample(full, cap, 0).cloud.points.cast<float>();
}

}  // namespace

TrainResult train(const ModelConfig& model_config, const TrainConfig& cfg, const ShapeSet& train_set,
                  const ShapeSet& val_set, const EpochCallback& on_epoch) {
  model_config.validate();
  cfg.validate();
  if (train_set.size() == 0) throw ValidationError("training set is empty");
  if (val_set.size() == 0) throw ValidationError("validation set is empty");
  if (cfg.loss.alpha > 0.0) cfg.loss.validate(model_config.m_output);
  for (const auto& c : train_set.inputs) {
    if (c.count() < model_config.n_input) {
      throw ValidationError("a training input has " + std::to_string(c.count()) + " points, fewer than N=" +
                            std::to_string(model_config.n_input));
    }
  }

  Network<float> net(init_params(model_config));
  nn::ParamSet<float> grads = net.params().zeros_like();
  Adam adam(net.params(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);

  std::vector<PointsT<float>> targets;
  targets.reserve(train_set.size());
  for (const auto& t : train_set.targets) targets.push_back(capped_target(t, cfg.max_target_points));
  ShapeSet val_capped = val_set;
  for (auto& t : val_capped.targets) t = PointCloud(capped_target(t, cfg.max_target_points).cast<double>(), true);

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  result.best_val_cd = std::numeric_limits<double>::infinity();
  const auto batch = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    int batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += batch, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + batch);
      const std::size_t b = end - start;
      std::vector<typename Network<float>::Cache> caches(b);
      std::vector<PointsT<float>> outputs(b), fulls(b);
      for (std::size_t s = 0; s < b; ++s) {
        const std::size_t id = order[start + s];
        const PointCloud input = random_subsample(train_set.inputs[id], model_config.n_input, rng);
        outputs[s] = net.forward(input.points.cast<float>(), &caches[s]).points;
        fulls[s] = targets[id];
      }
      std::vector<PointsT<float>> d_outputs;
      const auto loss = point2ssm_loss<float>(outputs, fulls, cfg.loss, &d_outputs);
      if (!std::isfinite(loss.total)) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << ", batch " << batch_index << " (total=" << loss.total
            << ", cd=" << loss.chamfer << ", me=" << loss.mapping << ")";
        throw NumericalError(msg.str());
      }
      grads.set_zero();
      for (std::size_t s = 0; s < b; ++s) net.backward(caches[s], d_outputs[s], grads);
      adam.step(net.params(), grads);
      loss_sum += static_cast<double>(loss.total) * static_cast<double>(b);
      seen += b;
    }

    HistoryRow row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(seen);
    row.val_cd = validate(net, val_capped);
    if (!std::isfinite(row.val_cd)) {
      throw NumericalError("non-finite validation CD at epoch " + std::to_string(epoch));
    }
    if (row.val_cd < result.best_val_cd) {
      result.best_val_cd = row.val_cd;
      result.best_epoch = epoch;
      result.best = net.export_params();
    }
    result.history.push_back(row);
    result.epochs_run = epoch;
    if (on_epoch) on_epoch(row);
    if (early_stop(epoch, result.best_epoch, cfg.patience)) break;
  }
  result.best.init_seed = model_config.seed;
  return result;
}

void write_history_csv(const std::filesystem::path& path, const std::vector<HistoryRow>& history) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "epoch,train_loss,val_cd\n" << std::setprecision(9);
  for (const auto& r : history) out << r.epoch << ',' << r.train_loss << ',' << r.val_cd << '\n';
}

InferenceResult infer(const Network<float>& net, const PointCloud& cloud_mm, const NormalizationParams& norm) {
  cloud_mm.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const PointCloud normalized(normalize_points(cloud_mm.points, norm), true);
  const auto out = net.forward(evaluation_input(normalized, net.config().n_input));
  InferenceResult r;
  r.points = denormalize(out.points.cast<double>(), norm);
  r.map = out.map.cast<double>();
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace p2ssm
