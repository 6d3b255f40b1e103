#pragma once

#include <filesystem>
#include <vector>

#include "p2ssm/geometry.hpp"

namespace p2ssm {

// Linear shape model over flattened 3M-vectors [x0 y0 z0 x1 ...].
struct PCAModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd eigenvectors;  // 3M x k, orthonormal columns
  Eigen::VectorXd eigenvalues;   // k, non-increasing, > 0
  int n_train = 0;

  Eigen::Index dim() const { return mean.size(); }
  Eigen::Index modes() const { return eigenvalues.size(); }
  double total_variance() const { return eigenvalues.sum(); }
};

Eigen::VectorXd flatten(const Points& p);
Points unflatten(const Eigen::VectorXd& v);

// Sample covariance (divisor n-1), eigenvalues below 1e-12 x the largest (or
// at coordinate rounding level) dropped. Uses the n x n Gram matrix when n < 3M.
PCAModel fit_pca(const std::vector<Points>& train_sets);

struct Compactness {
  int modes = 0;                   // smallest k reaching the threshold
  std::vector<double> cumulative;  // cumulative variance fraction per mode
};
Compactness compactness(const PCAModel& pca, double threshold = 0.95);

// Number of leading modes retained at `threshold` (at least 0).
int retained_modes(const PCAModel& pca, double threshold);

struct Generalization {
  std::vector<double> squared_errors;    // |C - C_hat|^2 over the flattened set
  std::vector<double> point_errors;      // mean per-point Euclidean error
  double mean_squared = 0.0;
  double mean_point = 0.0;
};
Generalization generalization(const PCAModel& pca, const std::vector<Points>& test_sets, double threshold = 0.95);

// Projection onto the retained modes.
Eigen::VectorXd reconstruct(const PCAModel& pca, const Eigen::VectorXd& x, int modes);

struct Specificity {
  double mean = 0.0;            // mean over samples of min_train |C' - C|^2
  double standard_error = 0.0;  // Monte Carlo standard error of the mean
};
Specificity specificity(const PCAModel& pca, const std::vector<Points>& train_sets, int n_samples,
                        double threshold, Rng& rng);

Points mean_shape(const PCAModel& pca);

struct ModeWalk {
  int mode = 0;
  std::vector<double> steps;  // in standard deviations
  std::vector<Points> positions;
};
ModeWalk mode_walk(const PCAModel& pca, int mode, const std::vector<double>& steps);

// Versioned binary container and a JSON summary next to it.
void save_pca(const std::filesystem::path& path, const PCAModel& pca);
PCAModel load_pca(const std::filesystem::path& path);
void save_pca_summary(const std::filesystem::path& path, const PCAModel& pca, double threshold);
void write_compactness_csv(const std::filesystem::path& path, const Compactness& c);

}  // namespace p2ssm
