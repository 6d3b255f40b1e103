#include "p2ssm/corruption.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "p2ssm/errors.hpp"

namespace p2ssm {

void CorruptionSpec::validate() const {
  if (!(noise_sigma_mm >= 0.0)) throw ValidationError("noise_sigma_mm must be >= 0");
  if (!(partial_fraction >= 0.0 && partial_fraction < 1.0)) {
    throw ValidationError("partial_fraction must lie in [0, 1)");
  }
  if (input_size_n < 1) throw ValidationError("input_size_n must be positive");
  if (train_subset_size && *train_subset_size < 1) throw ValidationError("train_subset_size must be positive");
}

PointCloud add_gaussian_noise(const PointCloud& cloud, double sigma_mm, Rng& rng) {
  if (!(sigma_mm >= 0.0)) throw ValidationError("noise sigma must be >= 0");
  PointCloud out = cloud;
  if (sigma_mm == 0.0) return out;
  std::normal_distribution<double> noise(0.0, sigma_mm);
  for (Eigen::Index i = 0; i < out.points.rows(); ++i) {
    for (int c = 0; c < 3; ++c) out.points(i, c) += noise(rng);
  }
  return out;
}

PointCloud remove_region(const PointCloud& cloud, double fraction, Rng& rng, std::vector<int>* removed_out) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ValidationError("region fraction must lie in [0, 1)");
  const Eigen::Index n = cloud.count();
  const auto remove = static_cast<Eigen::Index>(std::ceil(fraction * static_cast<double>(n)));
  if (removed_out) removed_out->clear();
  if (remove == 0) return cloud;

  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  const Eigen::Index seed = pick(rng);
  std::vector<int> removed{static_cast<int>(seed)};
  if (remove > 1) {
    // k = remove neighbours with the seed itself skipped, so duplicates of the
    // seed cannot push it out of the hole.
    const IndexMatrix nn = knn_indices(cloud.points.row(seed), cloud.points, static_cast<int>(remove), false);
    for (Eigen::Index j = 0; j < nn.cols() && static_cast<Eigen::Index>(removed.size()) < remove; ++j) {
      if (nn(0, j) != seed) removed.push_back(nn(0, j));
    }
  }
  std::vector<char> drop(static_cast<std::size_t>(n), 0);
  for (int r : removed) drop[static_cast<std::size_t>(r)] = 1;
  std::vector<int> keep;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!drop[static_cast<std::size_t>(i)]) keep.push_back(static_cast<int>(i));
  }
  if (removed_out) {
    *removed_out = removed;
    std::sort(removed_out->begin(), removed_out->end());
  }
  return PointCloud(select_rows(cloud.points, keep), cloud.normalized);
}

Cohort subset_training(const Cohort& cohort, std::size_t size, std::uint64_t seed) {
  auto train = cohort.indices_of(Split::train);
  if (size < 1 || size > train.size()) {
    throw ValidationError("training subset size " + std::to_string(size) + " exceeds the " +
                          std::to_string(train.size()) + " training shapes");
  }
  Rng rng(seed);
  std::shuffle(train.begin(), train.end(), rng);
  std::vector<char> keep(cohort.size(), 1);
  for (std::size_t i = size; i < train.size(); ++i) keep[train[i]] = 0;

  Cohort out;
  out.normalization = cohort.normalization;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    if (!keep[i]) continue;
    out.shapes.push_back(cohort.shapes[i]);
    out.splits.push_back(cohort.splits[i]);
  }
  return out;
}

std::vector<PointCloud> corrupt_inputs(const Cohort& cohort, const CorruptionSpec& spec) {
  spec.validate();
  std::vector<PointCloud> out;
  out.reserve(cohort.size());
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    Rng rng(spec.seed * 0x9E3779B97F4A7C15ULL + i);
    PointCloud c = add_gaussian_noise(cohort.shapes[i].cloud, spec.noise_sigma_mm, rng);
    c = remove_region(c, spec.partial_fraction, rng);
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace p2ssm
