#pragma once

#include <optional>

#include "p2ssm/geometry.hpp"

namespace p2ssm {

struct CorruptionSpec {
  double noise_sigma_mm = 0.0;
  double partial_fraction = 0.0;
  int input_size_n = 1024;
  std::optional<int> train_subset_size;  // nullopt = all
  std::uint64_t seed = 0;

  void validate() const;
};

// Independent zero-mean Gaussian noise on every coordinate. Applied in mm,
// before normalization.
PointCloud add_gaussian_noise(const PointCloud& cloud, double sigma_mm, Rng& rng);

// Draws a seed point uniformly and removes it together with its
// ceil(fraction * count) - 1 nearest neighbours. Returns the kept points in
// their original order. `removed_out` receives the removed indices.
PointCloud remove_region(const PointCloud& cloud, double fraction, Rng& rng,
                         std::vector<int>* removed_out = nullptr);

// Keeps `size` training shapes. For a fixed seed the subsets are nested: one
// seeded permutation of the train ids is drawn and its first `size` entries
// are kept. Val/test are untouched.
Cohort subset_training(const Cohort& cohort, std::size_t size, std::uint64_t seed);

// Applies noise then region removal to every shape's vertex cloud, each shape
// with its own generator derived from (seed, shape index).
std::vector<PointCloud> corrupt_inputs(const Cohort& cohort, const CorruptionSpec& spec);

}  // namespace p2ssm
