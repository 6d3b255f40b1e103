#pragma once

#include <filesystem>
#include <utility>
#include <vector>

#include "p2ssm/geometry.hpp"

namespace p2ssm {

enum class ShapeFamily { ellipsoid, bumped_sphere };
const char* to_string(ShapeFamily f);
ShapeFamily parse_family(const std::string& s);

struct CohortSpec {
  ShapeFamily family = ShapeFamily::ellipsoid;
  int n_shapes = 60;
  int latent_dims = 3;
  // One [lo, hi] range per latent factor (mm). Empty = family defaults.
  std::vector<std::pair<double, double>> latent_ranges;
  int subdivisions = 3;  // icosphere level; 3 -> 642 vertices
  std::uint64_t seed = 0;
  double pose_jitter_deg = 0.0;       // random rotation angle bound
  double translation_jitter_mm = 0.0; // per-axis uniform bound

  void validate() const;
  std::vector<std::pair<double, double>> ranges() const;
};

// Unit icosphere with consistent vertex order for a given subdivision level.
TriangleMesh icosphere(int subdivisions);

struct SyntheticCohort {
  Cohort cohort;
  std::vector<std::vector<double>> latents;  // per shape
};

// Ellipsoid: latents are semi-axes (x, y, z); unused axes are fixed at the
// midpoint of their default range. Bumped sphere: latents are amplitudes of
// fixed Gaussian bumps on a sphere of radius 25 mm. Both families are affine
// in their latents and share one vertex layout across the cohort.
SyntheticCohort generate_cohort(const CohortSpec& spec);

// meshes/<id>.ply plus latents.csv under `dir`.
void write_cohort(const std::filesystem::path& dir, const SyntheticCohort& c);

}  // namespace p2ssm
