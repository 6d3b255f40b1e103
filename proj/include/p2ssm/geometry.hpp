#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace p2ssm {

template <typename T>
using PointsT = Eigen::Matrix<T, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Points = PointsT<double>;
using Faces = Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor>;
using IndexMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Rng = std::mt19937_64;

// Unordered 3D point set, in mm unless `normalized` is set.
struct PointCloud {
  Points points;
  bool normalized = false;

  PointCloud() = default;
  explicit PointCloud(Points p, bool is_normalized = false)
      : points(std::move(p)), normalized(is_normalized) {}

  Eigen::Index count() const { return points.rows(); }
  // Throws ValidationError on an empty cloud, a non-finite coordinate, or a
  // normalized cloud with a coordinate outside [-1, 1] (beyond `slack`).
  void validate(double slack = 1e-9) const;
};

struct TriangleMesh {
  Points vertices;
  Faces faces;

  Eigen::Index vertex_count() const { return vertices.rows(); }
  Eigen::Index face_count() const { return faces.rows(); }
  // Face indices in range, three distinct indices per face, finite vertices.
  void validate() const;
};

struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Points apply(const Points& p) const;
  RigidTransform then(const RigidTransform& next) const;  // next ∘ this
  RigidTransform inverse() const;
  double rotation_angle() const;  // radians
};

// Cohort-wide affine map into [-1, 1]: normalized = (p - center) * scale.
struct NormalizationParams {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double scale = 1.0;
};

enum class Split { train, val, test };
const char* split_name(Split s);
Split parse_split(const std::string& s);

struct Shape {
  std::string id;
  PointCloud cloud;                 // vertex cloud
  std::optional<TriangleMesh> mesh; // reference surface when available
};

struct Cohort {
  std::vector<Shape> shapes;
  std::vector<Split> splits;  // parallel to shapes once split
  std::optional<NormalizationParams> normalization;

  std::size_t size() const { return shapes.size(); }
  std::vector<std::size_t> indices_of(Split s) const;
};

PointCloud mesh_vertices_as_cloud(const TriangleMesh& mesh);

Eigen::Vector3d centroid(const Points& p);

// Point-to-point ICP. Each iteration matches every transformed source point to
// its nearest target point and solves the rigid update in closed form (Horn's
// unit-quaternion method). Starts from the centroid-aligning translation.
// Stops when the mean squared distance improves by less than `tol` or after
// `max_iters` iterations. Returns the map taking source into target.
RigidTransform icp_rigid_align(const PointCloud& source, const PointCloud& target,
                               int max_iters = 100, double tol = 1e-12);

// Horn's closed-form absolute orientation for paired points (src_i -> dst_i).
RigidTransform horn_rigid_fit(const Points& src, const Points& dst);

// Aligns every shape (and its mesh) to the shape whose vertex centroid is
// closest to the mean centroid of the cohort.
struct AlignmentReport {
  std::size_t reference_index = 0;
  std::vector<RigidTransform> transforms;
};
AlignmentReport align_cohort(Cohort& cohort, int max_iters = 100, double tol = 1e-12);

// Fits one center (bounding-box midpoint) and one scale over every shape of
// the cohort so all coordinates land in [-1, 1], then applies it.
NormalizationParams fit_normalization(const Cohort& cohort);
Cohort normalize_cohort(const Cohort& cohort, NormalizationParams* params_out = nullptr);

Points normalize_points(const Points& p, const NormalizationParams& params);
Points denormalize(const Points& p, const NormalizationParams& params);

std::vector<int> random_subsample_indices(Eigen::Index count, Eigen::Index n, Rng& rng);
PointCloud random_subsample(const PointCloud& cloud, Eigen::Index n, Rng& rng);

struct FpsResult {
  PointCloud cloud;
  std::vector<int> indices;
};
FpsResult farthest_point_sample(const PointCloud& cloud, Eigen::Index m, Eigen::Index start_index = 0);

// Row i holds the k reference indices nearest to query point i, ascending by
// distance, ties by lowest index. With `exclude_self`, query and reference
// must be the same set and index i is skipped on row i.
IndexMatrix knn_indices(const Points& query, const Points& reference, int k, bool exclude_self);

Points select_rows(const Points& p, const std::vector<int>& rows);

}  // namespace p2ssm
