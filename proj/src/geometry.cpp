#include "p2ssm/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "p2ssm/errors.hpp"
#include "p2ssm/kernels.hpp"

namespace p2ssm {

void PointCloud::validate(double slack) const {
  if (points.rows() < 1) throw ValidationError("point cloud is empty");
  if (!points.allFinite()) throw ValidationError("point cloud has a non-finite coordinate");
  if (normalized && points.cwiseAbs().maxCoeff() > 1.0 + slack) {
    throw ValidationError("normalized point cloud has a coordinate outside [-1, 1]");
  }
}

void TriangleMesh::validate() const {
  if (!vertices.allFinite()) throw ValidationError("mesh has a non-finite vertex");
  const int n = static_cast<int>(vertices.rows());
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    const int a = faces(f, 0), b = faces(f, 1), c = faces(f, 2);
    for (int v : {a, b, c}) {
      if (v < 0 || v >= n) {
        throw ValidationError("face " + std::to_string(f) + " references vertex " + std::to_string(v) +
                              " but the mesh has " + std::to_string(n) + " vertices");
      }
    }
    if (a == b || b == c || a == c) {
      throw ValidationError("face " + std::to_string(f) + " is degenerate (repeated vertex index)");
    }
  }
}

Points RigidTransform::apply(const Points& p) const {
  Points out = p * rotation.transpose();
  out.rowwise() += translation.transpose();
  return out;
}

RigidTransform RigidTransform::then(const RigidTransform& next) const {
  RigidTransform r;
  r.rotation = next.rotation * rotation;
  r.translation = next.rotation * translation + next.translation;
  return r;
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform r;
  r.rotation = rotation.transpose();
  r.translation = -(r.rotation * translation);
  return r;
}

double RigidTransform::rotation_angle() const {
  const double c = std::clamp((rotation.trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c);
}

const char* split_name(Split s) {
  switch (s) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ValidationError("unknown split label: " + s);
}

std::vector<std::size_t> Cohort::indices_of(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    if (splits[i] == s) out.push_back(i);
  }
  return out;
}

PointCloud mesh_vertices_as_cloud(const TriangleMesh& mesh) { return PointCloud(mesh.vertices); }

Eigen::Vector3d centroid(const Points& p) { return p.colwise().mean().transpose(); }

RigidTransform horn_rigid_fit(const Points& src, const Points& dst) {
  const Eigen::Vector3d cs = centroid(src);
  const Eigen::Vector3d cd = centroid(dst);
  const Eigen::Matrix3d s = (src.rowwise() - cs.transpose()).transpose() * (dst.rowwise() - cd.transpose());

  const double sxx = s(0, 0), sxy = s(0, 1), sxz = s(0, 2);
  const double syx = s(1, 0), syy = s(1, 1), syz = s(1, 2);
  const double szx = s(2, 0), szy = s(2, 1), szz = s(2, 2);
  Eigen::Matrix4d n;
  n << sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,  //
      syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,    //
      szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,   //
      sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(n);
  const Eigen::Vector4d q = eig.eigenvectors().col(3);
  const Eigen::Quaterniond quat(q(0), q(1), q(2), q(3));

  RigidTransform t;
  t.rotation = quat.normalized().toRotationMatrix();
  t.translation = cd - t.rotation * cs;
  return t;
}

RigidTransform icp_rigid_align(const PointCloud& source, const PointCloud& target, int max_iters, double tol) {
  source.validate();
  target.validate();
  if (max_iters < 1) throw ValidationError("icp max_iters must be >= 1");

  const Points centered = source.points.rowwise() - centroid(source.points).transpose();
  Eigen::JacobiSVD<Points> svd(centered);
  const auto sv = svd.singularValues();
  if (sv(0) <= 1e-12 || sv(1) <= 1e-9 * sv(0)) {
    throw IllConditionedError("icp source is degenerate (coincident or collinear points)");
  }

  const auto& k = kernels::active<double>();
  const auto tgt = kernels::SoaPoints<double>::from_rows(target.points);

  RigidTransform current;
  current.translation = centroid(target.points) - centroid(source.points);
  double prev = std::numeric_limits<double>::infinity();
  Points matched(source.count(), 3);
  for (int it = 0; it < max_iters; ++it) {
    const Points moved = current.apply(source.points);
    double mse = 0.0;
    for (Eigen::Index i = 0; i < moved.rows(); ++i) {
      const double q[3] = {moved(i, 0), moved(i, 1), moved(i, 2)};
      const auto nn = k.nearest(tgt.view(), q);
      matched.row(i) = target.points.row(static_cast<Eigen::Index>(nn.index));
      mse += nn.dist2;
    }
    mse /= static_cast<double>(moved.rows());
    if (prev - mse < tol) break;
    prev = mse;
    current = horn_rigid_fit(source.points, matched);
  }
  return current;
}

AlignmentReport align_cohort(Cohort& cohort, int max_iters, double tol) {
  if (cohort.shapes.empty()) throw ValidationError("cannot align an empty cohort");
  std::vector<Eigen::Vector3d> centroids;
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& s : cohort.shapes) {
    centroids.push_back(centroid(s.cloud.points));
    mean += centroids.back();
  }
  mean /= static_cast<double>(centroids.size());

  AlignmentReport report;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < centroids.size(); ++i) {
    const double d = (centroids[i] - mean).squaredNorm();
    if (d < best) {
      best = d;
      report.reference_index = i;
    }
  }

  const PointCloud reference = cohort.shapes[report.reference_index].cloud;
  for (std::size_t i = 0; i < cohort.shapes.size(); ++i) {
    auto& shape = cohort.shapes[i];
    RigidTransform t;
    if (i != report.reference_index) t = icp_rigid_align(shape.cloud, reference, max_iters, tol);
    shape.cloud.points = t.apply(shape.cloud.points);
    if (shape.mesh) shape.mesh->vertices = t.apply(shape.mesh->vertices);
    report.transforms.push_back(t);
  }
  return report;
}

NormalizationParams fit_normalization(const Cohort& cohort) {
  if (cohort.shapes.empty()) throw ValidationError("cannot normalize an empty cohort");
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = -lo;
  for (const auto& s : cohort.shapes) {
    s.cloud.validate();
    lo = lo.cwiseMin(s.cloud.points.colwise().minCoeff().transpose());
    hi = hi.cwiseMax(s.cloud.points.colwise().maxCoeff().transpose());
  }
  NormalizationParams params;
  params.center = 0.5 * (lo + hi);
  const double extent = (hi - params.center).maxCoeff();
  params.scale = extent > 0.0 ? 1.0 / extent : 1.0;
  return params;
}

Points normalize_points(const Points& p, const NormalizationParams& params) {
  Points out = p.rowwise() - params.center.transpose();
  out *= params.scale;
  return out;
}

Points denormalize(const Points& p, const NormalizationParams& params) {
  Points out = p / params.scale;
  out.rowwise() += params.center.transpose();
  return out;
}

Cohort normalize_cohort(const Cohort& cohort, NormalizationParams* params_out) {
  const NormalizationParams params = fit_normalization(cohort);
  Cohort out = cohort;
  for (auto& s : out.shapes) {
    s.cloud.points = normalize_points(s.cloud.points, params);
    s.cloud.points = s.cloud.points.cwiseMax(-1.0).cwiseMin(1.0);  // rounding at the extremes only
    s.cloud.normalized = true;
    if (s.mesh) s.mesh->vertices = normalize_points(s.mesh->vertices, params);
  }
  out.normalization = params;
  if (params_out) *params_out = params;
  return out;
}

std::vector<int> random_subsample_indices(Eigen::Index count, Eigen::Index n, Rng& rng) {
  if (n < 1 || n > count) {
    throw ValidationError("cannot draw " + std::to_string(n) + " points without replacement from " +
                          std::to_string(count));
  }
  std::vector<int> idx(static_cast<std::size_t>(count));
  std::iota(idx.begin(), idx.end(), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::uniform_int_distribution<Eigen::Index> pick(i, count - 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
  }
  idx.resize(static_cast<std::size_t>(n));
  return idx;
}

PointCloud random_subsample(const PointCloud& cloud, Eigen::Index n, Rng& rng) {
  return PointCloud(select_rows(cloud.points, random_subsample_indices(cloud.count(), n, rng)), cloud.normalized);
}

FpsResult farthest_point_sample(const PointCloud& cloud, Eigen::Index m, Eigen::Index start_index) {
  const Eigen::Index n = cloud.count();
  if (m < 1 || m > n) {
    throw ValidationError("farthest point sampling needs 1 <= m <= " + std::to_string(n));
  }
  if (start_index < 0 || start_index >= n) throw ValidationError("fps start index out of range");

  const auto& k = kernels::active<double>();
  const auto soa = kernels::SoaPoints<double>::from_rows(cloud.points);
  std::vector<double> min_dist(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());

  FpsResult r;
  r.indices.reserve(static_cast<std::size_t>(m));
  auto current = static_cast<std::size_t>(start_index);
  r.indices.push_back(static_cast<int>(current));
  min_dist[current] = -1.0;  // selected points never win the argmax
  for (Eigen::Index s = 1; s < m; ++s) {
    const double q[3] = {soa.x[current], soa.y[current], soa.z[current]};
    current = k.min_update_argmax(soa.view(), q, min_dist.data());
    min_dist[current] = -1.0;
    r.indices.push_back(static_cast<int>(current));
  }
  r.cloud = PointCloud(select_rows(cloud.points, r.indices), cloud.normalized);
  return r;
}

IndexMatrix knn_indices(const Points& query, const Points& reference, int k, bool exclude_self) {
  const auto nref = reference.rows();
  const Eigen::Index available = exclude_self ? nref - 1 : nref;
  if (k < 1 || k > available) {
    throw ValidationError("knn k=" + std::to_string(k) + " out of range (available " + std::to_string(available) +
                          ")");
  }
  if (exclude_self && query.rows() != nref) {
    throw ValidationError("knn self-exclusion requires query and reference to be the same set");
  }

  const auto& kern = kernels::active<double>();
  const auto soa = kernels::SoaPoints<double>::from_rows(reference);
  IndexMatrix out(query.rows(), k);
  std::vector<double> d(static_cast<std::size_t>(nref));
  std::vector<int> order(static_cast<std::size_t>(nref));
  for (Eigen::Index i = 0; i < query.rows(); ++i) {
    const double q[3] = {query(i, 0), query(i, 1), query(i, 2)};
    kern.squared_distances(soa.view(), q, d.data());
    std::iota(order.begin(), order.end(), 0);
    auto end = order.end();
    if (exclude_self) end = std::remove(order.begin(), order.end(), static_cast<int>(i));
    std::partial_sort(order.begin(), order.begin() + k, end, [&](int a, int b) {
      return d[static_cast<std::size_t>(a)] < d[static_cast<std::size_t>(b)] ||
             (d[static_cast<std::size_t>(a)] == d[static_cast<std::size_t>(b)] && a < b);
    });
    for (int j = 0; j < k; ++j) out(i, j) = order[static_cast<std::size_t>(j)];
  }
  return out;
}

Points select_rows(const Points& p, const std::vector<int>& rows) {
  Points out(static_cast<Eigen::Index>(rows.size()), 3);
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = p.row(rows[i]);
  return out;
}

}  // namespace p2ssm
