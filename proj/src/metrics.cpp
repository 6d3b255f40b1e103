#include "p2ssm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "p2ssm/errors.hpp"
#include "p2ssm/losses.hpp"

namespace p2ssm {

Assignment solve_assignment(const Eigen::MatrixXd& cost) {
  const Eigen::Index n = cost.rows();
  if (cost.cols() != n) throw ValidationError("assignment needs a square cost matrix");
  constexpr double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials; column 0 is the virtual source.
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0), v(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<Eigen::Index> match(static_cast<std::size_t>(n) + 1, 0), way(static_cast<std::size_t>(n) + 1, 0);
  std::vector<double> minv(static_cast<std::size_t>(n) + 1);
  std::vector<char> used(static_cast<std::size_t>(n) + 1);

  for (Eigen::Index row = 1; row <= n; ++row) {
    match[0] = row;
    Eigen::Index col0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[static_cast<std::size_t>(col0)] = 1;
      const Eigen::Index r0 = match[static_cast<std::size_t>(col0)];
      double delta = inf;
      Eigen::Index col1 = 0;
      for (Eigen::Index j = 1; j <= n; ++j) {
        const auto uj = static_cast<std::size_t>(j);
        if (used[uj]) continue;
        const double cur = cost(r0 - 1, j - 1) - u[static_cast<std::size_t>(r0)] - v[uj];
        if (cur < minv[uj]) {
          minv[uj] = cur;
          way[uj] = col0;
        }
        if (minv[uj] < delta) {
          delta = minv[uj];
          col1 = j;
        }
      }
      for (Eigen::Index j = 0; j <= n; ++j) {
        const auto uj = static_cast<std::size_t>(j);
        if (used[uj]) {
          u[static_cast<std::size_t>(match[uj])] += delta;
          v[uj] -= delta;
        } else {
          minv[uj] -= delta;
        }
      }
      col0 = col1;
    } while (match[static_cast<std::size_t>(col0)] != 0);
    do {
      const Eigen::Index col1 = way[static_cast<std::size_t>(col0)];
      match[static_cast<std::size_t>(col0)] = match[static_cast<std::size_t>(col1)];
      col0 = col1;
    } while (col0 != 0);
  }

  Assignment a;
  a.row_to_col.assign(static_cast<std::size_t>(n), -1);
  for (Eigen::Index j = 1; j <= n; ++j) {
    a.row_to_col[static_cast<std::size_t>(match[static_cast<std::size_t>(j)] - 1)] = static_cast<int>(j - 1);
  }
  for (Eigen::Index i = 0; i < n; ++i) a.cost += cost(i, a.row_to_col[static_cast<std::size_t>(i)]);
  return a;
}

double earth_movers_distance(const Points& a, const Points& b, std::vector<int>* matching) {
  if (a.rows() != b.rows()) {
    throw ValidationError("EMD needs equal-size sets (" + std::to_string(a.rows()) + " vs " +
                          std::to_string(b.rows()) + ")");
  }
  if (a.rows() == 0) throw ValidationError("EMD of empty sets");
  const Eigen::Index n = a.rows();
  Eigen::MatrixXd cost(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) cost(i, j) = (a.row(i) - b.row(j)).norm();
  }
  const Assignment asg = solve_assignment(cost);
  if (matching) *matching = asg.row_to_col;
  return asg.cost / static_cast<double>(n);
}

Eigen::Vector3d closest_point_on_triangle(const Eigen::Vector3d& p, const Eigen::Vector3d& a,
                                          const Eigen::Vector3d& b, const Eigen::Vector3d& c) {
  // Voronoi-region walk (Ericson, Real-Time Collision Detection 5.1.5).
  const Eigen::Vector3d ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;

  const Eigen::Vector3d bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + (d1 / (d1 - d3)) * ab;

  const Eigen::Vector3d cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + (d2 / (d2 - d6)) * ac;

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
  }
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

std::vector<double> point_to_face_distance(const Points& points, const TriangleMesh& mesh) {
  if (mesh.face_count() == 0) throw ValidationError("point-to-face distance needs a mesh with faces");
  const Eigen::Index nf = mesh.face_count();
  // Per-face bounding spheres let most faces be rejected without the full test.
  std::vector<Eigen::Vector3d> centers(static_cast<std::size_t>(nf));
  std::vector<double> radii(static_cast<std::size_t>(nf));
  for (Eigen::Index f = 0; f < nf; ++f) {
    const Eigen::Vector3d a = mesh.vertices.row(mesh.faces(f, 0)).transpose();
    const Eigen::Vector3d b = mesh.vertices.row(mesh.faces(f, 1)).transpose();
    const Eigen::Vector3d c = mesh.vertices.row(mesh.faces(f, 2)).transpose();
    const Eigen::Vector3d m = (a + b + c) / 3.0;
    centers[static_cast<std::size_t>(f)] = m;
    radii[static_cast<std::size_t>(f)] = std::max({(a - m).norm(), (b - m).norm(), (c - m).norm()});
  }

  std::vector<double> out(static_cast<std::size_t>(points.rows()));
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const Eigen::Vector3d p = points.row(i).transpose();
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index f = 0; f < nf; ++f) {
      const auto uf = static_cast<std::size_t>(f);
      const double lower = (p - centers[uf]).norm() - radii[uf];
      if (lower >= best) continue;
      const Eigen::Vector3d q = closest_point_on_triangle(p, mesh.vertices.row(mesh.faces(f, 0)).transpose(),
                                                          mesh.vertices.row(mesh.faces(f, 1)).transpose(),
                                                          mesh.vertices.row(mesh.faces(f, 2)).transpose());
      best = std::min(best, (p - q).norm());
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

SurfaceMetrics surface_metrics(const Points& predicted, const Points& reference, const TriangleMesh& mesh) {
  SurfaceMetrics m;
  m.cd = chamfer_distance<double>(predicted, reference);
  const Points ref_sub =
      predicted.rows() <= reference.rows()
          ? farthest_point_sample(PointCloud(reference), predicted.rows(), 0).cloud.points
          : reference;
  const Points pred_sub = predicted.rows() <= reference.rows()
                              ? predicted
                              : farthest_point_sample(PointCloud(predicted), reference.rows(), 0).cloud.points;
  m.emd = earth_movers_distance(pred_sub, ref_sub);
  const auto p2f = point_to_face_distance(predicted, mesh);
  double sum = 0.0;
  for (double d : p2f) {
    sum += d;
    m.p2f_max = std::max(m.p2f_max, d);
  }
  m.p2f_mean = sum / static_cast<double>(p2f.size());
  return m;
}

}  // namespace p2ssm
