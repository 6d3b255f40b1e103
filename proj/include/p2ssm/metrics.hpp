#pragma once

#include <vector>

#include "p2ssm/geometry.hpp"

namespace p2ssm {

struct Assignment {
  double cost = 0.0;            // sum of matched costs
  std::vector<int> row_to_col;  // row i is matched to column row_to_col[i]
};

// Exact minimum-cost perfect matching on a square cost matrix (Hungarian
// method with potentials and shortest augmenting paths, O(n^3)).
Assignment solve_assignment(const Eigen::MatrixXd& cost);

// min over bijections of the mean Euclidean distance between matched points.
// Both sets must have the same size.
double earth_movers_distance(const Points& a, const Points& b, std::vector<int>* matching = nullptr);

// Closest point on triangle (a, b, c) to p, covering the face interior, the
// edges and the vertices.
Eigen::Vector3d closest_point_on_triangle(const Eigen::Vector3d& p, const Eigen::Vector3d& a,
                                          const Eigen::Vector3d& b, const Eigen::Vector3d& c);

// Unsigned distance from each point to the nearest face of the mesh.
std::vector<double> point_to_face_distance(const Points& points, const TriangleMesh& mesh);

struct SurfaceMetrics {
  double cd = 0.0;        // squared units (mm^2 when given mm)
  double emd = 0.0;
  double p2f_mean = 0.0;
  double p2f_max = 0.0;
};

// CD against the full reference vertex set, EMD against its FPS subsample of
// matching size (start index 0), P2F against the mesh.
SurfaceMetrics surface_metrics(const Points& predicted, const Points& reference, const TriangleMesh& mesh);

}  // namespace p2ssm
