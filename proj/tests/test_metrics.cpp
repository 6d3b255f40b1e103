#include <doctest.h>

#include "oracles.hpp"
#include "p2ssm/errors.hpp"
#include "p2ssm/metrics.hpp"

using namespace p2ssm;

namespace {

// Distance from p to triangle (a, b, c) by zooming grid search over the
// barycentric domain; the squared distance is convex there, so shrinking the
// window around the best sample converges to the minimum.
double triangle_distance_search(const Eigen::Vector3d& p, const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                                const Eigen::Vector3d& c) {
  double cu = 1.0 / 3.0, cv = 1.0 / 3.0, radius = 1.0;
  double best = 1e300;
  for (int round = 0; round < 30; ++round) {
    const int g = 40;
    double bu = cu, bv = cv;
    for (int i = -g; i <= g; ++i) {
      for (int j = -g; j <= g; ++j) {
        const double u = cu + radius * i / g, v = cv + radius * j / g;
        if (u < 0 || v < 0 || u + v > 1) continue;
        const double d = (a + u * (b - a) + v * (c - a) - p).squaredNorm();
        if (d < best) {
          best = d;
          bu = u;
          bv = v;
        }
      }
    }
    cu = bu;
    cv = bv;
    radius *= 0.25;
  }
  return std::sqrt(best);
}

}  // namespace

TEST_CASE("assignment and EMD") {
  const Eigen::MatrixXd cost = (Eigen::MatrixXd(3, 3) << 4, 1, 3, 2, 0, 5, 3, 2, 2).finished();
  const auto a = solve_assignment(cost);
  CHECK(a.cost == doctest::Approx(5.0));
  CHECK(a.row_to_col == std::vector<int>{1, 0, 2});

  Points x(2, 3), y(2, 3);
  x << 0, 0, 0, 1, 0, 0;
  y << 1, 0, 0, 0, 0, 0;
  std::vector<int> m;
  CHECK(earth_movers_distance(x, y, &m) == 0.0);
  CHECK(m == std::vector<int>{1, 0});
  CHECK(earth_movers_distance(x, x) == 0.0);
  CHECK_THROWS_AS(earth_movers_distance(x, Points::Zero(3, 3)), ValidationError);

  std::mt19937_64 rng(5);
  for (int t = 0; t < 60; ++t) {
    const int n = 1 + t % 6;
    const Points p = oracle::random_points(n, rng);
    const Points q = oracle::random_points(n, rng);
    CHECK(earth_movers_distance(p, q) == doctest::Approx(oracle::emd_permutations(p, q)).epsilon(1e-12));
  }
}

TEST_CASE("point to face distance") {
  TriangleMesh tri;
  tri.vertices = Points(3, 3);
  tri.vertices << 0, 0, 0, 4, 0, 0, 0, 4, 0;
  tri.faces = Faces(1, 3);
  tri.faces << 0, 1, 2;

  Points on(1, 3), above(1, 3);
  on << 1, 1, 0;
  above << 1, 1, 2.5;
  CHECK(point_to_face_distance(on, tri)[0] == doctest::Approx(0.0));
  CHECK(point_to_face_distance(above, tri)[0] == doctest::Approx(2.5));

  // Generic points (interior, edge and vertex regions) against the search oracle.
  std::mt19937_64 rng(6);
  const Points probes = oracle::random_points(60, rng, -3.0, 7.0);
  const auto d = point_to_face_distance(probes, tri);
  for (Eigen::Index i = 0; i < probes.rows(); ++i) {
    const double want = triangle_distance_search(probes.row(i).transpose(), tri.vertices.row(0).transpose(),
                                                 tri.vertices.row(1).transpose(), tri.vertices.row(2).transpose());
    CHECK(d[static_cast<std::size_t>(i)] == doctest::Approx(want).epsilon(1e-6));
  }

  // Multi-face mesh: minimum over faces.
  TriangleMesh two = tri;
  two.vertices.conservativeResize(4, 3);
  two.vertices.row(3) << 0, 0, 5;
  two.faces.conservativeResize(2, 3);
  two.faces.row(1) << 0, 1, 3;
  Points q(1, 3);
  q << 2, -1, 2;
  CHECK(point_to_face_distance(q, two)[0] == doctest::Approx(1.0));

  CHECK_THROWS_AS(point_to_face_distance(q, TriangleMesh{}), ValidationError);
}

TEST_CASE("surface metrics vanish on the reference itself") {
  TriangleMesh tri;
  tri.vertices = Points(3, 3);
  tri.vertices << 0, 0, 0, 1, 0, 0, 0, 1, 0;
  tri.faces = Faces(1, 3);
  tri.faces << 0, 1, 2;
  const auto m = surface_metrics(tri.vertices, tri.vertices, tri);
  CHECK(m.cd == 0.0);
  CHECK(m.emd == 0.0);
  CHECK(m.p2f_max == doctest::Approx(0.0));
}
