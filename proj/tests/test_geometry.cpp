#include <doctest.h>

#include <numbers>

#include "oracles.hpp"
#include "p2ssm/errors.hpp"
#include "p2ssm/geometry.hpp"

using namespace p2ssm;

namespace {

Points line_points(int n) {
  Points p = Points::Zero(n, 3);
  for (int i = 0; i < n; ++i) p(i, 0) = i;
  return p;
}

Eigen::Matrix3d rot_z(double deg) {
  return Eigen::AngleAxisd(deg * std::numbers::pi / 180.0, Eigen::Vector3d::UnitZ()).toRotationMatrix();
}

// A deliberately asymmetric blob so ICP has a unique optimum.
Points asymmetric_cloud(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Points p = oracle::random_points(n, rng, -1.0, 1.0);
  for (int i = 0; i < n; ++i) {
    p(i, 0) *= 30.0;
    p(i, 1) *= 15.0;
    p(i, 2) *= 6.0 + p(i, 0) * 0.1;
  }
  return p;
}

}  // namespace

TEST_CASE("mesh_vertices_as_cloud copies vertices") {
  TriangleMesh m;
  m.vertices = Points(4, 3);
  m.vertices << 0, 0, 0, 1, 0, 0, 0, 1, 0, 1, 0, 0;  // duplicate kept
  m.faces = Faces(1, 3);
  m.faces << 0, 1, 2;
  const auto c = mesh_vertices_as_cloud(m);
  CHECK(c.count() == 4);
  CHECK(c.points == m.vertices);
}

TEST_CASE("PointCloud and TriangleMesh validation") {
  CHECK_THROWS_AS(PointCloud().validate(), ValidationError);
  Points p(1, 3);
  p << 0.5, 2.0, 0.0;
  CHECK_NOTHROW(PointCloud(p).validate());
  CHECK_THROWS_AS(PointCloud(p, true).validate(), ValidationError);
  p(0, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(PointCloud(p).validate(), ValidationError);

  TriangleMesh m;
  m.vertices = Points::Zero(3, 3);
  m.faces = Faces(1, 3);
  m.faces << 0, 1, 1;
  CHECK_THROWS_AS(m.validate(), ValidationError);
  m.faces << 0, 1, 99;
  CHECK_THROWS_AS(m.validate(), ValidationError);
}

TEST_CASE("farthest point sampling on a line breaks ties low") {
  const PointCloud c(line_points(10));
  const auto r = farthest_point_sample(c, 3, 0);
  CHECK(r.indices == std::vector<int>{0, 9, 4});
  CHECK(farthest_point_sample(c, 1, 6).indices == std::vector<int>{6});
  auto all = farthest_point_sample(c, 10, 0).indices;
  std::sort(all.begin(), all.end());
  for (int i = 0; i < 10; ++i) CHECK(all[static_cast<std::size_t>(i)] == i);
}

TEST_CASE("farthest point sampling matches the brute-force greedy oracle") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 2 + trial * 2;
    const Points p = oracle::random_points(n, rng);
    const int m = 1 + trial % n;
    const int start = trial % n;
    const auto r = farthest_point_sample(PointCloud(p), m, start);
    CHECK(r.indices == oracle::fps(p, m, start));
    for (int i = 0; i < m; ++i) CHECK(r.cloud.points.row(i) == p.row(r.indices[static_cast<std::size_t>(i)]));
  }
}

TEST_CASE("knn matches the O(n^2) oracle") {
  std::mt19937_64 rng(11);
  for (int n : {2, 5, 17, 64}) {
    const Points p = oracle::random_points(n, rng);
    for (int k : {1, n / 2 + 0, n - 1}) {
      if (k < 1) continue;
      const auto got = knn_indices(p, p, k, true);
      const auto want = oracle::knn(p, p, k, true);
      for (int i = 0; i < n; ++i) {
        for (int t = 0; t < k; ++t) CHECK(got(i, t) == want[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)]);
      }
    }
    const auto got = knn_indices(p, p, n, false);
    for (int i = 0; i < n; ++i) CHECK(got(i, 0) == i);
  }
  CHECK_THROWS_AS(knn_indices(line_points(3), line_points(3), 3, true), ValidationError);
  CHECK_THROWS_AS(knn_indices(line_points(3), line_points(3), 0, false), ValidationError);
}

TEST_CASE("knn on a hand-enumerated grid") {
  Points g(4, 3);
  g << 0, 0, 0, 1, 0, 0, 0, 2, 0, 1, 2, 0;
  const auto r = knn_indices(g, g, 3, true);
  // From 0: 1 (1), 2 (4), 3 (5).
  CHECK(r(0, 0) == 1);
  CHECK(r(0, 1) == 2);
  CHECK(r(0, 2) == 3);
  // From 3: 2 (1), 1 (4), 0 (5).
  CHECK(r(3, 0) == 2);
  CHECK(r(3, 1) == 1);
  CHECK(r(3, 2) == 0);
}

TEST_CASE("random_subsample") {
  const PointCloud c(line_points(20));
  Rng a(5), b(5);
  const auto s1 = random_subsample(c, 7, a);
  const auto s2 = random_subsample(c, 7, b);
  CHECK(s1.points == s2.points);
  Rng r(1);
  const Points full = random_subsample(c, 20, r).points;
  std::vector<double> v;
  for (int i = 0; i < 20; ++i) v.push_back(full(i, 0));
  std::sort(v.begin(), v.end());
  for (int i = 0; i < 20; ++i) CHECK(v[static_cast<std::size_t>(i)] == i);
  CHECK_THROWS_AS(random_subsample(c, 21, r), ValidationError);

  // Single draws are uniform: chi-square over 10^4 draws, 19 dof, p ~ 0.001.
  const int n = 20, draws = 10000;
  std::vector<int> hits(n, 0);
  for (int t = 0; t < draws; ++t) {
    Rng g(static_cast<std::uint64_t>(t) + 1000);
    ++hits[static_cast<std::size_t>(random_subsample_indices(n, 1, g)[0])];
  }
  const double expected = static_cast<double>(draws) / n;
  double chi2 = 0.0;
  for (int h : hits) chi2 += (h - expected) * (h - expected) / expected;
  CHECK(chi2 < 43.8);
}

TEST_CASE("horn fit and icp recover rigid transforms") {
  const Points src = asymmetric_cloud(200, 2);
  SUBCASE("identity") {
    const auto t = icp_rigid_align(PointCloud(src), PointCloud(src));
    CHECK((t.rotation - Eigen::Matrix3d::Identity()).norm() < 1e-6);
    CHECK(t.translation.norm() < 1e-6);
  }
  SUBCASE("pure translation") {
    Points dst = src;
    dst.col(0).array() += 5.0;
    const auto t = icp_rigid_align(PointCloud(dst), PointCloud(src));
    CHECK((t.rotation - Eigen::Matrix3d::Identity()).norm() < 1e-6);
    CHECK((t.translation - Eigen::Vector3d(-5, 0, 0)).norm() < 1e-6);
  }
  SUBCASE("rotation about z") {
    for (double deg : {10.0, 30.0}) {
      RigidTransform truth;
      truth.rotation = rot_z(deg);
      truth.translation = Eigen::Vector3d(1.0, -2.0, 0.5);
      const Points dst = truth.apply(src);
      const auto t = icp_rigid_align(PointCloud(src), PointCloud(dst));
      const Eigen::Matrix3d err = t.rotation * truth.rotation.transpose();
      CHECK(Eigen::AngleAxisd(err).angle() < 1e-3);
      CHECK((t.apply(src) - dst).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
  SUBCASE("horn on exact pairs") {
    RigidTransform truth;
    truth.rotation = Eigen::AngleAxisd(0.7, Eigen::Vector3d(1, 2, 3).normalized()).toRotationMatrix();
    truth.translation = Eigen::Vector3d(3, 4, 5);
    const auto t = horn_rigid_fit(src, truth.apply(src));
    CHECK((t.rotation - truth.rotation).norm() < 1e-9);
    CHECK((t.translation - truth.translation).norm() < 1e-9);
    CHECK(std::abs(t.rotation.determinant() - 1.0) < 1e-9);
  }
  SUBCASE("degenerate source") {
    CHECK_THROWS_AS(icp_rigid_align(PointCloud(line_points(10)), PointCloud(src)), IllConditionedError);
  }
}

TEST_CASE("rigid transform algebra") {
  RigidTransform a;
  a.rotation = rot_z(20);
  a.translation = Eigen::Vector3d(1, 2, 3);
  RigidTransform b;
  b.rotation = Eigen::AngleAxisd(0.3, Eigen::Vector3d::UnitX()).toRotationMatrix();
  b.translation = Eigen::Vector3d(-1, 0, 4);
  const Points p = asymmetric_cloud(10, 9);
  CHECK((a.then(b).apply(p) - b.apply(a.apply(p))).norm() < 1e-12);
  CHECK((a.inverse().apply(a.apply(p)) - p).norm() < 1e-12);
  CHECK(std::abs(a.rotation_angle() - 20.0 * std::numbers::pi / 180.0) < 1e-12);
}

TEST_CASE("cohort normalization") {
  SUBCASE("unit cube stays put") {
    Cohort c;
    Shape s;
    s.id = "cube";
    Points p(8, 3);
    int r = 0;
    for (int x : {-1, 1}) {
      for (int y : {-1, 1}) {
        for (int z : {-1, 1}) p.row(r++) << x, y, z;
      }
    }
    s.cloud = PointCloud(p);
    c.shapes.push_back(s);
    NormalizationParams np;
    const Cohort n = normalize_cohort(c, &np);
    CHECK(np.scale == doctest::Approx(1.0));
    CHECK((n.shapes[0].cloud.points - p).norm() < 1e-12);
  }
  SUBCASE("[-50, 50] mm maps into [-1, 1] with one scale") {
    Cohort c;
    std::mt19937_64 rng(4);
    for (int i = 0; i < 3; ++i) {
      Shape s;
      s.id = "s" + std::to_string(i);
      Points p = oracle::random_points(30, rng, -50.0 + 10 * i, 50.0 - 10 * i);
      if (i == 0) {
        p.row(0) << -50, -50, -50;
        p.row(1) << 50, 50, 50;
      }
      s.cloud = PointCloud(p);
      c.shapes.push_back(s);
    }
    NormalizationParams np;
    const Cohort n = normalize_cohort(c, &np);
    CHECK(np.scale == doctest::Approx(1.0 / 50.0).epsilon(1e-12));
    for (std::size_t i = 0; i < n.size(); ++i) {
      CHECK(n.shapes[i].cloud.normalized);
      CHECK(n.shapes[i].cloud.points.cwiseAbs().maxCoeff() <= 1.0);
      // One scale for every shape: relative extents survive.
      const Points back = denormalize(n.shapes[i].cloud.points, np);
      CHECK((back - c.shapes[i].cloud.points).cwiseAbs().maxCoeff() < 1e-9 * 50.0);
    }
  }
  SUBCASE("denormalize composes as the inverse affine map") {
    NormalizationParams np;
    np.center = Eigen::Vector3d(3, -2, 7);
    np.scale = 2.0;
    Points one(1, 3);
    one << 1, 1, 1;
    const Points back = denormalize(one, np);
    CHECK((back.row(0).transpose() - (np.center + Eigen::Vector3d::Constant(0.5))).norm() < 1e-15);
    CHECK((denormalize(Points::Zero(1, 3), np).row(0).transpose() - np.center).norm() == 0.0);
  }
  CHECK_THROWS_AS(normalize_cohort(Cohort{}), ValidationError);
}
