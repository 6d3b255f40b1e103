#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <numeric>

#include "oracles.hpp"
#include "p2ssm/errors.hpp"
#include "p2ssm/ssm_stats.hpp"

using namespace p2ssm;

namespace {

// Orthonormal columns from a random d x k matrix.
Eigen::MatrixXd random_basis(Eigen::Index d, Eigen::Index k, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd a(d, k);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = g(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  return qr.householderQ() * Eigen::MatrixXd::Identity(d, k);
}

// Sets mean + generators * coefficients with random coefficients.
std::vector<Points> span_cohort(const Eigen::VectorXd& mean, const Eigen::MatrixXd& gens, int n, Rng& rng,
                                std::vector<double> scales = {}) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Points> out;
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd x = mean;
    for (Eigen::Index c = 0; c < gens.cols(); ++c) {
      const double s = scales.empty() ? 1.0 : scales[static_cast<std::size_t>(c)];
      x += s * g(rng) * gens.col(c);
    }
    out.push_back(unflatten(x));
  }
  return out;
}

void check_model_invariants(const PCAModel& pca) {
  const Eigen::Index k = pca.modes();
  if (k == 0) return;
  const Eigen::MatrixXd gram = pca.eigenvectors.transpose() * pca.eigenvectors;
  CHECK((gram - Eigen::MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff() < 1e-8);
  for (Eigen::Index i = 1; i < k; ++i) CHECK(pca.eigenvalues(i) <= pca.eigenvalues(i - 1));
  CHECK(pca.eigenvalues.minCoeff() >= 0.0);
  CHECK(k <= std::min<Eigen::Index>(pca.n_train - 1, pca.dim()));
}

Points permute_rows(const Points& p, const std::vector<int>& perm) { return select_rows(p, perm); }

}  // namespace

TEST_CASE("identical sets give no modes and the set as mean") {
  Rng rng(1);
  const Points a = oracle::random_points(10, rng);
  const PCAModel pca = fit_pca({a, a, a});
  CHECK(pca.modes() == 0);
  CHECK((mean_shape(pca) - a).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(compactness(pca).modes == 0);
  CHECK(pca.n_train == 3);
}

TEST_CASE("rank-2 cohort recovers the generator subspace") {
  Rng rng(2);
  const Eigen::Index d = 3 * 20;
  const Eigen::MatrixXd gens = random_basis(d, 2, rng);
  const Eigen::VectorXd mean = flatten(oracle::random_points(20, rng));
  const auto sets = span_cohort(mean, gens, 12, rng, {3.0, 1.0});
  const PCAModel pca = fit_pca(sets);

  check_model_invariants(pca);
  REQUIRE(pca.modes() == 2);
  CHECK(compactness(pca, 0.95).modes <= 2);
  CHECK(compactness(pca, 0.9999999).modes == 2);

  // Cosines of the principal angles are the singular values of G^T V.
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(gens.transpose() * pca.eigenvectors);
  const Eigen::VectorXd cosines = svd.singularValues();
  for (Eigen::Index i = 0; i < cosines.size(); ++i) {
    CHECK(std::acos(std::min(1.0, cosines(i))) < 1e-6);
  }

  // Total variance equals the trace of the sample covariance.
  double trace = 0.0;
  Eigen::VectorXd m = Eigen::VectorXd::Zero(d);
  for (const auto& s : sets) m += flatten(s);
  m /= static_cast<double>(sets.size());
  for (const auto& s : sets) trace += (flatten(s) - m).squaredNorm();
  trace /= static_cast<double>(sets.size() - 1);
  CHECK(std::abs(pca.total_variance() - trace) < 1e-8 * std::max(1.0, trace));
}

TEST_CASE("both eigen routes give the same spectrum") {
  Rng rng(3);
  // 3M = 6 < n = 10 takes the covariance route; the Gram route is checked
  // against a direct covariance solve.
  std::vector<Points> sets;
  for (int i = 0; i < 10; ++i) sets.push_back(oracle::random_points(2, rng));
  const PCAModel pca = fit_pca(sets);
  check_model_invariants(pca);

  std::vector<Points> wide;
  for (int i = 0; i < 5; ++i) wide.push_back(oracle::random_points(8, rng));
  const PCAModel gram_route = fit_pca(wide);
  check_model_invariants(gram_route);
  Eigen::MatrixXd x(5, 24);
  for (int i = 0; i < 5; ++i) x.row(i) = flatten(wide[static_cast<std::size_t>(i)]).transpose();
  const Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(xc.transpose() * xc / 4.0);
  const Eigen::VectorXd direct = eig.eigenvalues().reverse().head(gram_route.modes());
  CHECK((direct - gram_route.eigenvalues).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(gram_route.modes() == 4);
}

TEST_CASE("compactness thresholds") {
  PCAModel pca;
  pca.mean = Eigen::VectorXd::Zero(60);
  pca.eigenvectors = Eigen::MatrixXd::Identity(60, 20);
  pca.eigenvalues = Eigen::VectorXd::Ones(20);
  pca.n_train = 30;
  CHECK(compactness(pca, 0.95).modes == 19);
  const auto c = compactness(pca, 0.95);
  REQUIRE(c.cumulative.size() == 20);
  CHECK(c.cumulative.back() == doctest::Approx(1.0));

  PCAModel dominant = pca;
  dominant.eigenvalues = Eigen::VectorXd::Constant(20, 4.0 / 19.0);
  dominant.eigenvalues(0) = 96.0;
  CHECK(compactness(dominant, 0.95).modes == 1);

  // Monotone non-increasing as the threshold drops.
  Rng rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PCAModel random = pca;
  for (int i = 0; i < 20; ++i) random.eigenvalues(i) = u(rng);
  std::sort(random.eigenvalues.data(), random.eigenvalues.data() + 20, std::greater<>());
  int prev = 1000;
  for (double t = 0.999; t > 0.05; t -= 0.05) {
    const int k = compactness(random, t).modes;
    CHECK(k <= prev);
    prev = k;
  }
  CHECK_THROWS_AS(compactness(pca, 0.0), ValidationError);
}

TEST_CASE("generalization: in-span, orthogonal residual and least-squares oracle") {
  Rng rng(5);
  const Eigen::Index d = 3 * 15;
  const Eigen::MatrixXd basis = random_basis(d, 4, rng);
  const Eigen::MatrixXd gens = basis.leftCols(3);
  const Eigen::VectorXd mean = flatten(oracle::random_points(15, rng));
  const auto train = span_cohort(mean, gens, 10, rng, {2.0, 1.5, 1.0});
  const PCAModel pca = fit_pca(train);
  REQUIRE(pca.modes() == 3);

  SUBCASE("in-span shape reconstructs exactly") {
    const auto test = span_cohort(mean, gens, 3, rng);
    const auto g = generalization(pca, test, 1.0);
    for (double e : g.squared_errors) CHECK(e < 1e-8);
    CHECK(g.mean_squared < 1e-8);
  }

  SUBCASE("unit orthogonal residual gives 1") {
    const Eigen::VectorXd pca_mean = pca.mean;
    const Points test = unflatten(pca_mean + basis.col(3));
    const auto g = generalization(pca, {test}, 1.0);
    CHECK(g.squared_errors[0] == doctest::Approx(1.0).epsilon(1e-9));
  }

  SUBCASE("held-out residual equals an independent least-squares fit") {
    std::normal_distribution<double> gn(0.0, 1.0);
    Eigen::VectorXd x = flatten(span_cohort(mean, gens, 1, rng)[0]);
    for (Eigen::Index i = 0; i < d; ++i) x(i) += 0.1 * gn(rng);
    // Least squares of (x - train mean) on the raw generators.
    Eigen::VectorXd tm = Eigen::VectorXd::Zero(d);
    for (const auto& s : train) tm += flatten(s);
    tm /= static_cast<double>(train.size());
    const Eigen::VectorXd coef = gens.colPivHouseholderQr().solve(x - tm);
    const double expected = (x - tm - gens * coef).squaredNorm();
    const auto g = generalization(pca, {unflatten(x)}, 1.0);
    CHECK(g.squared_errors[0] == doctest::Approx(expected).epsilon(1e-9));
    CHECK(g.point_errors[0] > 0.0);
  }

  CHECK_THROWS_AS(generalization(pca, {oracle::random_points(4, rng)}, 0.95), ValidationError);
}

TEST_CASE("fit rejects bad input") {
  Rng rng(6);
  CHECK_THROWS_AS(fit_pca({oracle::random_points(4, rng)}), ValidationError);
  CHECK_THROWS_AS(fit_pca({oracle::random_points(4, rng), oracle::random_points(5, rng)}), ValidationError);
}

TEST_CASE("specificity of a degenerate model") {
  Rng rng(7);
  const Points a = oracle::random_points(6, rng);
  const Points b = a.array() + 1.0;
  const PCAModel pca = fit_pca({a, a});
  REQUIRE(pca.modes() == 0);
  Rng s(1);
  // Every sample is the mean, which is a training set.
  CHECK(specificity(pca, {a, a}, 50, 0.95, s).mean == 0.0);
  // Otherwise the distance is the mean's distance to the nearest set.
  CHECK(specificity(pca, {b}, 50, 0.95, s).mean == doctest::Approx((a - b).squaredNorm()));
  CHECK(specificity(pca, {b}, 50, 0.95, s).standard_error == 0.0);
  CHECK_THROWS_AS(specificity(pca, {a}, 0, 0.95, s), ValidationError);
}

TEST_CASE("one-mode specificity matches the folded-normal expectation") {
  // Training sets mean +- a u: one mode with variance 2 a^2. A sample
  // mean + z sigma u lies (|z| sigma - a)^2 from the nearer training set.
  Rng rng(8);
  const double a = 0.7;
  const Eigen::VectorXd mu = flatten(oracle::random_points(5, rng));
  const Eigen::VectorXd u = random_basis(15, 1, rng).col(0);
  const std::vector<Points> train{unflatten(mu + a * u), unflatten(mu - a * u)};
  const PCAModel pca = fit_pca(train);
  REQUIRE(pca.modes() == 1);
  CHECK(pca.eigenvalues(0) == doctest::Approx(2.0 * a * a));

  const double sigma = std::sqrt(2.0) * a;
  const double closed = 3.0 * a * a - 4.0 * a * a / std::sqrt(std::numbers::pi);
  // Midpoint rule on the 1-D integral as a second route.
  double quad = 0.0;
  const double h = 1e-4;
  for (double z = -10.0 + h / 2; z < 10.0; z += h) {
    const double f = std::abs(z) * sigma - a;
    quad += f * f * std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi) * h;
  }
  CHECK(quad == doctest::Approx(closed).epsilon(1e-8));

  Rng s(9);
  const Specificity spec = specificity(pca, train, 100000, 0.95, s);
  CAPTURE(spec.mean);
  CAPTURE(spec.standard_error);
  CHECK(std::abs(spec.mean - closed) < 4.0 * spec.standard_error);

  Rng s1(10), s2(10);
  CHECK(specificity(pca, train, 100, 0.95, s1).mean == specificity(pca, train, 100, 0.95, s2).mean);
}

TEST_CASE("metrics are invariant to a shared relabeling of points") {
  Rng rng(11);
  const Eigen::Index m = 12;
  const Eigen::MatrixXd gens = random_basis(3 * m, 3, rng);
  const Eigen::VectorXd mean = flatten(oracle::random_points(static_cast<int>(m), rng));
  auto train = span_cohort(mean, gens, 8, rng, {2.0, 1.0, 0.5});
  auto test = span_cohort(mean, gens, 3, rng);
  for (auto& t : test) t.array() += 0.05 * Points::Random(m, 3).array();

  std::vector<int> perm(static_cast<std::size_t>(m));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Points> ptrain, ptest;
  for (const auto& s : train) ptrain.push_back(permute_rows(s, perm));
  for (const auto& s : test) ptest.push_back(permute_rows(s, perm));

  const PCAModel a = fit_pca(train), b = fit_pca(ptrain);
  CHECK((a.eigenvalues - b.eigenvalues).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(compactness(a).modes == compactness(b).modes);
  CHECK(generalization(a, test).mean_squared == doctest::Approx(generalization(b, ptest).mean_squared).epsilon(1e-9));
  Rng s1(3), s2(3);
  CHECK(specificity(a, train, 200, 0.95, s1).mean ==
        doctest::Approx(specificity(b, ptrain, 200, 0.95, s2).mean).epsilon(1e-9));
}

TEST_CASE("mode walk") {
  Rng rng(12);
  const Eigen::MatrixXd gens = random_basis(30, 2, rng);
  const Eigen::VectorXd mean = flatten(oracle::random_points(10, rng));
  const PCAModel pca = fit_pca(span_cohort(mean, gens, 9, rng, {2.0, 1.0}));
  const ModeWalk w = mode_walk(pca, 0, {-1.0, 0.0, 1.0});
  REQUIRE(w.positions.size() == 3);
  CHECK(w.positions[1] == mean_shape(pca));
  const Points mid = 0.5 * (w.positions[0] + w.positions[2]);
  CHECK((mid - mean_shape(pca)).cwiseAbs().maxCoeff() < 1e-12);
  const double step = (flatten(w.positions[2]) - pca.mean).norm();
  CHECK(step == doctest::Approx(std::sqrt(pca.eigenvalues(0))));
  CHECK_THROWS_AS(mode_walk(pca, 2, {0.0}), ValidationError);
  CHECK_THROWS_AS(mode_walk(pca, -1, {0.0}), ValidationError);
}

TEST_CASE("PCA container round trip") {
  Rng rng(13);
  const Eigen::MatrixXd gens = random_basis(24, 3, rng);
  const PCAModel pca = fit_pca(span_cohort(flatten(oracle::random_points(8, rng)), gens, 7, rng));
  const auto path = std::filesystem::temp_directory_path() / "p2ssm_test_pca.bin";
  save_pca(path, pca);
  const PCAModel back = load_pca(path);
  std::filesystem::remove(path);
  CHECK(back.n_train == pca.n_train);
  CHECK(back.mean == pca.mean);
  CHECK(back.eigenvalues == pca.eigenvalues);
  CHECK(back.eigenvectors == pca.eigenvectors);
  CHECK_THROWS_AS(load_pca(path), FormatError);
}
