#include <doctest.h>

#include <set>

#include "oracles.hpp"
#include "p2ssm/corruption.hpp"
#include "p2ssm/errors.hpp"

using namespace p2ssm;

namespace {

Cohort labelled_cohort(int n_train, int n_val, int n_test) {
  Cohort c;
  std::mt19937_64 rng(1);
  const int n = n_train + n_val + n_test;
  for (int i = 0; i < n; ++i) {
    Shape s;
    s.id = "s" + std::to_string(i);
    s.cloud = PointCloud(oracle::random_points(40, rng, -10, 10));
    c.shapes.push_back(s);
    c.splits.push_back(i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test));
  }
  return c;
}

std::set<std::string> ids(const Cohort& c, Split s) {
  std::set<std::string> out;
  for (auto i : c.indices_of(s)) out.insert(c.shapes[i].id);
  return out;
}

}  // namespace

TEST_CASE("gaussian noise") {
  std::mt19937_64 g(2);
  const PointCloud c(oracle::random_points(5000, g));
  Rng rng(3);
  CHECK(add_gaussian_noise(c, 0.0, rng).points == c.points);
  const auto noisy = add_gaussian_noise(c, 2.0, rng);
  CHECK(noisy.count() == c.count());
  const Points diff = noisy.points - c.points;
  const Eigen::ArrayXd d = Eigen::Map<const Eigen::ArrayXd>(diff.data(), 15000);
  const double mean = d.mean();
  const double sd = std::sqrt((d - mean).square().sum() / (d.size() - 1));
  CHECK(std::abs(mean) < 0.1);
  CHECK(sd == doctest::Approx(2.0).epsilon(0.05));
  CHECK_THROWS_AS(add_gaussian_noise(c, -1.0, rng), ValidationError);
}

TEST_CASE("region removal takes a euclidean ball around one seed") {
  std::mt19937_64 g(5);
  const Points p = oracle::random_points(200, g);
  for (double f : {0.05, 0.1, 0.2}) {
    Rng rng(9);
    std::vector<int> removed;
    const auto kept = remove_region(PointCloud(p), f, rng, &removed);
    const auto n_removed = static_cast<long>(std::ceil(f * 200));
    CHECK(static_cast<long>(removed.size()) == n_removed);
    CHECK(kept.count() == 200 - n_removed);
    // Ball property: some removed point (the seed) is at least as close to
    // every removed point as to any kept point.
    bool ball = false;
    for (int s : removed) {
      double r_in = 0.0, r_out = std::numeric_limits<double>::infinity();
      for (int i = 0; i < 200; ++i) {
        const double d = (p.row(i) - p.row(s)).squaredNorm();
        if (std::binary_search(removed.begin(), removed.end(), i)) {
          r_in = std::max(r_in, d);
        } else {
          r_out = std::min(r_out, d);
        }
      }
      ball = ball || r_in <= r_out;
    }
    CHECK(ball);
    // Kept points are the survivors in their original order.
    int row = 0;
    for (int i = 0; i < 200; ++i) {
      if (std::binary_search(removed.begin(), removed.end(), i)) continue;
      CHECK(kept.points.row(row++) == p.row(i));
    }
  }
  Rng rng(1);
  CHECK(remove_region(PointCloud(p), 0.0, rng).points == p);
  CHECK_THROWS_AS(remove_region(PointCloud(p), 1.0, rng), ValidationError);
}

TEST_CASE("corruption is deterministic under a seed") {
  const Cohort c = labelled_cohort(4, 1, 1);
  CorruptionSpec spec;
  spec.noise_sigma_mm = 1.0;
  spec.partial_fraction = 0.1;
  spec.input_size_n = 10;
  spec.seed = 4;
  const auto a = corrupt_inputs(c, spec);
  const auto b = corrupt_inputs(c, spec);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].points == b[i].points);
  spec.seed = 5;
  CHECK(corrupt_inputs(c, spec)[0].points != a[0].points);
  spec.partial_fraction = 1.0;
  CHECK_THROWS_AS(spec.validate(), ValidationError);
}

TEST_CASE("training subsets are nested and leave val/test alone") {
  const Cohort c = labelled_cohort(30, 3, 3);
  const auto s6 = subset_training(c, 6, 7);
  const auto s12 = subset_training(c, 12, 7);
  const auto s25 = subset_training(c, 25, 7);
  const auto t6 = ids(s6, Split::train), t12 = ids(s12, Split::train), t25 = ids(s25, Split::train);
  CHECK(t6.size() == 6);
  CHECK(std::includes(t12.begin(), t12.end(), t6.begin(), t6.end()));
  CHECK(std::includes(t25.begin(), t25.end(), t12.begin(), t12.end()));
  CHECK(ids(s6, Split::val) == ids(c, Split::val));
  CHECK(ids(s6, Split::test) == ids(c, Split::test));
  CHECK(ids(subset_training(c, 30, 7), Split::train) == ids(c, Split::train));
  CHECK_THROWS_AS(subset_training(c, 31, 7), ValidationError);

  int differing = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    differing += ids(subset_training(c, 6, seed), Split::train) != ids(subset_training(c, 6, seed + 100), Split::train);
  }
  CHECK(differing >= 9);
}
