#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "p2ssm/checkpoint.hpp"
#include "p2ssm/errors.hpp"
#include "p2ssm/synthetic.hpp"
#include "p2ssm/training.hpp"

using namespace p2ssm;

namespace {

Cohort dummy_cohort(int n) {
  Cohort c;
  for (int i = 0; i < n; ++i) c.shapes.push_back(Shape{"s" + std::to_string(i), PointCloud(Points::Zero(1, 3)), {}});
  return c;
}

std::array<int, 3> counts(const Cohort& c) {
  std::array<int, 3> n{0, 0, 0};
  for (Split s : c.splits) ++n[static_cast<int>(s)];
  return n;
}

ShapeSet tiny_shapes(int n, std::uint64_t seed) {
  CohortSpec spec;
  spec.n_shapes = n;
  spec.subdivisions = 2;
  spec.latent_dims = 1;
  spec.seed = seed;
  const Cohort normalized = normalize_cohort(generate_cohort(spec).cohort);
  ShapeSet s;
  for (const auto& shape : normalized.shapes) {
    s.ids.push_back(shape.id);
    s.inputs.push_back(shape.cloud);
    s.targets.push_back(shape.cloud);
  }
  return s;
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.n_input = 32;
  m.m_output = 32;
  m.feature_dim = 16;
  m.hidden_dim = 16;
  m.graph_k = 8;
  m.sfa_blocks = 1;
  m.attention_heads = 2;
  m.seed = 5;
  return m;
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.learning_rate = 1e-3;
  t.batch_size = 4;
  t.patience = 1000;
  t.max_epochs = 5;
  t.loss.alpha = 0.1;
  t.loss.k_neighbors = 4;
  t.seed = 11;
  return t;
}

}  // namespace

TEST_CASE("split sizes follow rounding with at least one val and test shape") {
  CHECK(counts(split_cohort(dummy_cohort(40), {0.8, 0.1, 0.1}, 0)) == std::array<int, 3>{32, 4, 4});
  CHECK(counts(split_cohort(dummy_cohort(10), {0.8, 0.1, 0.1}, 0)) == std::array<int, 3>{8, 1, 1});
  CHECK(counts(split_cohort(dummy_cohort(5), {0.98, 0.01, 0.01}, 0)) == std::array<int, 3>{3, 1, 1});

  const auto a = split_cohort(dummy_cohort(40), {0.8, 0.1, 0.1}, 3);
  const auto b = split_cohort(dummy_cohort(40), {0.8, 0.1, 0.1}, 3);
  const auto c = split_cohort(dummy_cohort(40), {0.8, 0.1, 0.1}, 4);
  CHECK(a.splits == b.splits);
  CHECK(a.splits != c.splits);

  CHECK_THROWS_AS(split_cohort(dummy_cohort(2), {0.8, 0.1, 0.1}, 0), ValidationError);
  CHECK_THROWS_AS(split_cohort(dummy_cohort(10), {0.5, 0.1, 0.1}, 0), ValidationError);
  CHECK_THROWS_AS(split_cohort(dummy_cohort(3), {0.0, 0.5, 0.5}, 0), ValidationError);
}

TEST_CASE("early stopping predicate") {
  CHECK_FALSE(early_stop(10, 8, 3));
  CHECK(early_stop(11, 8, 3));
  CHECK(early_stop(1, 0, 1));
}

TEST_CASE("train config validation") {
  TrainConfig t;
  t.learning_rate = 0.0;
  CHECK_THROWS_AS(t.validate(), ValidationError);
  t = TrainConfig{};
  t.beta2 = 1.0;
  CHECK_THROWS_AS(t.validate(), ValidationError);
  t = TrainConfig{};
  t.patience = 0;
  CHECK_THROWS_AS(t.validate(), ValidationError);
  t = TrainConfig{};
  t.loss.alpha = -0.1;
  CHECK_THROWS_AS(t.validate(), ValidationError);
}

TEST_CASE("adam first step moves each coordinate by lr against the gradient sign") {
  nn::ParamSet<float> p;
  p.add("w", 1, 3, nn::InitRule{});
  p[0].setZero();
  nn::ParamSet<float> g = p.zeros_like();
  g[0] << 2.0f, -0.5f, 0.0f;
  Adam adam(p, 0.01, 0.9, 0.999, 1e-8);
  adam.step(p, g);
  CHECK(p[0](0, 0) == doctest::Approx(-0.01).epsilon(1e-5));
  CHECK(p[0](0, 1) == doctest::Approx(0.01).epsilon(1e-5));
  CHECK(p[0](0, 2) == 0.0f);
  CHECK(adam.steps() == 1);
}

TEST_CASE("validate equals the composed chamfer over shapes") {
  const ShapeSet shapes = tiny_shapes(4, 1);
  ShapeSet two;
  for (int i = 0; i < 2; ++i) {
    two.ids.push_back(shapes.ids[i]);
    two.inputs.push_back(shapes.inputs[i]);
    two.targets.push_back(shapes.targets[i]);
  }
  const Network<float> net(init_params(tiny_model()));

  double expected = 0.0;
  for (int i = 0; i < 2; ++i) {
    const PointCloud input(two.inputs[i].points, true);
    const Points sampled = select_rows(input.points, oracle::fps(input.points, 32, 0));
    const Points out = net.forward(sampled.cast<float>()).points.cast<double>();
    const Points& s = two.targets[i].points;
    double f = 0.0, b = 0.0;
    for (Eigen::Index a = 0; a < out.rows(); ++a) {
      double m = 1e300;
      for (Eigen::Index c = 0; c < s.rows(); ++c) m = std::min(m, (out.row(a) - s.row(c)).squaredNorm());
      f += m;
    }
    for (Eigen::Index c = 0; c < s.rows(); ++c) {
      double m = 1e300;
      for (Eigen::Index a = 0; a < out.rows(); ++a) m = std::min(m, (out.row(a) - s.row(c)).squaredNorm());
      b += m;
    }
    expected += f / static_cast<double>(out.rows()) + b / static_cast<double>(s.rows());
  }
  expected /= 2.0;

  const double got = validate(net, two);
  CHECK(got >= 0.0);
  CHECK(got == doctest::Approx(expected).epsilon(1e-5));
  CHECK(validate(net, two) == got);
  CHECK_THROWS_AS(validate(net, ShapeSet{}), ValidationError);
}

TEST_CASE("overfit smoke: loss falls below a tenth of its initial value") {
  // N equals the vertex count, so every input is the full cloud and a sharp
  // identity map reaches zero Chamfer. alpha = 0: the mapping term has a
  // positive floor for any spread output.
  CohortSpec spec;
  spec.n_shapes = 4;
  spec.latent_dims = 1;
  spec.subdivisions = 1;
  spec.seed = 2;
  const Cohort normalized = normalize_cohort(generate_cohort(spec).cohort);
  ShapeSet shapes;
  for (const auto& shape : normalized.shapes) {
    shapes.ids.push_back(shape.id);
    shapes.inputs.push_back(shape.cloud);
    shapes.targets.push_back(shape.cloud);
  }
  ModelConfig m = tiny_model();
  m.n_input = m.m_output = 42;
  m.feature_dim = m.hidden_dim = 32;
  TrainConfig t = tiny_train();
  t.learning_rate = 1e-2;
  t.loss.alpha = 0.0;
  t.max_epochs = 200;
  const auto r = train(m, t, shapes, shapes);
  REQUIRE(r.history.size() == 200);
  CAPTURE(r.history.front().train_loss);
  CAPTURE(r.history.back().train_loss);
  CHECK(r.history.back().train_loss < 0.1 * r.history.front().train_loss);
  CHECK(r.best_val_cd <= r.history.front().val_cd);
}

TEST_CASE("early stopping halts exactly patience epochs after the best epoch") {
  const ShapeSet shapes = tiny_shapes(4, 3);
  TrainConfig t = tiny_train();
  t.learning_rate = 3e-2;
  t.patience = 3;
  t.max_epochs = 300;
  const auto r = train(tiny_model(), t, shapes, shapes);
  REQUIRE(r.epochs_run < t.max_epochs);
  CHECK(r.epochs_run - r.best_epoch == t.patience);
  CHECK(static_cast<int>(r.history.size()) == r.epochs_run);

  int argmin = 0;
  for (std::size_t i = 1; i < r.history.size(); ++i) {
    if (r.history[i].val_cd < r.history[static_cast<std::size_t>(argmin)].val_cd) argmin = static_cast<int>(i);
  }
  CHECK(r.best_epoch == argmin + 1);
  CHECK(r.best_val_cd == r.history[static_cast<std::size_t>(argmin)].val_cd);
}

TEST_CASE("training is deterministic in its seeds") {
  const ShapeSet shapes = tiny_shapes(6, 4);
  const auto a = train(tiny_model(), tiny_train(), shapes, shapes);
  const auto b = train(tiny_model(), tiny_train(), shapes, shapes);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].train_loss == b.history[i].train_loss);
    CHECK(a.history[i].val_cd == b.history[i].val_cd);
  }
  TrainConfig other = tiny_train();
  other.seed = 12;
  const auto c = train(tiny_model(), other, shapes, shapes);
  CHECK(c.history.front().train_loss != a.history.front().train_loss);
}

TEST_CASE("checkpoint round trip reproduces the validation CD") {
  const ShapeSet shapes = tiny_shapes(4, 5);
  const auto r = train(tiny_model(), tiny_train(), shapes, shapes);

  const auto path = std::filesystem::temp_directory_path() / "p2ssm_test_ckpt.bin";
  Checkpoint ck;
  ck.params = r.best;
  ck.normalization = NormalizationParams{Eigen::Vector3d(1.0, 2.0, 3.0), 0.02};
  ck.loss = tiny_train().loss;
  ck.best_epoch = r.best_epoch;
  ck.best_val_cd = r.best_val_cd;
  save_checkpoint(path, ck);
  const Checkpoint back = load_checkpoint(path);
  std::filesystem::remove(path);

  CHECK(back.best_epoch == r.best_epoch);
  CHECK(back.best_val_cd == r.best_val_cd);
  REQUIRE(back.normalization.has_value());
  CHECK(back.normalization->scale == 0.02);
  CHECK(back.normalization->center == Eigen::Vector3d(1.0, 2.0, 3.0));
  CHECK(validate(back.params, shapes) == r.best_val_cd);
}

TEST_CASE("checkpoint loading rejects corrupt files") {
  const auto path = std::filesystem::temp_directory_path() / "p2ssm_test_bad.bin";
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOTACKPT";
  }
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  std::filesystem::remove(path);
  CHECK_THROWS(load_checkpoint(path));
}

TEST_CASE("inference is deterministic and returns M points in mm") {
  const Network<float> net(init_params(tiny_model()));
  CohortSpec spec;
  spec.n_shapes = 3;
  spec.subdivisions = 2;
  spec.latent_dims = 1;
  const Cohort cohort = generate_cohort(spec).cohort;
  const NormalizationParams norm = fit_normalization(cohort);
  const PointCloud& raw = cohort.shapes[0].cloud;

  const auto a = infer(net, raw, norm);
  const auto b = infer(net, raw, norm);
  CHECK(a.points.rows() == 32);
  CHECK(a.points == b.points);
  CHECK(a.map.rows() == 32);

  // Outputs are convex combinations of input points, so they stay inside the
  // raw bounding box.
  const Eigen::RowVector3d lo = raw.points.colwise().minCoeff(), hi = raw.points.colwise().maxCoeff();
  for (Eigen::Index i = 0; i < a.points.rows(); ++i) {
    for (int d = 0; d < 3; ++d) {
      CHECK(a.points(i, d) >= lo(d) - 1e-3);
      CHECK(a.points(i, d) <= hi(d) + 1e-3);
    }
  }
}

TEST_CASE("training rejects inputs smaller than N") {
  ShapeSet shapes = tiny_shapes(4, 6);
  shapes.inputs[1] = PointCloud(shapes.inputs[1].points.topRows(10), true);
  CHECK_THROWS_AS(train(tiny_model(), tiny_train(), shapes, shapes), ValidationError);
}
