#include "p2ssm/ssm_stats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <limits>
#include <numeric>

#include "binary_io.hpp"
#include "p2ssm/errors.hpp"

namespace p2ssm {

namespace {
constexpr char kPcaMagic[9] = "P2SSMPCA";
constexpr std::uint32_t kPcaVersion = 1;
constexpr double kCumulativeSlack = 1e-12;
}  // namespace

Eigen::VectorXd flatten(const Points& p) {
  return Eigen::Map<const Eigen::VectorXd>(p.data(), p.size());
}

Points unflatten(const Eigen::VectorXd& v) {
  if (v.size() % 3 != 0) throw ValidationError("flattened shape length is not a multiple of 3");
  return Eigen::Map<const Points>(v.data(), v.size() / 3, 3);
}

PCAModel fit_pca(const std::vector<Points>& train_sets) {
  if (train_sets.size() < 2) throw ValidationError("PCA needs at least two training sets");
  const Eigen::Index m = train_sets.front().rows();
  for (const auto& s : train_sets) {
    if (s.rows() != m) throw ValidationError("all correspondence sets must have the same number of points");
  }
  const auto n = static_cast<Eigen::Index>(train_sets.size());
  const Eigen::Index d = 3 * m;
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) x.row(i) = flatten(train_sets[static_cast<std::size_t>(i)]).transpose();

  PCAModel pca;
  pca.n_train = static_cast<int>(n);
  // Averaging offsets from the first set keeps the mean exact when every set
  // is identical.
  const Eigen::RowVectorXd first = x.row(0);
  pca.mean = (first + (x.rowwise() - first).colwise().mean()).transpose();
  const Eigen::MatrixXd xc = x.rowwise() - pca.mean.transpose();
  const double denom = static_cast<double>(n - 1);

  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;
  if (n < d) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(xc * xc.transpose() / denom);
    values = eig.eigenvalues();
    vectors = xc.transpose() * eig.eigenvectors();  // unnormalized; scaled below
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(xc.transpose() * xc / denom);
    values = eig.eigenvalues();
    vectors = eig.eigenvectors();
  }

  // Solver order is ascending. Besides the relative cut, variance at the
  // rounding level of the coordinates themselves counts as zero (identical
  // sets leave ~1e-16 residue after mean subtraction).
  const double largest = values.size() ? values.maxCoeff() : 0.0;
  const double rounding_floor = 1e-24 * x.squaredNorm() / static_cast<double>(n);
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = values.size(); i-- > 0;) {
    if (values(i) > 1e-12 * largest && values(i) > rounding_floor) keep.push_back(i);
  }
  pca.eigenvalues.resize(static_cast<Eigen::Index>(keep.size()));
  pca.eigenvectors.resize(d, static_cast<Eigen::Index>(keep.size()));
  for (std::size_t c = 0; c < keep.size(); ++c) {
    const auto col = static_cast<Eigen::Index>(c);
    pca.eigenvalues(col) = values(keep[c]);
    Eigen::VectorXd v = vectors.col(keep[c]);
    // Modified Gram-Schmidt against earlier modes keeps the basis
    // orthonormal to working precision for near-degenerate spectra.
    for (Eigen::Index prev = 0; prev < col; ++prev) v -= pca.eigenvectors.col(prev).dot(v) * pca.eigenvectors.col(prev);
    pca.eigenvectors.col(col) = v.normalized();
  }
  return pca;
}

Compactness compactness(const PCAModel& pca, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw ValidationError("variance threshold must lie in (0, 1]");
  Compactness c;
  const double total = pca.total_variance();
  if (!(total > 0.0)) return c;
  double running = 0.0;
  for (Eigen::Index i = 0; i < pca.modes(); ++i) {
    running += pca.eigenvalues(i);
    c.cumulative.push_back(running / total);
  }
  for (std::size_t i = 0; i < c.cumulative.size(); ++i) {
    if (c.cumulative[i] >= threshold - kCumulativeSlack) {
      c.modes = static_cast<int>(i) + 1;
      break;
    }
  }
  return c;
}

int retained_modes(const PCAModel& pca, double threshold) { return compactness(pca, threshold).modes; }

Eigen::VectorXd reconstruct(const PCAModel& pca, const Eigen::VectorXd& x, int modes) {
  const auto basis = pca.eigenvectors.leftCols(modes);
  return pca.mean + basis * (basis.transpose() * (x - pca.mean));
}

Generalization generalization(const PCAModel& pca, const std::vector<Points>& test_sets, double threshold) {
  const int k = retained_modes(pca, threshold);
  Generalization g;
  for (const auto& s : test_sets) {
    if (3 * s.rows() != pca.dim()) throw ValidationError("test set size does not match the PCA model");
    const Eigen::VectorXd x = flatten(s);
    const Eigen::VectorXd r = reconstruct(pca, x, k);
    g.squared_errors.push_back((x - r).squaredNorm());
    const Points diff = unflatten(x - r);
    g.point_errors.push_back(diff.rowwise().norm().mean());
  }
  if (!test_sets.empty()) {
    const auto n = static_cast<double>(test_sets.size());
    g.mean_squared = std::accumulate(g.squared_errors.begin(), g.squared_errors.end(), 0.0) / n;
    g.mean_point = std::accumulate(g.point_errors.begin(), g.point_errors.end(), 0.0) / n;
  }
  return g;
}

Specificity specificity(const PCAModel& pca, const std::vector<Points>& train_sets, int n_samples,
                        double threshold, Rng& rng) {
  if (n_samples < 1) throw ValidationError("specificity needs at least one sample");
  if (train_sets.empty()) throw ValidationError("specificity needs training sets");
  const int k = retained_modes(pca, threshold);
  std::vector<Eigen::VectorXd> train;
  for (const auto& s : train_sets) {
    if (3 * s.rows() != pca.dim()) throw ValidationError("training set size does not match the PCA model");
    train.push_back(flatten(s));
  }
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(n_samples));
  for (int s = 0; s < n_samples; ++s) {
    Eigen::VectorXd sample = pca.mean;
    for (int j = 0; j < k; ++j) sample += (unit(rng) * std::sqrt(pca.eigenvalues(j))) * pca.eigenvectors.col(j);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& t : train) best = std::min(best, (sample - t).squaredNorm());
    dists.push_back(best);
  }
  Specificity out;
  const auto n = static_cast<double>(dists.size());
  out.mean = std::accumulate(dists.begin(), dists.end(), 0.0) / n;
  if (dists.size() > 1) {
    double var = 0.0;
    for (double d : dists) var += (d - out.mean) * (d - out.mean);
    var /= (n - 1.0);
    out.standard_error = std::sqrt(var / n);
  }
  return out;
}

Points mean_shape(const PCAModel& pca) { return unflatten(pca.mean); }

ModeWalk mode_walk(const PCAModel& pca, int mode, const std::vector<double>& steps) {
  if (mode < 0 || mode >= pca.modes()) {
    throw ValidationError("mode " + std::to_string(mode) + " out of range (model has " +
                          std::to_string(pca.modes()) + " modes)");
  }
  ModeWalk w;
  w.mode = mode;
  w.steps = steps;
  const double sigma = std::sqrt(pca.eigenvalues(mode));
  for (double t : steps) {
    if (t == 0.0) {
      w.positions.push_back(unflatten(pca.mean));
    } else {
      w.positions.push_back(unflatten(pca.mean + (t * sigma) * pca.eigenvectors.col(mode)));
    }
  }
  return w;
}

void save_pca(const std::filesystem::path& path, const PCAModel& pca) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(kPcaMagic, 8);
  binio::put<std::uint32_t>(out, kPcaVersion);
  binio::put<std::int32_t>(out, pca.n_train);
  binio::put<std::uint64_t>(out, static_cast<std::uint64_t>(pca.dim()));
  binio::put<std::uint64_t>(out, static_cast<std::uint64_t>(pca.modes()));
  binio::put_doubles(out, pca.mean.data(), static_cast<std::size_t>(pca.mean.size()));
  binio::put_doubles(out, pca.eigenvalues.data(), static_cast<std::size_t>(pca.eigenvalues.size()));
  binio::put_doubles(out, pca.eigenvectors.data(), static_cast<std::size_t>(pca.eigenvectors.size()));
}

PCAModel load_pca(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  const std::string what = "PCA model " + path.string();
  binio::expect_magic(in, kPcaMagic, what);
  const auto version = binio::get<std::uint32_t>(in, what);
  if (version != kPcaVersion) throw FormatError(what + ": unsupported version " + std::to_string(version));
  PCAModel pca;
  pca.n_train = binio::get<std::int32_t>(in, what);
  const auto dim = static_cast<Eigen::Index>(binio::get<std::uint64_t>(in, what));
  const auto k = static_cast<Eigen::Index>(binio::get<std::uint64_t>(in, what));
  if (dim < 0 || k < 0 || k > dim || dim > (1LL << 28)) throw FormatError(what + ": implausible dimensions");
  pca.mean.resize(dim);
  pca.eigenvalues.resize(k);
  pca.eigenvectors.resize(dim, k);
  binio::get_doubles(in, pca.mean.data(), static_cast<std::size_t>(dim), what);
  binio::get_doubles(in, pca.eigenvalues.data(), static_cast<std::size_t>(k), what);
  binio::get_doubles(in, pca.eigenvectors.data(), static_cast<std::size_t>(dim * k), what);
  return pca;
}

void save_pca_summary(const std::filesystem::path& path, const PCAModel& pca, double threshold) {
  const Compactness c = compactness(pca, threshold);
  nlohmann::json j;
  j["n_train"] = pca.n_train;
  j["dimension"] = pca.dim();
  j["modes"] = pca.modes();
  j["total_variance"] = pca.total_variance();
  j["eigenvalues"] = std::vector<double>(pca.eigenvalues.data(), pca.eigenvalues.data() + pca.eigenvalues.size());
  j["variance_threshold"] = threshold;
  j["compactness"] = c.modes;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void write_compactness_csv(const std::filesystem::path& path, const Compactness& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "modes,cumulative_variance\n" << std::setprecision(12);
  for (std::size_t i = 0; i < c.cumulative.size(); ++i) out << i + 1 << ',' << c.cumulative[i] << '\n';
}

}  // namespace p2ssm
