#include "p2ssm/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "p2ssm/errors.hpp"
#include "p2ssm/kernels.hpp"

namespace p2ssm {

void LossConfig::validate(Eigen::Index m_output) const {
  if (!(alpha >= 0.0)) throw ValidationError("loss alpha must be >= 0");
  if (k_neighbors < 1 || k_neighbors >= m_output) {
    throw ValidationError("ME neighbourhood size K must satisfy 1 <= K < M");
  }
}

template <typename T>
NeighborGraph<T> build_neighbor_graph(const PointsT<T>& points, int k) {
  const Eigen::Index m = points.rows();
  if (k < 1 || k >= m) throw ValidationError("neighbourhood size must satisfy 1 <= k < M");
  const auto& kern = kernels::active<T>();
  const auto soa = kernels::SoaPoints<T>::from_rows(points);

  NeighborGraph<T> g;
  g.indices.resize(m, k);
  g.weights.resize(m, k);
  std::vector<T> d(static_cast<std::size_t>(m));
  std::vector<int> order(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) {
    const T q[3] = {points(i, 0), points(i, 1), points(i, 2)};
    kern.squared_distances(soa.view(), q, d.data());
    std::iota(order.begin(), order.end(), 0);
    auto end = std::remove(order.begin(), order.end(), static_cast<int>(i));
    std::partial_sort(order.begin(), order.begin() + k, end, [&](int a, int b) {
      const auto da = d[static_cast<std::size_t>(a)], db = d[static_cast<std::size_t>(b)];
      return da < db || (da == db && a < b);
    });
    for (int j = 0; j < k; ++j) {
      const int nb = order[static_cast<std::size_t>(j)];
      g.indices(i, j) = nb;
      g.weights(i, j) = std::exp(-d[static_cast<std::size_t>(nb)]);
    }
  }
  return g;
}

template <typename T>
T chamfer_distance(const PointsT<T>& c, const PointsT<T>& s, PointsT<T>* grad_c, PointsT<T>* grad_s) {
  if (c.rows() == 0 || s.rows() == 0) throw ValidationError("chamfer distance of an empty set");
  const auto& kern = kernels::active<T>();
  const auto soa_s = kernels::SoaPoints<T>::from_rows(s);
  const auto soa_c = kernels::SoaPoints<T>::from_rows(c);
  const T inv_c = T(1) / static_cast<T>(c.rows());
  const T inv_s = T(1) / static_cast<T>(s.rows());

  double forward = 0.0;
  for (Eigen::Index i = 0; i < c.rows(); ++i) {
    const T q[3] = {c(i, 0), c(i, 1), c(i, 2)};
    const auto nn = kern.nearest(soa_s.view(), q);
    forward += static_cast<double>(nn.dist2);
    const auto j = static_cast<Eigen::Index>(nn.index);
    if (grad_c) grad_c->row(i) += (T(2) * inv_c) * (c.row(i) - s.row(j));
    if (grad_s) grad_s->row(j) -= (T(2) * inv_c) * (c.row(i) - s.row(j));
  }
  double backward = 0.0;
  for (Eigen::Index j = 0; j < s.rows(); ++j) {
    const T q[3] = {s(j, 0), s(j, 1), s(j, 2)};
    const auto nn = kern.nearest(soa_c.view(), q);
    backward += static_cast<double>(nn.dist2);
    const auto i = static_cast<Eigen::Index>(nn.index);
    if (grad_c) grad_c->row(i) += (T(2) * inv_s) * (c.row(i) - s.row(j));
    if (grad_s) grad_s->row(j) -= (T(2) * inv_s) * (c.row(i) - s.row(j));
  }
  return static_cast<T>(forward / static_cast<double>(c.rows()) + backward / static_cast<double>(s.rows()));
}

template <typename T>
T mapping_error(const NeighborGraph<T>& graph, const PointsT<T>& reference, const PointsT<T>& moved,
                PointsT<T>* grad_reference, PointsT<T>* grad_moved) {
  const Eigen::Index m = reference.rows();
  if (moved.rows() != m || graph.indices.rows() != m) {
    throw ValidationError("mapping error needs two sets of the same size M");
  }
  const Eigen::Index k = graph.indices.cols();
  const T scale = T(1) / static_cast<T>(m * k);
  double total = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index jj = 0; jj < k; ++jj) {
      const Eigen::Index j = graph.indices(i, jj);
      const T v = graph.weights(i, jj);
      const Eigen::Matrix<T, 1, 3> dm = moved.row(i) - moved.row(j);
      const T dist2 = dm.squaredNorm();
      total += static_cast<double>(v * dist2);
      if (grad_moved) {
        const Eigen::Matrix<T, 1, 3> g = (T(2) * scale * v) * dm;
        grad_moved->row(i) += g;
        grad_moved->row(j) -= g;
      }
      if (grad_reference) {
        const Eigen::Matrix<T, 1, 3> dr = reference.row(i) - reference.row(j);
        const Eigen::Matrix<T, 1, 3> g = (T(-2) * scale * v * dist2) * dr;
        grad_reference->row(i) += g;
        grad_reference->row(j) -= g;
      }
    }
  }
  return static_cast<T>(total / static_cast<double>(m * k));
}

template <typename T>
T mapping_error(const PointsT<T>& reference, const PointsT<T>& moved, int k, PointsT<T>* grad_reference,
                PointsT<T>* grad_moved) {
  if (moved.rows() != reference.rows()) throw ValidationError("mapping error needs two sets of the same size M");
  return mapping_error(build_neighbor_graph(reference, k), reference, moved, grad_reference, grad_moved);
}

template <typename T>
LossValue<T> point2ssm_loss(std::span<const PointsT<T>> outputs, std::span<const PointsT<T>> fulls,
                            const LossConfig& config, std::vector<PointsT<T>>* grads) {
  const std::size_t b = outputs.size();
  if (b == 0) throw ValidationError("empty batch");
  if (fulls.size() != b) throw ValidationError("batch outputs and targets differ in length");
  const Eigen::Index m = outputs[0].rows();
  for (const auto& o : outputs) {
    if (o.rows() != m) throw ValidationError("all outputs in a batch must have M points");
  }
  if (grads) {
    grads->assign(b, PointsT<T>::Zero(m, 3));
  }

  LossValue<T> value;
  double cd = 0.0;
  const T inv_b = T(1) / static_cast<T>(b);
  for (std::size_t i = 0; i < b; ++i) {
    PointsT<T> g;
    if (grads) g = PointsT<T>::Zero(m, 3);
    cd += static_cast<double>(chamfer_distance<T>(outputs[i], fulls[i], grads ? &g : nullptr));
    if (grads) (*grads)[i] += inv_b * g;
  }
  value.chamfer = static_cast<T>(cd / static_cast<double>(b));

  double me = 0.0;
  if (b > 1 && config.alpha > 0.0) {
    config.validate(m);
    std::vector<NeighborGraph<T>> graphs;
    graphs.reserve(b);
    for (const auto& o : outputs) graphs.push_back(build_neighbor_graph(o, config.k_neighbors));
    // Every ordered pair appears twice in the double sum.
    const T pair_scale = T(2) * static_cast<T>(config.alpha) / static_cast<T>((b - 1) * (b - 1));
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < b; ++j) {
        if (i == j) continue;
        PointsT<T> gi, gj;
        if (grads) {
          gi = PointsT<T>::Zero(m, 3);
          gj = PointsT<T>::Zero(m, 3);
        }
        me += 2.0 * static_cast<double>(
                        mapping_error(graphs[i], outputs[i], outputs[j], grads ? &gi : nullptr, grads ? &gj : nullptr));
        if (grads) {
          (*grads)[i] += pair_scale * gi;
          (*grads)[j] += pair_scale * gj;
        }
      }
    }
    me /= static_cast<double>((b - 1) * (b - 1));
  }
  value.mapping = static_cast<T>(me);
  value.total = static_cast<T>(cd / static_cast<double>(b) + config.alpha * me);
  return value;
}

#define P2SSM_INSTANTIATE_LOSSES(T)                                                                         \
  template NeighborGraph<T> build_neighbor_graph<T>(const PointsT<T>&, int);                              \
  template T chamfer_distance<T>(const PointsT<T>&, const PointsT<T>&, PointsT<T>*, PointsT<T>*);          \
  template T mapping_error<T>(const PointsT<T>&, const PointsT<T>&, int, PointsT<T>*, PointsT<T>*);        \
  template T mapping_error<T>(const NeighborGraph<T>&, const PointsT<T>&, const PointsT<T>&, PointsT<T>*, \
                              PointsT<T>*);                                                               \
  template LossValue<T> point2ssm_loss<T>(std::span<const PointsT<T>>, std::span<const PointsT<T>>,      \
                                          const LossConfig&, std::vector<PointsT<T>>*);

P2SSM_INSTANTIATE_LOSSES(float)
P2SSM_INSTANTIATE_LOSSES(double)

}  // namespace p2ssm
