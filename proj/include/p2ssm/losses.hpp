#pragma once

#include <span>
#include <vector>

#include "p2ssm/geometry.hpp"

namespace p2ssm {

template <typename T>
using MatT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// K nearest neighbours of every point of a set within the same set (self
// excluded, ties to the lowest index) and their proximity weights
// exp(-|c_i - c_j|^2).
template <typename T>
struct NeighborGraph {
  IndexMatrix indices;
  MatT<T> weights;
};

template <typename T>
NeighborGraph<T> build_neighbor_graph(const PointsT<T>& points, int k);

// Symmetric Chamfer distance with squared Euclidean terms:
//   mean_c min_s |c - s|^2 + mean_s min_c |s - c|^2.
// Optional gradients are accumulated (+=) into pre-sized outputs.
template <typename T>
T chamfer_distance(const PointsT<T>& c, const PointsT<T>& s, PointsT<T>* grad_c = nullptr,
                   PointsT<T>* grad_s = nullptr);

// Pairwise mapping error of `moved` against the neighbourhoods of `reference`:
//   1/(M K) sum_i sum_{j in N_ref(i)} v_ij |moved_i - moved_j|^2.
// The graph is piecewise constant in `reference`; the weights are
// differentiated, so `grad_reference` is the gradient with the neighbour sets
// held fixed.
template <typename T>
T mapping_error(const PointsT<T>& reference, const PointsT<T>& moved, int k, PointsT<T>* grad_reference = nullptr,
                PointsT<T>* grad_moved = nullptr);

template <typename T>
T mapping_error(const NeighborGraph<T>& graph, const PointsT<T>& reference, const PointsT<T>& moved,
                PointsT<T>* grad_reference = nullptr, PointsT<T>* grad_moved = nullptr);

struct LossConfig {
  double alpha = 0.1;
  int k_neighbors = 10;

  void validate(Eigen::Index m_output) const;
};

template <typename T>
struct LossValue {
  T total = 0;
  T chamfer = 0;   // batch mean CD
  T mapping = 0;   // bracketed ME term before alpha
};

// Batch objective: mean CD(C_i, S_i) + alpha / (B-1)^2 * sum_i sum_{j != i}
// [ME(C_i, C_j) + ME(C_j, C_i)]. The regulariser is 0 for B = 1.
// `grads`, when given, is resized to B and receives dL/dC_i.
template <typename T>
LossValue<T> point2ssm_loss(std::span<const PointsT<T>> outputs, std::span<const PointsT<T>> fulls,
                            const LossConfig& config, std::vector<PointsT<T>>* grads = nullptr);

}  // namespace p2ssm
