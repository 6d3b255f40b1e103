#pragma once

// Layers with explicit forward/backward passes. Activations are row-major
// (points x channels) Eigen matrices; parameters live in a ParamSet and layers
// refer to them by index, so one layout can be shared by value and gradient
// stores of the same shape.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "p2ssm/geometry.hpp"
#include "p2ssm/losses.hpp"

namespace p2ssm::nn {

template <typename T>
using Mat = MatT<T>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <typename T>
using ColVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// How a tensor is initialised. Weights: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
struct InitRule {
  enum class Kind { uniform_fan_in, zeros, ones } kind = Kind::zeros;
  Eigen::Index fan_in = 0;
};

template <typename T>
class ParamSet {
 public:
  std::size_t add(std::string name, Eigen::Index rows, Eigen::Index cols, InitRule rule);

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const InitRule& rule(std::size_t i) const { return rules_[i]; }
  Mat<T>& operator[](std::size_t i) { return values_[i]; }
  const Mat<T>& operator[](std::size_t i) const { return values_[i]; }
  std::optional<std::size_t> find(std::string_view name) const;

  ParamSet zeros_like() const;
  void set_zero();
  Eigen::Index scalar_count() const;
  bool all_finite() const;

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (std::size_t i = 0; i < size(); ++i) {
      const auto idx = out.add(names_[i], values_[i].rows(), values_[i].cols(), rules_[i]);
      out[idx] = values_[i].template cast<U>();
    }
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Mat<T>> values_;
  std::vector<InitRule> rules_;
};

// Fills every tensor of `params` by its rule from a generator seeded with `seed`.
template <typename T>
void initialize(ParamSet<T>& params, std::uint64_t seed);

template <typename T>
Mat<T> leaky_relu(const Mat<T>& x, T slope = T(0.2));
template <typename T>
Mat<T> leaky_relu_backward(const Mat<T>& pre, const Mat<T>& dy, T slope = T(0.2));
template <typename T>
Mat<T> relu(const Mat<T>& x);
template <typename T>
Mat<T> relu_backward(const Mat<T>& pre, const Mat<T>& dy);
template <typename T>
Mat<T> gelu(const Mat<T>& x);
template <typename T>
Mat<T> gelu_backward(const Mat<T>& pre, const Mat<T>& dy);

// Row-wise softmax and its vector-Jacobian product given the softmax output.
template <typename T>
Mat<T> softmax_rows(const Mat<T>& x);
template <typename T>
Mat<T> softmax_rows_backward(const Mat<T>& probs, const Mat<T>& dy);

// Per-point affine map Y = X W (+ b), i.e. a kernel-size-1 convolution.
template <typename T>
struct Linear {
  std::size_t weight = 0;
  std::optional<std::size_t> bias;
  Eigen::Index in = 0;
  Eigen::Index out = 0;

  static Linear create(ParamSet<T>& params, const std::string& name, Eigen::Index in, Eigen::Index out,
                       bool with_bias = true);
  Mat<T> forward(const ParamSet<T>& p, const Mat<T>& x) const;
  // Accumulates parameter gradients into `g` and returns dL/dx.
  Mat<T> backward(const ParamSet<T>& p, ParamSet<T>& g, const Mat<T>& x, const Mat<T>& dy) const;
};

template <typename T>
struct LayerNorm {
  std::size_t gamma = 0;
  std::size_t beta = 0;
  Eigen::Index dim = 0;
  T eps = T(1e-5);

  struct Cache {
    Mat<T> xhat;
    ColVec<T> inv_std;
  };

  static LayerNorm create(ParamSet<T>& params, const std::string& name, Eigen::Index dim);
  Mat<T> forward(const ParamSet<T>& p, const Mat<T>& x, Cache& cache) const;
  Mat<T> backward(const ParamSet<T>& p, ParamSet<T>& g, const Cache& cache, const Mat<T>& dy) const;
};

// Multi-head scaled dot-product self-attention over the points of one cloud.
template <typename T>
struct SelfAttention {
  Linear<T> query, key, value, proj;
  int heads = 1;

  struct Cache {
    Mat<T> x, q, k, v, concat;
    std::vector<Mat<T>> probs;  // one N x N map per head
  };

  static SelfAttention create(ParamSet<T>& params, const std::string& name, Eigen::Index dim, int heads);
  Mat<T> forward(const ParamSet<T>& p, const Mat<T>& x, Cache& cache) const;
  Mat<T> backward(const ParamSet<T>& p, ParamSet<T>& g, const Cache& cache, const Mat<T>& dy) const;
};

// Self-feature-augment block: input projection, pre-norm self-attention with
// residual, post-norm, GELU feed-forward with residual.
template <typename T>
struct SfaBlock {
  Linear<T> input_proj;
  LayerNorm<T> norm_in;
  SelfAttention<T> attention;
  LayerNorm<T> norm_mid;
  Linear<T> ffn_in, ffn_out;

  struct Cache {
    Mat<T> x, projected, normed, mixed, hidden_pre, hidden;
    typename LayerNorm<T>::Cache norm_in, norm_mid;
    typename SelfAttention<T>::Cache attention;
  };

  static SfaBlock create(ParamSet<T>& params, const std::string& name, Eigen::Index dim, int heads);
  Mat<T> forward(const ParamSet<T>& p, const Mat<T>& x, Cache& cache) const;
  Mat<T> backward(const ParamSet<T>& p, ParamSet<T>& g, const Cache& cache, const Mat<T>& dy) const;
};

// k nearest rows of `x` (itself included) by squared Euclidean distance in
// feature space, ties to the lowest index.
template <typename T>
IndexMatrix feature_knn(const Mat<T>& x, int k);

// Edge convolution over a kNN graph recomputed from the layer input:
//   y_i = LeakyReLU(max_{j in N(i)} (x_i Theta + (x_j - x_i) Phi + b)).
// The max commutes with the monotone activation and x_i terms, so it is
// evaluated as x_i (Theta - Phi) + b + max_j x_j Phi.
template <typename T>
struct EdgeConv {
  std::size_t theta = 0, phi = 0, bias = 0;
  Eigen::Index in = 0, out = 0;
  int k = 1;

  struct Cache {
    Mat<T> x, z;
    IndexMatrix argmax;  // N x out, winning neighbour per channel
  };

  static EdgeConv create(ParamSet<T>& params, const std::string& name, Eigen::Index in, Eigen::Index out, int k);
  Mat<T> forward(const ParamSet<T>& p, const Mat<T>& x, Cache& cache) const;
  Mat<T> backward(const ParamSet<T>& p, ParamSet<T>& g, const Cache& cache, const Mat<T>& dy) const;
};

// Column-wise max over points with the winning row per column.
template <typename T>
RowVec<T> max_pool(const Mat<T>& x, std::vector<Eigen::Index>& argmax);

}  // namespace p2ssm::nn
