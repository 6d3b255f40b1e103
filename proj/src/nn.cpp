#include "p2ssm/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "p2ssm/errors.hpp"

namespace p2ssm::nn {

template <typename T>
std::size_t ParamSet<T>::add(std::string name, Eigen::Index rows, Eigen::Index cols, InitRule rule) {
  if (find(name)) throw ValidationError("duplicate parameter name: " + name);
  names_.push_back(std::move(name));
  values_.push_back(Mat<T>::Zero(rows, cols));
  rules_.push_back(rule);
  return values_.size() - 1;
}

template <typename T>
std::optional<std::size_t> ParamSet<T>::find(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  return std::nullopt;
}

template <typename T>
ParamSet<T> ParamSet<T>::zeros_like() const {
  ParamSet out = *this;
  out.set_zero();
  return out;
}

template <typename T>
void ParamSet<T>::set_zero() {
  for (auto& v : values_) v.setZero();
}

template <typename T>
Eigen::Index ParamSet<T>::scalar_count() const {
  Eigen::Index n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

template <typename T>
bool ParamSet<T>::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](const Mat<T>& v) { return v.allFinite(); });
}

template <typename T>
void initialize(ParamSet<T>& params, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const InitRule& rule = params.rule(i);
    auto& v = params[i];
    switch (rule.kind) {
      case InitRule::Kind::zeros:
        v.setZero();
        break;
      case InitRule::Kind::ones:
        v.setOnes();
        break;
      case InitRule::Kind::uniform_fan_in: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(rule.fan_in, 1)));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (Eigen::Index r = 0; r < v.rows(); ++r) {
          for (Eigen::Index c = 0; c < v.cols(); ++c) v(r, c) = static_cast<T>(dist(rng));
        }
        break;
      }
    }
  }
}

template <typename T>
Mat<T> leaky_relu(const Mat<T>& x, T slope) {
  return x.unaryExpr([slope](T v) { return v > T(0) ? v : slope * v; });
}

template <typename T>
Mat<T> leaky_relu_backward(const Mat<T>& pre, const Mat<T>& dy, T slope) {
  return dy.binaryExpr(pre, [slope](T d, T v) { return v > T(0) ? d : slope * d; });
}

template <typename T>
Mat<T> relu(const Mat<T>& x) {
  return x.cwiseMax(T(0));
}

template <typename T>
Mat<T> relu_backward(const Mat<T>& pre, const Mat<T>& dy) {
  return dy.binaryExpr(pre, [](T d, T v) { return v > T(0) ? d : T(0); });
}

template <typename T>
Mat<T> gelu(const Mat<T>& x) {
  return x.unaryExpr([](T v) { return T(0.5) * v * (T(1) + std::erf(v / std::sqrt(T(2)))); });
}

template <typename T>
Mat<T> gelu_backward(const Mat<T>& pre, const Mat<T>& dy) {
  const T inv_sqrt_2pi = T(0.3989422804014327);
  return dy.binaryExpr(pre, [inv_sqrt_2pi](T d, T v) {
    const T cdf = T(0.5) * (T(1) + std::erf(v / std::sqrt(T(2))));
    return d * (cdf + v * inv_sqrt_2pi * std::exp(T(-0.5) * v * v));
  });
}

template <typename T>
Mat<T> softmax_rows(const Mat<T>& x) {
  Mat<T> out = x.colwise() - x.rowwise().maxCoeff();
  out = out.array().exp();
  out.array().colwise() /= out.rowwise().sum().array();
  return out;
}

template <typename T>
Mat<T> softmax_rows_backward(const Mat<T>& probs, const Mat<T>& dy) {
  const ColVec<T> inner = (dy.array() * probs.array()).rowwise().sum();
  return probs.array() * (dy.array().colwise() - inner.array());
}

template <typename T>
Linear<T> Linear<T>::create(ParamSet<T>& params, const std::string& name, Eigen::Index in, Eigen::Index out,
                            bool with_bias) {
  Linear l;
  l.in = in;
  l.out = out;
  l.weight = params.add(name + ".weight", in, out, {InitRule::Kind::uniform_fan_in, in});
  if (with_bias) l.bias = params.add(name + ".bias", 1, out, {InitRule::Kind::zeros, 0});
  return l;
}

template <typename T>
Mat<T> Linear<T>::forward(const ParamSet<T>& p, const Mat<T>& x) const {
  Mat<T> y = x * p[weight];
  if (bias) y.rowwise() += p[*bias].row(0);
  return y;
}

template <typename T>
Mat<T> Linear<T>::backward(const ParamSet<T>& p, ParamSet<T>& g, const Mat<T>& x, const Mat<T>& dy) const {
  g[weight].noalias() += x.transpose() * dy;
  if (bias) g[*bias] += dy.colwise().sum();
  return dy * p[weight].transpose();
}

template <typename T>
LayerNorm<T> LayerNorm<T>::create(ParamSet<T>& params, const std::string& name, Eigen::Index dim) {
  LayerNorm n;
  n.dim = dim;
  n.gamma = params.add(name + ".gamma", 1, dim, {InitRule::Kind::ones, 0});
  n.beta = params.add(name + ".beta", 1, dim, {InitRule::Kind::zeros, 0});
  return n;
}

template <typename T>
Mat<T> LayerNorm<T>::forward(const ParamSet<T>& p, const Mat<T>& x, Cache& cache) const {
  const ColVec<T> mean = x.rowwise().mean();
  cache.xhat = x.colwise() - mean;
  const ColVec<T> var = cache.xhat.array().square().rowwise().mean();
  cache.inv_std = (var.array() + eps).rsqrt();
  cache.xhat.array().colwise() *= cache.inv_std.array();
  Mat<T> y = cache.xhat.array().rowwise() * p[gamma].row(0).array();
  y.rowwise() += p[beta].row(0);
  return y;
}

template <typename T>
Mat<T> LayerNorm<T>::backward(const ParamSet<T>& p, ParamSet<T>& g, const Cache& cache, const Mat<T>& dy) const {
  g[gamma] += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  g[beta] += dy.colwise().sum();
  const Mat<T> dxhat = dy.array().rowwise() * p[gamma].row(0).array();
  const ColVec<T> mean_d = dxhat.rowwise().mean();
  const ColVec<T> mean_dx = (dxhat.array() * cache.xhat.array()).rowwise().mean();
  Mat<T> dx = (dxhat.colwise() - mean_d) - (cache.xhat.array().colwise() * mean_dx.array()).matrix();
  dx.array().colwise() *= cache.inv_std.array();
  return dx;
}

template <typename T>
SelfAttention<T> SelfAttention<T>::create(ParamSet<T>& params, const std::string& name, Eigen::Index dim,
                                          int heads) {
  if (heads < 1 || dim % heads != 0) {
    throw ValidationError("attention heads must divide the feature width");
  }
  SelfAttention a;
  a.heads = heads;
  a.query = Linear<T>::create(params, name + ".query", dim, dim);
  a.key = Linear<T>::create(params, name + ".key", dim, dim);
  a.value = Linear<T>::create(params, name + ".value", dim, dim);
  a.proj = Linear<T>::create(params, name + ".proj", dim, dim);
  return a;
}

template <typename T>
Mat<T> SelfAttention<T>::forward(const ParamSet<T>& p, const Mat<T>& x, Cache& cache) const {
  cache.x = x;
  cache.q = query.forward(p, x);
  cache.k = key.forward(p, x);
  cache.v = value.forward(p, x);
  const Eigen::Index n = x.rows();
  const Eigen::Index dh = x.cols() / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  cache.concat.resize(n, x.cols());
  cache.probs.resize(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const auto qh = cache.q.middleCols(h * dh, dh);
    const auto kh = cache.k.middleCols(h * dh, dh);
    const auto vh = cache.v.middleCols(h * dh, dh);
    Mat<T> scores = (qh * kh.transpose()) * scale;
    cache.probs[static_cast<std::size_t>(h)] = softmax_rows<T>(scores);
    cache.concat.middleCols(h * dh, dh).noalias() = cache.probs[static_cast<std::size_t>(h)] * vh;
  }
  return proj.forward(p, cache.concat);
}

template <typename T>
Mat<T> SelfAttention<T>::backward(const ParamSet<T>& p, ParamSet<T>& g, const Cache& cache,
                                  const Mat<T>& dy) const {
  const Mat<T> dconcat = proj.backward(p, g, cache.concat, dy);
  const Eigen::Index n = cache.x.rows();
  const Eigen::Index dim = cache.x.cols();
  const Eigen::Index dh = dim / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  Mat<T> dq(n, dim), dk(n, dim), dv(n, dim);
  for (int h = 0; h < heads; ++h) {
    const Mat<T>& probs = cache.probs[static_cast<std::size_t>(h)];
    const auto dout = dconcat.middleCols(h * dh, dh);
    const Mat<T> dprobs = dout * cache.v.middleCols(h * dh, dh).transpose();
    dv.middleCols(h * dh, dh).noalias() = probs.transpose() * dout;
    const Mat<T> dscores = softmax_rows_backward<T>(probs, dprobs) * scale;
    dq.middleCols(h * dh, dh).noalias() = dscores * cache.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh).noalias() = dscores.transpose() * cache.q.middleCols(h * dh, dh);
  }
  Mat<T> dx = query.backward(p, g, cache.x, dq);
  dx += key.backward(p, g, cache.x, dk);
  dx += value.backward(p, g, cache.x, dv);
  return dx;
}

template <typename T>
SfaBlock<T> SfaBlock<T>::create(ParamSet<T>& params, const std::string& name, Eigen::Index dim, int heads) {
  SfaBlock b;
  b.input_proj = Linear<T>::create(params, name + ".input_proj", dim, dim);
  b.norm_in = LayerNorm<T>::create(params, name + ".norm_in", dim);
  b.attention = SelfAttention<T>::create(params, name + ".attn", dim, heads);
  b.norm_mid = LayerNorm<T>::create(params, name + ".norm_mid", dim);
  b.ffn_in = Linear<T>::create(params, name + ".ffn_in", dim, 2 * dim);
  b.ffn_out = Linear<T>::create(params, name + ".ffn_out", 2 * dim, dim);
  return b;
}

template <typename T>
Mat<T> SfaBlock<T>::forward(const ParamSet<T>& p, const Mat<T>& x, Cache& cache) const {
  cache.x = x;
  cache.projected = input_proj.forward(p, x);
  cache.normed = norm_in.forward(p, cache.projected, cache.norm_in);
  const Mat<T> residual = cache.normed + attention.forward(p, cache.normed, cache.attention);
  cache.mixed = norm_mid.forward(p, residual, cache.norm_mid);
  cache.hidden_pre = ffn_in.forward(p, cache.mixed);
  cache.hidden = gelu<T>(cache.hidden_pre);
  return cache.mixed + ffn_out.forward(p, cache.hidden);
}

template <typename T>
Mat<T> SfaBlock<T>::backward(const ParamSet<T>& p, ParamSet<T>& g, const Cache& cache, const Mat<T>& dy) const {
  const Mat<T> dhidden = ffn_out.backward(p, g, cache.hidden, dy);
  const Mat<T> dmixed = dy + ffn_in.backward(p, g, cache.mixed, gelu_backward<T>(cache.hidden_pre, dhidden));
  const Mat<T> dresidual = norm_mid.backward(p, g, cache.norm_mid, dmixed);
  const Mat<T> dnormed = dresidual + attention.backward(p, g, cache.attention, dresidual);
  const Mat<T> dprojected = norm_in.backward(p, g, cache.norm_in, dnormed);
  return input_proj.backward(p, g, cache.x, dprojected);
}

template <typename T>
IndexMatrix feature_knn(const Mat<T>& x, int k) {
  const Eigen::Index n = x.rows();
  if (k < 1 || k > n) throw ValidationError("graph neighbourhood size exceeds the point count");
  const ColVec<T> sq = x.rowwise().squaredNorm();
  Mat<T> d = x * x.transpose();
  d *= T(-2);
  d.colwise() += sq;
  d.rowwise() += sq.transpose();

  IndexMatrix out(n, k);
  std::vector<int> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    std::iota(order.begin(), order.end(), 0);
    const auto row = d.row(i);
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
      return row(a) < row(b) || (row(a) == row(b) && a < b);
    });
    for (int j = 0; j < k; ++j) out(i, j) = order[static_cast<std::size_t>(j)];
  }
  return out;
}

template <typename T>
EdgeConv<T> EdgeConv<T>::create(ParamSet<T>& params, const std::string& name, Eigen::Index in, Eigen::Index out,
                                int k) {
  EdgeConv e;
  e.in = in;
  e.out = out;
  e.k = k;
  e.theta = params.add(name + ".theta", in, out, {InitRule::Kind::uniform_fan_in, 2 * in});
  e.phi = params.add(name + ".phi", in, out, {InitRule::Kind::uniform_fan_in, 2 * in});
  e.bias = params.add(name + ".bias", 1, out, {InitRule::Kind::zeros, 0});
  return e;
}

template <typename T>
Mat<T> EdgeConv<T>::forward(const ParamSet<T>& p, const Mat<T>& x, Cache& cache) const {
  const Eigen::Index n = x.rows();
  cache.x = x;
  const IndexMatrix graph = feature_knn<T>(x, k);
  const Mat<T> neighbour = x * p[phi];
  cache.z = x * (p[theta] - p[phi]);
  cache.z.rowwise() += p[bias].row(0);
  cache.argmax.resize(n, out);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index c = 0; c < out; ++c) {
      int best = graph(i, 0);
      T best_v = neighbour(best, c);
      for (int j = 1; j < k; ++j) {
        const int cand = graph(i, j);
        if (neighbour(cand, c) > best_v) {
          best_v = neighbour(cand, c);
          best = cand;
        }
      }
      cache.argmax(i, c) = best;
      cache.z(i, c) += best_v;
    }
  }
  return leaky_relu<T>(cache.z);
}

template <typename T>
Mat<T> EdgeConv<T>::backward(const ParamSet<T>& p, ParamSet<T>& g, const Cache& cache, const Mat<T>& dy) const {
  const Mat<T> dz = leaky_relu_backward<T>(cache.z, dy);
  Mat<T> dneighbour = -dz;
  for (Eigen::Index i = 0; i < dz.rows(); ++i) {
    for (Eigen::Index c = 0; c < out; ++c) dneighbour(cache.argmax(i, c), c) += dz(i, c);
  }
  g[theta].noalias() += cache.x.transpose() * dz;
  g[phi].noalias() += cache.x.transpose() * dneighbour;
  g[bias] += dz.colwise().sum();
  Mat<T> dx = dz * p[theta].transpose();
  dx.noalias() += dneighbour * p[phi].transpose();
  return dx;
}

template <typename T>
RowVec<T> max_pool(const Mat<T>& x, std::vector<Eigen::Index>& argmax) {
  RowVec<T> out(x.cols());
  argmax.assign(static_cast<std::size_t>(x.cols()), 0);
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    Eigen::Index r = 0;
    out(c) = x.col(c).maxCoeff(&r);
    argmax[static_cast<std::size_t>(c)] = r;
  }
  return out;
}

#define P2SSM_INSTANTIATE_NN(T)                                                  \
  template class ParamSet<T>;                                                    \
  template void initialize<T>(ParamSet<T>&, std::uint64_t);                      \
  template Mat<T> leaky_relu<T>(const Mat<T>&, T);                               \
  template Mat<T> leaky_relu_backward<T>(const Mat<T>&, const Mat<T>&, T);       \
  template Mat<T> relu<T>(const Mat<T>&);                                        \
  template Mat<T> relu_backward<T>(const Mat<T>&, const Mat<T>&);                \
  template Mat<T> gelu<T>(const Mat<T>&);                                        \
  template Mat<T> gelu_backward<T>(const Mat<T>&, const Mat<T>&);                \
  template Mat<T> softmax_rows<T>(const Mat<T>&);                                \
  template Mat<T> softmax_rows_backward<T>(const Mat<T>&, const Mat<T>&);        \
  template struct Linear<T>;                                                     \
  template struct LayerNorm<T>;                                                  \
  template struct SelfAttention<T>;                                              \
  template struct SfaBlock<T>;                                                   \
  template IndexMatrix feature_knn<T>(const Mat<T>&, int);                       \
  template struct EdgeConv<T>;                                                   \
  template RowVec<T> max_pool<T>(const Mat<T>&, std::vector<Eigen::Index>&);

P2SSM_INSTANTIATE_NN(float)
P2SSM_INSTANTIATE_NN(double)

}  // namespace p2ssm::nn
