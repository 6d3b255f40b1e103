#include "p2ssm/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

#include "p2ssm/errors.hpp"

namespace p2ssm {

const char* to_string(EncoderKind k) { return k == EncoderKind::dgcnn ? "dgcnn" : "pointnet"; }
const char* to_string(HeadKind k) { return k == HeadKind::attn ? "attn" : "mlp"; }
const char* to_string(BottleneckKind k) { return k == BottleneckKind::per_point ? "per_point" : "global"; }

EncoderKind parse_encoder(const std::string& s) {
  if (s == "dgcnn") return EncoderKind::dgcnn;
  if (s == "pointnet") return EncoderKind::pointnet;
  throw ValidationError("unknown encoder kind '" + s + "' (expected dgcnn|pointnet)");
}

HeadKind parse_head(const std::string& s) {
  if (s == "attn") return HeadKind::attn;
  if (s == "mlp") return HeadKind::mlp;
  throw ValidationError("unknown head kind '" + s + "' (expected attn|mlp)");
}

BottleneckKind parse_bottleneck(const std::string& s) {
  if (s == "per_point") return BottleneckKind::per_point;
  if (s == "global") return BottleneckKind::global;
  throw ValidationError("unknown bottleneck kind '" + s + "' (expected per_point|global)");
}

void ModelConfig::validate() const {
  if (n_input < 1) throw ValidationError("model.N must be >= 1");
  if (m_output < 1) throw ValidationError("model.M must be >= 1");
  if (feature_dim < 1) throw ValidationError("model.L must be >= 1");
  if (hidden_dim < 1) throw ValidationError("model.hidden_dim must be >= 1");
  if (encoder == EncoderKind::dgcnn && (graph_k < 1 || graph_k >= n_input)) {
    throw ValidationError("model.graph_k must satisfy 1 <= graph_k < N");
  }
  if (bottleneck == BottleneckKind::global && head != HeadKind::mlp) {
    throw ValidationError("model.head must be mlp when model.bottleneck is global (autoencoder decoder)");
  }
  if (bottleneck == BottleneckKind::per_point && head == HeadKind::attn) {
    if (sfa_blocks < 0) throw ValidationError("model.sfa_blocks must be >= 0");
    if (attention_heads < 1 || feature_dim % attention_heads != 0) {
      throw ValidationError("model.attention_heads must divide model.L");
    }
  }
}

template <typename T>
Network<T>::Network(const ModelConfig& config) : config_(config) {
  config_.validate();
  auto& p = params_;
  const Eigen::Index h = config_.hidden_dim;
  const Eigen::Index l = config_.feature_dim;
  if (config_.encoder == EncoderKind::dgcnn) {
    edge_layers_.push_back(nn::EdgeConv<T>::create(p, "encoder.edge0", 3, h, config_.graph_k));
    edge_layers_.push_back(nn::EdgeConv<T>::create(p, "encoder.edge1", h, h, config_.graph_k));
    edge_layers_.push_back(nn::EdgeConv<T>::create(p, "encoder.edge2", h, h, config_.graph_k));
    fuse_ = nn::Linear<T>::create(p, "encoder.fuse", 3 * h, l);
  } else {
    pn1_ = nn::Linear<T>::create(p, "encoder.mlp0", 3, h);
    pn2_ = nn::Linear<T>::create(p, "encoder.mlp1", h, h);
    pn3_ = nn::Linear<T>::create(p, "encoder.mlp2", h, 2 * h);
    fuse_ = nn::Linear<T>::create(p, "encoder.fuse", 4 * h, l);
  }

  if (config_.bottleneck == BottleneckKind::per_point) {
    if (config_.head == HeadKind::attn) {
      for (int b = 0; b < config_.sfa_blocks; ++b) {
        sfa_.push_back(nn::SfaBlock<T>::create(p, "head.sfa" + std::to_string(b), l, config_.attention_heads));
      }
    } else {
      mlp1_ = nn::Linear<T>::create(p, "head.mlp0", l, l);
      mlp2_ = nn::Linear<T>::create(p, "head.mlp1", l, l);
      mlp3_ = nn::Linear<T>::create(p, "head.mlp2", l, l);
    }
    // A per-column bias would cancel in the softmax over input points.
    logits_ = nn::Linear<T>::create(p, "head.logits", l, config_.m_output, false);
  } else {
    dec1_ = nn::Linear<T>::create(p, "decoder.fc0", l, 256);
    dec2_ = nn::Linear<T>::create(p, "decoder.fc1", 256, 512);
    dec3_ = nn::Linear<T>::create(p, "decoder.fc2", 512, 3 * static_cast<Eigen::Index>(config_.m_output));
  }
}

template <typename T>
Network<T>::Network(const ModelParams& params) : Network(params.config) {
  load(params);
}

template <typename T>
void Network<T>::load(const ModelParams& params) {
  if (params.tensors.size() != params_.size()) {
    throw ValidationError("parameter set does not match the model layout");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto j = params.tensors.find(params_.name(i));
    if (!j) throw ValidationError("missing parameter tensor: " + params_.name(i));
    const auto& src = params.tensors[*j];
    if (src.rows() != params_[i].rows() || src.cols() != params_[i].cols()) {
      throw ValidationError("parameter tensor has the wrong shape: " + params_.name(i));
    }
    params_[i] = src.template cast<T>();
  }
}

template <typename T>
ModelParams Network<T>::export_params() const {
  ModelParams out;
  out.config = config_;
  out.init_seed = config_.seed;
  out.tensors = params_.template cast<double>();
  return out;
}

namespace {

template <typename T>
PointsT<T> lexicographic_rows(const PointsT<T>& p) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(p.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&p](Eigen::Index a, Eigen::Index b) {
    for (int d = 0; d < 3; ++d) {
      if (p(a, d) != p(b, d)) return p(a, d) < p(b, d);
    }
    return false;
  });
  PointsT<T> out(p.rows(), 3);
  for (std::size_t i = 0; i < order.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = p.row(order[i]);
  return out;
}

}  // namespace

template <typename T>
nn::Mat<T> Network<T>::encode(const PointsT<T>& points, Cache* cache) const {
  Cache local;
  Cache& c = cache ? *cache : local;
  c.input = points;
  if (config_.encoder == EncoderKind::dgcnn) {
    if (points.rows() <= config_.graph_k) {
      throw ValidationError("dgcnn needs more than graph_k=" + std::to_string(config_.graph_k) + " input points");
    }
    c.edges.resize(edge_layers_.size());
    c.fused_in.resize(points.rows(), 3 * config_.hidden_dim);
    nn::Mat<T> x = points;
    for (std::size_t i = 0; i < edge_layers_.size(); ++i) {
      x = edge_layers_[i].forward(params_, x, c.edges[i]);
      c.fused_in.middleCols(static_cast<Eigen::Index>(i) * config_.hidden_dim, config_.hidden_dim) = x;
    }
  } else {
    if (points.rows() < 1) throw ValidationError("pointnet needs at least one input point");
    c.pn1_pre = pn1_.forward(params_, points);
    c.pn1 = nn::relu<T>(c.pn1_pre);
    c.pn2_pre = pn2_.forward(params_, c.pn1);
    c.pn2 = nn::relu<T>(c.pn2_pre);
    c.pn3_pre = pn3_.forward(params_, c.pn2);
    c.pn3 = nn::relu<T>(c.pn3_pre);
    const nn::RowVec<T> global = nn::max_pool<T>(c.pn3, c.pn_argmax);
    const Eigen::Index w = c.pn3.cols();
    c.fused_in.resize(points.rows(), 2 * w);
    c.fused_in.leftCols(w) = c.pn3;
    c.fused_in.rightCols(w) = global.replicate(points.rows(), 1);
  }
  c.fused_pre = fuse_.forward(params_, c.fused_in);
  c.features = nn::leaky_relu<T>(c.fused_pre);
  return c.features;
}

template <typename T>
nn::Mat<T> Network<T>::encode_backward(const Cache& c, const nn::Mat<T>& d_features, nn::ParamSet<T>& g) const {
  const nn::Mat<T> d_pre = nn::leaky_relu_backward<T>(c.fused_pre, d_features);
  const nn::Mat<T> d_fused_in = fuse_.backward(params_, g, c.fused_in, d_pre);
  if (config_.encoder == EncoderKind::dgcnn) {
    const Eigen::Index h = config_.hidden_dim;
    nn::Mat<T> dx = d_fused_in.middleCols(static_cast<Eigen::Index>(edge_layers_.size() - 1) * h, h);
    for (std::size_t i = edge_layers_.size(); i-- > 0;) {
      dx = edge_layers_[i].backward(params_, g, c.edges[i], dx);
      if (i > 0) dx += d_fused_in.middleCols(static_cast<Eigen::Index>(i - 1) * h, h);
    }
    return dx;
  }
  const Eigen::Index w = c.pn3.cols();
  nn::Mat<T> d_local = d_fused_in.leftCols(w);
  const nn::RowVec<T> d_global = d_fused_in.rightCols(w).colwise().sum();
  for (Eigen::Index col = 0; col < w; ++col) d_local(c.pn_argmax[static_cast<std::size_t>(col)], col) += d_global(col);
  nn::Mat<T> d = pn3_.backward(params_, g, c.pn2, nn::relu_backward<T>(c.pn3_pre, d_local));
  d = pn2_.backward(params_, g, c.pn1, nn::relu_backward<T>(c.pn2_pre, d));
  return pn1_.backward(params_, g, c.input, nn::relu_backward<T>(c.pn1_pre, d));
}

template <typename T>
ForwardOutput<T> Network<T>::forward(const PointsT<T>& points, Cache* cache) const {
  Cache local;
  Cache& c = cache ? *cache : local;
  ForwardOutput<T> out;

  if (config_.bottleneck == BottleneckKind::global) {
    // Rows are put in lexicographic order first: matrix-product rounding can
    // depend on a row's position, and the pooled code must not.
    const nn::Mat<T> features = encode(lexicographic_rows(points), &c);
    c.latent = nn::max_pool<T>(features, c.pool_argmax);
    c.dec1_pre = dec1_.forward(params_, c.latent);
    c.dec1 = nn::relu<T>(c.dec1_pre);
    c.dec2_pre = dec2_.forward(params_, c.dec1);
    c.dec2 = nn::relu<T>(c.dec2_pre);
    const nn::Mat<T> flat = dec3_.forward(params_, c.dec2);
    if (!flat.allFinite()) throw NumericalError("decoder produced non-finite coordinates");
    out.points = Eigen::Map<const PointsT<T>>(flat.data(), config_.m_output, 3);
    return out;
  }

  nn::Mat<T> h = encode(points, &c);
  if (config_.head == HeadKind::attn) {
    c.sfa.resize(sfa_.size());
    for (std::size_t b = 0; b < sfa_.size(); ++b) h = sfa_[b].forward(params_, h, c.sfa[b]);
  } else {
    c.mlp1_pre = mlp1_.forward(params_, h);
    c.mlp1 = nn::relu<T>(c.mlp1_pre);
    c.mlp2_pre = mlp2_.forward(params_, c.mlp1);
    c.mlp2 = nn::relu<T>(c.mlp2_pre);
    c.mlp3_pre = mlp3_.forward(params_, c.mlp2);
    c.mlp3 = nn::relu<T>(c.mlp3_pre);
    h = c.mlp3;
  }
  c.head_features = h;
  const nn::Mat<T> logits = logits_.forward(params_, h);
  if (!logits.allFinite()) throw NumericalError("correspondence logits are non-finite");
  c.map = nn::softmax_rows<T>(logits.transpose());
  out.map = c.map;
  out.points = c.map * points;
  return out;
}

template <typename T>
void Network<T>::backward(const Cache& c, const PointsT<T>& d_points, nn::ParamSet<T>& g) const {
  nn::Mat<T> d_features;
  if (config_.bottleneck == BottleneckKind::global) {
    const nn::Mat<T> d_flat = Eigen::Map<const nn::Mat<T>>(d_points.data(), 1, d_points.size());
    nn::Mat<T> d = dec3_.backward(params_, g, c.dec2, d_flat);
    d = dec2_.backward(params_, g, c.dec1, nn::relu_backward<T>(c.dec2_pre, d));
    const nn::Mat<T> d_latent = dec1_.backward(params_, g, c.latent, nn::relu_backward<T>(c.dec1_pre, d));
    d_features = nn::Mat<T>::Zero(c.features.rows(), c.features.cols());
    for (Eigen::Index col = 0; col < d_latent.cols(); ++col) {
      d_features(c.pool_argmax[static_cast<std::size_t>(col)], col) += d_latent(0, col);
    }
  } else {
    const nn::Mat<T> d_map = d_points * c.input.transpose();
    const nn::Mat<T> d_logits = nn::softmax_rows_backward<T>(c.map, d_map).transpose();
    nn::Mat<T> d = logits_.backward(params_, g, c.head_features, d_logits);
    if (config_.head == HeadKind::attn) {
      for (std::size_t b = sfa_.size(); b-- > 0;) d = sfa_[b].backward(params_, g, c.sfa[b], d);
    } else {
      d = mlp3_.backward(params_, g, c.mlp2, nn::relu_backward<T>(c.mlp3_pre, d));
      d = mlp2_.backward(params_, g, c.mlp1, nn::relu_backward<T>(c.mlp2_pre, d));
      d = mlp1_.backward(params_, g, c.features, nn::relu_backward<T>(c.mlp1_pre, d));
    }
    d_features = std::move(d);
  }
  encode_backward(c, d_features, g);
}

template class Network<float>;
template class Network<double>;

ModelParams init_params(const ModelConfig& config) {
  Network<double> net(config);
  nn::initialize(net.params(), config.seed);
  ModelParams out = net.export_params();
  out.init_scheme = "uniform_fan_in";
  out.init_seed = config.seed;
  return out;
}

void export_correspondence_map(const std::filesystem::path& path, const nn::Mat<double>& map) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "output_index,input_index,weight,log10_weight\n" << std::setprecision(9);
  for (Eigen::Index i = 0; i < map.rows(); ++i) {
    for (Eigen::Index j = 0; j < map.cols(); ++j) {
      const double w = map(i, j);
      out << i << ',' << j << ',' << w << ',' << (w > 0.0 ? std::log10(w) : -400.0) << '\n';
    }
  }
}

}  // namespace p2ssm
