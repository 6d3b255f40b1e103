#pragma once

#include <filesystem>
#include <string>

#include "p2ssm/nn.hpp"

namespace p2ssm {

enum class EncoderKind { dgcnn, pointnet };
enum class HeadKind { attn, mlp };
enum class BottleneckKind { per_point, global };

const char* to_string(EncoderKind k);
const char* to_string(HeadKind k);
const char* to_string(BottleneckKind k);
EncoderKind parse_encoder(const std::string& s);
HeadKind parse_head(const std::string& s);
BottleneckKind parse_bottleneck(const std::string& s);

struct ModelConfig {
  EncoderKind encoder = EncoderKind::dgcnn;
  HeadKind head = HeadKind::attn;
  BottleneckKind bottleneck = BottleneckKind::per_point;
  int n_input = 1024;      // N
  int m_output = 1024;     // M
  int feature_dim = 128;   // L
  int hidden_dim = 64;     // encoder layer width
  int graph_k = 20;        // DGCNN neighbourhood
  int sfa_blocks = 2;
  int attention_heads = 4;
  std::uint64_t seed = 0;

  // Throws ValidationError naming the offending field.
  void validate() const;
};

// Learnable tensors in 64-bit plus how they were initialised.
struct ModelParams {
  ModelConfig config;
  nn::ParamSet<double> tensors;
  std::string init_scheme = "uniform_fan_in";
  std::uint64_t init_seed = 0;
};

// Deterministic in config.seed. Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
// biases 0, layer-norm gain 1.
ModelParams init_params(const ModelConfig& config);

template <typename T>
struct ForwardOutput {
  PointsT<T> points;  // M x 3
  nn::Mat<T> map;     // M x N row-stochastic; empty for the autoencoder
};

// The network graph for one ModelConfig. Holds the layer layout and a
// parameter store of scalar type T; forward passes are const and reentrant.
template <typename T>
class Network {
 public:
  struct Cache;

  explicit Network(const ModelConfig& config);
  explicit Network(const ModelParams& params);

  const ModelConfig& config() const { return config_; }
  nn::ParamSet<T>& params() { return params_; }
  const nn::ParamSet<T>& params() const { return params_; }
  void load(const ModelParams& params);
  ModelParams export_params() const;

  // Dispatches on the bottleneck kind.
  ForwardOutput<T> forward(const PointsT<T>& points, Cache* cache = nullptr) const;
  // dL/d(output points) -> parameter gradients accumulated into `grads`.
  void backward(const Cache& cache, const PointsT<T>& d_points, nn::ParamSet<T>& grads) const;

  nn::Mat<T> encode(const PointsT<T>& points, Cache* cache = nullptr) const;

 private:
  ModelConfig config_;
  nn::ParamSet<T> params_;

  std::vector<nn::EdgeConv<T>> edge_layers_;
  nn::Linear<T> pn1_, pn2_, pn3_;
  nn::Linear<T> fuse_;

  std::vector<nn::SfaBlock<T>> sfa_;
  nn::Linear<T> mlp1_, mlp2_, mlp3_;
  nn::Linear<T> logits_;

  nn::Linear<T> dec1_, dec2_, dec3_;

  nn::Mat<T> encode_backward(const Cache& cache, const nn::Mat<T>& d_features, nn::ParamSet<T>& grads) const;
};

template <typename T>
struct Network<T>::Cache {
  nn::Mat<T> input;
  // dgcnn
  std::vector<typename nn::EdgeConv<T>::Cache> edges;
  // pointnet
  nn::Mat<T> pn1_pre, pn1, pn2_pre, pn2, pn3_pre, pn3;
  std::vector<Eigen::Index> pn_argmax;
  // shared encoder tail
  nn::Mat<T> fused_in, fused_pre, features;
  // attention / mlp head
  std::vector<typename nn::SfaBlock<T>::Cache> sfa;
  nn::Mat<T> mlp1_pre, mlp1, mlp2_pre, mlp2, mlp3_pre, mlp3;
  nn::Mat<T> head_features, map;
  // autoencoder
  std::vector<Eigen::Index> pool_argmax;
  nn::Mat<T> latent, dec1_pre, dec1, dec2_pre, dec2;
};

// Writes one row per (output point, input point): output_index, input_index,
// weight, log10 weight.
void export_correspondence_map(const std::filesystem::path& path, const nn::Mat<double>& map);

}  // namespace p2ssm
