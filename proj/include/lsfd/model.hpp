#pragma once

#include "lsfd/ops.hpp"
#include "lsfd/rng.hpp"

#include <string>
#include <utility>
#include <vector>

namespace lsfd {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

struct EncoderConfig {
  int c1 = 16;
  int c2 = 32;
  int feature_dim = 64;  // D; also the channel count of the last block
  bool final_relu = false;  // ReLU after the last conv; without it ξ is signed
};

/// Encoder output ξ with its positional halves ψ (first D/2) and φ (last D/2).
struct Features {
  Tensor xi, psi, phi;
};

Features split_features(const Tensor& xi);

/// Small 3D CNN: three conv(3x3x3, pad 1) -> ReLU -> avg-pool blocks and a
/// global average pool; the last ReLU is optional. Spatial pooling is 2x2 in
/// every block; temporal pooling of 2 happens in blocks 2 and 3 while the clip
/// still has more than one frame, so clips of 1, 2, 4, 8, ... frames are all
/// accepted.
class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& config, Rng& rng);

  const EncoderConfig& config() const { return config_; }
  int feature_dim() const { return config_.feature_dim; }

  /// clip [3, T, H, W] -> Features.
  Features encode(const Tensor& clip) const;

  NamedTensors parameters(const std::string& prefix) const;

  std::vector<Tensor> kernels, biases;

 private:
  EncoderConfig config_;
};

/// Two-layer perceptron d -> hidden -> d with biases and a ReLU hidden layer.
class Head {
 public:
  Head() = default;
  Head(int dim, int hidden, Rng& rng);
  static Head identity(int dim);

  int dim() const { return dim_; }
  bool is_identity() const { return identity_; }

  /// z [d] -> [d], or z [K, d] -> [K, d] row-wise.
  Tensor apply(const Tensor& z) const;

  NamedTensors parameters(const std::string& prefix) const;

  Tensor w1, b1, w2, b2;

 private:
  int dim_ = 0;
  bool identity_ = false;
};

enum class AggregatorKind { Sum, Linear, Mlp, Gru };

AggregatorKind parse_aggregator(const std::string& name);
std::string to_string(AggregatorKind kind);

/// g(φ_s^(1), ..., φ_s^(N)) -> [d].
class Aggregator {
 public:
  Aggregator() = default;
  Aggregator(AggregatorKind kind, int n, int dim, Rng& rng);

  AggregatorKind kind() const { return kind_; }
  int n() const { return n_; }
  int dim() const { return dim_; }

  Tensor apply(const std::vector<Tensor>& phis) const;

  NamedTensors parameters(const std::string& prefix) const;

  /// Named tensors in a fixed order; empty for Sum.
  std::vector<Tensor> weights;

 private:
  AggregatorKind kind_ = AggregatorKind::Sum;
  int n_ = 1;
  int dim_ = 0;
};

/// Encoder plus the three projection heads (h_s, h_n, h_i).
struct Branch {
  Encoder encoder;
  Head head_s, head_n, head_i;

  NamedTensors parameters(const std::string& prefix) const;
};

struct ModelConfig {
  EncoderConfig encoder;
  AggregatorKind aggregator = AggregatorKind::Sum;
  int n = 2;
  double momentum = 0.99;
};

/// Query branch trained by gradients, key branch updated by momentum only.
struct MomentumPair {
  Branch query;
  Branch key;
  Aggregator aggregator;
  double m = 0.99;

  /// Every trainable tensor: query branch then aggregator.
  NamedTensors trainable() const;
  /// Everything checkpointed: trainable, then key branch.
  NamedTensors all() const;
};

MomentumPair make_model(const ModelConfig& config, std::uint64_t seed);

/// θ_k <- m θ_k + (1 - m) θ_q for every key tensor, outside any graph.
void momentum_update(MomentumPair& pair);
void momentum_update(const NamedTensors& query, const NamedTensors& key, double m);

}  // namespace lsfd
