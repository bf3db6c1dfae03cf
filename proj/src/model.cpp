#include "lsfd/model.hpp"

#include <cmath>

namespace lsfd {

namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng, bool requires_grad = true) {
  const Index n = numel(shape);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

// x [d] or [K,d] times w [d,h] plus bias [h].
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() == 1) {
    Tensor y = matmul(reshape(x, {1, x.dim(0)}), w);
    return add(reshape(y, {w.dim(1)}), b);
  }
  return add_row_bias(matmul(x, w), b);
}

const char* kGruNames[] = {"w_ir", "w_iz", "w_in", "w_hr", "w_hz", "w_hn",
                           "b_ir", "b_iz", "b_in", "b_hr", "b_hz", "b_hn"};

}  // namespace

Features split_features(const Tensor& xi) {
  if (xi.rank() != 1 || xi.dim(0) % 2 != 0) {
    throw Error(ErrorCode::Shape, "features must be a vector of even length, got " + shape_str(xi.shape()));
  }
  const Index half = xi.dim(0) / 2;
  return {xi, slice_lastdim(xi, 0, half), slice_lastdim(xi, half, xi.dim(0))};
}

Encoder::Encoder(const EncoderConfig& config, Rng& rng) : config_(config) {
  if (config.feature_dim < 2 || config.feature_dim % 2 != 0) {
    throw Error(ErrorCode::Config, "feature_dim must be even and >= 2");
  }
  const Index chans[4] = {3, config.c1, config.c2, config.feature_dim};
  for (int b = 0; b < 3; ++b) {
    const Index fan_in = chans[b] * 27;
    kernels.push_back(uniform_tensor({chans[b + 1], chans[b], 3, 3, 3}, std::sqrt(6.0 / fan_in), rng));
    biases.push_back(Tensor::zeros({chans[b + 1]}, true));
  }
}

Features Encoder::encode(const Tensor& clip) const {
  if (clip.rank() != 4 || clip.dim(0) != 3) {
    throw Error(ErrorCode::Shape, "encode: expected clip [3,T,H,W], got " + shape_str(clip.shape()));
  }
  if (clip.dim(2) % 8 != 0 || clip.dim(3) % 8 != 0) {
    throw Error(ErrorCode::Shape, "encode: spatial extents must be multiples of 8, got " + shape_str(clip.shape()));
  }
  Tensor x = clip;
  for (std::size_t b = 0; b < kernels.size(); ++b) {
    x = add_channel_bias(conv3d(x, kernels[b], {1, 1, 1}, {1, 1, 1}), biases[b]);
    if (b + 1 < kernels.size() || config_.final_relu) x = relu(x);
    const Index tw = (b == 0 || x.dim(1) == 1) ? 1 : 2;
    if (tw == 2 && x.dim(1) % 2 != 0) {
      throw Error(ErrorCode::Shape, "encode: temporal extent " + std::to_string(x.dim(1)) + " cannot be pooled");
    }
    x = avg_pool3d(x, {tw, 2, 2}, {tw, 2, 2});
  }
  return split_features(global_avg_pool(x));
}

NamedTensors Encoder::parameters(const std::string& prefix) const {
  NamedTensors out;
  for (std::size_t b = 0; b < kernels.size(); ++b) {
    out.emplace_back(prefix + "conv" + std::to_string(b + 1) + ".weight", kernels[b]);
    out.emplace_back(prefix + "conv" + std::to_string(b + 1) + ".bias", biases[b]);
  }
  return out;
}

Head::Head(int dim, int hidden, Rng& rng) : dim_(dim) {
  const double b1_bound = 1.0 / std::sqrt(static_cast<double>(dim));
  const double b2_bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  w1 = uniform_tensor({dim, hidden}, std::sqrt(6.0 / dim), rng);
  b1 = uniform_tensor({hidden}, b1_bound, rng);
  w2 = uniform_tensor({hidden, dim}, std::sqrt(3.0 / hidden), rng);
  b2 = uniform_tensor({dim}, b2_bound, rng);
}

Head Head::identity(int dim) {
  Head h;
  h.dim_ = dim;
  h.identity_ = true;
  return h;
}

Tensor Head::apply(const Tensor& z) const {
  const Index d = z.shape().back();
  if (d != dim_ || z.rank() > 2) {
    throw Error(ErrorCode::Shape, "head: input " + shape_str(z.shape()) + " vs head dim " + std::to_string(dim_));
  }
  if (identity_) return z;
  return affine(relu(affine(z, w1, b1)), w2, b2);
}

NamedTensors Head::parameters(const std::string& prefix) const {
  if (identity_) return {};
  return {{prefix + "w1", w1}, {prefix + "b1", b1}, {prefix + "w2", w2}, {prefix + "b2", b2}};
}

AggregatorKind parse_aggregator(const std::string& name) {
  if (name == "sum") return AggregatorKind::Sum;
  if (name == "linear") return AggregatorKind::Linear;
  if (name == "mlp") return AggregatorKind::Mlp;
  if (name == "gru") return AggregatorKind::Gru;
  throw Error(ErrorCode::Config, "unknown aggregator '" + name + "' (expected sum, linear, mlp, gru)");
}

std::string to_string(AggregatorKind kind) {
  switch (kind) {
    case AggregatorKind::Sum: return "sum";
    case AggregatorKind::Linear: return "linear";
    case AggregatorKind::Mlp: return "mlp";
    case AggregatorKind::Gru: return "gru";
  }
  return "?";
}

Aggregator::Aggregator(AggregatorKind kind, int n, int dim, Rng& rng) : kind_(kind), n_(n), dim_(dim) {
  if (n < 1) throw Error(ErrorCode::Config, "aggregator needs n >= 1");
  const Index in = static_cast<Index>(n) * dim;
  switch (kind) {
    case AggregatorKind::Sum: break;
    case AggregatorKind::Linear:
      weights = {uniform_tensor({in, dim}, std::sqrt(3.0 / in), rng), Tensor::zeros({dim}, true)};
      break;
    case AggregatorKind::Mlp:
      weights = {uniform_tensor({in, in}, std::sqrt(6.0 / in), rng), Tensor::zeros({in}, true),
                 uniform_tensor({in, dim}, std::sqrt(3.0 / in), rng), Tensor::zeros({dim}, true)};
      break;
    case AggregatorKind::Gru: {
      const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
      for (int i = 0; i < 6; ++i) weights.push_back(uniform_tensor({dim, dim}, bound, rng));
      for (int i = 0; i < 6; ++i) weights.push_back(uniform_tensor({dim}, bound, rng));
      break;
    }
  }
}

Tensor Aggregator::apply(const std::vector<Tensor>& phis) const {
  if (phis.empty()) throw Error(ErrorCode::Value, "aggregate: no inputs");
  for (const auto& p : phis) {
    if (p.rank() != 1 || p.dim(0) != dim_) {
      throw Error(ErrorCode::Shape, "aggregate: input " + shape_str(p.shape()) + " vs dim " + std::to_string(dim_));
    }
  }
  if (kind_ != AggregatorKind::Sum && static_cast<int>(phis.size()) != n_) {
    throw Error(ErrorCode::Value, "aggregate: expected " + std::to_string(n_) + " inputs, got " +
                                      std::to_string(phis.size()));
  }
  switch (kind_) {
    case AggregatorKind::Sum: {
      Tensor acc = phis[0];
      for (std::size_t i = 1; i < phis.size(); ++i) acc = add(acc, phis[i]);
      return acc;
    }
    case AggregatorKind::Linear: return affine(concat_lastdim(phis), weights[0], weights[1]);
    case AggregatorKind::Mlp: {
      Tensor hidden = relu(affine(concat_lastdim(phis), weights[0], weights[1]));
      return affine(hidden, weights[2], weights[3]);
    }
    case AggregatorKind::Gru: {
      const auto& w = weights;
      Tensor h = Tensor::zeros({dim_});
      for (const auto& x : phis) {
        Tensor r = sigmoid(add(affine(x, w[0], w[6]), affine(h, w[3], w[9])));
        Tensor z = sigmoid(add(affine(x, w[1], w[7]), affine(h, w[4], w[10])));
        Tensor cand = tanh(add(affine(x, w[2], w[8]), mul(r, affine(h, w[5], w[11]))));
        h = add(mul(one_minus(z), cand), mul(z, h));
      }
      return h;
    }
  }
  throw Error(ErrorCode::Value, "aggregate: unknown kind");
}

NamedTensors Aggregator::parameters(const std::string& prefix) const {
  NamedTensors out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    std::string name;
    switch (kind_) {
      case AggregatorKind::Gru: name = kGruNames[i]; break;
      case AggregatorKind::Linear: name = i == 0 ? "weight" : "bias"; break;
      default: name = (i % 2 == 0 ? "w" : "b") + std::to_string(i / 2 + 1); break;
    }
    out.emplace_back(prefix + name, weights[i]);
  }
  return out;
}

NamedTensors Branch::parameters(const std::string& prefix) const {
  NamedTensors out = encoder.parameters(prefix + "encoder.");
  for (auto* part : {&head_s, &head_n, &head_i}) {
    const char* name = part == &head_s ? "head_s." : part == &head_n ? "head_n." : "head_i.";
    auto p = part->parameters(prefix + name);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

NamedTensors MomentumPair::trainable() const {
  NamedTensors out = query.parameters("query.");
  auto a = aggregator.parameters("aggregator.");
  out.insert(out.end(), a.begin(), a.end());
  return out;
}

NamedTensors MomentumPair::all() const {
  NamedTensors out = trainable();
  auto k = key.parameters("key.");
  out.insert(out.end(), k.begin(), k.end());
  return out;
}

MomentumPair make_model(const ModelConfig& config, std::uint64_t seed) {
  Rng root(seed);
  Rng enc_rng = root.split(1), head_rng = root.split(2), agg_rng = root.split(3);
  MomentumPair pair;
  pair.m = config.momentum;
  const int d = config.encoder.feature_dim;
  pair.query.encoder = Encoder(config.encoder, enc_rng);
  pair.query.head_s = Head(d / 2, d / 2, head_rng);
  pair.query.head_n = Head(d / 2, d / 2, head_rng);
  pair.query.head_i = Head(d, d, head_rng);
  pair.aggregator = Aggregator(config.aggregator, config.n, d / 2, agg_rng);

  // Key starts as a detached copy of the query.
  pair.key = pair.query;
  Branch& key = pair.key;
  for (auto& t : key.encoder.kernels) t = Tensor(t.shape(), t.data(), false);
  for (auto& t : key.encoder.biases) t = Tensor(t.shape(), t.data(), false);
  for (Head* h : {&key.head_s, &key.head_n, &key.head_i}) {
    for (Tensor* t : {&h->w1, &h->b1, &h->w2, &h->b2}) *t = Tensor(t->shape(), t->data(), false);
  }
  return pair;
}

void momentum_update(const NamedTensors& query, const NamedTensors& key, double m) {
  if (query.size() != key.size()) throw Error(ErrorCode::Shape, "momentum_update: parameter count mismatch");
  for (std::size_t i = 0; i < query.size(); ++i) {
    const Tensor& q = query[i].second;
    Tensor k = key[i].second;
    if (q.shape() != k.shape()) {
      throw Error(ErrorCode::Shape, "momentum_update: " + query[i].first + " " + shape_str(q.shape()) + " vs " +
                                        shape_str(k.shape()));
    }
    Vector& kd = k.mutable_data();
    kd = m * kd + (1.0 - m) * q.data();
  }
}

void momentum_update(MomentumPair& pair) {
  momentum_update(pair.query.parameters(""), pair.key.parameters(""), pair.m);
}

}  // namespace lsfd
