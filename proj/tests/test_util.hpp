#pragma once

#include "lsfd/grad_check.hpp"
#include "lsfd/model.hpp"
#include "lsfd/ops.hpp"
#include "lsfd/rng.hpp"

namespace lsfd::test {

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0, bool requires_grad = false) {
  Vector v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

// Scalar probe <t, w> with fixed random weights, so every output element
// contributes a distinct gradient.
inline Tensor probe(const Tensor& t, std::uint64_t seed = 99) {
  Rng rng(seed);
  return sum_all(mul(t, random_tensor(rng, t.shape())));
}

inline bool bit_equal(const Vector& a, const Vector& b) {
  return a.size() == b.size() && (a.size() == 0 || std::equal(a.data(), a.data() + a.size(), b.data()));
}

inline Vector autodiff_grad(const ScalarFn& f, const Tensor& x) {
  Tensor w(x.shape(), x.data(), true);
  backward(f(w));
  return w.has_grad() ? w.grad() : Vector::Zero(x.size());
}

// Central differences at step 1e-5 carry round-off near 1e-11 |f|, so
// gradient elements below 1e-5 cannot be resolved to 1e-4 relative error.
inline bool fd_resolvable(const ScalarFn& f, const Tensor& x) {
  return autodiff_grad(f, x).cwiseAbs().minCoeff() > 1e-5;
}

// Smallest |pre-activation| over every ReLU in the encoder. Finite
// differences are only meaningful when this exceeds the probe step by a margin.
inline double min_relu_margin(const Encoder& enc, const Tensor& clip) {
  NoGradGuard guard;
  double margin = 1e300;
  Tensor x = clip;
  for (std::size_t b = 0; b < enc.kernels.size(); ++b) {
    x = add_channel_bias(conv3d(x, enc.kernels[b], {1, 1, 1}, {1, 1, 1}), enc.biases[b]);
    if (b + 1 < enc.kernels.size() || enc.config().final_relu) {
      margin = std::min(margin, x.data().cwiseAbs().minCoeff());
      x = relu(x);
    }
    const Index tw = (b == 0 || x.dim(1) == 1) ? 1 : 2;
    x = avg_pool3d(x, {tw, 2, 2}, {tw, 2, 2});
  }
  return margin;
}

}  // namespace lsfd::test
