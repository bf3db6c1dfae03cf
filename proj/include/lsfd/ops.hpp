#pragma once

#include "lsfd/tensor.hpp"

#include <array>

namespace lsfd {

// Elementwise. Binary ops require identical shapes; there is no broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
/// 1 - a
Tensor one_minus(const Tensor& a);

enum class ElementwiseKind { Add, Sub, Mul, Relu, Sigmoid, Tanh, Scale };

/// Dispatching form. `b` is required for binary kinds and ignored otherwise;
/// `factor` is used by Scale only.
Tensor elementwise(ElementwiseKind kind, const Tensor& a, const Tensor* b = nullptr, double factor = 1.0);

Tensor matmul(const Tensor& a, const Tensor& b);
/// [M,N]ᵀ -> [N,M]
Tensor transpose(const Tensor& a);

using Triple = std::array<Index, 3>;

/// Cross-correlation over [C_in,T,H,W] with kernel [C_out,C_in,kt,kh,kw].
Tensor conv3d(const Tensor& x, const Tensor& kernel, Triple stride = {1, 1, 1}, Triple pad = {0, 0, 0},
              Triple dilation = {1, 1, 1});
/// x[C,...] + bias[C], one bias per leading channel.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);
/// x[M,N] + bias[N] added to every row.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);

/// Average pooling over [C,T,H,W]. The window must tile the input exactly.
Tensor avg_pool3d(const Tensor& x, Triple window, Triple stride);
/// [C,T,H,W] -> [C]
Tensor global_avg_pool(const Tensor& x);

Tensor concat_lastdim(const std::vector<Tensor>& parts);
/// Half-open range [begin, end) of the last dimension.
Tensor slice_lastdim(const Tensor& a, Index begin, Index end);
Tensor reshape(const Tensor& a, Shape shape);
/// Scalar [1]
Tensor sum_all(const Tensor& a);

/// Cosine of two equal-shape tensors viewed as flat vectors, shape [1].
/// Throws Numeric when either has zero norm.
Tensor cosine(const Tensor& a, const Tensor& b);
/// Cosine of `a` [d] against every row of `rows` [K,d], shape [K].
Tensor cosine_rows(const Tensor& a, const Tensor& rows);

/// -log softmax(logits)[target] for logits [K], shape [1].
Tensor cross_entropy(const Tensor& logits, Index target);
/// Mean over rows of -log softmax(logits[m,:])[labels[m]] for logits [M,C].
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace lsfd
