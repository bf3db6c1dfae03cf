#include "lsfd/ops.hpp"

#include <algorithm>

namespace lsfd {

namespace {

struct ConvGeometry {
  Index cin, cout;
  Triple in, k, out, stride, pad, dil;

  Index patch() const { return cin * k[0] * k[1] * k[2]; }
  Index outputs() const { return out[0] * out[1] * out[2]; }
};

// Visits every (patch row, output column, input offset) triple that lands
// inside the input. Padding positions are skipped.
template <typename Fn>
void for_each_tap(const ConvGeometry& g, Fn&& fn) {
  const Index in_plane = g.in[1] * g.in[2], in_vol = g.in[0] * in_plane;
  Index row = 0;
  for (Index ci = 0; ci < g.cin; ++ci)
    for (Index a = 0; a < g.k[0]; ++a)
      for (Index b = 0; b < g.k[1]; ++b)
        for (Index c = 0; c < g.k[2]; ++c, ++row) {
          for (Index t = 0; t < g.out[0]; ++t) {
            const Index ti = t * g.stride[0] - g.pad[0] + a * g.dil[0];
            if (ti < 0 || ti >= g.in[0]) continue;
            for (Index h = 0; h < g.out[1]; ++h) {
              const Index hi = h * g.stride[1] - g.pad[1] + b * g.dil[1];
              if (hi < 0 || hi >= g.in[1]) continue;
              const Index base_in = ci * in_vol + ti * in_plane + hi * g.in[2];
              const Index base_out = (t * g.out[1] + h) * g.out[2];
              // Valid w satisfy 0 <= w * stride - pad + c * dil < in.
              const Index shift = c * g.dil[2] - g.pad[2];
              const Index w_lo = shift >= 0 ? 0 : (-shift + g.stride[2] - 1) / g.stride[2];
              const Index w_hi = std::min(g.out[2], (g.in[2] - 1 - shift) / g.stride[2] + 1);
              for (Index w = w_lo; w < w_hi; ++w) fn(row, base_out + w, base_in + w * g.stride[2] + shift);
            }
          }
        }
}

RowMatrix im2col(const ConvGeometry& g, const Vector& x) {
  RowMatrix col = RowMatrix::Zero(g.patch(), g.outputs());
  for_each_tap(g, [&](Index r, Index o, Index i) { col(r, o) = x[i]; });
  return col;
}

}  // namespace

Tensor conv3d(const Tensor& x, const Tensor& kernel, Triple stride, Triple pad, Triple dilation) {
  if (x.rank() != 4 || kernel.rank() != 5 || kernel.dim(1) != x.dim(0)) {
    throw Error(ErrorCode::Shape, "conv3d: input " + shape_str(x.shape()) + " incompatible with kernel " +
                                      shape_str(kernel.shape()));
  }
  ConvGeometry g{};
  g.cin = x.dim(0);
  g.cout = kernel.dim(0);
  g.stride = stride;
  g.pad = pad;
  g.dil = dilation;
  for (int i = 0; i < 3; ++i) {
    g.in[i] = x.dim(i + 1);
    g.k[i] = kernel.dim(i + 2);
    if (stride[i] < 1 || dilation[i] < 1 || pad[i] < 0) {
      throw Error(ErrorCode::Value, "conv3d: stride and dilation must be >= 1, pad >= 0");
    }
    const Index span = g.in[i] + 2 * pad[i] - dilation[i] * (g.k[i] - 1) - 1;
    if (span < 0) {
      throw Error(ErrorCode::Shape, "conv3d: nonpositive output extent for input " + shape_str(x.shape()) +
                                        " and kernel " + shape_str(kernel.shape()));
    }
    g.out[i] = span / stride[i] + 1;
  }

  const RowMatrix col = im2col(g, x.data());
  Eigen::Map<const RowMatrix> k(kernel.data().data(), g.cout, g.patch());
  Vector out(g.cout * g.outputs());
  Eigen::Map<RowMatrix>(out.data(), g.cout, g.outputs()).noalias() = k * col;

  // The patch matrix is rebuilt in backward rather than saved.
  return make_result({g.cout, g.out[0], g.out[1], g.out[2]}, std::move(out), "conv3d", {x, kernel},
                     [x, kernel, g](const Vector& grad, std::span<Vector*> grads) {
                       Eigen::Map<const RowMatrix> dy(grad.data(), g.cout, g.outputs());
                       Eigen::Map<const RowMatrix> k(kernel.data().data(), g.cout, g.patch());
                       if (grads[1]) {
                         const RowMatrix col = im2col(g, x.data());
                         Eigen::Map<RowMatrix>(grads[1]->data(), g.cout, g.patch()).noalias() += dy * col.transpose();
                       }
                       if (grads[0]) {
                         RowMatrix dcol(g.patch(), g.outputs());
                         dcol.noalias() = k.transpose() * dy;
                         Vector& dx = *grads[0];
                         for_each_tap(g, [&](Index r, Index o, Index i) { dx[i] += dcol(r, o); });
                       }
                     });
}

}  // namespace lsfd
