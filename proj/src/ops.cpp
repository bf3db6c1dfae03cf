#include "lsfd/ops.hpp"

#include <cmath>

namespace lsfd {

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorCode::Shape,
                std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw Error(ErrorCode::Shape, std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                      shape_str(a.shape()));
  }
}

using ConstRowMap = Eigen::Map<const RowMatrix>;
using RowMap = Eigen::Map<RowMatrix>;

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  return make_result(a.shape(), a.data() + b.data(), "add", {a, b}, [](const Vector& g, std::span<Vector*> grads) {
    if (grads[0]) *grads[0] += g;
    if (grads[1]) *grads[1] += g;
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  return make_result(a.shape(), a.data() - b.data(), "sub", {a, b}, [](const Vector& g, std::span<Vector*> grads) {
    if (grads[0]) *grads[0] += g;
    if (grads[1]) *grads[1] -= g;
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Vector out = a.data().cwiseProduct(b.data());
  return make_result(a.shape(), std::move(out), "mul", {a, b}, [a, b](const Vector& g, std::span<Vector*> grads) {
    if (grads[0]) *grads[0] += g.cwiseProduct(b.data());
    if (grads[1]) *grads[1] += g.cwiseProduct(a.data());
  });
}

Tensor scale(const Tensor& a, double factor) {
  return make_result(a.shape(), a.data() * factor, "scale", {a},
                     [factor](const Vector& g, std::span<Vector*> grads) { *grads[0] += g * factor; });
}

Tensor relu(const Tensor& a) {
  Vector out = a.data().cwiseMax(0.0);
  return make_result(a.shape(), std::move(out), "relu", {a}, [a](const Vector& g, std::span<Vector*> grads) {
    *grads[0] += (a.data().array() > 0.0).select(g, 0.0);
  });
}

Tensor sigmoid(const Tensor& a) {
  Vector out = (1.0 / (1.0 + (-a.data().array()).exp())).matrix();
  Vector saved = out;
  return make_result(a.shape(), std::move(out), "sigmoid", {a},
                     [saved = std::move(saved)](const Vector& g, std::span<Vector*> grads) {
                       *grads[0] += (g.array() * saved.array() * (1.0 - saved.array())).matrix();
                     });
}

Tensor tanh(const Tensor& a) {
  Vector out = a.data().array().tanh().matrix();
  Vector saved = out;
  return make_result(a.shape(), std::move(out), "tanh", {a},
                     [saved = std::move(saved)](const Vector& g, std::span<Vector*> grads) {
                       *grads[0] += (g.array() * (1.0 - saved.array().square())).matrix();
                     });
}

Tensor one_minus(const Tensor& a) {
  Vector out = (1.0 - a.data().array()).matrix();
  return make_result(a.shape(), std::move(out), "one_minus", {a},
                     [](const Vector& g, std::span<Vector*> grads) { *grads[0] -= g; });
}

Tensor elementwise(ElementwiseKind kind, const Tensor& a, const Tensor* b, double factor) {
  auto other = [&]() -> const Tensor& {
    if (!b) throw Error(ErrorCode::Value, "elementwise: binary kind needs a second operand");
    return *b;
  };
  switch (kind) {
    case ElementwiseKind::Add: return add(a, other());
    case ElementwiseKind::Sub: return sub(a, other());
    case ElementwiseKind::Mul: return mul(a, other());
    case ElementwiseKind::Relu: return relu(a);
    case ElementwiseKind::Sigmoid: return sigmoid(a);
    case ElementwiseKind::Tanh: return tanh(a);
    case ElementwiseKind::Scale: return scale(a, factor);
  }
  throw Error(ErrorCode::Value, "elementwise: unknown kind");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const Index m = a.dim(0), k = a.dim(1), p = b.dim(1);
  if (b.dim(0) != k) {
    throw Error(ErrorCode::Shape, "matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                                      shape_str(b.shape()));
  }
  Vector out(m * p);
  RowMap(out.data(), m, p).noalias() = ConstRowMap(a.data().data(), m, k) * ConstRowMap(b.data().data(), k, p);
  return make_result({m, p}, std::move(out), "matmul", {a, b},
                     [a, b, m, k, p](const Vector& g, std::span<Vector*> grads) {
                       ConstRowMap dc(g.data(), m, p);
                       if (grads[0]) {
                         RowMap(grads[0]->data(), m, k).noalias() += dc * ConstRowMap(b.data().data(), k, p).transpose();
                       }
                       if (grads[1]) {
                         RowMap(grads[1]->data(), k, p).noalias() += ConstRowMap(a.data().data(), m, k).transpose() * dc;
                       }
                     });
}

Tensor transpose(const Tensor& a) {
  require_rank("transpose", a, 2);
  const Index m = a.dim(0), n = a.dim(1);
  Vector out(m * n);
  RowMap(out.data(), n, m) = ConstRowMap(a.data().data(), m, n).transpose();
  return make_result({n, m}, std::move(out), "transpose", {a}, [m, n](const Vector& g, std::span<Vector*> grads) {
    RowMap(grads[0]->data(), m, n) += ConstRowMap(g.data(), n, m).transpose();
  });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  require_rank("add_channel_bias", bias, 1);
  if (x.rank() < 1 || x.dim(0) != bias.dim(0)) {
    throw Error(ErrorCode::Shape, "add_channel_bias: " + shape_str(x.shape()) + " vs bias " + shape_str(bias.shape()));
  }
  const Index c = x.dim(0), inner = x.size() / c;
  Vector out = x.data();
  RowMap(out.data(), c, inner).colwise() += bias.data();
  return make_result(x.shape(), std::move(out), "add_channel_bias", {x, bias},
                     [c, inner](const Vector& g, std::span<Vector*> grads) {
                       if (grads[0]) *grads[0] += g;
                       if (grads[1]) *grads[1] += ConstRowMap(g.data(), c, inner).rowwise().sum();
                     });
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  require_rank("add_row_bias", x, 2);
  require_rank("add_row_bias", bias, 1);
  if (x.dim(1) != bias.dim(0)) {
    throw Error(ErrorCode::Shape, "add_row_bias: " + shape_str(x.shape()) + " vs bias " + shape_str(bias.shape()));
  }
  const Index m = x.dim(0), n = x.dim(1);
  Vector out = x.data();
  RowMap(out.data(), m, n).rowwise() += bias.data().transpose();
  return make_result(x.shape(), std::move(out), "add_row_bias", {x, bias},
                     [m, n](const Vector& g, std::span<Vector*> grads) {
                       if (grads[0]) *grads[0] += g;
                       if (grads[1]) *grads[1] += ConstRowMap(g.data(), m, n).colwise().sum().transpose();
                     });
}

Tensor avg_pool3d(const Tensor& x, Triple window, Triple stride) {
  require_rank("avg_pool3d", x, 4);
  const Index c = x.dim(0);
  const Triple in{x.dim(1), x.dim(2), x.dim(3)};
  Triple out{};
  for (int i = 0; i < 3; ++i) {
    if (window[i] < 1 || stride[i] < 1 || in[i] < window[i] || (in[i] - window[i]) % stride[i] != 0) {
      throw Error(ErrorCode::Shape, "avg_pool3d: window/stride do not tile input " + shape_str(x.shape()));
    }
    out[i] = (in[i] - window[i]) / stride[i] + 1;
  }
  const double inv = 1.0 / static_cast<double>(window[0] * window[1] * window[2]);
  const Index in_plane = in[1] * in[2], in_vol = in[0] * in_plane;
  const Index out_plane = out[1] * out[2], out_vol = out[0] * out_plane;
  Vector result = Vector::Zero(c * out_vol);
  auto visit = [=](auto&& fn) {
    for (Index ch = 0; ch < c; ++ch)
      for (Index t = 0; t < out[0]; ++t)
        for (Index h = 0; h < out[1]; ++h)
          for (Index w = 0; w < out[2]; ++w) {
            const Index o = ch * out_vol + t * out_plane + h * out[2] + w;
            for (Index dt = 0; dt < window[0]; ++dt)
              for (Index dh = 0; dh < window[1]; ++dh)
                for (Index dw = 0; dw < window[2]; ++dw) {
                  const Index i = ch * in_vol + (t * stride[0] + dt) * in_plane + (h * stride[1] + dh) * in[2] +
                                  (w * stride[2] + dw);
                  fn(o, i);
                }
          }
  };
  const Vector& xd = x.data();
  visit([&](Index o, Index i) { result[o] += xd[i] * inv; });
  return make_result({c, out[0], out[1], out[2]}, std::move(result), "avg_pool3d", {x},
                     [visit, inv](const Vector& g, std::span<Vector*> grads) {
                       Vector& dx = *grads[0];
                       visit([&](Index o, Index i) { dx[i] += g[o] * inv; });
                     });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank("global_avg_pool", x, 4);
  const Index c = x.dim(0), inner = x.size() / c;
  Vector out = ConstRowMap(x.data().data(), c, inner).rowwise().mean();
  return make_result({c}, std::move(out), "global_avg_pool", {x}, [c, inner](const Vector& g, std::span<Vector*> grads) {
    RowMap(grads[0]->data(), c, inner).colwise() += g / static_cast<double>(inner);
  });
}

Tensor concat_lastdim(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw Error(ErrorCode::Shape, "concat_lastdim: no operands");
  const Shape& first = parts.front().shape();
  const Index rows = parts.front().size() / first.back();
  std::vector<Index> widths;
  Index total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i + 1 < s.size(); ++i) ok = s[i] == first[i];
    if (!ok) {
      throw Error(ErrorCode::Shape, "concat_lastdim: " + shape_str(first) + " vs " + shape_str(s));
    }
    widths.push_back(s.back());
    total += s.back();
  }
  Vector out(rows * total);
  RowMap dst(out.data(), rows, total);
  Index col = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    dst.middleCols(col, widths[i]) = ConstRowMap(parts[i].data().data(), rows, widths[i]);
    col += widths[i];
  }
  Shape shape = first;
  shape.back() = total;
  return make_result(std::move(shape), std::move(out), "concat_lastdim", parts,
                     [rows, total, widths](const Vector& g, std::span<Vector*> grads) {
                       ConstRowMap src(g.data(), rows, total);
                       Index col = 0;
                       for (std::size_t i = 0; i < widths.size(); ++i) {
                         if (grads[i]) RowMap(grads[i]->data(), rows, widths[i]) += src.middleCols(col, widths[i]);
                         col += widths[i];
                       }
                     });
}

Tensor slice_lastdim(const Tensor& a, Index begin, Index end) {
  const Index width = a.shape().back();
  if (begin < 0 || end > width || begin >= end) {
    throw Error(ErrorCode::Shape, "slice_lastdim: range [" + std::to_string(begin) + "," + std::to_string(end) +
                                      ") out of bounds for " + shape_str(a.shape()));
  }
  const Index rows = a.size() / width, n = end - begin;
  Vector out(rows * n);
  RowMap(out.data(), rows, n) = ConstRowMap(a.data().data(), rows, width).middleCols(begin, n);
  Shape shape = a.shape();
  shape.back() = n;
  return make_result(std::move(shape), std::move(out), "slice_lastdim", {a},
                     [rows, width, begin, n](const Vector& g, std::span<Vector*> grads) {
                       RowMap(grads[0]->data(), rows, width).middleCols(begin, n) += ConstRowMap(g.data(), rows, n);
                     });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw Error(ErrorCode::Shape, "reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  return make_result(std::move(shape), a.data(), "reshape", {a},
                     [](const Vector& g, std::span<Vector*> grads) { *grads[0] += g; });
}

Tensor sum_all(const Tensor& a) {
  Vector out = Vector::Constant(1, a.data().sum());
  return make_result({1}, std::move(out), "sum_all", {a},
                     [](const Vector& g, std::span<Vector*> grads) { grads[0]->array() += g[0]; });
}

Tensor cosine(const Tensor& a, const Tensor& b) {
  require_same_shape("cosine", a, b);
  const double na = a.data().norm(), nb = b.data().norm();
  if (na == 0.0 || nb == 0.0) throw Error(ErrorCode::Numeric, "cosine: zero-norm vector");
  const double c = a.data().dot(b.data()) / (na * nb);
  return make_result({1}, Vector::Constant(1, c), "cosine", {a, b},
                     [a, b, na, nb, c](const Vector& g, std::span<Vector*> grads) {
                       // d cos / d a = b/(|a||b|) - cos * a/|a|^2
                       if (grads[0]) *grads[0] += g[0] * (b.data() / (na * nb) - c * a.data() / (na * na));
                       if (grads[1]) *grads[1] += g[0] * (a.data() / (na * nb) - c * b.data() / (nb * nb));
                     });
}

Tensor cosine_rows(const Tensor& a, const Tensor& rows) {
  require_rank("cosine_rows", a, 1);
  require_rank("cosine_rows", rows, 2);
  const Index k = rows.dim(0), d = rows.dim(1);
  if (a.dim(0) != d) {
    throw Error(ErrorCode::Shape, "cosine_rows: " + shape_str(a.shape()) + " vs " + shape_str(rows.shape()));
  }
  ConstRowMap r(rows.data().data(), k, d);
  const double na = a.data().norm();
  Vector nr = r.rowwise().norm();
  if (na == 0.0 || (k > 0 && nr.minCoeff() == 0.0)) throw Error(ErrorCode::Numeric, "cosine_rows: zero-norm vector");
  Vector dots = r * a.data();
  Vector cos = dots.cwiseQuotient(nr) / na;
  Vector saved = cos;
  return make_result({k}, std::move(cos), "cosine_rows", {a, rows},
                     [a, rows, na, nr, k, d, cos = std::move(saved)](const Vector& g, std::span<Vector*> grads) {
                       ConstRowMap r(rows.data().data(), k, d);
                       if (grads[0]) {
                         // sum_k g_k (r_k/(|a||r_k|) - cos_k a/|a|^2)
                         Vector w = g.cwiseQuotient(nr) / na;
                         *grads[0] += r.transpose() * w - (g.dot(cos) / (na * na)) * a.data();
                       }
                       if (grads[1]) {
                         RowMap dr(grads[1]->data(), k, d);
                         for (Index i = 0; i < k; ++i) {
                           dr.row(i) += g[i] * (a.data().transpose() / (na * nr[i]) -
                                                cos[i] * r.row(i) / (nr[i] * nr[i]));
                         }
                       }
                     });
}

Tensor cross_entropy(const Tensor& logits, Index target) {
  require_rank("cross_entropy", logits, 1);
  const Index k = logits.dim(0);
  if (target < 0 || target >= k) throw Error(ErrorCode::Value, "cross_entropy: target out of range");
  const Vector& z = logits.data();
  const double zmax = z.maxCoeff();
  Vector e = (z.array() - zmax).exp().matrix();
  const double sum = e.sum();
  const double loss = std::log(sum) + zmax - z[target];
  Vector p = e / sum;
  return make_result({1}, Vector::Constant(1, loss), "cross_entropy", {logits},
                     [p = std::move(p), target](const Vector& g, std::span<Vector*> grads) {
                       Vector d = p;
                       d[target] -= 1.0;
                       *grads[0] += g[0] * d;
                     });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank("softmax_cross_entropy", logits, 2);
  const Index m = logits.dim(0), c = logits.dim(1);
  if (static_cast<Index>(labels.size()) != m) {
    throw Error(ErrorCode::Shape, "softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                                      shape_str(logits.shape()));
  }
  ConstRowMap z(logits.data().data(), m, c);
  RowMatrix p(m, c);
  double total = 0.0;
  for (Index i = 0; i < m; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= c) throw Error(ErrorCode::Value, "softmax_cross_entropy: label out of range");
    const double zmax = z.row(i).maxCoeff();
    p.row(i) = (z.row(i).array() - zmax).exp();
    const double s = p.row(i).sum();
    p.row(i) /= s;
    total += std::log(s) + zmax - z(i, y);
  }
  std::vector<int> ys(labels.begin(), labels.end());
  return make_result({1}, Vector::Constant(1, total / static_cast<double>(m)), "softmax_cross_entropy", {logits},
                     [p = std::move(p), ys = std::move(ys), m, c](const Vector& g, std::span<Vector*> grads) {
                       RowMap d(grads[0]->data(), m, c);
                       const double s = g[0] / static_cast<double>(m);
                       d += s * p;
                       for (Index i = 0; i < m; ++i) d(i, ys[i]) -= s;
                     });
}

}  // namespace lsfd
