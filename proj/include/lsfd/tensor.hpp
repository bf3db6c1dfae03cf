#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lsfd {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Shape = std::vector<Index>;

enum class ErrorCode { Shape, Value, Io, Format, Config, Numeric };

const char* to_string(ErrorCode code);

/// Library-wide exception. The code is what the CLI prints as its error prefix.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

std::string shape_str(const Shape& shape);
Index numel(const Shape& shape);

struct Node;

struct TensorImpl {
  Shape shape;
  Vector data;
  Vector grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::shared_ptr<Node> producer;
};

/// Backward closure. `grads` has one entry per input; entries are null for
/// inputs that do not need a gradient. Closures accumulate with +=.
using BackwardFn = std::function<void(const Vector& grad_out, std::span<Vector*> grads)>;

struct Node {
  const char* kind = "";
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  BackwardFn backward;
};

/// Dense row-major double tensor with reverse-mode differentiation.
///
/// Copies are shallow: two Tensor handles may share one buffer. Use clone()
/// for a deep copy. Parameters are leaves created with requires_grad = true.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, Vector data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor constant(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::initializer_list<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const { return impl_->shape; }
  Index dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t rank() const { return impl_->shape.size(); }
  Index size() const { return impl_->data.size(); }

  const Vector& data() const { return impl_->data; }
  /// Mutable access. Only valid on leaves, e.g. for optimizer updates.
  Vector& mutable_data();

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool flag);
  bool has_grad() const { return impl_->grad.size() > 0; }
  const Vector& grad() const;
  void zero_grad() { impl_->grad.resize(0); }

  bool is_leaf() const { return impl_->producer == nullptr; }
  double item() const;

  Tensor detach() const;
  Tensor clone() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  friend Tensor make_result(Shape, Vector, const char*, std::vector<Tensor>, BackwardFn);

  std::shared_ptr<TensorImpl> impl_;
};

/// Builds an op output. Records a graph node only when some input needs a
/// gradient and recording is enabled.
Tensor make_result(Shape shape, Vector data, const char* kind, std::vector<Tensor> inputs, BackwardFn fn);

/// Accumulates d(loss)/d(leaf) into every reachable leaf with requires_grad.
void backward(const Tensor& loss);

bool grad_enabled();

/// Disables graph recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace lsfd
