#include "lsfd/tensor.hpp"

#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace lsfd {

namespace {
thread_local bool g_grad_enabled = true;
}

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::Shape: return "E_SHAPE";
    case ErrorCode::Value: return "E_VALUE";
    case ErrorCode::Io: return "E_IO";
    case ErrorCode::Format: return "E_FORMAT";
    case ErrorCode::Config: return "E_CONFIG";
    case ErrorCode::Numeric: return "E_NUMERIC";
  }
  return "E_UNKNOWN";
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) n *= e;
  return n;
}

Tensor::Tensor() : impl_(std::make_shared<TensorImpl>()) { impl_->shape = {0}; }

Tensor::Tensor(Shape shape, Vector data, bool requires_grad) : impl_(std::make_shared<TensorImpl>()) {
  for (Index e : shape) {
    if (e <= 0) throw Error(ErrorCode::Shape, "tensor extents must be positive, got " + shape_str(shape));
  }
  if (numel(shape) != data.size()) {
    throw Error(ErrorCode::Shape, "shape " + shape_str(shape) + " does not match " + std::to_string(data.size()) +
                                      " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const Index n = numel(shape);
  return Tensor(std::move(shape), Vector::Zero(n), requires_grad);
}

Tensor Tensor::constant(Shape shape, double value, bool requires_grad) {
  const Index n = numel(shape);
  return Tensor(std::move(shape), Vector::Constant(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> values, bool requires_grad) {
  Vector v(static_cast<Index>(values.size()));
  Index i = 0;
  for (double x : values) v[i++] = x;
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, Vector::Constant(1, value), requires_grad); }

Vector& Tensor::mutable_data() {
  if (!is_leaf()) throw Error(ErrorCode::Value, "mutable_data() on a non-leaf tensor");
  return impl_->data;
}

void Tensor::set_requires_grad(bool flag) {
  if (!is_leaf()) throw Error(ErrorCode::Value, "set_requires_grad() on a non-leaf tensor");
  impl_->requires_grad = flag;
}

const Vector& Tensor::grad() const {
  if (!has_grad()) throw Error(ErrorCode::Value, "tensor has no gradient");
  return impl_->grad;
}

double Tensor::item() const {
  if (size() != 1) throw Error(ErrorCode::Shape, "item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  impl->requires_grad = impl_->requires_grad && is_leaf();
  return Tensor(std::move(impl));
}

Tensor make_result(Shape shape, Vector data, const char* kind, std::vector<Tensor> inputs, BackwardFn fn) {
  Tensor out(std::move(shape), std::move(data), false);
  if (!g_grad_enabled) return out;
  bool needs = false;
  for (const auto& t : inputs) needs = needs || t.requires_grad();
  if (!needs) return out;
  auto node = std::make_shared<Node>();
  node->kind = kind;
  node->inputs.reserve(inputs.size());
  for (const auto& t : inputs) node->inputs.push_back(t.impl());
  node->backward = std::move(fn);
  out.impl_->requires_grad = true;
  out.impl_->producer = std::move(node);
  return out;
}

void backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw Error(ErrorCode::Shape, "backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order of interior tensors.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(loss.impl().get(), 0);
  visited.insert(loss.impl().get());
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    if (impl->producer && next < impl->producer->inputs.size()) {
      TensorImpl* child = impl->producer->inputs[next++].get();
      if (child->requires_grad && child->producer && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(impl);
    stack.pop_back();
  }

  std::unordered_map<TensorImpl*, Vector> buffers;
  buffers[loss.impl().get()] = Vector::Ones(1);
  std::vector<Vector*> slots;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* impl = *it;
    auto found = buffers.find(impl);
    if (found == buffers.end()) continue;
    const Vector grad_out = std::move(found->second);
    buffers.erase(found);
    Node& node = *impl->producer;
    slots.assign(node.inputs.size(), nullptr);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      TensorImpl* in = node.inputs[i].get();
      if (!in->requires_grad) continue;
      Vector& target = in->producer ? buffers[in] : in->grad;
      if (target.size() == 0) target = Vector::Zero(in->data.size());
      slots[i] = &target;
    }
    node.backward(grad_out, slots);
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace lsfd
