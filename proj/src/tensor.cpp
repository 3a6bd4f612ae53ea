#include "cea/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace cea {

std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

std::vector<double>& TensorImpl::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  return grad;
}

namespace {

thread_local bool g_grad_enabled = true;

std::shared_ptr<TensorImpl> new_impl(Shape shape, std::vector<double> data) {
  if (numel_of(shape) != data.size())
    throw DimensionError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return impl;
}

const TensorImpl& checked(const std::shared_ptr<TensorImpl>& p) {
  if (!p) throw std::logic_error("use of undefined tensor");
  return *p;
}

}  // namespace

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = numel_of(shape);
  return Tensor(new_impl(std::move(shape), std::vector<double>(n, value)));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  return Tensor(new_impl(std::move(shape), std::move(values)));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::eye(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return from({n, n}, std::move(v));
}

const Shape& Tensor::shape() const { return checked(impl_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(impl_).data.size(); }

std::span<const double> Tensor::data() const { return checked(impl_).data; }

std::span<double> Tensor::mutable_data() {
  checked(impl_);
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return data()[0];
}

std::vector<double> Tensor::to_vector() const {
  auto d = data();
  return {d.begin(), d.end()};
}

bool Tensor::requires_grad() const { return checked(impl_).requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  checked(impl_);
  impl_->requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return !checked(impl_).grad.empty(); }

std::vector<double> Tensor::grad() const {
  const auto& impl = checked(impl_);
  if (impl.grad.empty()) return std::vector<double>(impl.data.size(), 0.0);
  return impl.grad;
}

std::span<double> Tensor::mutable_grad() {
  checked(impl_);
  return impl_->ensure_grad();
}

void Tensor::zero_grad() {
  checked(impl_);
  impl_->grad.clear();
}

Tensor Tensor::detach() const {
  const auto& impl = checked(impl_);
  return from(impl.shape, impl.data);
}

const char* Tensor::op() const { return checked(impl_).op; }

Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                   BackwardFn backward, const char* op) {
  auto impl = new_impl(std::move(shape), std::move(data));
  impl->op = op;
  if (GradMode::enabled()) {
    const bool any = std::any_of(parents.begin(), parents.end(),
                                 [](const Tensor& p) { return p.requires_grad(); });
    if (any) {
      impl->requires_grad = true;
      impl->parents.reserve(parents.size());
      for (auto& p : parents) impl->parents.push_back(p.impl_ptr());
      impl->backward = std::move(backward);
    }
  }
  return Tensor(std::move(impl));
}

ComputationTape::ComputationTape(const Tensor& root) : root_(root) {
  // Iterative post-order DFS; post-order is a valid topological order.
  std::unordered_set<const TensorImpl*> seen;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  if (!root.requires_grad()) return;
  stack.emplace_back(root.impl(), 0);
  seen.insert(root.impl());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorImpl* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order_.push_back(node);
      stack.pop_back();
    }
  }
}

std::size_t ComputationTape::replay_backward() {
  if (order_.empty()) return 0;
  if (root_.numel() != 1)
    throw DimensionError("backward requires a scalar root, got " + shape_str(root_.shape()));
  root_.impl()->ensure_grad()[0] += 1.0;
  std::size_t ran = 0;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    TensorImpl* node = *it;
    if (!node->backward || node->grad.empty()) continue;
    node->backward(*node);
    ++ran;
  }
  return ran;
}

void backward(const Tensor& root) {
  ComputationTape tape(root);
  tape.replay_backward();
}

}  // namespace cea
