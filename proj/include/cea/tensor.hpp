#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cea {

using Shape = std::vector<std::size_t>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;
using BackwardFn = std::function<void(TensorImpl&)>;

/// Graph node. Values are immutable once the node is published; only
/// `grad` is written during backward and `data` by optimizers between steps.
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  BackwardFn backward;
  const char* op = "leaf";

  std::vector<double>& ensure_grad();
};

/// Shared handle over a TensorImpl. Copying a Tensor aliases the node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);
  static Tensor eye(std::size_t n);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Mutable access for initialization and optimizer updates. Never call
  /// while a graph that reads this tensor is awaiting backward.
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }
  std::vector<double> to_vector() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool has_grad() const;
  /// Gradient values; all zeros if backward never reached this tensor.
  std::vector<double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Copy of the values with no graph history.
  Tensor detach() const;
  const char* op() const;

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Builds a result node. Parents and the backward rule are recorded only
/// when grad mode is on and some parent requires grad.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                   BackwardFn backward, const char* op);

/// Thread-local switch for graph recording.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Reverse topological record of a graph rooted at one tensor.
class ComputationTape {
 public:
  explicit ComputationTape(const Tensor& root);

  /// Nodes in topological order (parents before children).
  const std::vector<TensorImpl*>& nodes() const { return order_; }
  std::size_t size() const { return order_.size(); }

  /// Seeds d(root)/d(root) = 1 and runs every backward rule once, children first.
  /// Returns the number of backward rules executed.
  std::size_t replay_backward();

 private:
  Tensor root_;
  std::vector<TensorImpl*> order_;
};

/// Accumulates d(root)/d(leaf) into every reachable tensor that requires grad.
void backward(const Tensor& root);

}  // namespace cea
