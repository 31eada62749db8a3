#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sepformer {

using Shape = std::vector<std::size_t>;

/// Raised for shape mismatches, non-finite values and other numeric misuse.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Gradient recording is on by default; NoGradGuard disables it for the
/// lifetime of the guard on the current thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// One value in the dynamically recorded graph. Interior nodes keep their
/// parents alive; the backward closure reads the node's own grad and
/// accumulates into the parents.
template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward;
  const char* op = "leaf";

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

/// Dense row-major N-dimensional array with optional reverse-mode gradient.
/// Copies share the underlying node; values are immutable once produced
/// except through data_mut() on leaves (parameters, optimizer updates).
template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using Node = TensorNode<T>;

  BasicTensor() = default;
  BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false);
  explicit BasicTensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T value, bool requires_grad = false);
  static BasicTensor scalar(T value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return data().size(); }

  std::span<const T> data() const;
  std::span<T> data_mut();
  std::span<const T> grad() const;
  T item() const;
  /// Element access for rank-2 tensors.
  T at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  void zero_grad();
  BasicTensor detach() const;

  /// Seeds d(self)/d(self) = 1 for a single-element tensor and propagates
  /// through every recorded ancestor.
  void backward() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

}  // namespace sepformer
