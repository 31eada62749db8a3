#include "sepformer/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace sepformer {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw NumericError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
  }
  for (T v : data) {
    if (!std::isfinite(v)) throw NumericError("non-finite value in tensor construction");
  }
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  auto n = shape_numel(shape);
  return BasicTensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
  auto n = shape_numel(shape);
  return BasicTensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value) {
  return BasicTensor(Shape{1}, std::vector<T>{value});
}

template <typename T>
const Shape& BasicTensor<T>::shape() const {
  if (!node_) throw NumericError("use of undefined tensor");
  return node_->shape;
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw NumericError("axis out of range for shape " + shape_str(s));
  return s[axis];
}

template <typename T>
std::span<const T> BasicTensor<T>::data() const {
  if (!node_) throw NumericError("use of undefined tensor");
  return node_->data;
}

template <typename T>
std::span<T> BasicTensor<T>::data_mut() {
  if (!node_) throw NumericError("use of undefined tensor");
  if (node_->backward) throw NumericError("in-place write to a recorded interior tensor");
  return node_->data;
}

template <typename T>
std::span<const T> BasicTensor<T>::grad() const {
  if (!node_) throw NumericError("use of undefined tensor");
  return node_->grad;
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw NumericError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

template <typename T>
T BasicTensor<T>::at(std::size_t row, std::size_t col) const {
  const auto& s = shape();
  if (s.size() != 2 || row >= s[0] || col >= s[1]) throw NumericError("at() out of range");
  return node_->data[row * s[1] + col];
}

template <typename T>
bool BasicTensor<T>::requires_grad() const {
  return node_ && node_->requires_grad;
}

template <typename T>
void BasicTensor<T>::set_requires_grad(bool flag) {
  if (!node_) throw NumericError("use of undefined tensor");
  node_->requires_grad = flag;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  if (node_) node_->grad.clear();
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  auto n = std::make_shared<Node>();
  n->shape = shape();
  n->data = node_->data;
  n->op = "detach";
  return BasicTensor(std::move(n));
}

template <typename T>
void BasicTensor<T>::backward() const {
  if (numel() != 1) throw NumericError("backward() requires a single-element tensor");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS; reversed, it is a valid reverse-topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace sepformer
