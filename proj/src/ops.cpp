#include "sepformer/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

namespace sepformer {

namespace {

template <typename T>
using Node = TensorNode<T>;
template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;
template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapM = Eigen::Map<const MatRM<T>>;

[[noreturn]] void fail(const char* op, const std::string& what) {
  throw NumericError(std::string(op) + ": " + what);
}

template <typename T>
bool recording(std::initializer_list<const BasicTensor<T>*> inputs) {
  if (!grad_enabled()) return false;
  for (const auto* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

template <typename T>
bool recording(const std::vector<BasicTensor<T>>& inputs) {
  if (!grad_enabled()) return false;
  for (const auto& t : inputs) {
    if (t.requires_grad()) return true;
  }
  return false;
}

template <typename T>
void check_finite(const char* op, const std::vector<T>& data) {
  for (T v : data) {
    if (!std::isfinite(v)) fail(op, "non-finite output");
  }
}

template <typename T>
BasicTensor<T> finish(const char* op, Shape shape, std::vector<T>&& data,
                      std::vector<NodePtr<T>> parents, std::function<void(Node<T>&)> backward) {
  check_finite(op, data);
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  if (backward) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return BasicTensor<T>(std::move(node));
}

template <typename T>
void require_same_shape(const char* op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    fail(op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename T>
void require_rank(const char* op, const BasicTensor<T>& x, std::size_t rank) {
  if (x.rank() != rank) {
    fail(op, "expected rank " + std::to_string(rank) + ", got " + shape_str(x.shape()));
  }
}

// Elementwise unary op with derivative expressed via (x, y).
template <typename T, typename F, typename D>
BasicTensor<T> unary(const char* op, const BasicTensor<T>& x, F f, D dfdx) {
  auto xs = x.data();
  std::vector<T> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = f(xs[i]);
  std::function<void(Node<T>&)> bw;
  if (recording({&x})) {
    Node<T>* px = x.node().get();
    bw = [px, dfdx](Node<T>& self) {
      auto& g = px->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx(px->data[i], self.data[i]);
    };
  }
  return finish<T>(op, x.shape(), std::move(out), {x.node()}, std::move(bw));
}

// Index arithmetic for the border-clamped lattice sampler.
template <typename T>
struct Tap {
  std::size_t i0;
  std::size_t i1;
  T frac;
  T dscale;  // d(pixel coordinate)/d(normalized coordinate); 0 when clamped
};

template <typename T>
Tap<T> make_tap(T u, std::size_t n) {
  T p = u * static_cast<T>(n) - T(0.5);
  T dscale = static_cast<T>(n);
  const T hi = static_cast<T>(n - 1);
  if (p <= T(0)) {
    p = T(0);
    dscale = T(0);
  } else if (p >= hi) {
    p = hi;
    dscale = T(0);
  }
  auto i0 = static_cast<std::size_t>(std::floor(p));
  if (i0 > n - 1) i0 = n - 1;
  const std::size_t i1 = std::min(i0 + 1, n - 1);
  return {i0, i1, p - static_cast<T>(i0), dscale};
}

}  // namespace

// ---------------------------------------------------------------- elementwise

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("add", a, b);
  auto as = a.data();
  auto bs = b.data();
  std::vector<T> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] + bs[i];
  std::function<void(Node<T>&)> bw;
  if (recording({&a, &b})) {
    Node<T>* pa = a.node().get();
    Node<T>* pb = b.node().get();
    bw = [pa, pb](Node<T>& self) {
      for (Node<T>* p : {pa, pb}) {
        if (!p->requires_grad) continue;
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    };
  }
  return finish<T>("add", a.shape(), std::move(out), {a.node(), b.node()}, std::move(bw));
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("sub", a, b);
  auto as = a.data();
  auto bs = b.data();
  std::vector<T> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] - bs[i];
  std::function<void(Node<T>&)> bw;
  if (recording({&a, &b})) {
    Node<T>* pa = a.node().get();
    Node<T>* pb = b.node().get();
    bw = [pa, pb](Node<T>& self) {
      if (pa->requires_grad) {
        auto& g = pa->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (pb->requires_grad) {
        auto& g = pb->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
      }
    };
  }
  return finish<T>("sub", a.shape(), std::move(out), {a.node(), b.node()}, std::move(bw));
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("mul", a, b);
  auto as = a.data();
  auto bs = b.data();
  std::vector<T> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] * bs[i];
  std::function<void(Node<T>&)> bw;
  if (recording({&a, &b})) {
    Node<T>* pa = a.node().get();
    Node<T>* pb = b.node().get();
    bw = [pa, pb](Node<T>& self) {
      if (pa->requires_grad) {
        auto& g = pa->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->data[i];
      }
      if (pb->requires_grad) {
        auto& g = pb->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->data[i];
      }
    };
  }
  return finish<T>("mul", a.shape(), std::move(out), {a.node(), b.node()}, std::move(bw));
}

template <typename T>
BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("div", a, b);
  auto as = a.data();
  auto bs = b.data();
  std::vector<T> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] / bs[i];
  std::function<void(Node<T>&)> bw;
  if (recording({&a, &b})) {
    Node<T>* pa = a.node().get();
    Node<T>* pb = b.node().get();
    bw = [pa, pb](Node<T>& self) {
      if (pa->requires_grad) {
        auto& g = pa->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / pb->data[i];
      }
      if (pb->requires_grad) {
        auto& g = pb->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          g[i] -= self.grad[i] * self.data[i] / pb->data[i];
        }
      }
    };
  }
  return finish<T>("div", a.shape(), std::move(out), {a.node(), b.node()}, std::move(bw));
}

template <typename T>
BasicTensor<T> add_bias(const BasicTensor<T>& x, const BasicTensor<T>& bias) {
  require_rank("add_bias", bias, 1);
  const std::size_t n = bias.dim(0);
  if (x.rank() == 0 || x.shape().back() != n) {
    fail("add_bias", "bias " + shape_str(bias.shape()) + " vs input " + shape_str(x.shape()));
  }
  auto xs = x.data();
  auto bs = bias.data();
  std::vector<T> out(xs.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xs[i] + bs[i % n];
  std::function<void(Node<T>&)> bw;
  if (recording({&x, &bias})) {
    Node<T>* px = x.node().get();
    Node<T>* pb = bias.node().get();
    bw = [px, pb, n](Node<T>& self) {
      if (px->requires_grad) {
        auto& g = px->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (pb->requires_grad) {
        auto& g = pb->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % n] += self.grad[i];
      }
    };
  }
  return finish<T>("add_bias", x.shape(), std::move(out), {x.node(), bias.node()}, std::move(bw));
}

template <typename T>
BasicTensor<T> add_channel_bias(const BasicTensor<T>& x, const BasicTensor<T>& bias) {
  require_rank("add_channel_bias", bias, 1);
  const std::size_t c = bias.dim(0);
  if (x.rank() == 0 || x.dim(0) != c) {
    fail("add_channel_bias", "bias " + shape_str(bias.shape()) + " vs input " + shape_str(x.shape()));
  }
  const std::size_t inner = x.numel() / c;
  auto xs = x.data();
  auto bs = bias.data();
  std::vector<T> out(xs.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xs[i] + bs[i / inner];
  std::function<void(Node<T>&)> bw;
  if (recording({&x, &bias})) {
    Node<T>* px = x.node().get();
    Node<T>* pb = bias.node().get();
    bw = [px, pb, inner](Node<T>& self) {
      if (px->requires_grad) {
        auto& g = px->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (pb->requires_grad) {
        auto& g = pb->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i / inner] += self.grad[i];
      }
    };
  }
  return finish<T>("add_channel_bias", x.shape(), std::move(out), {x.node(), bias.node()},
                   std::move(bw));
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor) {
  return unary<T>(
      "scale", x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& x, T value) {
  return unary<T>(
      "add_scalar", x, [value](T v) { return v + value; }, [](T, T) { return T(1); });
}

// --------------------------------------------------------------------- matmul

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    fail("matmul", "inner dimensions disagree: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<T> out(m * n);
  MapM<T>(out.data(), m, n).noalias() = CMapM<T>(a.data().data(), m, k) * CMapM<T>(b.data().data(), k, n);
  std::function<void(Node<T>&)> bw;
  if (recording({&a, &b})) {
    Node<T>* pa = a.node().get();
    Node<T>* pb = b.node().get();
    bw = [pa, pb, m, k, n](Node<T>& self) {
      CMapM<T> g(self.grad.data(), m, n);
      if (pa->requires_grad) {
        MapM<T>(pa->ensure_grad().data(), m, k).noalias() += g * CMapM<T>(pb->data.data(), k, n).transpose();
      }
      if (pb->requires_grad) {
        MapM<T>(pb->ensure_grad().data(), k, n).noalias() += CMapM<T>(pa->data.data(), m, k).transpose() * g;
      }
    };
  }
  return finish<T>("matmul", Shape{m, n}, std::move(out), {a.node(), b.node()}, std::move(bw));
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b) {
  auto y = matmul(x, w);
  return b.defined() ? add_bias(y, b) : y;
}

// ---------------------------------------------------------------- activations

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  return unary<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  return unary<T>(
      "sigmoid", x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
BasicTensor<T> inverse_sigmoid(const BasicTensor<T>& x, T eps) {
  if (!(eps > T(0)) || !(eps < T(0.5))) fail("inverse_sigmoid", "eps must lie in (0, 0.5)");
  return unary<T>(
      "inverse_sigmoid", x,
      [eps](T v) {
        const T c = std::clamp(v, eps, T(1) - eps);
        return std::log(c / (T(1) - c));
      },
      [eps](T v, T) { return (v > eps && v < T(1) - eps) ? T(1) / (v * (T(1) - v)) : T(0); });
}

template <typename T>
BasicTensor<T> log(const BasicTensor<T>& x) {
  return unary<T>(
      "log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
BasicTensor<T> abs(const BasicTensor<T>& x) {
  return unary<T>(
      "abs", x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
BasicTensor<T> sqrt(const BasicTensor<T>& x) {
  return unary<T>(
      "sqrt", x, [](T v) { return std::sqrt(v); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
BasicTensor<T> square(const BasicTensor<T>& x) {
  return unary<T>(
      "square", x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
BasicTensor<T> clamp(const BasicTensor<T>& x, T lo, T hi) {
  if (lo > hi) fail("clamp", "lo > hi");
  return unary<T>(
      "clamp", x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
      [lo, hi](T v, T) { return (v > lo && v < hi) ? T(1) : T(0); });
}

// ----------------------------------------------------------------- reductions

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  T total = T(0);
  for (T v : x.data()) total += v;
  std::function<void(Node<T>&)> bw;
  if (recording({&x})) {
    Node<T>* px = x.node().get();
    bw = [px](Node<T>& self) {
      auto& g = px->ensure_grad();
      for (auto& v : g) v += self.grad[0];
    };
  }
  return finish<T>("sum", Shape{1}, std::vector<T>{total}, {x.node()}, std::move(bw));
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  if (x.numel() == 0) fail("mean", "empty input");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
BasicTensor<T> sum_last(const BasicTensor<T>& x) {
  if (x.rank() == 0) fail("sum_last", "rank-0 input");
  const std::size_t n = x.shape().back();
  const std::size_t rows = n == 0 ? 0 : x.numel() / n;
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  auto xs = x.data();
  std::vector<T> out(rows, T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) out[r] += xs[r * n + j];
  }
  std::function<void(Node<T>&)> bw;
  if (recording({&x})) {
    Node<T>* px = x.node().get();
    bw = [px, n](Node<T>& self) {
      auto& g = px->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i / n];
    };
  }
  return finish<T>("sum_last", std::move(out_shape), std::move(out), {x.node()}, std::move(bw));
}

// ------------------------------------------------------ softmax / layer norm

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, std::size_t axis) {
  const auto& s = x.shape();
  if (axis >= s.size()) fail("softmax", "axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  auto xs = x.data();
  std::vector<T> out(xs.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T mx = xs[base];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xs[base + j * inner]);
      T z = T(0);
      for (std::size_t j = 0; j < n; ++j) {
        const T e = std::exp(xs[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= z;
    }
  }
  std::function<void(Node<T>&)> bw;
  if (recording({&x})) {
    Node<T>* px = x.node().get();
    bw = [px, outer, inner, n](Node<T>& self) {
      auto& g = px->ensure_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * n * inner + in;
          T dot = T(0);
          for (std::size_t j = 0; j < n; ++j) dot += self.grad[base + j * inner] * self.data[base + j * inner];
          for (std::size_t j = 0; j < n; ++j) {
            const std::size_t idx = base + j * inner;
            g[idx] += self.data[idx] * (self.grad[idx] - dot);
          }
        }
      }
    };
  }
  return finish<T>("softmax", s, std::move(out), {x.node()}, std::move(bw));
}

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain, const BasicTensor<T>& bias,
                          T eps) {
  require_rank("layer_norm", gain, 1);
  require_rank("layer_norm", bias, 1);
  const std::size_t n = gain.dim(0);
  if (x.rank() == 0 || x.shape().back() != n || bias.dim(0) != n) {
    fail("layer_norm", "normalized width mismatch for input " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / n;
  auto xs = x.data();
  auto gs = gain.data();
  auto bs = bias.data();
  std::vector<T> out(xs.size());
  std::vector<T> xhat(xs.size());
  std::vector<T> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xs.data() + r * n;
    T mu = T(0);
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(n);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (row[j] - mu) * rstd[r];
      xhat[r * n + j] = h;
      out[r * n + j] = h * gs[j] + bs[j];
    }
  }
  std::function<void(Node<T>&)> bw;
  if (recording({&x, &gain, &bias})) {
    Node<T>* px = x.node().get();
    Node<T>* pg = gain.node().get();
    Node<T>* pb = bias.node().get();
    bw = [px, pg, pb, n, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
      if (pg->requires_grad || pb->requires_grad) {
        auto& gg = pg->ensure_grad();
        auto& gb = pb->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          gg[i % n] += self.grad[i] * xhat[i];
          gb[i % n] += self.grad[i];
        }
      }
      if (px->requires_grad) {
        auto& gx = px->ensure_grad();
        const T inv_n = T(1) / static_cast<T>(n);
        for (std::size_t r = 0; r < rows; ++r) {
          T m1 = T(0), m2 = T(0);
          for (std::size_t j = 0; j < n; ++j) {
            const T d = self.grad[r * n + j] * pg->data[j];
            m1 += d;
            m2 += d * xhat[r * n + j];
          }
          m1 *= inv_n;
          m2 *= inv_n;
          for (std::size_t j = 0; j < n; ++j) {
            const T d = self.grad[r * n + j] * pg->data[j];
            gx[r * n + j] += rstd[r] * (d - m1 - xhat[r * n + j] * m2);
          }
        }
      }
    };
  }
  return finish<T>("layer_norm", x.shape(), std::move(out), {x.node(), gain.node(), bias.node()},
                   std::move(bw));
}

// ------------------------------------------------------------------- reshapes

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    fail("reshape", "cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  std::function<void(Node<T>&)> bw;
  if (recording({&x})) {
    Node<T>* px = x.node().get();
    bw = [px](Node<T>& self) {
      auto& g = px->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    };
  }
  return finish<T>("reshape", std::move(shape), std::move(out), {x.node()}, std::move(bw));
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& x) {
  require_rank("transpose", x, 2);
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<T> out(m * n);
  MapM<T>(out.data(), n, m).noalias() = CMapM<T>(x.data().data(), m, n).transpose();
  std::function<void(Node<T>&)> bw;
  if (recording({&x})) {
    Node<T>* px = x.node().get();
    bw = [px, m, n](Node<T>& self) {
      MapM<T>(px->ensure_grad().data(), m, n).noalias() += CMapM<T>(self.grad.data(), n, m).transpose();
    };
  }
  return finish<T>("transpose", Shape{n, m}, std::move(out), {x.node()}, std::move(bw));
}

template <typename T>
BasicTensor<T> slice_cols(const BasicTensor<T>& x, std::size_t begin, std::size_t count) {
  require_rank("slice_cols", x, 2);
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (begin + count > n) fail("slice_cols", "range exceeds width " + std::to_string(n));
  auto xs = x.data();
  std::vector<T> out(m * count);
  for (std::size_t r = 0; r < m; ++r) {
    std::copy_n(xs.begin() + r * n + begin, count, out.begin() + r * count);
  }
  std::function<void(Node<T>&)> bw;
  if (recording({&x})) {
    Node<T>* px = x.node().get();
    bw = [px, m, n, begin, count](Node<T>& self) {
      auto& g = px->ensure_grad();
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t j = 0; j < count; ++j) g[r * n + begin + j] += self.grad[r * count + j];
      }
    };
  }
  return finish<T>("slice_cols", Shape{m, count}, std::move(out), {x.node()}, std::move(bw));
}

template <typename T>
BasicTensor<T> concat_cols(const std::vector<BasicTensor<T>>& parts) {
  if (parts.empty()) fail("concat_cols", "no inputs");
  const std::size_t m = parts[0].dim(0);
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank("concat_cols", p, 2);
    if (p.dim(0) != m) fail("concat_cols", "row count mismatch");
    total += p.dim(1);
  }
  std::vector<T> out(m * total);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    auto ps = p.data();
    for (std::size_t r = 0; r < m; ++r) std::copy_n(ps.begin() + r * w, w, out.begin() + r * total + off);
    off += w;
  }
  std::function<void(Node<T>&)> bw;
  std::vector<NodePtr<T>> parents;
  if (recording(parts)) {
    std::vector<std::pair<Node<T>*, std::size_t>> info;
    for (const auto& p : parts) {
      parents.push_back(p.node());
      info.emplace_back(p.node().get(), p.dim(1));
    }
    bw = [info, m, total](Node<T>& self) {
      std::size_t o = 0;
      for (auto [pn, w] : info) {
        if (pn->requires_grad) {
          auto& g = pn->ensure_grad();
          for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t j = 0; j < w; ++j) g[r * w + j] += self.grad[r * total + o + j];
          }
        }
        o += w;
      }
    };
  }
  return finish<T>("concat_cols", Shape{m, total}, std::move(out), std::move(parents), std::move(bw));
}

template <typename T>
BasicTensor<T> concat_rows(const std::vector<BasicTensor<T>>& parts) {
  if (parts.empty()) fail("concat_rows", "no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.rank() != tail.size() + 1 || !std::equal(tail.begin(), tail.end(), p.shape().begin() + 1)) {
      fail("concat_rows", "trailing shape mismatch " + shape_str(p.shape()));
    }
    rows += p.dim(0);
  }
  std::vector<T> out;
  out.reserve(rows * shape_numel(tail));
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  Shape shape{rows};
  shape.insert(shape.end(), tail.begin(), tail.end());
  std::function<void(Node<T>&)> bw;
  std::vector<NodePtr<T>> parents;
  if (recording(parts)) {
    std::vector<Node<T>*> info;
    for (const auto& p : parts) {
      parents.push_back(p.node());
      info.push_back(p.node().get());
    }
    bw = [info](Node<T>& self) {
      std::size_t o = 0;
      for (Node<T>* pn : info) {
        const std::size_t len = pn->data.size();
        if (pn->requires_grad) {
          auto& g = pn->ensure_grad();
          for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[o + i];
        }
        o += len;
      }
    };
  }
  return finish<T>("concat_rows", std::move(shape), std::move(out), std::move(parents), std::move(bw));
}

template <typename T>
BasicTensor<T> gather_rows(const BasicTensor<T>& x, std::span<const std::size_t> rows) {
  if (x.rank() == 0) fail("gather_rows", "rank-0 input");
  const std::size_t n = x.dim(0);
  const std::size_t width = n == 0 ? 0 : x.numel() / n;
  auto xs = x.data();
  std::vector<T> out(rows.size() * width);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n) fail("gather_rows", "row index " + std::to_string(rows[i]) + " out of range");
    std::copy_n(xs.begin() + rows[i] * width, width, out.begin() + i * width);
  }
  Shape shape = x.shape();
  shape[0] = rows.size();
  std::function<void(Node<T>&)> bw;
  if (recording({&x})) {
    Node<T>* px = x.node().get();
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    bw = [px, width, idx = std::move(idx)](Node<T>& self) {
      auto& g = px->ensure_grad();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t j = 0; j < width; ++j) g[idx[i] * width + j] += self.grad[i * width + j];
      }
    };
  }
  return finish<T>("gather_rows", std::move(shape), std::move(out), {x.node()}, std::move(bw));
}

// -------------------------------------------------------------- convolutions

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b,
                      std::size_t stride, std::size_t padding) {
  require_rank("conv2d", x, 3);
  require_rank("conv2d", w, 4);
  const std::size_t c = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != c) fail("conv2d", "kernel channels " + std::to_string(w.dim(1)) + " vs input " + std::to_string(c));
  if (stride == 0) fail("conv2d", "stride must be positive");
  if (h + 2 * padding < kh || wd + 2 * padding < kw) fail("conv2d", "kernel larger than padded input");
  if (b.defined() && (b.rank() != 1 || b.dim(0) != o)) fail("conv2d", "bias shape mismatch");
  const std::size_t ho = (h + 2 * padding - kh) / stride + 1;
  const std::size_t wo = (wd + 2 * padding - kw) / stride + 1;
  const std::size_t ckk = c * kh * kw;
  const std::size_t hw = ho * wo;
  const bool pointwise = kh == 1 && kw == 1 && stride == 1 && padding == 0;

  auto xs = x.data();
  auto cols = std::make_shared<std::vector<T>>();
  if (!pointwise) {
    cols->assign(ckk * hw, T(0));
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t ki = 0; ki < kh; ++ki) {
        for (std::size_t kj = 0; kj < kw; ++kj) {
          T* dst = cols->data() + ((ch * kh + ki) * kw + kj) * hw;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ki) - static_cast<std::ptrdiff_t>(padding);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            const T* src = xs.data() + (ch * h + static_cast<std::size_t>(iy)) * wd;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kj) - static_cast<std::ptrdiff_t>(padding);
              if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(wd)) dst[oy * wo + ox] = src[ix];
            }
          }
        }
      }
    }
  }
  const T* cols_ptr = pointwise ? xs.data() : cols->data();
  std::vector<T> out(o * hw);
  MapM<T>(out.data(), o, hw).noalias() = CMapM<T>(w.data().data(), o, ckk) * CMapM<T>(cols_ptr, ckk, hw);
  if (b.defined()) {
    auto bs = b.data();
    for (std::size_t oc = 0; oc < o; ++oc) {
      for (std::size_t i = 0; i < hw; ++i) out[oc * hw + i] += bs[oc];
    }
  }

  std::function<void(Node<T>&)> bw;
  std::vector<NodePtr<T>> parents{x.node(), w.node()};
  if (b.defined()) parents.push_back(b.node());
  if (recording({&x, &w, &b})) {
    Node<T>* px = x.node().get();
    Node<T>* pw = w.node().get();
    Node<T>* pb = b.defined() ? b.node().get() : nullptr;
    bw = [=](Node<T>& self) {
      CMapM<T> g(self.grad.data(), o, hw);
      const T* cp = pointwise ? px->data.data() : cols->data();
      if (pw->requires_grad) {
        MapM<T>(pw->ensure_grad().data(), o, ckk).noalias() += g * CMapM<T>(cp, ckk, hw).transpose();
      }
      if (pb && pb->requires_grad) {
        auto& gb = pb->ensure_grad();
        // plain loop: Eigen's vectorised sum() depends on buffer alignment
        for (std::size_t oc = 0; oc < o; ++oc) {
          const T* row = self.grad.data() + oc * hw;
          gb[oc] += std::accumulate(row, row + hw, T(0));
        }
      }
      if (px->requires_grad) {
        auto& gx = px->ensure_grad();
        if (pointwise) {
          MapM<T>(gx.data(), ckk, hw).noalias() += CMapM<T>(pw->data.data(), o, ckk).transpose() * g;
          return;
        }
        MatRM<T> dcols = CMapM<T>(pw->data.data(), o, ckk).transpose() * g;
        for (std::size_t ch = 0; ch < c; ++ch) {
          for (std::size_t ki = 0; ki < kh; ++ki) {
            for (std::size_t kj = 0; kj < kw; ++kj) {
              const T* src = dcols.data() + ((ch * kh + ki) * kw + kj) * hw;
              for (std::size_t oy = 0; oy < ho; ++oy) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ki) - static_cast<std::ptrdiff_t>(padding);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                T* dst = gx.data() + (ch * h + static_cast<std::size_t>(iy)) * wd;
                for (std::size_t ox = 0; ox < wo; ++ox) {
                  const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kj) - static_cast<std::ptrdiff_t>(padding);
                  if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(wd)) dst[ix] += src[oy * wo + ox];
                }
              }
            }
          }
        }
      }
    };
  }
  return finish<T>("conv2d", Shape{o, ho, wo}, std::move(out), std::move(parents), std::move(bw));
}

template <typename T>
BasicTensor<T> max_pool2d(const BasicTensor<T>& x, std::size_t kernel, std::size_t stride) {
  require_rank("max_pool2d", x, 3);
  const std::size_t c = x.dim(0), h = x.dim(1), wd = x.dim(2);
  if (kernel == 0 || stride == 0 || kernel > h || kernel > wd) fail("max_pool2d", "invalid window");
  const std::size_t ho = (h - kernel) / stride + 1;
  const std::size_t wo = (wd - kernel) / stride + 1;
  auto xs = x.data();
  std::vector<T> out(c * ho * wo);
  std::vector<std::size_t> arg(out.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = (ch * h + oy * stride) * wd + ox * stride;
        for (std::size_t ki = 0; ki < kernel; ++ki) {
          for (std::size_t kj = 0; kj < kernel; ++kj) {
            const std::size_t idx = (ch * h + oy * stride + ki) * wd + ox * stride + kj;
            if (xs[idx] > xs[best]) best = idx;
          }
        }
        const std::size_t oi = (ch * ho + oy) * wo + ox;
        out[oi] = xs[best];
        arg[oi] = best;
      }
    }
  }
  std::function<void(Node<T>&)> bw;
  if (recording({&x})) {
    Node<T>* px = x.node().get();
    bw = [px, arg = std::move(arg)](Node<T>& self) {
      auto& g = px->ensure_grad();
      for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += self.grad[i];
    };
  }
  return finish<T>("max_pool2d", Shape{c, ho, wo}, std::move(out), {x.node()}, std::move(bw));
}

template <typename T>
BasicTensor<T> upsample_nearest2x(const BasicTensor<T>& x) {
  require_rank("upsample_nearest2x", x, 3);
  const std::size_t c = x.dim(0), h = x.dim(1), wd = x.dim(2);
  auto xs = x.data();
  std::vector<T> out(c * 4 * h * wd);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < 2 * h; ++y) {
      for (std::size_t xx = 0; xx < 2 * wd; ++xx) {
        out[(ch * 2 * h + y) * 2 * wd + xx] = xs[(ch * h + y / 2) * wd + xx / 2];
      }
    }
  }
  std::function<void(Node<T>&)> bw;
  if (recording({&x})) {
    Node<T>* px = x.node().get();
    bw = [px, c, h, wd](Node<T>& self) {
      auto& g = px->ensure_grad();
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < 2 * h; ++y) {
          for (std::size_t xx = 0; xx < 2 * wd; ++xx) {
            g[(ch * h + y / 2) * wd + xx / 2] += self.grad[(ch * 2 * h + y) * 2 * wd + xx];
          }
        }
      }
    };
  }
  return finish<T>("upsample_nearest2x", Shape{c, 2 * h, 2 * wd}, std::move(out), {x.node()}, std::move(bw));
}

// ------------------------------------------------------------------ sampling

template <typename T>
BasicTensor<T> bilinear_sample(const BasicTensor<T>& feat, const BasicTensor<T>& points) {
  require_rank("bilinear_sample", feat, 3);
  require_rank("bilinear_sample", points, 2);
  if (points.dim(1) != 2) fail("bilinear_sample", "points must be [N, 2]");
  const std::size_t c = feat.dim(0), h = feat.dim(1), w = feat.dim(2);
  const std::size_t n = points.dim(0);
  if (h == 0 || w == 0) fail("bilinear_sample", "empty feature map");
  auto fs = feat.data();
  auto ps = points.data();
  std::vector<T> out(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    const auto tx = make_tap(ps[2 * i], w);
    const auto ty = make_tap(ps[2 * i + 1], h);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* f = fs.data() + ch * h * w;
      const T top = (T(1) - tx.frac) * f[ty.i0 * w + tx.i0] + tx.frac * f[ty.i0 * w + tx.i1];
      const T bot = (T(1) - tx.frac) * f[ty.i1 * w + tx.i0] + tx.frac * f[ty.i1 * w + tx.i1];
      out[i * c + ch] = (T(1) - ty.frac) * top + ty.frac * bot;
    }
  }
  std::function<void(Node<T>&)> bw;
  if (recording({&feat, &points})) {
    Node<T>* pf = feat.node().get();
    Node<T>* pp = points.node().get();
    bw = [pf, pp, c, h, w, n](Node<T>& self) {
      for (std::size_t i = 0; i < n; ++i) {
        const auto tx = make_tap(pp->data[2 * i], w);
        const auto ty = make_tap(pp->data[2 * i + 1], h);
        T gx = T(0), gy = T(0);
        for (std::size_t ch = 0; ch < c; ++ch) {
          const T g = self.grad[i * c + ch];
          const T* f = pf->data.data() + ch * h * w;
          const T v00 = f[ty.i0 * w + tx.i0], v01 = f[ty.i0 * w + tx.i1];
          const T v10 = f[ty.i1 * w + tx.i0], v11 = f[ty.i1 * w + tx.i1];
          if (pf->requires_grad) {
            auto& gf = pf->ensure_grad();
            T* d = gf.data() + ch * h * w;
            d[ty.i0 * w + tx.i0] += g * (T(1) - ty.frac) * (T(1) - tx.frac);
            d[ty.i0 * w + tx.i1] += g * (T(1) - ty.frac) * tx.frac;
            d[ty.i1 * w + tx.i0] += g * ty.frac * (T(1) - tx.frac);
            d[ty.i1 * w + tx.i1] += g * ty.frac * tx.frac;
          }
          gx += g * ((T(1) - ty.frac) * (v01 - v00) + ty.frac * (v11 - v10));
          gy += g * ((T(1) - tx.frac) * (v10 - v00) + tx.frac * (v11 - v01));
        }
        if (pp->requires_grad) {
          auto& gp = pp->ensure_grad();
          gp[2 * i] += gx * tx.dscale;
          gp[2 * i + 1] += gy * ty.dscale;
        }
      }
    };
  }
  return finish<T>("bilinear_sample", Shape{n, c}, std::move(out), {feat.node(), points.node()},
                   std::move(bw));
}

template <typename T>
BasicTensor<T> deformable_sample(const BasicTensor<T>& value, std::span<const LevelShape> levels,
                                 const BasicTensor<T>& locations, const BasicTensor<T>& weights,
                                 std::size_t heads, std::size_t groups) {
  require_rank("deformable_sample", value, 2);
  require_rank("deformable_sample", locations, 2);
  require_rank("deformable_sample", weights, 2);
  const std::size_t s = value.dim(0), c = value.dim(1);
  const std::size_t nl = levels.size();
  const std::size_t k = locations.dim(0);
  if (heads == 0 || c % heads != 0) fail("deformable_sample", "channels not divisible by heads");
  if (locations.dim(1) != heads * nl * groups * 2 || weights.dim(0) != k ||
      weights.dim(1) != heads * nl * groups) {
    fail("deformable_sample", "locations/weights layout mismatch");
  }
  for (const auto& lv : levels) {
    if (lv.height == 0 || lv.width == 0 || lv.offset + lv.height * lv.width > s) {
      fail("deformable_sample", "level shape exceeds value rows");
    }
  }
  const std::size_t dh = c / heads;
  const std::size_t per_query = heads * nl * groups;
  auto vs = value.data();
  auto ls = locations.data();
  auto ws = weights.data();
  std::vector<T> out(k * c, T(0));
  for (std::size_t q = 0; q < k; ++q) {
    for (std::size_t hd = 0; hd < heads; ++hd) {
      T* o = out.data() + q * c + hd * dh;
      for (std::size_t l = 0; l < nl; ++l) {
        const auto& lv = levels[l];
        for (std::size_t gi = 0; gi < groups; ++gi) {
          const std::size_t si = q * per_query + (hd * nl + l) * groups + gi;
          const T a = ws[si];
          const auto tx = make_tap(ls[2 * si], lv.width);
          const auto ty = make_tap(ls[2 * si + 1], lv.height);
          const T w00 = a * (T(1) - ty.frac) * (T(1) - tx.frac), w01 = a * (T(1) - ty.frac) * tx.frac;
          const T w10 = a * ty.frac * (T(1) - tx.frac), w11 = a * ty.frac * tx.frac;
          const T* r00 = vs.data() + (lv.offset + ty.i0 * lv.width + tx.i0) * c + hd * dh;
          const T* r01 = vs.data() + (lv.offset + ty.i0 * lv.width + tx.i1) * c + hd * dh;
          const T* r10 = vs.data() + (lv.offset + ty.i1 * lv.width + tx.i0) * c + hd * dh;
          const T* r11 = vs.data() + (lv.offset + ty.i1 * lv.width + tx.i1) * c + hd * dh;
          for (std::size_t j = 0; j < dh; ++j) o[j] += w00 * r00[j] + w01 * r01[j] + w10 * r10[j] + w11 * r11[j];
        }
      }
    }
  }
  std::function<void(Node<T>&)> bw;
  if (recording({&value, &locations, &weights})) {
    Node<T>* pv = value.node().get();
    Node<T>* pl = locations.node().get();
    Node<T>* pw = weights.node().get();
    std::vector<LevelShape> lvls(levels.begin(), levels.end());
    bw = [pv, pl, pw, lvls = std::move(lvls), k, c, heads, groups, dh, per_query](Node<T>& self) {
      const std::size_t nl = lvls.size();
      T* gv = pv->requires_grad ? pv->ensure_grad().data() : nullptr;
      T* gl = pl->requires_grad ? pl->ensure_grad().data() : nullptr;
      T* gw = pw->requires_grad ? pw->ensure_grad().data() : nullptr;
      const T* vs = pv->data.data();
      for (std::size_t q = 0; q < k; ++q) {
        for (std::size_t hd = 0; hd < heads; ++hd) {
          const T* g = self.grad.data() + q * c + hd * dh;
          for (std::size_t l = 0; l < nl; ++l) {
            const auto& lv = lvls[l];
            for (std::size_t gi = 0; gi < groups; ++gi) {
              const std::size_t si = q * per_query + (hd * nl + l) * groups + gi;
              const T a = pw->data[si];
              const auto tx = make_tap(pl->data[2 * si], lv.width);
              const auto ty = make_tap(pl->data[2 * si + 1], lv.height);
              const std::size_t i00 = (lv.offset + ty.i0 * lv.width + tx.i0) * c + hd * dh;
              const std::size_t i01 = (lv.offset + ty.i0 * lv.width + tx.i1) * c + hd * dh;
              const std::size_t i10 = (lv.offset + ty.i1 * lv.width + tx.i0) * c + hd * dh;
              const std::size_t i11 = (lv.offset + ty.i1 * lv.width + tx.i1) * c + hd * dh;
              const T fx = tx.frac, fy = ty.frac;
              T gsample = T(0), gx = T(0), gy = T(0);
              for (std::size_t j = 0; j < dh; ++j) {
                const T v00 = vs[i00 + j], v01 = vs[i01 + j], v10 = vs[i10 + j], v11 = vs[i11 + j];
                const T top = (T(1) - fx) * v00 + fx * v01;
                const T bot = (T(1) - fx) * v10 + fx * v11;
                gsample += g[j] * ((T(1) - fy) * top + fy * bot);
                gx += g[j] * ((T(1) - fy) * (v01 - v00) + fy * (v11 - v10));
                gy += g[j] * (bot - top);
              }
              if (gw) gw[si] += gsample;
              if (gl) {
                gl[2 * si] += a * gx * tx.dscale;
                gl[2 * si + 1] += a * gy * ty.dscale;
              }
              if (gv) {
                const T w00 = a * (T(1) - fy) * (T(1) - fx), w01 = a * (T(1) - fy) * fx;
                const T w10 = a * fy * (T(1) - fx), w11 = a * fy * fx;
                for (std::size_t j = 0; j < dh; ++j) {
                  gv[i00 + j] += w00 * g[j];
                  gv[i01 + j] += w01 * g[j];
                  gv[i10 + j] += w10 * g[j];
                  gv[i11 + j] += w11 * g[j];
                }
              }
            }
          }
        }
      }
    };
  }
  return finish<T>("deformable_sample", Shape{k, c}, std::move(out),
                   {value.node(), locations.node(), weights.node()}, std::move(bw));
}

template <typename T>
BasicTensor<T> sine_embed(const BasicTensor<T>& points, std::size_t dim) {
  require_rank("sine_embed", points, 2);
  if (dim == 0 || dim % 4 != 0) fail("sine_embed", "dim must be a positive multiple of 4");
  if (points.dim(1) == 0 || points.dim(1) % 2 != 0) fail("sine_embed", "points must hold (x, y) pairs");
  const std::size_t k = points.dim(0);
  const std::size_t np = points.dim(1) / 2;
  const std::size_t half = dim / 2;
  const std::size_t nfreq = half / 2;
  std::vector<T> freq(nfreq);
  for (std::size_t f = 0; f < nfreq; ++f) {
    freq[f] = T(2) * std::numbers::pi_v<T> /
              std::pow(T(10000), static_cast<T>(2 * f) / static_cast<T>(half));
  }
  const T inv_np = T(1) / static_cast<T>(np);
  auto ps = points.data();
  std::vector<T> out(k * dim, T(0));
  for (std::size_t q = 0; q < k; ++q) {
    for (std::size_t p = 0; p < np; ++p) {
      for (std::size_t axis = 0; axis < 2; ++axis) {
        const T u = ps[q * 2 * np + 2 * p + axis];
        T* o = out.data() + q * dim + axis * half;
        for (std::size_t f = 0; f < nfreq; ++f) {
          o[2 * f] += std::sin(u * freq[f]) * inv_np;
          o[2 * f + 1] += std::cos(u * freq[f]) * inv_np;
        }
      }
    }
  }
  std::function<void(Node<T>&)> bw;
  if (recording({&points})) {
    Node<T>* pp = points.node().get();
    bw = [pp, k, np, dim, half, nfreq, freq, inv_np](Node<T>& self) {
      auto& g = pp->ensure_grad();
      for (std::size_t q = 0; q < k; ++q) {
        for (std::size_t p = 0; p < np; ++p) {
          for (std::size_t axis = 0; axis < 2; ++axis) {
            const std::size_t idx = q * 2 * np + 2 * p + axis;
            const T u = pp->data[idx];
            const T* go = self.grad.data() + q * dim + axis * half;
            T acc = T(0);
            for (std::size_t f = 0; f < nfreq; ++f) {
              acc += go[2 * f] * std::cos(u * freq[f]) * freq[f];
              acc -= go[2 * f + 1] * std::sin(u * freq[f]) * freq[f];
            }
            g[idx] += acc * inv_np;
          }
        }
      }
    };
  }
  return finish<T>("sine_embed", Shape{k, dim}, std::move(out), {points.node()}, std::move(bw));
}

template <typename T>
BasicTensor<T> canonicalize_lines(const BasicTensor<T>& lines, bool order_by_x) {
  require_rank("canonicalize_lines", lines, 2);
  if (lines.dim(1) != 4) fail("canonicalize_lines", "lines must be [K, 4]");
  const std::size_t k = lines.dim(0);
  auto ls = lines.data();
  std::vector<T> out(ls.begin(), ls.end());
  std::vector<bool> swapped(k, false);
  for (std::size_t q = 0; q < k; ++q) {
    const std::size_t a = order_by_x ? 0 : 1;
    if (ls[4 * q + a] > ls[4 * q + 2 + a]) {
      swapped[q] = true;
      std::swap(out[4 * q], out[4 * q + 2]);
      std::swap(out[4 * q + 1], out[4 * q + 3]);
    }
  }
  std::function<void(Node<T>&)> bw;
  if (recording({&lines})) {
    Node<T>* pl = lines.node().get();
    bw = [pl, k, swapped = std::move(swapped)](Node<T>& self) {
      auto& g = pl->ensure_grad();
      for (std::size_t q = 0; q < k; ++q) {
        for (std::size_t j = 0; j < 4; ++j) {
          const std::size_t src = swapped[q] ? (j + 2) % 4 : j;
          g[4 * q + src] += self.grad[4 * q + j];
        }
      }
    };
  }
  return finish<T>("canonicalize_lines", lines.shape(), std::move(out), {lines.node()}, std::move(bw));
}

#define SEPFORMER_INSTANTIATE_OPS(T)                                                                     \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                             \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                             \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                             \
  template BasicTensor<T> div(const BasicTensor<T>&, const BasicTensor<T>&);                             \
  template BasicTensor<T> add_bias(const BasicTensor<T>&, const BasicTensor<T>&);                        \
  template BasicTensor<T> add_channel_bias(const BasicTensor<T>&, const BasicTensor<T>&);                \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                               \
  template BasicTensor<T> add_scalar(const BasicTensor<T>&, T);                                          \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                          \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);   \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                                   \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                                \
  template BasicTensor<T> inverse_sigmoid(const BasicTensor<T>&, T);                                     \
  template BasicTensor<T> log(const BasicTensor<T>&);                                                    \
  template BasicTensor<T> abs(const BasicTensor<T>&);                                                    \
  template BasicTensor<T> sqrt(const BasicTensor<T>&);                                                   \
  template BasicTensor<T> square(const BasicTensor<T>&);                                                 \
  template BasicTensor<T> clamp(const BasicTensor<T>&, T, T);                                            \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                                    \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                                   \
  template BasicTensor<T> sum_last(const BasicTensor<T>&);                                               \
  template BasicTensor<T> softmax(const BasicTensor<T>&, std::size_t);                                   \
  template BasicTensor<T> layer_norm(const BasicTensor<T>&, const BasicTensor<T>&,                       \
                                     const BasicTensor<T>&, T);                                          \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                         \
  template BasicTensor<T> transpose(const BasicTensor<T>&);                                              \
  template BasicTensor<T> slice_cols(const BasicTensor<T>&, std::size_t, std::size_t);                   \
  template BasicTensor<T> concat_cols(const std::vector<BasicTensor<T>>&);                               \
  template BasicTensor<T> concat_rows(const std::vector<BasicTensor<T>>&);                               \
  template BasicTensor<T> gather_rows(const BasicTensor<T>&, std::span<const std::size_t>);              \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,    \
                                 std::size_t, std::size_t);                                              \
  template BasicTensor<T> max_pool2d(const BasicTensor<T>&, std::size_t, std::size_t);                   \
  template BasicTensor<T> upsample_nearest2x(const BasicTensor<T>&);                                     \
  template BasicTensor<T> bilinear_sample(const BasicTensor<T>&, const BasicTensor<T>&);                 \
  template BasicTensor<T> deformable_sample(const BasicTensor<T>&, std::span<const LevelShape>,          \
                                            const BasicTensor<T>&, const BasicTensor<T>&, std::size_t,   \
                                            std::size_t);                                                \
  template BasicTensor<T> sine_embed(const BasicTensor<T>&, std::size_t);                                \
  template BasicTensor<T> canonicalize_lines(const BasicTensor<T>&, bool);

SEPFORMER_INSTANTIATE_OPS(float)
SEPFORMER_INSTANTIATE_OPS(double)

#undef SEPFORMER_INSTANTIATE_OPS

}  // namespace sepformer
