#include "sepformer/layers.hpp"

#include <cmath>

#include "sepformer/ops.hpp"

namespace sepformer {

template <typename T>
BasicTensor<T> ParamSet<T>::add(const std::string& name, Shape shape, std::vector<T> values) {
  for (const auto& [n, _] : entries_) {
    if (n == name) throw NumericError("duplicate parameter name " + name);
  }
  BasicTensor<T> t(std::move(shape), std::move(values), true);
  entries_.emplace_back(name, t);
  return t;
}

template <typename T>
BasicTensor<T> ParamSet<T>::uniform(const std::string& name, Shape shape, double bound) {
  std::vector<T> v(shape_numel(shape));
  for (auto& e : v) e = static_cast<T>(rng_.uniform(-bound, bound));
  return add(name, std::move(shape), std::move(v));
}

template <typename T>
BasicTensor<T> ParamSet<T>::constant(const std::string& name, Shape shape, double value) {
  std::vector<T> v(shape_numel(shape), static_cast<T>(value));
  return add(name, std::move(shape), std::move(v));
}

template <typename T>
BasicTensor<T> ParamSet<T>::from_values(const std::string& name, Shape shape, std::vector<T> values) {
  return add(name, std::move(shape), std::move(values));
}

template <typename T>
std::vector<BasicTensor<T>> ParamSet<T>::tensors() const {
  std::vector<BasicTensor<T>> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.second);
  return out;
}

template <typename T>
std::size_t ParamSet<T>::count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.numel();
  return n;
}

template <typename T>
void ParamSet<T>::assign(const NamedTensors<T>& values) {
  if (values.size() != entries_.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(values.size()) + " tensors, model expects " +
                          std::to_string(entries_.size()));
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto& [name, dst] = entries_[i];
    const auto& [src_name, src] = values[i];
    if (src_name != name) throw CheckpointError("checkpoint entry " + src_name + " where " + name + " expected");
    if (src.shape() != dst.shape()) {
      throw CheckpointError("shape mismatch for " + name + ": " + shape_str(src.shape()) + " vs " +
                            shape_str(dst.shape()));
    }
    auto d = dst.data_mut();
    std::copy(src.data().begin(), src.data().end(), d.begin());
  }
}

template <typename T>
Linear<T>::Linear(ParamSet<T>& ps, const std::string& name, std::size_t in, std::size_t out, double gain) {
  const double bound = gain * std::sqrt(6.0 / static_cast<double>(in + out));
  w = ps.uniform(name + ".w", {in, out}, bound);
  b = ps.constant(name + ".b", {out}, 0.0);
}

template <typename T>
BasicTensor<T> Linear<T>::operator()(const BasicTensor<T>& x) const {
  return linear(x, w, b);
}

template <typename T>
void Linear<T>::zero_weight() {
  for (auto& e : w.data_mut()) e = T(0);
}

template <typename T>
void Linear<T>::fill_bias(double value) {
  for (auto& e : b.data_mut()) e = static_cast<T>(value);
}

template <typename T>
Conv2d<T>::Conv2d(ParamSet<T>& ps, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
                  std::size_t stride_, std::size_t padding_, double gain)
    : stride(stride_), padding(padding_) {
  const double bound = gain * std::sqrt(6.0 / static_cast<double>(in * kernel * kernel));
  w = ps.uniform(name + ".w", {out, in, kernel, kernel}, bound);
  b = ps.constant(name + ".b", {out}, 0.0);
}

template <typename T>
BasicTensor<T> Conv2d<T>::operator()(const BasicTensor<T>& x) const {
  return conv2d(x, w, b, stride, padding);
}

template <typename T>
LayerNorm<T>::LayerNorm(ParamSet<T>& ps, const std::string& name, std::size_t dim) {
  gain = ps.constant(name + ".g", {dim}, 1.0);
  bias = ps.constant(name + ".b", {dim}, 0.0);
}

template <typename T>
BasicTensor<T> LayerNorm<T>::operator()(const BasicTensor<T>& x) const {
  return layer_norm(x, gain, bias);
}

template <typename T>
Mlp<T>::Mlp(ParamSet<T>& ps, const std::string& name, const std::vector<std::size_t>& dims) {
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    layers.emplace_back(ps, name + "." + std::to_string(i), dims[i], dims[i + 1]);
  }
}

template <typename T>
BasicTensor<T> Mlp<T>::operator()(const BasicTensor<T>& x) const {
  auto h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i](h);
    if (i + 1 < layers.size()) h = relu(h);
  }
  return h;
}

template <typename T>
MultiheadAttention<T>::MultiheadAttention(ParamSet<T>& ps, const std::string& name, std::size_t dim,
                                          std::size_t heads_)
    : q(ps, name + ".q", dim, dim),
      k(ps, name + ".k", dim, dim),
      v(ps, name + ".v", dim, dim),
      o(ps, name + ".o", dim, dim),
      heads(heads_) {
  if (heads == 0 || dim % heads != 0) throw NumericError("attention: dim not divisible by heads");
}

template <typename T>
BasicTensor<T> MultiheadAttention<T>::operator()(const BasicTensor<T>& query, const BasicTensor<T>& key,
                                                 const BasicTensor<T>& value) const {
  const auto qs = q(query), ks = k(key), vs = v(value);
  const std::size_t dim = qs.dim(1), dh = dim / heads;
  const T inv = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<BasicTensor<T>> parts;
  parts.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    auto qh = slice_cols(qs, h * dh, dh);
    auto kh = slice_cols(ks, h * dh, dh);
    auto vh = slice_cols(vs, h * dh, dh);
    auto a = softmax(scale(matmul(qh, transpose(kh)), inv), 1);
    parts.push_back(matmul(a, vh));
  }
  return o(heads == 1 ? parts[0] : concat_cols(parts));
}

double prior_bias(double prior) { return -std::log((1.0 - prior) / prior); }

template class ParamSet<float>;
template class ParamSet<double>;
template struct Linear<float>;
template struct Linear<double>;
template struct Conv2d<float>;
template struct Conv2d<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;
template struct Mlp<float>;
template struct Mlp<double>;
template struct MultiheadAttention<float>;
template struct MultiheadAttention<double>;

}  // namespace sepformer
