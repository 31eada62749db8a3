#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "sepformer/checkpoint.hpp"
#include "sepformer/rng.hpp"
#include "sepformer/tensor.hpp"

namespace sepformer {

/// Owns every trainable tensor of a model, in registration order.
template <typename T>
class ParamSet {
 public:
  explicit ParamSet(std::uint64_t seed) : rng_(seed) {}

  BasicTensor<T> uniform(const std::string& name, Shape shape, double bound);
  BasicTensor<T> constant(const std::string& name, Shape shape, double value);
  BasicTensor<T> from_values(const std::string& name, Shape shape, std::vector<T> values);

  const NamedTensors<T>& entries() const { return entries_; }
  std::vector<BasicTensor<T>> tensors() const;
  std::size_t count() const;
  /// Copies values from a checkpoint; names and shapes must match exactly.
  void assign(const NamedTensors<T>& values);

 private:
  BasicTensor<T> add(const std::string& name, Shape shape, std::vector<T> values);

  NamedTensors<T> entries_;
  Rng rng_;
};

template <typename T>
struct Linear {
  BasicTensor<T> w;  // [in, out]
  BasicTensor<T> b;  // [out]

  Linear() = default;
  /// Xavier-uniform weight times gain, zero bias.
  Linear(ParamSet<T>& ps, const std::string& name, std::size_t in, std::size_t out, double gain = 1.0);
  BasicTensor<T> operator()(const BasicTensor<T>& x) const;
  void zero_weight();
  void fill_bias(double value);
};

template <typename T>
struct Conv2d {
  BasicTensor<T> w;  // [out, in, k, k]
  BasicTensor<T> b;
  std::size_t stride = 1;
  std::size_t padding = 0;

  Conv2d() = default;
  /// He-uniform weight times gain, zero bias.
  Conv2d(ParamSet<T>& ps, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
         std::size_t stride, std::size_t padding, double gain = 1.0);
  BasicTensor<T> operator()(const BasicTensor<T>& x) const;
};

template <typename T>
struct LayerNorm {
  BasicTensor<T> gain;
  BasicTensor<T> bias;

  LayerNorm() = default;
  LayerNorm(ParamSet<T>& ps, const std::string& name, std::size_t dim);
  BasicTensor<T> operator()(const BasicTensor<T>& x) const;
};

/// Linear layers with ReLU between them (none after the last).
template <typename T>
struct Mlp {
  std::vector<Linear<T>> layers;

  Mlp() = default;
  Mlp(ParamSet<T>& ps, const std::string& name, const std::vector<std::size_t>& dims);
  BasicTensor<T> operator()(const BasicTensor<T>& x) const;
  Linear<T>& last() { return layers.back(); }
};

template <typename T>
struct MultiheadAttention {
  Linear<T> q, k, v, o;
  std::size_t heads = 1;

  MultiheadAttention() = default;
  MultiheadAttention(ParamSet<T>& ps, const std::string& name, std::size_t dim, std::size_t heads);
  /// query [n, C], key [m, C], value [m, C] -> [n, C]
  BasicTensor<T> operator()(const BasicTensor<T>& query, const BasicTensor<T>& key,
                            const BasicTensor<T>& value) const;
};

/// Bias for a sigmoid output whose initial probability is prior.
double prior_bias(double prior);

}  // namespace sepformer
