#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "sepformer/tensor.hpp"

// Differentiable operations. Every op validates shapes, rejects non-finite
// results with NumericError and records a backward closure when gradient
// mode is on and any input requires a gradient.
namespace sepformer {

// Elementwise, identical shapes.
template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// x[..., n] + bias[n], broadcast over all leading dimensions.
template <typename T> BasicTensor<T> add_bias(const BasicTensor<T>& x, const BasicTensor<T>& bias);
/// x[C, ...] + bias[C], broadcast over trailing dimensions (channel bias).
template <typename T> BasicTensor<T> add_channel_bias(const BasicTensor<T>& x, const BasicTensor<T>& bias);

template <typename T> BasicTensor<T> scale(const BasicTensor<T>& x, T factor);
template <typename T> BasicTensor<T> add_scalar(const BasicTensor<T>& x, T value);

template <typename T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
/// x[m, in] * w[in, out] + b[out]
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b);

template <typename T> BasicTensor<T> relu(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> sigmoid(const BasicTensor<T>& x);
/// log(x / (1 - x)) with x clamped to [eps, 1 - eps]; eps must be positive.
template <typename T> BasicTensor<T> inverse_sigmoid(const BasicTensor<T>& x, T eps = T(1e-5));
template <typename T> BasicTensor<T> log(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> abs(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> sqrt(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> square(const BasicTensor<T>& x);
/// Gradient passes only where lo < x < hi.
template <typename T> BasicTensor<T> clamp(const BasicTensor<T>& x, T lo, T hi);

template <typename T> BasicTensor<T> sum(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& x);
/// Reduces the last axis: [..., n] -> [...] (rank-1 input gives shape [1]).
template <typename T> BasicTensor<T> sum_last(const BasicTensor<T>& x);

template <typename T> BasicTensor<T> softmax(const BasicTensor<T>& x, std::size_t axis);
/// Normalizes over the last axis, then applies gain and bias.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                          const BasicTensor<T>& bias, T eps = T(1e-6));

template <typename T> BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);
template <typename T> BasicTensor<T> transpose(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> slice_cols(const BasicTensor<T>& x, std::size_t begin, std::size_t count);
template <typename T> BasicTensor<T> concat_cols(const std::vector<BasicTensor<T>>& parts);
/// Concatenation along axis 0; trailing dimensions must agree.
template <typename T> BasicTensor<T> concat_rows(const std::vector<BasicTensor<T>>& parts);
/// Selects slices along axis 0.
template <typename T>
BasicTensor<T> gather_rows(const BasicTensor<T>& x, std::span<const std::size_t> rows);

/// x[C, H, W], w[O, C, kh, kw], b[O] (may be undefined).
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b,
                      std::size_t stride, std::size_t padding);
template <typename T>
BasicTensor<T> max_pool2d(const BasicTensor<T>& x, std::size_t kernel, std::size_t stride);
template <typename T> BasicTensor<T> upsample_nearest2x(const BasicTensor<T>& x);

/// feat[C, H, W] sampled at points[N, 2] given as normalized (x, y) in [0, 1].
/// The lattice node (j, i) sits at ((j + 0.5) / W, (i + 0.5) / H); points
/// beyond the outermost nodes clamp to the border. Result is [N, C].
template <typename T>
BasicTensor<T> bilinear_sample(const BasicTensor<T>& feat, const BasicTensor<T>& points);

struct LevelShape {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t offset = 0;  // first row of this level in the flattened value
};

/// Multi-scale deformable aggregation.
/// value[S, C] holds every level flattened row-major (channel-last);
/// locations[K, heads * levels * groups * 2] are normalized sample positions;
/// weights[K, heads * levels * groups] are the (already normalized)
/// attention weights. Head h reads channels [h * C / heads, (h + 1) * C / heads).
/// Sampling uses the same lattice and border-clamp rule as bilinear_sample.
template <typename T>
BasicTensor<T> deformable_sample(const BasicTensor<T>& value, std::span<const LevelShape> levels,
                                 const BasicTensor<T>& locations, const BasicTensor<T>& weights,
                                 std::size_t heads, std::size_t groups);

/// Sinusoidal embedding of point sets. points[K, 2R] holds R (x, y) pairs per
/// row; each coordinate contributes dim / 2 channels (sin/cos interleaved
/// across frequencies) and the per-point embeddings are averaged. dim must be
/// a multiple of 4.
template <typename T> BasicTensor<T> sine_embed(const BasicTensor<T>& points, std::size_t dim);

/// lines[K, 4] as (x1, y1, x2, y2). With order_by_x the endpoints are swapped
/// where x1 > x2, otherwise where y1 > y2.
template <typename T> BasicTensor<T> canonicalize_lines(const BasicTensor<T>& lines, bool order_by_x);

template <typename T>
BasicTensor<T> operator+(const BasicTensor<T>& a, const BasicTensor<T>& b) { return add(a, b); }
template <typename T>
BasicTensor<T> operator-(const BasicTensor<T>& a, const BasicTensor<T>& b) { return sub(a, b); }
template <typename T>
BasicTensor<T> operator*(const BasicTensor<T>& a, const BasicTensor<T>& b) { return mul(a, b); }

}  // namespace sepformer
