#include "sepformer/attention.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace sepformer {

template <typename T>
DeformableAttention<T>::DeformableAttention(ParamSet<T>& ps, const std::string& name, const DeformConfig& cfg)
    : cfg_(cfg),
      value_proj_(ps, name + ".value", cfg.channels, cfg.channels),
      offsets_(ps, name + ".offsets", cfg.channels, cfg.heads * cfg.levels * cfg.refs * cfg.points * 2),
      weights_(ps, name + ".weights", cfg.channels, cfg.heads * cfg.levels * cfg.refs * cfg.points),
      out_(ps, name + ".out", cfg.channels, cfg.channels) {
  if (cfg.mode == DeformMode::LineEndpoints && cfg.refs != 2) {
    throw std::invalid_argument("line-endpoint attention needs exactly 2 references");
  }
  offsets_.zero_weight();
  weights_.zero_weight();
  // each head looks along its own direction, points at growing distance
  auto bias = offsets_.b.data_mut();
  const std::size_t heads = cfg.heads, levels = cfg.levels, refs = cfg.refs, points = cfg.points;
  for (std::size_t h = 0; h < heads; ++h) {
    const double theta = 2.0 * std::numbers::pi * static_cast<double>(h) / static_cast<double>(heads);
    double dx = std::cos(theta), dy = std::sin(theta);
    const double norm = std::max(std::abs(dx), std::abs(dy));
    dx /= norm;
    dy /= norm;
    for (std::size_t l = 0; l < levels; ++l) {
      for (std::size_t r = 0; r < refs; ++r) {
        for (std::size_t p = 0; p < points; ++p) {
          const std::size_t col = (((h * levels + l) * refs + r) * points + p) * 2;
          bias[col] = static_cast<T>(dx * static_cast<double>(p + 1));
          bias[col + 1] = static_cast<T>(dy * static_cast<double>(p + 1));
        }
      }
    }
  }
  const std::size_t total = heads * levels * refs * points;
  std::vector<T> expand(2 * refs * total * 2, T(0)), expand_xy(2 * total * 2, T(0));
  for (std::size_t g = 0; g < total; ++g) {
    const std::size_t r = (g / points) % refs;
    for (std::size_t c = 0; c < 2; ++c) {
      expand[(2 * r + c) * total * 2 + 2 * g + c] = T(1);
      expand_xy[c * total * 2 + 2 * g + c] = T(1);
    }
  }
  expand_refs_ = BasicTensor<T>(Shape{2 * refs, total * 2}, std::move(expand));
  expand_xy_ = BasicTensor<T>(Shape{2, total * 2}, std::move(expand_xy));
  line_diff_ = BasicTensor<T>(Shape{4, 2}, std::vector<T>{-1, 0, 0, -1, 1, 0, 0, 1});
}

template <typename T>
BasicTensor<T> DeformableAttention<T>::locations(const BasicTensor<T>& query, const BasicTensor<T>& refs,
                                                 std::span<const LevelShape> levels) const {
  if (levels.size() != cfg_.levels) throw std::invalid_argument("deformable attention: level count mismatch");
  if (refs.rank() != 2 || refs.dim(1) != 2 * cfg_.refs || refs.dim(0) != query.dim(0)) {
    throw std::invalid_argument("deformable attention: reference layout mismatch");
  }
  const std::size_t k = query.dim(0);
  const std::size_t total = cfg_.heads * cfg_.levels * cfg_.refs * cfg_.points;
  auto off = offsets_(query);
  auto base = matmul(refs, expand_refs_);
  if (cfg_.mode == DeformMode::LineEndpoints) {
    auto extent = clamp(abs(matmul(refs, line_diff_)), static_cast<T>(cfg_.min_extent), T(1e6));
    auto sc = scale(matmul(extent, expand_xy_), static_cast<T>(0.5 / static_cast<double>(cfg_.points)));
    return add(base, mul(off, sc));
  }
  std::vector<T> sc(k * total * 2);
  for (std::size_t g = 0; g < total && k > 0; ++g) {
    const std::size_t l = (g / (cfg_.points * cfg_.refs)) % cfg_.levels;
    sc[2 * g] = T(1) / static_cast<T>(levels[l].width);
    sc[2 * g + 1] = T(1) / static_cast<T>(levels[l].height);
  }
  for (std::size_t q = 1; q < k; ++q) std::copy_n(sc.begin(), total * 2, sc.begin() + q * total * 2);
  return add(base, mul(off, BasicTensor<T>(Shape{k, total * 2}, std::move(sc))));
}

template <typename T>
BasicTensor<T> DeformableAttention<T>::operator()(const BasicTensor<T>& query, const BasicTensor<T>& refs,
                                                  const BasicTensor<T>& memory,
                                                  std::span<const LevelShape> levels) const {
  const std::size_t k = query.dim(0);
  const std::size_t per_head = cfg_.levels * cfg_.refs * cfg_.points;
  auto loc = locations(query, refs, levels);
  auto value = value_proj_(memory);
  auto logits = reshape(weights_(query), Shape{k * cfg_.heads, per_head});
  auto attn = reshape(softmax(logits, 1), Shape{k, cfg_.heads * per_head});
  return out_(deformable_sample(value, levels, loc, attn, cfg_.heads, cfg_.refs * cfg_.points));
}

template class DeformableAttention<float>;
template class DeformableAttention<double>;

}  // namespace sepformer
