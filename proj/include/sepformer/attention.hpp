#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "sepformer/layers.hpp"
#include "sepformer/ops.hpp"

namespace sepformer {

enum class DeformMode {
  LineEndpoints,  // two references per query; offsets scale with the line's extent
  Points,         // R references per query; offsets are in level pixels
};

struct DeformConfig {
  std::size_t channels = 64;
  std::size_t heads = 4;
  std::size_t levels = 3;
  std::size_t refs = 2;    // reference points per query
  std::size_t points = 4;  // sampling points per head, level and reference
  DeformMode mode = DeformMode::LineEndpoints;
  double min_extent = 0.05;
};

/// Multi-scale deformable cross-attention. Per query, head, level and
/// reference point it predicts sampling offsets and attention logits from the
/// query, samples the value projection of the memory, mixes the samples with
/// weights softmaxed over levels, references and points, and projects back.
template <typename T>
class DeformableAttention {
 public:
  DeformableAttention(ParamSet<T>& ps, const std::string& name, const DeformConfig& cfg);

  /// query [K, C], refs [K, 2R] normalized (x, y) pairs, memory [S, C].
  BasicTensor<T> operator()(const BasicTensor<T>& query, const BasicTensor<T>& refs, const BasicTensor<T>& memory,
                            std::span<const LevelShape> levels) const;

  /// Sample positions [K, heads * levels * R * points * 2] for the given query.
  BasicTensor<T> locations(const BasicTensor<T>& query, const BasicTensor<T>& refs,
                           std::span<const LevelShape> levels) const;

  Linear<T>& value_proj() { return value_proj_; }
  Linear<T>& offsets() { return offsets_; }
  Linear<T>& weights() { return weights_; }
  Linear<T>& out_proj() { return out_; }

 private:
  DeformConfig cfg_;
  Linear<T> value_proj_, offsets_, weights_, out_;
  BasicTensor<T> expand_refs_, expand_xy_, line_diff_;
};

extern template class DeformableAttention<float>;
extern template class DeformableAttention<double>;

}  // namespace sepformer
