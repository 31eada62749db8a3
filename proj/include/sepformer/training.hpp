#pragma once

#include <vector>

#include "sepformer/losses.hpp"
#include "sepformer/matching.hpp"
#include "sepformer/model.hpp"

namespace sepformer {

struct SeparatorTargets {
  std::vector<LabeledSeparator> rows;
  std::vector<LabeledSeparator> cols;

  const std::vector<LabeledSeparator>& axis(Axis a) const { return a == Axis::Row ? rows : cols; }
};

template <typename T>
struct AxisLoss {
  LossTerms<T> terms;
  BasicTensor<T> total;  // lambda-weighted
  LossBreakdown values;
};

template <typename T>
struct SampleLoss {
  BasicTensor<T> total;  // row + col
  LossBreakdown row;
  LossBreakdown col;
};

/// Scored separators of one decoding step, scores as sigmoid(logits).
template <typename T>
std::vector<ScoredSeparator> scored_separators(const StageOutput<T>& stage, Axis axis);

/// Matches every supervised decoding step to the targets and averages the
/// per-step terms: classification, angle and line over the query-selection
/// proposals and each coarse layer, line-strip over each fine layer. The fine
/// stage runs on the queries matched at the last coarse layer, or on all of
/// them when matching also uses line-strips.
template <typename T>
AxisLoss<T> axis_loss(const SepFormer<T>& model, const EncoderMemory<T>& memory, Axis axis,
                      const std::vector<LabeledSeparator>& targets, const LossConfig& loss_cfg,
                      const MatchConfig& match_cfg);

template <typename T>
SampleLoss<T> sample_loss(const SepFormer<T>& model, const BasicTensor<T>& image, const SeparatorTargets& targets,
                          const LossConfig& loss_cfg, const MatchConfig& match_cfg);

}  // namespace sepformer
