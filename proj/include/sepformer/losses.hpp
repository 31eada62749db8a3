#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "sepformer/geometry.hpp"
#include "sepformer/tensor.hpp"

namespace sepformer {

enum class ClassificationScope {
  MatchedOnly,  // mean over matched queries only
  AllQueries,   // matched queries target 1, the rest target 0
};

struct LossConfig {
  double lambda1 = 1.0;  // classification
  double lambda2 = 1.0;  // angle
  double lambda3 = 3.0;  // single-line L1
  double lambda4 = 1.0;  // line-strip L1
  bool angle_loss_enabled = true;
  double short_penalty_factor = 4.0;
  ClassificationScope classification_scope = ClassificationScope::AllQueries;
  bool deep_supervision = true;

  void validate() const;
};

class LossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Plain-value view of one axis' loss terms.
struct LossBreakdown {
  double cls = 0.0;
  double angle = 0.0;
  double line = 0.0;
  double linestrip = 0.0;
  double axis_total = 0.0;   // lambda-weighted combination of the four terms
  double grand_total = 0.0;  // row axis_total + col axis_total
};

struct SeparatorLoss {
  LossBreakdown row;
  LossBreakdown col;
  double grand_total = 0.0;
};

/// Differentiable terms of one axis; each is a single-element tensor.
template <typename T>
struct LossTerms {
  BasicTensor<T> cls;
  BasicTensor<T> angle;
  BasicTensor<T> line;
  BasicTensor<T> linestrip;
};

/// Binary cross-entropy on probabilities clamped to [1e-7, 1 - 1e-7].
/// scores has one entry per query, labels likewise (0 or 1). Under
/// MatchedOnly only label-1 entries are in scope; an empty scope gives 0.
template <typename T>
BasicTensor<T> classification_loss(std::span<const T> labels, const BasicTensor<T>& scores,
                                   const LossConfig& cfg);

/// Mean over pairs of 1 - cos(d_gt, d_pred) / (|d_gt| * short_penalty_factor),
/// with d the endpoint difference of each line. Pairs whose ground truth is
/// shorter than 1e-6 are skipped; a zero-length prediction counts as cos = 0.
/// gt_lines and pred_lines are [N, 4].
template <typename T>
BasicTensor<T> angle_loss(const BasicTensor<T>& gt_lines, const BasicTensor<T>& pred_lines,
                          const LossConfig& cfg);

/// Mean over pairs of the summed absolute coordinate difference; [N, 4].
template <typename T>
BasicTensor<T> line_loss(const BasicTensor<T>& gt_lines, const BasicTensor<T>& pred_lines);

/// Mean over pairs of the mean per-point L1 distance; strips are [N, 2P].
template <typename T>
BasicTensor<T> linestrip_loss(const BasicTensor<T>& gt_strips, const BasicTensor<T>& pred_strips);

/// lambda1 * cls + lambda2 * angle + lambda3 * line + lambda4 * linestrip,
/// with the angle term dropped when disabled.
template <typename T>
BasicTensor<T> weighted_axis_loss(const LossTerms<T>& terms, const LossConfig& cfg);

double weighted_axis_total(const LossBreakdown& terms, const LossConfig& cfg);
SeparatorLoss total_loss(LossBreakdown row, LossBreakdown col, const LossConfig& cfg);

template <typename T>
LossBreakdown breakdown_of(const LossTerms<T>& terms, const LossConfig& cfg);

/// Flattens lines to [N, 4] and strips to [N, 2P] constant tensors.
template <typename T>
BasicTensor<T> lines_tensor(std::span<const SingleLine> lines);
template <typename T>
BasicTensor<T> strips_tensor(std::span<const LineStrip> strips, std::size_t points);

}  // namespace sepformer
