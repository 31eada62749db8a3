#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "sepformer/geometry.hpp"

namespace sepformer {

/// A ground-truth separator: the chord and the P-point strip along its path.
struct LabeledSeparator {
  SingleLine line;
  LineStrip strip;
};

enum class ClassTermSign {
  PaperLiteral,      // + lambda_cls * score, exactly as printed
  StandardNegative,  // - lambda_cls * score, favours confident predictions
};

struct MatchConfig {
  double lambda_coord = 3.0;
  double lambda_cls = 2.0;
  ClassTermSign class_term_sign = ClassTermSign::StandardNegative;
  bool use_line = true;    // single-line criterion (SL-M)
  bool use_strip = false;  // line-strip criterion (LS-M)

  void validate() const;
};

struct MatchResult {
  /// assignment[i] is the prediction index matched to ground truth i.
  std::vector<std::size_t> assignment;
  double total_cost = 0.0;
};

class MatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense rows x cols cost table (rows = ground truths, cols = predictions).
struct CostMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

/// Sum of |a - b| over the 4 endpoint coordinates.
double line_l1(const SingleLine& a, const SingleLine& b);
/// Mean over points of the per-point L1 distance; strips must be equal length.
double strip_l1(const LineStrip& a, const LineStrip& b);

double pair_cost(const LabeledSeparator& gt, const ScoredSeparator& pred, const MatchConfig& cfg);
CostMatrix build_cost_matrix(std::span<const LabeledSeparator> gts, std::span<const ScoredSeparator> preds,
                             const MatchConfig& cfg);

/// Minimum-cost injective assignment of rows into columns (rows <= cols).
/// Among optimal assignments the lexicographically smallest one is returned,
/// i.e. earlier ground truths take the lowest prediction index available.
MatchResult solve_assignment(const CostMatrix& cost);
/// Exhaustive reference for solve_assignment; rows, cols <= 8.
MatchResult brute_force_assignment(const CostMatrix& cost);

MatchResult hungarian_match(std::span<const LabeledSeparator> gts, std::span<const ScoredSeparator> preds,
                            const MatchConfig& cfg);
MatchResult brute_force_match(std::span<const LabeledSeparator> gts, std::span<const ScoredSeparator> preds,
                              const MatchConfig& cfg);

}  // namespace sepformer
