#pragma once

#include <span>
#include <vector>

#include "sepformer/geometry.hpp"
#include "sepformer/matching.hpp"
#include "sepformer/reconstruct.hpp"

namespace sepformer {

enum class Direction { H, V };  // H: side by side, V: one above the other

/// Cell a is left of (H) or above (V) cell b; ids index CellGrid::cells.
struct Relation {
  std::size_t a = 0, b = 0;
  Direction dir = Direction::H;

  friend bool operator==(const Relation&, const Relation&) = default;
  friend auto operator<=>(const Relation&, const Relation&) = default;
};

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

PRF prf_from_counts(std::size_t correct, std::size_t predicted, std::size_t actual);

/// Sorted relations between cells sharing a stretch of grid edge.
std::vector<Relation> adjacency_relations(std::span<const CellSpan> cells);
std::vector<Relation> adjacency_relations(const CellGrid& grid);

/// Greedy one-to-one cell matching by decreasing IoU; result[i] is the gt
/// cell matched to predicted cell i, or -1.
std::vector<long> match_cells(const CellGrid& pred, const CellGrid& gt, double iou_thresh);

/// A predicted relation counts when both its cells are matched and the gt
/// has the relation between their partners. Empty vs empty scores 1.
PRF relation_prf(std::span<const Relation> pred, std::span<const Relation> gt, std::span<const long> cell_match);
PRF adjacency_prf(const CellGrid& pred, const CellGrid& gt, double iou_thresh = 0.5);

/// Ordered-tree edit distance with unit insert, delete and relabel costs.
std::size_t tree_edit_distance(const StructureNode& a, const StructureNode& b);
/// 1 - TED / max(|pred|, |gt|), floored at 0.
double teds_struct(const StructureNode& pred, const StructureNode& gt);

/// Separator detection: a prediction hits a gt separator when both chord
/// endpoints lie within tol (Euclidean, normalized); one-to-one, closest first.
std::size_t separator_hits(std::span<const ScoredSeparator> pred, std::span<const LabeledSeparator> gt, double tol);
PRF separator_prf(std::span<const ScoredSeparator> pred, std::span<const LabeledSeparator> gt, double tol);

}  // namespace sepformer
