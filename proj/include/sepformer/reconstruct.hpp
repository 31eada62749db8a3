#pragma once

#include <algorithm>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sepformer/geometry.hpp"
#include "sepformer/matching.hpp"
#include "sepformer/synthdata.hpp"

namespace sepformer {

struct ReconstructConfig {
  double merge_tol = 0.01;   // grid lines closer than this are one line
  double dist_tol = 0.01;    // how close a separator must run to a grid edge
  double cover_frac = 0.5;   // share of an edge a separator must cover

  void validate() const;
};

struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  double area() const { return std::max(0.0, x1 - x0) * std::max(0.0, y1 - y0); }
};

double iou(const Box& a, const Box& b);

struct CellGrid {
  std::vector<LineStrip> row_lines;  // top to bottom, points by increasing x
  std::vector<LineStrip> col_lines;  // left to right, points by increasing y
  std::vector<CellSpan> cells;       // row-major by (r0, c0)
  std::size_t n_rows = 0;
  std::size_t n_cols = 0;
  std::vector<Point> corners;        // (n_rows + 1) x (n_cols + 1) line crossings
  std::vector<std::string> warnings;

  const Point& corner(std::size_t i, std::size_t j) const { return corners[i * (n_cols + 1) + j]; }
  /// Axis-aligned bounds of the cell's four outer corners.
  Box cell_box(const CellSpan& c) const;
};

class DegenerateTableError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Keeps separators scoring at least tau, in order.
std::vector<ScoredSeparator> threshold_filter(std::span<const ScoredSeparator> separators, double tau);

/// Full polyline of a separator: the start of its line followed by its strip.
LineStrip separator_path(const LabeledSeparator& s);
/// For a prediction with a strip the start point is extrapolated one step
/// back from the strip, otherwise the line's endpoints are used.
LineStrip separator_path(const ScoredSeparator& s);

CellGrid separators_to_grid(std::span<const LineStrip> rows, std::span<const LineStrip> cols,
                            const ReconstructConfig& cfg = {});
CellGrid separators_to_grid(std::span<const LabeledSeparator> rows, std::span<const LabeledSeparator> cols,
                            const ReconstructConfig& cfg = {});
CellGrid separators_to_grid(std::span<const ScoredSeparator> rows, std::span<const ScoredSeparator> cols,
                            const ReconstructConfig& cfg = {});

/// Checks that the cells tile the grid exactly once.
bool tiles_grid(std::span<const CellSpan> cells, std::size_t n_rows, std::size_t n_cols);

struct StructureNode {
  std::string tag;  // table, tr or td
  std::size_t rowspan = 1;
  std::size_t colspan = 1;
  std::vector<StructureNode> children;

  /// Tag plus span attributes, the label compared by tree edit distance.
  std::string label() const;
  std::size_t size() const;
};

/// table -> tr per grid row -> td per cell whose top-left slot is in that row.
StructureNode grid_to_html_structure(const CellGrid& grid);
StructureNode cells_to_html_structure(std::span<const CellSpan> cells, std::size_t n_rows);
std::string to_html(const StructureNode& node);

}  // namespace sepformer
