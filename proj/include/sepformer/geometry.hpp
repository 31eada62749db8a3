#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

// Separator geometry. All coordinates are normalized to [0, 1] by image
// width (x) and height (y).
namespace sepformer {

enum class Axis { Row, Col };

std::string_view axis_name(Axis axis);

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

/// Two-endpoint separator. Canonical order: rows left-to-right (x1 <= x2),
/// columns top-to-bottom (y1 <= y2).
struct SingleLine {
  Point p1;
  Point p2;

  friend bool operator==(const SingleLine&, const SingleLine&) = default;
};

struct LineStrip {
  std::vector<Point> points;

  std::size_t size() const { return points.size(); }
  friend bool operator==(const LineStrip&, const LineStrip&) = default;
};

struct ScoredSeparator {
  double score = 0.0;
  SingleLine line;
  std::optional<LineStrip> strip;
  Axis axis = Axis::Row;
};

struct GeometryConfig {
  std::size_t points = 16;           // P, samples per line-strip
  double proposal_base_scale = 0.05; // s, proposal length at level 1
  std::vector<std::size_t> strides{8, 16, 32};

  void validate() const;
};

class GeometryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Point t (t = 1..P) is (1 - t/P) * p1 + (t/P) * p2: p1 itself is not
/// emitted and the last point is p2 exactly.
LineStrip sample_points(const SingleLine& line, std::size_t count);

/// One proposal per position. Level is 1-based (1..3). A row proposal is the
/// horizontal segment from (x, y) of length 2^(level-1) * s, a column
/// proposal the vertical one; endpoints are clamped to [0, 1].
std::vector<SingleLine> make_line_proposals(int level, std::span<const Point> positions, Axis axis,
                                            const GeometryConfig& cfg);

/// Normalized pixel centers of an h x w feature map, row-major.
std::vector<Point> feature_centers(std::size_t height, std::size_t width);

Point line_direction(const SingleLine& line);
double line_length(const SingleLine& line);

SingleLine canonicalize(const SingleLine& line, Axis axis);
bool is_canonical(const SingleLine& line, Axis axis);

Point clamp01(Point p);

}  // namespace sepformer
