#include "sepformer/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace sepformer {

std::string_view axis_name(Axis axis) { return axis == Axis::Row ? "row" : "col"; }

void GeometryConfig::validate() const {
  if (points < 2) throw GeometryError("GeometryConfig: P must be at least 2");
  if (!(proposal_base_scale > 0.0)) throw GeometryError("GeometryConfig: proposal scale must be positive");
  if (strides.empty()) throw GeometryError("GeometryConfig: no strides");
}

LineStrip sample_points(const SingleLine& line, std::size_t count) {
  if (count == 0) throw GeometryError("sample_points: P must be at least 1");
  LineStrip strip;
  strip.points.reserve(count);
  const double n = static_cast<double>(count);
  for (std::size_t t = 1; t <= count; ++t) {
    const double a = static_cast<double>(t) / n;
    strip.points.push_back({(1.0 - a) * line.p1.x + a * line.p2.x, (1.0 - a) * line.p1.y + a * line.p2.y});
  }
  return strip;
}

std::vector<SingleLine> make_line_proposals(int level, std::span<const Point> positions, Axis axis,
                                            const GeometryConfig& cfg) {
  if (level < 1 || level > 3) throw GeometryError("make_line_proposals: unknown level " + std::to_string(level));
  const double extent = std::ldexp(cfg.proposal_base_scale, level - 1);
  std::vector<SingleLine> out;
  out.reserve(positions.size());
  for (const auto& p : positions) {
    const Point start = clamp01(p);
    const Point end = axis == Axis::Row ? Point{p.x + extent, p.y} : Point{p.x, p.y + extent};
    out.push_back({start, clamp01(end)});
  }
  return out;
}

std::vector<Point> feature_centers(std::size_t height, std::size_t width) {
  std::vector<Point> out;
  out.reserve(height * width);
  for (std::size_t i = 0; i < height; ++i) {
    for (std::size_t j = 0; j < width; ++j) {
      out.push_back({(static_cast<double>(j) + 0.5) / static_cast<double>(width),
                     (static_cast<double>(i) + 0.5) / static_cast<double>(height)});
    }
  }
  return out;
}

Point line_direction(const SingleLine& line) { return {line.p2.x - line.p1.x, line.p2.y - line.p1.y}; }

double line_length(const SingleLine& line) {
  const auto d = line_direction(line);
  return std::hypot(d.x, d.y);
}

bool is_canonical(const SingleLine& line, Axis axis) {
  return axis == Axis::Row ? line.p1.x <= line.p2.x : line.p1.y <= line.p2.y;
}

SingleLine canonicalize(const SingleLine& line, Axis axis) {
  return is_canonical(line, axis) ? line : SingleLine{line.p2, line.p1};
}

Point clamp01(Point p) { return {std::clamp(p.x, 0.0, 1.0), std::clamp(p.y, 0.0, 1.0)}; }

}  // namespace sepformer
