#include "sepformer/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "sepformer/rng.hpp"

namespace sepformer {

using nlohmann::json;

std::string_view table_style_name(TableStyle s) {
  switch (s) {
    case TableStyle::Wired: return "wired";
    case TableStyle::Wireless: return "wireless";
    case TableStyle::PartialBorders: return "partial";
  }
  return "wired";
}

TableStyle parse_table_style(std::string_view name) {
  if (name == "wired") return TableStyle::Wired;
  if (name == "wireless") return TableStyle::Wireless;
  if (name == "partial") return TableStyle::PartialBorders;
  throw SynthError("unknown table style '" + std::string(name) + "'");
}

void Distortion::validate() const {
  if (std::abs(rotation_deg) > 10.0) throw SynthError("rotation beyond 10 degrees");
  if (warp_amplitude < 0.0 || warp_amplitude > 0.02) throw SynthError("warp amplitude outside [0, 0.02]");
  if (warp_periods < 0.0 || warp_periods > 2.0) throw SynthError("warp periods outside [0, 2]");
}

void TableSpec::validate() const {
  if (n_rows < 1 || n_cols < 1 || n_rows > 20 || n_cols > 20) throw SynthError("grid size must be 1..20 per side");
  if (width < 64 || height < 64) throw SynthError("image smaller than 64 pixels");
  if (points < 2) throw SynthError("strips need at least 2 points");
  distortion.validate();
  std::vector<int> owner(n_rows * n_cols, -1);
  for (std::size_t s = 0; s < spans.size(); ++s) {
    const auto& sp = spans[s];
    if (sp.r0 > sp.r1 || sp.c0 > sp.c1 || sp.r1 >= n_rows || sp.c1 >= n_cols) {
      throw SynthError("span outside the grid");
    }
    for (std::size_t r = sp.r0; r <= sp.r1; ++r) {
      for (std::size_t c = sp.c0; c <= sp.c1; ++c) {
        if (owner[r * n_cols + c] >= 0) throw SynthError("spans overlap");
        owner[r * n_cols + c] = static_cast<int>(s);
      }
    }
  }
}

namespace {

struct PixelPoint {
  double x, y;
};

PixelPoint rotate(PixelPoint p, double deg, double cx, double cy) {
  const double t = deg * std::numbers::pi / 180.0;
  const double c = std::cos(t), s = std::sin(t);
  const double dx = p.x - cx, dy = p.y - cy;
  return {cx + c * dx - s * dy, cy + s * dx + c * dy};
}

PixelPoint displacement(PixelPoint p, const Distortion& d, double w, double h) {
  const double k = 2.0 * std::numbers::pi * d.warp_periods;
  return {d.warp_amplitude * w * std::sin(k * p.y / h + d.phase_x),
          d.warp_amplitude * h * std::sin(k * p.x / w + d.phase_y)};
}

}  // namespace

Point warp_point(Point p, const Distortion& d, std::size_t width, std::size_t height) {
  if (d.is_identity()) return p;
  const double w = static_cast<double>(width), h = static_cast<double>(height);
  auto q = rotate({p.x * w, p.y * h}, d.rotation_deg, w / 2, h / 2);
  const auto off = displacement(q, d, w, h);
  return {(q.x + off.x) / w, (q.y + off.y) / h};
}

Point unwarp_point(Point p, const Distortion& d, std::size_t width, std::size_t height) {
  if (d.is_identity()) return p;
  const double w = static_cast<double>(width), h = static_cast<double>(height);
  const PixelPoint target{p.x * w, p.y * h};
  PixelPoint q = target;
  for (int it = 0; it < 30; ++it) {
    const auto off = displacement(q, d, w, h);
    q = {target.x - off.x, target.y - off.y};
  }
  const auto r = rotate(q, -d.rotation_deg, w / 2, h / 2);
  return {r.x / w, r.y / h};
}

LineStrip warp_labels(const LineStrip& strip, const Distortion& d, std::size_t width, std::size_t height) {
  LineStrip out;
  out.points.reserve(strip.size());
  for (const auto& p : strip.points) out.points.push_back(warp_point(p, d, width, height));
  return out;
}

namespace {

// undistorted table layout in pixels
struct Layout {
  std::vector<int> ys;  // n_rows + 1 boundary rows
  std::vector<int> xs;  // n_cols + 1 boundary columns
};

std::vector<int> boundaries(Rng& rng, std::size_t n, double lo, double hi, double min_w, double max_w) {
  std::vector<double> w(n);
  for (auto& v : w) v = rng.uniform(min_w, max_w);
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  std::vector<int> out{static_cast<int>(std::lround(lo))};
  double acc = lo;
  for (std::size_t i = 0; i < n; ++i) {
    acc += (hi - lo) * w[i] / total;
    out.push_back(static_cast<int>(std::lround(acc)));
  }
  return out;
}

Layout make_layout(Rng& rng, const TableSpec& spec) {
  const double w = static_cast<double>(spec.width), h = static_cast<double>(spec.height);
  double hx = rng.uniform(0.36, 0.46), hy = rng.uniform(0.36, 0.46);
  // shrink until the rotated, warped table stays inside the image
  const double t = std::abs(spec.distortion.rotation_deg) * std::numbers::pi / 180.0;
  const double limit = 0.5 - spec.distortion.warp_amplitude - 0.03;
  const double ex = hx * w * std::cos(t) + hy * h * std::sin(t);
  const double ey = hx * w * std::sin(t) + hy * h * std::cos(t);
  const double shrink = std::min({1.0, limit * w / ex, limit * h / ey});
  hx *= shrink;
  hy *= shrink;
  const double cx = w / 2 + rng.uniform(-0.02, 0.02) * w * shrink;
  const double cy = h / 2 + rng.uniform(-0.02, 0.02) * h * shrink;
  Layout lay;
  lay.xs = boundaries(rng, spec.n_cols, cx - hx * w, cx + hx * w, 0.6, 1.6);
  lay.ys = boundaries(rng, spec.n_rows, cy - hy * h, cy + hy * h, 0.7, 1.3);
  return lay;
}

// cell id of every grid slot
std::vector<std::size_t> slot_owners(const TableSpec& spec) {
  std::vector<std::size_t> owner(spec.n_rows * spec.n_cols);
  std::iota(owner.begin(), owner.end(), 0);
  for (const auto& sp : spec.spans) {
    const std::size_t id = sp.r0 * spec.n_cols + sp.c0;
    for (std::size_t r = sp.r0; r <= sp.r1; ++r) {
      for (std::size_t c = sp.c0; c <= sp.c1; ++c) owner[r * spec.n_cols + c] = id;
    }
  }
  return owner;
}

// pixel-space segment (x1, y1) - (x2, y2)
struct Segment {
  int x1, y1, x2, y2;
};

// Separator segments along each interior and boundary grid line. An interior
// line contributes one segment per maximal run of slots it separates.
void separator_segments(const TableSpec& spec, const Layout& lay, std::vector<Segment>& rows,
                        std::vector<Segment>& cols) {
  const auto owner = slot_owners(spec);
  const std::size_t nr = spec.n_rows, nc = spec.n_cols;
  auto id = [&](std::size_t r, std::size_t c) { return owner[r * nc + c]; };
  for (std::size_t i = 0; i <= nr; ++i) {
    std::size_t j = 0;
    while (j < nc) {
      auto cut = [&](std::size_t jj) { return i == 0 || i == nr || id(i - 1, jj) != id(i, jj); };
      if (!cut(j)) {
        ++j;
        continue;
      }
      std::size_t k = j;
      while (k + 1 < nc && cut(k + 1)) ++k;
      rows.push_back({lay.xs[j], lay.ys[i], lay.xs[k + 1], lay.ys[i]});
      j = k + 1;
    }
  }
  for (std::size_t j = 0; j <= nc; ++j) {
    std::size_t i = 0;
    while (i < nr) {
      auto cut = [&](std::size_t ii) { return j == 0 || j == nc || id(ii, j - 1) != id(ii, j); };
      if (!cut(i)) {
        ++i;
        continue;
      }
      std::size_t k = i;
      while (k + 1 < nr && cut(k + 1)) ++k;
      cols.push_back({lay.xs[j], lay.ys[i], lay.xs[j], lay.ys[k + 1]});
      i = k + 1;
    }
  }
}

// logical cells after dropping grid lines that separate nothing
void logical_cells(const TableSpec& spec, std::vector<CellSpan>& cells, std::size_t& n_rows, std::size_t& n_cols) {
  const auto owner = slot_owners(spec);
  const std::size_t nr = spec.n_rows, nc = spec.n_cols;
  std::vector<std::size_t> row_map(nr, 0), col_map(nc, 0);
  for (std::size_t i = 1; i < nr; ++i) {
    bool used = false;
    for (std::size_t j = 0; j < nc; ++j) used |= owner[(i - 1) * nc + j] != owner[i * nc + j];
    row_map[i] = row_map[i - 1] + (used ? 1 : 0);
  }
  for (std::size_t j = 1; j < nc; ++j) {
    bool used = false;
    for (std::size_t i = 0; i < nr; ++i) used |= owner[i * nc + j - 1] != owner[i * nc + j];
    col_map[j] = col_map[j - 1] + (used ? 1 : 0);
  }
  n_rows = row_map.back() + 1;
  n_cols = col_map.back() + 1;
  cells.clear();
  for (std::size_t r = 0; r < nr; ++r) {
    for (std::size_t c = 0; c < nc; ++c) {
      const std::size_t id = owner[r * nc + c];
      if (id != r * nc + c) continue;
      std::size_t r1 = r, c1 = c;
      while (r1 + 1 < nr && owner[(r1 + 1) * nc + c] == id) ++r1;
      while (c1 + 1 < nc && owner[r * nc + c1 + 1] == id) ++c1;
      cells.push_back({row_map[r], row_map[r1], col_map[c], col_map[c1]});
    }
  }
  std::sort(cells.begin(), cells.end());
  cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
}

// Glyph-like ink: short strokes inside a box, words separated by gaps.
void draw_text(cv::Mat& img, Rng& rng, int x0, int y0, int x1, int y1, const cv::Scalar& ink) {
  const int pad = 4;
  x0 += pad;
  x1 -= pad;
  y0 += pad;
  y1 -= pad;
  if (x1 - x0 < 6 || y1 - y0 < 5) return;
  const int line_h = std::min(10, std::max(5, (y1 - y0) * 2 / 3));
  const int n_lines = (y1 - y0) >= 3 * line_h && rng.bernoulli(0.3) ? 2 : 1;
  const int block_h = n_lines * line_h + (n_lines - 1) * 3;
  const int top = y0 + ((y1 - y0) - block_h) / 2;
  for (int l = 0; l < n_lines; ++l) {
    const int ty = top + l * (line_h + 3);
    const int avail = x1 - x0;
    const int len = std::max(4, static_cast<int>(avail * rng.uniform(0.3, 0.95)));
    const int align = rng.range(0, 2);
    int x = align == 0 ? x0 : align == 1 ? x0 + (avail - len) / 2 : x1 - len;
    const int end = x + len;
    while (x < end) {
      const int word = std::min(end - x, rng.range(3, 5) * rng.range(2, 4));
      for (int gx = x; gx + 2 < x + word; gx += rng.range(3, 4)) {
        const int gw = 2, gh = rng.range(line_h * 2 / 3, line_h);
        const cv::Point a(gx, ty + line_h - gh + rng.range(0, 1)), b(gx + gw, ty + line_h);
        const int kind = rng.range(0, 2);
        if (kind == 0) {
          cv::line(img, {a.x, a.y}, {a.x, b.y}, ink, 1, cv::LINE_8);
        } else if (kind == 1) {
          cv::line(img, {a.x, b.y}, {b.x, a.y}, ink, 1, cv::LINE_8);
        } else {
          cv::rectangle(img, {a.x, (a.y + b.y) / 2}, {b.x, b.y}, ink, 1, cv::LINE_8);
        }
      }
      x += word + rng.range(3, 6);
    }
  }
}

LabeledSeparator label_of(const Segment& s, const TableSpec& spec, Axis axis) {
  const double w = static_cast<double>(spec.width), h = static_cast<double>(spec.height);
  SingleLine flat{{(s.x1 + 0.5) / w, (s.y1 + 0.5) / h}, {(s.x2 + 0.5) / w, (s.y2 + 0.5) / h}};
  const auto& d = spec.distortion;
  LabeledSeparator out;
  out.strip = warp_labels(sample_points(flat, spec.points), d, spec.width, spec.height);
  out.line = {warp_point(flat.p1, d, spec.width, spec.height), out.strip.points.back()};
  out.line = canonicalize(out.line, axis);
  for (auto& p : out.strip.points) p = clamp01(p);
  out.line = {clamp01(out.line.p1), clamp01(out.line.p2)};
  return out;
}

cv::Mat apply_distortion(const cv::Mat& src, const Distortion& d, int interpolation, const cv::Scalar& fill) {
  if (d.is_identity()) return src.clone();
  const std::size_t w = static_cast<std::size_t>(src.cols), h = static_cast<std::size_t>(src.rows);
  cv::Mat mx(src.rows, src.cols, CV_32F), my(src.rows, src.cols, CV_32F);
  for (int v = 0; v < src.rows; ++v) {
    for (int u = 0; u < src.cols; ++u) {
      const Point q = unwarp_point({(u + 0.5) / static_cast<double>(w), (v + 0.5) / static_cast<double>(h)}, d, w, h);
      mx.at<float>(v, u) = static_cast<float>(q.x * static_cast<double>(w) - 0.5);
      my.at<float>(v, u) = static_cast<float>(q.y * static_cast<double>(h) - 0.5);
    }
  }
  cv::Mat out;
  cv::remap(src, out, mx, my, interpolation, cv::BORDER_CONSTANT, fill);
  return out;
}

}  // namespace

TableGroundTruth generate(const TableSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const Layout lay = make_layout(rng, spec);
  std::vector<Segment> row_segs, col_segs;
  separator_segments(spec, lay, row_segs, col_segs);

  TableGroundTruth gt;
  for (const auto& s : row_segs) gt.rows.push_back(label_of(s, spec, Axis::Row));
  for (const auto& s : col_segs) gt.cols.push_back(label_of(s, spec, Axis::Col));
  logical_cells(spec, gt.cells, gt.n_rows, gt.n_cols);

  const int w = static_cast<int>(spec.width), h = static_cast<int>(spec.height);
  const double bg_level = rng.uniform(215, 250);
  const cv::Scalar bg(bg_level + rng.uniform(-5, 5), bg_level + rng.uniform(-5, 5), bg_level + rng.uniform(-5, 5));
  const double ink_level = rng.uniform(10, 70);
  const cv::Scalar ink(ink_level, ink_level + rng.uniform(-8, 8), ink_level + rng.uniform(-8, 8));
  cv::Mat canvas(h, w, CV_8UC3, bg);
  cv::Mat mask(h, w, CV_8U, cv::Scalar(0));

  // ruling lines
  auto rule = [&](const Segment& s) {
    cv::line(canvas, {s.x1, s.y1}, {s.x2, s.y2}, ink, 1, cv::LINE_8);
    cv::line(mask, {s.x1, s.y1}, {s.x2, s.y2}, cv::Scalar(255), 1, cv::LINE_8);
  };
  if (spec.style == TableStyle::Wired) {
    for (const auto& s : row_segs) rule(s);
    for (const auto& s : col_segs) rule(s);
  } else if (spec.style == TableStyle::PartialBorders) {
    // top and bottom rules, the header rule, and some others
    const int top = lay.ys.front(), bottom = lay.ys.back(), header = lay.ys.size() > 2 ? lay.ys[1] : top;
    for (const auto& s : row_segs) {
      if (s.y1 == top || s.y1 == bottom || s.y1 == header || rng.bernoulli(0.25)) rule(s);
    }
  }

  // cell content, placed in the merged region of spanning cells
  const auto owner = slot_owners(spec);
  for (std::size_t r = 0; r < spec.n_rows; ++r) {
    for (std::size_t c = 0; c < spec.n_cols; ++c) {
      const std::size_t id = owner[r * spec.n_cols + c];
      if (id != r * spec.n_cols + c) continue;
      std::size_t r1 = r, c1 = c;
      while (r1 + 1 < spec.n_rows && owner[(r1 + 1) * spec.n_cols + c] == id) ++r1;
      while (c1 + 1 < spec.n_cols && owner[r * spec.n_cols + c1 + 1] == id) ++c1;
      if (spec.style == TableStyle::Wired && rng.bernoulli(0.1)) continue;
      draw_text(canvas, rng, lay.xs[c], lay.ys[r], lay.xs[c1 + 1], lay.ys[r1 + 1], ink);
    }
  }

  gt.image = apply_distortion(canvas, spec.distortion, cv::INTER_LINEAR, bg);
  gt.ruling_mask = apply_distortion(mask, spec.distortion, cv::INTER_NEAREST, cv::Scalar(0));

  // sensor noise
  const double sigma = rng.uniform(1.0, 5.0);
  for (int v = 0; v < h; ++v) {
    auto* row = gt.image.ptr<cv::Vec3b>(v);
    for (int u = 0; u < w; ++u) {
      const double n = sigma * rng.normal();
      for (int ch = 0; ch < 3; ++ch) row[u][ch] = cv::saturate_cast<std::uint8_t>(row[u][ch] + n);
    }
  }
  return gt;
}

void SpecDistribution::validate() const {
  if (min_rows < 1 || min_cols < 1 || min_rows > max_rows || min_cols > max_cols || max_rows > 20 || max_cols > 20) {
    throw SynthError("row/column ranges must lie in 1..20");
  }
  if (spans_prob < 0.0 || spans_prob > 1.0) throw SynthError("spans probability outside [0, 1]");
  if (styles.empty()) throw SynthError("no table styles enabled");
  if (min_width > max_width || min_height > max_height) throw SynthError("empty image size range");
  Distortion d{max_rotation_deg, max_warp, 1.0, 0.0, 0.0};
  d.validate();
}

TableSpec sample_spec(std::uint64_t seed, const SpecDistribution& dist) {
  dist.validate();
  Rng rng(seed);
  TableSpec s;
  s.seed = rng.next_u64();
  s.n_rows = static_cast<std::size_t>(rng.range(static_cast<int>(dist.min_rows), static_cast<int>(dist.max_rows)));
  s.n_cols = static_cast<std::size_t>(rng.range(static_cast<int>(dist.min_cols), static_cast<int>(dist.max_cols)));
  s.style = dist.styles[rng.index(dist.styles.size())];
  s.width = static_cast<std::size_t>(rng.range(static_cast<int>(dist.min_width), static_cast<int>(dist.max_width)));
  s.height = static_cast<std::size_t>(rng.range(static_cast<int>(dist.min_height), static_cast<int>(dist.max_height)));
  s.points = dist.points;
  s.distortion.rotation_deg = rng.uniform(-dist.max_rotation_deg, dist.max_rotation_deg);
  s.distortion.warp_amplitude = rng.uniform(0.0, dist.max_warp);
  s.distortion.warp_periods = rng.uniform(0.5, 1.5);
  s.distortion.phase_x = rng.uniform(0.0, 2.0 * std::numbers::pi);
  s.distortion.phase_y = rng.uniform(0.0, 2.0 * std::numbers::pi);
  if (s.n_rows * s.n_cols > 1 && rng.bernoulli(dist.spans_prob)) {
    std::vector<bool> used(s.n_rows * s.n_cols, false);
    const int attempts = rng.range(1, 3);
    for (int a = 0; a < attempts; ++a) {
      const std::size_t h = std::min<std::size_t>(s.n_rows, static_cast<std::size_t>(rng.range(1, 3)));
      const std::size_t w = std::min<std::size_t>(s.n_cols, static_cast<std::size_t>(rng.range(1, 3)));
      if (h * w == 1) continue;
      const std::size_t r0 = rng.index(s.n_rows - h + 1), c0 = rng.index(s.n_cols - w + 1);
      bool free = true;
      for (std::size_t r = r0; r < r0 + h; ++r) {
        for (std::size_t c = c0; c < c0 + w; ++c) free = free && !used[r * s.n_cols + c];
      }
      if (!free) continue;
      for (std::size_t r = r0; r < r0 + h; ++r) {
        for (std::size_t c = c0; c < c0 + w; ++c) used[r * s.n_cols + c] = true;
      }
      s.spans.push_back({r0, r0 + h - 1, c0, c0 + w - 1});
    }
  }
  return s;
}

bool is_held_out(std::size_t index) { return index % 10 == 9; }

namespace {

std::string stem_for(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "table_%05zu", i);
  return buf;
}

json spec_to_json(const TableSpec& s) {
  json spans = json::array();
  for (const auto& sp : s.spans) spans.push_back({sp.r0, sp.r1, sp.c0, sp.c1});
  return {{"n_rows", s.n_rows},
          {"n_cols", s.n_cols},
          {"spans", spans},
          {"style", table_style_name(s.style)},
          {"rotation_deg", s.distortion.rotation_deg},
          {"warp_amplitude", s.distortion.warp_amplitude},
          {"warp_periods", s.distortion.warp_periods},
          {"phase_x", s.distortion.phase_x},
          {"phase_y", s.distortion.phase_y},
          {"width", s.width},
          {"height", s.height},
          {"points", s.points},
          {"seed", s.seed}};
}

TableSpec spec_from_json(const json& j) {
  TableSpec s;
  s.n_rows = j.at("n_rows");
  s.n_cols = j.at("n_cols");
  for (const auto& sp : j.at("spans")) s.spans.push_back({sp.at(0), sp.at(1), sp.at(2), sp.at(3)});
  s.style = parse_table_style(j.at("style").get<std::string>());
  s.distortion = {j.at("rotation_deg"), j.at("warp_amplitude"), j.at("warp_periods"), j.at("phase_x"),
                  j.at("phase_y")};
  s.width = j.at("width");
  s.height = j.at("height");
  s.points = j.at("points");
  s.seed = j.at("seed");
  return s;
}

json separators_json(const std::vector<LabeledSeparator>& seps) {
  json out = json::array();
  for (const auto& s : seps) {
    json strip = json::array();
    for (const auto& p : s.strip.points) strip.push_back({p.x, p.y});
    out.push_back({{"line", {s.line.p1.x, s.line.p1.y, s.line.p2.x, s.line.p2.y}}, {"strip", strip}});
  }
  return out;
}

std::vector<LabeledSeparator> separators_from_json(const json& arr, std::size_t points, Axis axis) {
  std::vector<LabeledSeparator> out;
  for (const auto& s : arr) {
    LabeledSeparator sep;
    const auto& l = s.at("line");
    sep.line = canonicalize(SingleLine{{l.at(0), l.at(1)}, {l.at(2), l.at(3)}}, axis);
    for (const auto& p : s.at("strip")) sep.strip.points.push_back({p.at(0), p.at(1)});
    if (sep.strip.size() != points) {
      throw SynthError("strip has " + std::to_string(sep.strip.size()) + " points, expected " + std::to_string(points));
    }
    out.push_back(std::move(sep));
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw SynthError("cannot write " + path.string());
  f << text;
  if (!f) throw SynthError("failed writing " + path.string());
}

json read_json(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw SynthError("cannot read " + path.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw SynthError(path.string() + ": " + e.what());
  }
}

}  // namespace

Dataset make_dataset(std::uint64_t seed, std::size_t n, const SpecDistribution& dist) {
  if (n < 1) throw SynthError("dataset needs at least one sample");
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    ManifestEntry e;
    e.index = i;
    e.seed = Rng::mix_seed(seed, i);
    e.held_out = is_held_out(i);
    e.spec = sample_spec(e.seed, dist);
    e.stem = stem_for(i);
    d.samples.push_back(generate(e.spec));
    d.manifest.push_back(std::move(e));
  }
  return d;
}

void write_ground_truth(const std::filesystem::path& json_path, const std::string& image_name,
                        const TableGroundTruth& gt) {
  json cells = json::array();
  for (const auto& c : gt.cells) cells.push_back({{"r0", c.r0}, {"r1", c.r1}, {"c0", c.c0}, {"c1", c.c1}});
  json doc = {{"image", image_name},
              {"width", gt.width()},
              {"height", gt.height()},
              {"rows", separators_json(gt.rows)},
              {"cols", separators_json(gt.cols)},
              {"cells", cells}};
  write_text(json_path, doc.dump(1) + "\n");
}

void write_dataset(const std::filesystem::path& dir, const Dataset& data, const SpecDistribution& dist,
                   std::uint64_t seed) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw SynthError("cannot create " + dir.string() + ": " + ec.message());
  json entries = json::array();
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const auto& e = data.manifest[i];
    const std::string image = e.stem + ".png";
    if (!cv::imwrite((dir / image).string(), data.samples[i].image)) {
      throw SynthError("cannot write " + (dir / image).string());
    }
    write_ground_truth(dir / (e.stem + ".json"), image, data.samples[i]);
    entries.push_back({{"index", e.index},
                       {"seed", e.seed},
                       {"split", e.held_out ? "eval" : "train"},
                       {"stem", e.stem},
                       {"spec", spec_to_json(e.spec)}});
  }
  std::vector<std::string> styles;
  for (auto s : dist.styles) styles.emplace_back(table_style_name(s));
  json manifest = {{"seed", seed},
                   {"count", data.samples.size()},
                   {"distribution",
                    {{"min_rows", dist.min_rows},
                     {"max_rows", dist.max_rows},
                     {"min_cols", dist.min_cols},
                     {"max_cols", dist.max_cols},
                     {"spans_prob", dist.spans_prob},
                     {"styles", styles},
                     {"max_rotation_deg", dist.max_rotation_deg},
                     {"max_warp", dist.max_warp},
                     {"width", {dist.min_width, dist.max_width}},
                     {"height", {dist.min_height, dist.max_height}},
                     {"points", dist.points}}},
                   {"samples", entries}};
  write_text(dir / "manifest.json", manifest.dump(1) + "\n");
}

TableGroundTruth read_ground_truth(const std::filesystem::path& json_path, std::size_t points) {
  const json doc = read_json(json_path);
  TableGroundTruth gt;
  try {
    const auto image_path = json_path.parent_path() / doc.at("image").get<std::string>();
    gt.image = cv::imread(image_path.string(), cv::IMREAD_COLOR);
    if (gt.image.empty()) throw SynthError("cannot read image " + image_path.string());
    if (static_cast<std::size_t>(gt.image.cols) != doc.at("width").get<std::size_t>() ||
        static_cast<std::size_t>(gt.image.rows) != doc.at("height").get<std::size_t>()) {
      throw SynthError(json_path.string() + ": image size disagrees with the document");
    }
    gt.rows = separators_from_json(doc.at("rows"), points, Axis::Row);
    gt.cols = separators_from_json(doc.at("cols"), points, Axis::Col);
    if (doc.contains("cells")) {
      for (const auto& c : doc.at("cells")) {
        gt.cells.push_back({c.at("r0"), c.at("r1"), c.at("c0"), c.at("c1")});
        gt.n_rows = std::max(gt.n_rows, gt.cells.back().r1 + 1);
        gt.n_cols = std::max(gt.n_cols, gt.cells.back().c1 + 1);
      }
      std::sort(gt.cells.begin(), gt.cells.end());
    }
  } catch (const json::exception& e) {
    throw SynthError(json_path.string() + ": " + e.what());
  }
  return gt;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir) {
  const json doc = read_json(dir / "manifest.json");
  std::vector<ManifestEntry> out;
  try {
    for (const auto& e : doc.at("samples")) {
      ManifestEntry m;
      m.index = e.at("index");
      m.seed = e.at("seed");
      m.held_out = e.at("split").get<std::string>() == "eval";
      m.stem = e.at("stem");
      m.spec = spec_from_json(e.at("spec"));
      out.push_back(std::move(m));
    }
  } catch (const json::exception& e) {
    throw SynthError((dir / "manifest.json").string() + ": " + e.what());
  }
  return out;
}

}  // namespace sepformer
