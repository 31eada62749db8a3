#include "sepformer/reconstruct.hpp"

#include <cmath>
#include <numeric>

namespace sepformer {

void ReconstructConfig::validate() const {
  if (!(merge_tol > 0) || !(dist_tol > 0)) throw std::invalid_argument("tolerances must be positive");
  if (!(cover_frac > 0 && cover_frac <= 1)) throw std::invalid_argument("cover_frac must lie in (0, 1]");
}

double iou(const Box& a, const Box& b) {
  const Box i{std::max(a.x0, b.x0), std::max(a.y0, b.y0), std::min(a.x1, b.x1), std::min(a.y1, b.y1)};
  const double inter = i.area();
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

Box CellGrid::cell_box(const CellSpan& c) const {
  const Point* pts[4] = {&corner(c.r0, c.c0), &corner(c.r0, c.c1 + 1), &corner(c.r1 + 1, c.c0),
                         &corner(c.r1 + 1, c.c1 + 1)};
  Box b{pts[0]->x, pts[0]->y, pts[0]->x, pts[0]->y};
  for (const auto* p : pts) {
    b.x0 = std::min(b.x0, p->x);
    b.y0 = std::min(b.y0, p->y);
    b.x1 = std::max(b.x1, p->x);
    b.y1 = std::max(b.y1, p->y);
  }
  return b;
}

std::vector<ScoredSeparator> threshold_filter(std::span<const ScoredSeparator> separators, double tau) {
  std::vector<ScoredSeparator> out;
  for (const auto& s : separators) {
    if (s.score >= tau) out.push_back(s);
  }
  return out;
}

LineStrip separator_path(const LabeledSeparator& s) {
  LineStrip p;
  p.points.push_back(s.line.p1);
  p.points.insert(p.points.end(), s.strip.points.begin(), s.strip.points.end());
  return p;
}

LineStrip separator_path(const ScoredSeparator& s) {
  if (!s.strip || s.strip->size() < 2) return {{s.line.p1, s.line.p2}};
  const auto& q = s.strip->points;
  LineStrip p;
  p.points.push_back(clamp01({2 * q[0].x - q[1].x, 2 * q[0].y - q[1].y}));
  p.points.insert(p.points.end(), q.begin(), q.end());
  return p;
}

namespace {

// A separator as a function of its main coordinate (x for rows, y for
// columns); beyond its ends it continues along its chord.
struct Curve {
  std::vector<double> m, c;

  double lo() const { return m.front(); }
  double hi() const { return m.back(); }

  double slope() const {
    const double d = m.back() - m.front();
    return d > 1e-12 ? (c.back() - c.front()) / d : 0.0;
  }

  double at(double v) const {
    if (m.size() == 1) return c[0];
    if (v <= m.front()) return c.front() + slope() * (v - m.front());
    if (v >= m.back()) return c.back() + slope() * (v - m.back());
    const auto it = std::upper_bound(m.begin(), m.end(), v);
    const std::size_t j = static_cast<std::size_t>(it - m.begin());
    const double d = m[j] - m[j - 1];
    if (d <= 1e-15) return c[j];
    const double a = (v - m[j - 1]) / d;
    return (1 - a) * c[j - 1] + a * c[j];
  }

  double mean_cross() const { return std::accumulate(c.begin(), c.end(), 0.0) / static_cast<double>(c.size()); }
};

Curve curve_of(std::span<const Point> pts, bool rows) {
  std::vector<std::pair<double, double>> v;
  for (const auto& p : pts) v.emplace_back(rows ? p.x : p.y, rows ? p.y : p.x);
  std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  Curve c;
  for (const auto& [m, x] : v) {
    c.m.push_back(m);
    c.c.push_back(x);
  }
  return c;
}

LineStrip strip_of(const Curve& c, bool rows) {
  LineStrip s;
  for (std::size_t i = 0; i < c.m.size(); ++i) s.points.push_back(rows ? Point{c.m[i], c.c[i]} : Point{c.c[i], c.m[i]});
  return s;
}

double mean_gap(const Curve& a, const Curve& b, double lo, double hi) {
  double acc = 0;
  constexpr int n = 11;
  for (int k = 0; k < n; ++k) {
    const double v = lo + (hi - lo) * k / (n - 1);
    acc += std::abs(a.at(v) - b.at(v));
  }
  return acc / n;
}

// drops the shorter of two separators that run along each other
std::vector<Curve> dedupe(std::vector<Curve> cs, double tol) {
  std::stable_sort(cs.begin(), cs.end(), [](const Curve& a, const Curve& b) { return a.mean_cross() < b.mean_cross(); });
  std::vector<bool> dropped(cs.size(), false);
  for (std::size_t i = 0; i < cs.size(); ++i) {
    for (std::size_t j = i + 1; j < cs.size() && !dropped[i]; ++j) {
      if (dropped[j]) continue;
      const double lo = std::max(cs[i].lo(), cs[j].lo()), hi = std::min(cs[i].hi(), cs[j].hi());
      const double shorter = std::min(cs[i].hi() - cs[i].lo(), cs[j].hi() - cs[j].lo());
      if (hi - lo < 0.5 * shorter || mean_gap(cs[i], cs[j], lo, hi) >= tol) continue;
      const bool drop_i = cs[i].hi() - cs[i].lo() < cs[j].hi() - cs[j].lo();
      dropped[drop_i ? i : j] = true;
    }
  }
  std::vector<Curve> out;
  for (std::size_t i = 0; i < cs.size(); ++i) {
    if (!dropped[i]) out.push_back(std::move(cs[i]));
  }
  return out;
}

// Groups separators into grid lines. Positions are measured relative to the
// outermost separators so that rotation and smooth warping cancel out.
std::vector<Curve> assemble_lines(const std::vector<Curve>& cs, double tol) {
  std::size_t first = 0, last = 0;
  for (std::size_t i = 0; i < cs.size(); ++i) {
    if (cs[i].mean_cross() < cs[first].mean_cross()) first = i;
    if (cs[i].mean_cross() > cs[last].mean_cross()) last = i;
  }
  const Curve &a = cs[first], &b = cs[last];
  double lo = cs[0].lo(), hi = cs[0].hi();
  for (const auto& c : cs) {
    lo = std::min(lo, c.lo());
    hi = std::max(hi, c.hi());
  }
  const double extent = mean_gap(a, b, lo, hi);
  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t i = 0; i < cs.size(); ++i) {
    double t = 0;
    for (std::size_t k = 0; k < cs[i].m.size(); ++k) {
      const double top = a.at(cs[i].m[k]), bottom = b.at(cs[i].m[k]);
      const double d = bottom - top;
      t += std::abs(d) > 1e-12 ? (cs[i].c[k] - top) / d : 0.0;
    }
    order.emplace_back(t / static_cast<double>(cs[i].m.size()), i);
  }
  std::stable_sort(order.begin(), order.end());
  std::vector<Curve> lines;
  std::vector<std::vector<std::pair<double, double>>> members;
  double prev = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& c = cs[order[k].second];
    if (k == 0 || (order[k].first - prev) * extent >= tol) members.emplace_back();
    for (std::size_t i = 0; i < c.m.size(); ++i) members.back().emplace_back(c.m[i], c.c[i]);
    prev = order[k].first;
  }
  for (auto& mem : members) {
    std::stable_sort(mem.begin(), mem.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
    Curve c;
    for (const auto& [m, x] : mem) {
      c.m.push_back(m);
      c.c.push_back(x);
    }
    lines.push_back(std::move(c));
  }
  return lines;
}

Point crossing(const Curve& row, const Curve& col) {
  double x = col.at(row.mean_cross());
  double y = row.at(x);
  for (int it = 0; it < 60; ++it) {
    x = col.at(y);
    y = row.at(x);
  }
  return {x, y};
}

// share of the stretch of `line` between a and b (main coordinates) that some
// separator runs along
double coverage(const Curve& line, double a, double b, const std::vector<Curve>& seps, double tol) {
  constexpr int n = 10;
  int covered = 0;
  for (int k = 0; k < n; ++k) {
    const double v = a + (b - a) * (k + 0.5) / n;
    const double target = line.at(v);
    for (const auto& s : seps) {
      if (v < s.lo() || v > s.hi()) continue;
      if (std::abs(s.at(v) - target) < tol) {
        ++covered;
        break;
      }
    }
  }
  return static_cast<double>(covered) / n;
}

struct DisjointSets {
  std::vector<std::size_t> parent;

  explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

}  // namespace

bool tiles_grid(std::span<const CellSpan> cells, std::size_t n_rows, std::size_t n_cols) {
  std::vector<int> count(n_rows * n_cols, 0);
  for (const auto& c : cells) {
    if (c.r0 > c.r1 || c.c0 > c.c1 || c.r1 >= n_rows || c.c1 >= n_cols) return false;
    for (std::size_t r = c.r0; r <= c.r1; ++r) {
      for (std::size_t k = c.c0; k <= c.c1; ++k) ++count[r * n_cols + k];
    }
  }
  return std::all_of(count.begin(), count.end(), [](int v) { return v == 1; });
}

CellGrid separators_to_grid(std::span<const LineStrip> rows, std::span<const LineStrip> cols,
                            const ReconstructConfig& cfg) {
  cfg.validate();
  std::vector<Curve> rc, cc;
  for (const auto& s : rows) {
    if (s.size() > 0) rc.push_back(curve_of(s.points, true));
  }
  for (const auto& s : cols) {
    if (s.size() > 0) cc.push_back(curve_of(s.points, false));
  }
  rc = dedupe(std::move(rc), cfg.merge_tol);
  cc = dedupe(std::move(cc), cfg.merge_tol);
  if (rc.size() < 2 || cc.size() < 2) {
    throw DegenerateTableError("degenerate table: " + std::to_string(rc.size()) + " row and " +
                               std::to_string(cc.size()) + " column separators, need at least 2 each");
  }
  const auto row_lines = assemble_lines(rc, cfg.merge_tol);
  const auto col_lines = assemble_lines(cc, cfg.merge_tol);
  if (row_lines.size() < 2 || col_lines.size() < 2) {
    throw DegenerateTableError("degenerate table: separators collapse into " + std::to_string(row_lines.size()) +
                               " row and " + std::to_string(col_lines.size()) + " column lines");
  }

  CellGrid g;
  g.n_rows = row_lines.size() - 1;
  g.n_cols = col_lines.size() - 1;
  for (const auto& l : row_lines) g.row_lines.push_back(strip_of(l, true));
  for (const auto& l : col_lines) g.col_lines.push_back(strip_of(l, false));
  for (const auto& r : row_lines) {
    for (const auto& c : col_lines) g.corners.push_back(crossing(r, c));
  }

  const std::size_t nr = g.n_rows, nc = g.n_cols;
  DisjointSets slots(nr * nc);
  for (std::size_t r = 0; r < nr; ++r) {
    for (std::size_t c = 0; c + 1 < nc; ++c) {
      const double y0 = g.corner(r, c + 1).y, y1 = g.corner(r + 1, c + 1).y;
      if (coverage(col_lines[c + 1], y0, y1, cc, cfg.dist_tol) < cfg.cover_frac) {
        slots.unite(r * nc + c, r * nc + c + 1);
      }
    }
  }
  for (std::size_t r = 0; r + 1 < nr; ++r) {
    for (std::size_t c = 0; c < nc; ++c) {
      const double x0 = g.corner(r + 1, c).x, x1 = g.corner(r + 1, c + 1).x;
      if (coverage(row_lines[r + 1], x0, x1, rc, cfg.dist_tol) < cfg.cover_frac) {
        slots.unite(r * nc + c, (r + 1) * nc + c);
      }
    }
  }

  // each merged region becomes a cell; non-rectangular regions are cut into
  // row-major maximal rectangles
  std::vector<std::size_t> root(nr * nc);
  for (std::size_t i = 0; i < root.size(); ++i) root[i] = slots.find(i);
  std::vector<bool> taken(nr * nc, false);
  std::vector<bool> warned(nr * nc, false);
  for (std::size_t r = 0; r < nr; ++r) {
    for (std::size_t c = 0; c < nc; ++c) {
      if (taken[r * nc + c]) continue;
      const std::size_t id = root[r * nc + c];
      auto same = [&](std::size_t rr, std::size_t kk) { return root[rr * nc + kk] == id && !taken[rr * nc + kk]; };
      std::size_t c1 = c;
      while (c1 + 1 < nc && same(r, c1 + 1)) ++c1;
      std::size_t r1 = r;
      while (r1 + 1 < nr) {
        bool full = true;
        for (std::size_t k = c; k <= c1; ++k) full = full && same(r1 + 1, k);
        if (!full) break;
        ++r1;
      }
      for (std::size_t rr = r; rr <= r1; ++rr) {
        for (std::size_t k = c; k <= c1; ++k) taken[rr * nc + k] = true;
      }
      g.cells.push_back({r, r1, c, c1});
      std::size_t region = 0;
      for (auto v : root) region += v == id;
      if (region != (r1 - r + 1) * (c1 - c + 1) && !warned[id]) {
        warned[id] = true;
        g.warnings.push_back("non-rectangular merged region at slot (" + std::to_string(r) + ", " +
                             std::to_string(c) + ") split into rectangles");
      }
    }
  }
  std::sort(g.cells.begin(), g.cells.end());
  return g;
}

CellGrid separators_to_grid(std::span<const LabeledSeparator> rows, std::span<const LabeledSeparator> cols,
                            const ReconstructConfig& cfg) {
  std::vector<LineStrip> r, c;
  for (const auto& s : rows) r.push_back(separator_path(s));
  for (const auto& s : cols) c.push_back(separator_path(s));
  return separators_to_grid(std::span<const LineStrip>(r), std::span<const LineStrip>(c), cfg);
}

CellGrid separators_to_grid(std::span<const ScoredSeparator> rows, std::span<const ScoredSeparator> cols,
                            const ReconstructConfig& cfg) {
  std::vector<LineStrip> r, c;
  for (const auto& s : rows) r.push_back(separator_path(s));
  for (const auto& s : cols) c.push_back(separator_path(s));
  return separators_to_grid(std::span<const LineStrip>(r), std::span<const LineStrip>(c), cfg);
}

std::string StructureNode::label() const {
  std::string s = tag;
  if (rowspan > 1) s += " rowspan=" + std::to_string(rowspan);
  if (colspan > 1) s += " colspan=" + std::to_string(colspan);
  return s;
}

std::size_t StructureNode::size() const {
  std::size_t n = 1;
  for (const auto& c : children) n += c.size();
  return n;
}

StructureNode cells_to_html_structure(std::span<const CellSpan> cells, std::size_t n_rows) {
  std::vector<CellSpan> sorted(cells.begin(), cells.end());
  std::sort(sorted.begin(), sorted.end());
  StructureNode table{"table", 1, 1, {}};
  for (std::size_t r = 0; r < n_rows; ++r) {
    StructureNode tr{"tr", 1, 1, {}};
    for (const auto& c : sorted) {
      if (c.r0 == r) tr.children.push_back({"td", c.r1 - c.r0 + 1, c.c1 - c.c0 + 1, {}});
    }
    table.children.push_back(std::move(tr));
  }
  return table;
}

StructureNode grid_to_html_structure(const CellGrid& grid) { return cells_to_html_structure(grid.cells, grid.n_rows); }

std::string to_html(const StructureNode& node) {
  std::string s = "<" + node.tag;
  if (node.rowspan > 1) s += " rowspan=\"" + std::to_string(node.rowspan) + "\"";
  if (node.colspan > 1) s += " colspan=\"" + std::to_string(node.colspan) + "\"";
  s += ">";
  for (const auto& c : node.children) s += to_html(c);
  return s + "</" + node.tag + ">";
}

}  // namespace sepformer
