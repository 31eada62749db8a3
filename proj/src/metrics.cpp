#include "sepformer/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>

namespace sepformer {

PRF prf_from_counts(std::size_t correct, std::size_t predicted, std::size_t actual) {
  if (predicted == 0 && actual == 0) return {1.0, 1.0, 1.0};
  PRF r;
  r.precision = predicted ? double(correct) / double(predicted) : 0.0;
  r.recall = actual ? double(correct) / double(actual) : 0.0;
  if (r.precision + r.recall > 0) r.f1 = 2 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

namespace {

bool overlaps(std::size_t a0, std::size_t a1, std::size_t b0, std::size_t b1) {
  return a0 <= b1 && b0 <= a1;
}

}  // namespace

std::vector<Relation> adjacency_relations(std::span<const CellSpan> cells) {
  std::vector<Relation> out;
  for (std::size_t a = 0; a < cells.size(); ++a) {
    for (std::size_t b = 0; b < cells.size(); ++b) {
      const CellSpan& x = cells[a];
      const CellSpan& y = cells[b];
      if (x.c1 + 1 == y.c0 && overlaps(x.r0, x.r1, y.r0, y.r1)) out.push_back({a, b, Direction::H});
      if (x.r1 + 1 == y.r0 && overlaps(x.c0, x.c1, y.c0, y.c1)) out.push_back({a, b, Direction::V});
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<Relation> adjacency_relations(const CellGrid& grid) { return adjacency_relations(grid.cells); }

std::vector<long> match_cells(const CellGrid& pred, const CellGrid& gt, double iou_thresh) {
  std::vector<Box> pb, gb;
  for (const auto& c : pred.cells) pb.push_back(pred.cell_box(c));
  for (const auto& c : gt.cells) gb.push_back(gt.cell_box(c));

  std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < pb.size(); ++i)
    for (std::size_t j = 0; j < gb.size(); ++j) {
      double v = iou(pb[i], gb[j]);
      if (v >= iou_thresh && v > 0) pairs.emplace_back(v, i, j);
    }
  std::stable_sort(pairs.begin(), pairs.end(),
                   [](const auto& a, const auto& b) { return std::get<0>(a) > std::get<0>(b); });

  std::vector<long> match(pb.size(), -1);
  std::vector<bool> taken(gb.size(), false);
  for (const auto& [v, i, j] : pairs) {
    if (match[i] >= 0 || taken[j]) continue;
    match[i] = static_cast<long>(j);
    taken[j] = true;
  }
  return match;
}

PRF relation_prf(std::span<const Relation> pred, std::span<const Relation> gt, std::span<const long> cell_match) {
  std::set<Relation> truth(gt.begin(), gt.end());
  std::size_t correct = 0;
  for (const auto& r : pred) {
    long a = r.a < cell_match.size() ? cell_match[r.a] : -1;
    long b = r.b < cell_match.size() ? cell_match[r.b] : -1;
    if (a < 0 || b < 0) continue;
    if (truth.count({std::size_t(a), std::size_t(b), r.dir})) ++correct;
  }
  return prf_from_counts(correct, pred.size(), truth.size());
}

PRF adjacency_prf(const CellGrid& pred, const CellGrid& gt, double iou_thresh) {
  auto match = match_cells(pred, gt, iou_thresh);
  auto pr = adjacency_relations(pred);
  auto gr = adjacency_relations(gt);
  return relation_prf(pr, gr, match);
}

namespace {

// Postorder flattening for the keyroot dynamic program, 1-based.
struct Flat {
  std::vector<std::string> label{""};
  std::vector<std::size_t> lml{0};  // leftmost leaf descendant
  std::vector<std::size_t> keyroots;

  explicit Flat(const StructureNode& root) {
    visit(root);
    std::size_t n = label.size() - 1;
    std::vector<bool> seen(n + 1, false);
    for (std::size_t i = n; i >= 1; --i) {
      if (!seen[lml[i]]) {
        keyroots.push_back(i);
        seen[lml[i]] = true;
      }
    }
    std::reverse(keyroots.begin(), keyroots.end());
  }

  std::size_t visit(const StructureNode& node) {
    std::size_t first = 0;
    for (const auto& c : node.children) {
      std::size_t l = visit(c);
      if (!first) first = l;
    }
    label.push_back(node.label());
    lml.push_back(first ? first : label.size() - 1);
    return lml.back();
  }

  std::size_t size() const { return label.size() - 1; }
};

}  // namespace

std::size_t tree_edit_distance(const StructureNode& a, const StructureNode& b) {
  Flat A(a), B(b);
  const std::size_t n = A.size(), m = B.size();
  std::vector<std::vector<std::size_t>> td(n + 1, std::vector<std::size_t>(m + 1, 0));
  std::vector<std::vector<std::size_t>> fd(n + 2, std::vector<std::size_t>(m + 2, 0));

  for (std::size_t i : A.keyroots) {
    for (std::size_t j : B.keyroots) {
      const std::size_t li = A.lml[i], lj = B.lml[j];
      // fd indexed by offset from the leftmost leaf; 0 is the empty forest
      fd[0][0] = 0;
      for (std::size_t x = li; x <= i; ++x) fd[x - li + 1][0] = fd[x - li][0] + 1;
      for (std::size_t y = lj; y <= j; ++y) fd[0][y - lj + 1] = fd[0][y - lj] + 1;
      for (std::size_t x = li; x <= i; ++x) {
        for (std::size_t y = lj; y <= j; ++y) {
          const std::size_t xi = x - li + 1, yj = y - lj + 1;
          std::size_t del = fd[xi - 1][yj] + 1;
          std::size_t ins = fd[xi][yj - 1] + 1;
          if (A.lml[x] == li && B.lml[y] == lj) {
            std::size_t rel = fd[xi - 1][yj - 1] + (A.label[x] == B.label[y] ? 0 : 1);
            fd[xi][yj] = std::min({del, ins, rel});
            td[x][y] = fd[xi][yj];
          } else {
            std::size_t sub = fd[A.lml[x] - li][B.lml[y] - lj] + td[x][y];
            fd[xi][yj] = std::min({del, ins, sub});
          }
        }
      }
    }
  }
  return td[n][m];
}

double teds_struct(const StructureNode& pred, const StructureNode& gt) {
  const double n = static_cast<double>(std::max(pred.size(), gt.size()));
  if (n == 0) return 1.0;
  return std::max(0.0, 1.0 - static_cast<double>(tree_edit_distance(pred, gt)) / n);
}

std::size_t separator_hits(std::span<const ScoredSeparator> pred, std::span<const LabeledSeparator> gt, double tol) {
  auto ends = [](const LineStrip& s) { return std::pair{s.points.front(), s.points.back()}; };
  auto dist = [](Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); };

  std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    auto [p1, p2] = ends(separator_path(pred[i]));
    for (std::size_t j = 0; j < gt.size(); ++j) {
      auto [q1, q2] = ends(separator_path(gt[j]));
      double d = std::max(dist(p1, q1), dist(p2, q2));
      if (d <= tol) pairs.emplace_back(d, i, j);
    }
  }
  std::stable_sort(pairs.begin(), pairs.end(),
                   [](const auto& a, const auto& b) { return std::get<0>(a) < std::get<0>(b); });
  std::vector<bool> pu(pred.size(), false), gu(gt.size(), false);
  std::size_t hits = 0;
  for (const auto& [d, i, j] : pairs) {
    if (pu[i] || gu[j]) continue;
    pu[i] = gu[j] = true;
    ++hits;
  }
  return hits;
}

PRF separator_prf(std::span<const ScoredSeparator> pred, std::span<const LabeledSeparator> gt, double tol) {
  return prf_from_counts(separator_hits(pred, gt, tol), pred.size(), gt.size());
}

}  // namespace sepformer
