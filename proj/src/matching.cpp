#include "sepformer/matching.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace sepformer {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double tie_tolerance(double reference) { return 1e-9 * (1.0 + std::abs(reference)); }

struct Solution {
  std::vector<std::size_t> row_to_col;
  std::vector<double> u;  // row potentials, 1-based
  std::vector<double> v;  // column potentials, 1-based
};

// Shortest-augmenting-path Hungarian method with potentials, O(n^2 m),
// rows <= cols. Columns are scanned in ascending order with strict
// comparisons, so the result is deterministic.
Solution hungarian(const CostMatrix& a) {
  const std::size_t n = a.rows, m = a.cols;
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  Solution s;
  s.row_to_col.assign(n, 0);
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] != 0) s.row_to_col[p[j] - 1] = j - 1;
  }
  s.u = std::move(u);
  s.v = std::move(v);
  return s;
}

double assignment_cost(const CostMatrix& cost, const std::vector<std::size_t>& assignment) {
  double total = 0.0;
  for (std::size_t i = 0; i < assignment.size(); ++i) total += cost(i, assignment[i]);
  return total;
}

void check_matrix(const CostMatrix& cost) {
  if (cost.values.size() != cost.rows * cost.cols) throw MatchError("cost matrix size mismatch");
  if (cost.rows > cost.cols) {
    throw MatchError("over-full ground truth: " + std::to_string(cost.rows) + " targets but only " +
                     std::to_string(cost.cols) + " predictions; raise K");
  }
  for (double c : cost.values) {
    if (!std::isfinite(c)) throw MatchError("non-finite matching cost");
  }
}

void brute_force_recurse(const CostMatrix& cost, std::size_t row, double partial, std::vector<std::size_t>& current,
                         std::vector<bool>& used, MatchResult& best, bool& found) {
  if (row == cost.rows) {
    if (!found || partial < best.total_cost - tie_tolerance(best.total_cost)) {
      best.assignment = current;
      best.total_cost = partial;
      found = true;
    }
    return;
  }
  for (std::size_t j = 0; j < cost.cols; ++j) {
    if (used[j]) continue;
    used[j] = true;
    current[row] = j;
    brute_force_recurse(cost, row + 1, partial + cost(row, j), current, used, best, found);
    used[j] = false;
  }
}

}  // namespace

void MatchConfig::validate() const {
  if (lambda_coord < 0.0 || lambda_cls < 0.0) throw MatchError("MatchConfig: weights must be non-negative");
  if (!use_line && !use_strip) throw MatchError("MatchConfig: no geometric matching criterion enabled");
}

double line_l1(const SingleLine& a, const SingleLine& b) {
  return std::abs(a.p1.x - b.p1.x) + std::abs(a.p1.y - b.p1.y) + std::abs(a.p2.x - b.p2.x) +
         std::abs(a.p2.y - b.p2.y);
}

double strip_l1(const LineStrip& a, const LineStrip& b) {
  if (a.size() != b.size() || a.size() == 0) throw MatchError("strip length mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    total += std::abs(a.points[i].x - b.points[i].x) + std::abs(a.points[i].y - b.points[i].y);
  }
  return total / static_cast<double>(a.size());
}

double pair_cost(const LabeledSeparator& gt, const ScoredSeparator& pred, const MatchConfig& cfg) {
  double geometric = 0.0;
  if (cfg.use_line) geometric += line_l1(gt.line, pred.line);
  if (cfg.use_strip) {
    if (!pred.strip) throw MatchError("line-strip matching requested but prediction has no strip");
    geometric += strip_l1(gt.strip, *pred.strip);
  }
  const double sign = cfg.class_term_sign == ClassTermSign::PaperLiteral ? 1.0 : -1.0;
  return cfg.lambda_coord * geometric + sign * cfg.lambda_cls * pred.score;
}

CostMatrix build_cost_matrix(std::span<const LabeledSeparator> gts, std::span<const ScoredSeparator> preds,
                             const MatchConfig& cfg) {
  CostMatrix m{gts.size(), preds.size(), {}};
  m.values.reserve(m.rows * m.cols);
  for (const auto& g : gts) {
    for (const auto& p : preds) m.values.push_back(pair_cost(g, p, cfg));
  }
  return m;
}

MatchResult solve_assignment(const CostMatrix& cost) {
  check_matrix(cost);
  MatchResult result;
  if (cost.rows == 0) return result;

  const Solution base = hungarian(cost);
  const double optimum = assignment_cost(cost, base.row_to_col);
  const double tol = tie_tolerance(optimum);
  std::vector<std::size_t> sigma = base.row_to_col;
  std::vector<bool> col_fixed(cost.cols, false);
  double fixed_cost = 0.0;

  // Lexicographic refinement. Fixing (i, j) raises the optimum by at least
  // the reduced cost c(i,j) - u_i - v_j, so only tight edges need a re-solve.
  for (std::size_t i = 0; i < cost.rows; ++i) {
    for (std::size_t j = 0; j < cost.cols && j != sigma[i]; ++j) {
      if (col_fixed[j]) continue;
      if (cost(i, j) - base.u[i + 1] - base.v[j + 1] > tol) continue;
      CostMatrix sub{cost.rows - i - 1, 0, {}};
      std::vector<std::size_t> free_cols;
      for (std::size_t c = 0; c < cost.cols; ++c) {
        if (!col_fixed[c] && c != j) free_cols.push_back(c);
      }
      sub.cols = free_cols.size();
      for (std::size_t r = i + 1; r < cost.rows; ++r) {
        for (std::size_t c : free_cols) sub.values.push_back(cost(r, c));
      }
      std::vector<std::size_t> tail;
      double total = fixed_cost + cost(i, j);
      if (sub.rows > 0) {
        tail = hungarian(sub).row_to_col;
        total += assignment_cost(sub, tail);
      }
      if (total <= optimum + tol) {
        sigma[i] = j;
        for (std::size_t r = 0; r < tail.size(); ++r) sigma[i + 1 + r] = free_cols[tail[r]];
        break;
      }
    }
    col_fixed[sigma[i]] = true;
    fixed_cost += cost(i, sigma[i]);
  }
  result.assignment = std::move(sigma);
  result.total_cost = assignment_cost(cost, result.assignment);
  return result;
}

MatchResult brute_force_assignment(const CostMatrix& cost) {
  check_matrix(cost);
  if (cost.rows > 8 || cost.cols > 8) throw MatchError("brute-force matching limited to 8 x 8");
  MatchResult best;
  if (cost.rows == 0) return best;
  std::vector<std::size_t> current(cost.rows, 0);
  std::vector<bool> used(cost.cols, false);
  bool found = false;
  brute_force_recurse(cost, 0, 0.0, current, used, best, found);
  best.total_cost = assignment_cost(cost, best.assignment);
  return best;
}

MatchResult hungarian_match(std::span<const LabeledSeparator> gts, std::span<const ScoredSeparator> preds,
                            const MatchConfig& cfg) {
  return solve_assignment(build_cost_matrix(gts, preds, cfg));
}

MatchResult brute_force_match(std::span<const LabeledSeparator> gts, std::span<const ScoredSeparator> preds,
                              const MatchConfig& cfg) {
  return brute_force_assignment(build_cost_matrix(gts, preds, cfg));
}

}  // namespace sepformer
