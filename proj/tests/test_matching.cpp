#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "sepformer/matching.hpp"
#include "sepformer/rng.hpp"

using namespace sepformer;

namespace {

ScoredSeparator pred(double score, SingleLine line) { return {score, line, std::nullopt, Axis::Row}; }

CostMatrix random_costs(Rng& rng, std::size_t n, std::size_t k, bool with_ties) {
  CostMatrix m{n, k, {}};
  for (std::size_t i = 0; i < n * k; ++i) {
    // coarse values force many exact ties
    m.values.push_back(with_ties ? static_cast<double>(rng.range(0, 3)) : rng.uniform(-2.0, 4.0));
  }
  return m;
}

}  // namespace

TEST_CASE("pair cost examples") {
  MatchConfig cfg;
  SingleLine flat{{0, 0}, {1, 0}};
  CHECK(pair_cost({flat, {}}, pred(0.9, flat), cfg) == doctest::Approx(-1.8));
  SingleLine shifted{{0, 0.1}, {1, 0.1}};
  CHECK(pair_cost({flat, {}}, pred(0.0, shifted), cfg) == doctest::Approx(0.6));
  cfg.class_term_sign = ClassTermSign::PaperLiteral;
  CHECK(pair_cost({flat, {}}, pred(0.5, shifted), cfg) == doctest::Approx(1.6));
}

TEST_CASE("score-aware choice between two predictions") {
  MatchConfig cfg;
  SingleLine gt{{0, 0.5}, {1, 0.5}};
  // A: L1 distance 0.1 and score 0.9; B: exact line and score 0.1
  std::vector<ScoredSeparator> preds{pred(0.9, {{0, 0.55}, {1, 0.55}}), pred(0.1, gt)};
  std::vector<LabeledSeparator> gts{{gt, {}}};
  auto r = hungarian_match(gts, preds, cfg);
  REQUIRE(r.assignment.size() == 1);
  CHECK(r.assignment[0] == 0);
  CHECK(r.total_cost == doctest::Approx(-1.5));
  CHECK(pair_cost(gts[0], preds[1], cfg) == doctest::Approx(-0.2));
}

TEST_CASE("empty ground truth and over-full ground truth") {
  MatchConfig cfg;
  std::vector<ScoredSeparator> preds{pred(0.5, {})};
  auto r = hungarian_match({}, preds, cfg);
  CHECK(r.assignment.empty());
  CHECK(r.total_cost == 0.0);
  std::vector<LabeledSeparator> gts(2);
  CHECK_THROWS_AS(hungarian_match(gts, preds, cfg), MatchError);
}

TEST_CASE("brute force examples and guard") {
  CostMatrix one{1, 1, {0.7}};
  CHECK(brute_force_assignment(one).assignment == std::vector<std::size_t>{0});
  CostMatrix sym{2, 2, {1, 1, 1, 1}};
  CHECK(brute_force_assignment(sym).assignment == std::vector<std::size_t>{0, 1});
  CHECK(solve_assignment(sym).assignment == std::vector<std::size_t>{0, 1});
  CostMatrix big{9, 9, std::vector<double>(81, 0.0)};
  CHECK_THROWS_AS(brute_force_assignment(big), MatchError);
}

TEST_CASE("hungarian equals the exhaustive oracle") {
  Rng rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t k = 1 + rng.index(7);
    const std::size_t n = rng.index(k + 1);
    auto m = random_costs(rng, n, k, trial % 2 == 0);
    auto fast = solve_assignment(m);
    auto slow = brute_force_assignment(m);
    INFO("trial ", trial, " n ", n, " k ", k);
    CHECK(fast.assignment == slow.assignment);
    CHECK(fast.total_cost == slow.total_cost);
  }
}

TEST_CASE("hungarian on separators agrees with brute force, both criteria") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 3 + rng.index(3), n = 1 + rng.index(3);
    std::vector<LabeledSeparator> gts;
    std::vector<ScoredSeparator> preds;
    auto line = [&] { return SingleLine{{rng.uniform(), rng.uniform()}, {rng.uniform(), rng.uniform()}}; };
    for (std::size_t i = 0; i < n; ++i) {
      auto l = line();
      gts.push_back({l, sample_points(l, 4)});
    }
    for (std::size_t j = 0; j < k; ++j) {
      auto l = line();
      preds.push_back({rng.uniform(), l, sample_points(l, 4), Axis::Row});
    }
    MatchConfig cfg;
    cfg.use_strip = trial % 2 == 1;
    auto a = hungarian_match(gts, preds, cfg);
    auto b = brute_force_match(gts, preds, cfg);
    CHECK(a.assignment == b.assignment);
    CHECK(a.total_cost == b.total_cost);
  }
}

TEST_CASE("constant shift leaves the assignment unchanged") {
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    auto m = random_costs(rng, 4, 6, false);
    auto shifted = m;
    for (auto& v : shifted.values) v += 3.25;
    CHECK(solve_assignment(m).assignment == solve_assignment(shifted).assignment);
  }
}

TEST_CASE("permuting predictions permutes the assignment") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 4, k = 6;
    auto m = random_costs(rng, n, k, false);
    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = k - 1; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);
    // column j of the shuffled matrix is column perm[j] of the original
    CostMatrix p{n, k, std::vector<double>(n * k)};
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < k; ++j) p.values[i * k + j] = m(i, perm[j]);
    }
    auto a = solve_assignment(m);
    auto b = solve_assignment(p);
    for (std::size_t i = 0; i < n; ++i) CHECK(perm[b.assignment[i]] == a.assignment[i]);
    CHECK(b.total_cost == doctest::Approx(a.total_cost).epsilon(1e-12));
  }
}

TEST_CASE("larger instances stay injective") {
  Rng rng(1);
  auto m = random_costs(rng, 40, 60, false);
  auto r = solve_assignment(m);
  auto sorted = r.assignment;
  std::sort(sorted.begin(), sorted.end());
  CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
}
