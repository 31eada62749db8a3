#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "sepformer/geometry.hpp"
#include "sepformer/losses.hpp"
#include "sepformer/ops.hpp"

namespace sepformer::testing {

double gradient_error(const ScalarFn& f, std::vector<TensorD> inputs, double h, double floor) {
  for (auto& x : inputs) {
    x.set_requires_grad(true);
    x.zero_grad();
  }
  f(inputs).backward();
  double worst = 0.0;
  for (auto& x : inputs) {
    std::vector<double> analytic(x.numel(), 0.0);
    if (!x.grad().empty()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
    std::vector<double> numeric(x.numel());
    NoGradGuard guard;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const double saved = x.data()[i];
      x.data_mut()[i] = saved + h;
      const double up = f(inputs).item();
      x.data_mut()[i] = saved - h;
      const double down = f(inputs).item();
      x.data_mut()[i] = saved;
      numeric[i] = (up - down) / (2.0 * h);
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
    }
    const double denom = std::max(std::sqrt(std::max(na, nn)), floor);
    if (denom > 1e-10) worst = std::max(worst, std::sqrt(diff) / denom);
  }
  return worst;
}

TensorD random_tensor(Rng& rng, Shape shape, double lo, double hi, bool requires_grad) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return TensorD(std::move(shape), std::move(v), requires_grad);
}

TensorD random_away_from_zero(Rng& rng, Shape shape, double min_abs, double max_abs) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(min_abs, max_abs) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
  return TensorD(std::move(shape), std::move(v), true);
}

TensorD project(const TensorD& x, std::uint64_t seed) {
  Rng rng(Rng::mix_seed(seed, 0x5052u));
  return sum(mul(x, random_tensor(rng, x.shape(), -1.0, 1.0, false)));
}

namespace {

// Unary case over one random input.
GradCase unary(std::string name, std::function<TensorD(const TensorD&)> op,
               std::function<TensorD(Rng&)> make) {
  return {std::move(name), [op, make](std::uint64_t seed) {
            Rng rng(seed);
            auto x = make(rng);
            return gradient_error([&](const std::vector<TensorD>& in) { return project(op(in[0]), seed); }, {x});
          }};
}

GradCase binary(std::string name, std::function<TensorD(const TensorD&, const TensorD&)> op,
                std::function<std::pair<TensorD, TensorD>(Rng&)> make) {
  return {std::move(name), [op, make](std::uint64_t seed) {
            Rng rng(seed);
            auto [a, b] = make(rng);
            return gradient_error([&](const std::vector<TensorD>& in) { return project(op(in[0], in[1]), seed); },
                                  {a, b});
          }};
}

std::function<TensorD(Rng&)> dense(Shape shape, double lo = -1.0, double hi = 1.0) {
  return [shape, lo, hi](Rng& rng) { return random_tensor(rng, shape, lo, hi); };
}

std::function<std::pair<TensorD, TensorD>(Rng&)> pair_of(Shape a, Shape b) {
  return [a, b](Rng& rng) { return std::pair{random_tensor(rng, a), random_tensor(rng, b)}; };
}

}  // namespace

std::vector<GradCase> op_gradient_cases() {
  std::vector<GradCase> cases;
  cases.push_back(binary("add", [](auto& a, auto& b) { return add(a, b); }, pair_of({3, 4}, {3, 4})));
  cases.push_back(binary("sub", [](auto& a, auto& b) { return sub(a, b); }, pair_of({3, 4}, {3, 4})));
  cases.push_back(binary("mul", [](auto& a, auto& b) { return mul(a, b); }, pair_of({3, 4}, {3, 4})));
  cases.push_back(binary("div", [](auto& a, auto& b) { return div(a, b); }, [](Rng& rng) {
    return std::pair{random_tensor(rng, {3, 4}), random_away_from_zero(rng, {3, 4}, 0.5, 2.0)};
  }));
  cases.push_back(binary("add_bias", [](auto& a, auto& b) { return add_bias(a, b); }, pair_of({2, 3, 4}, {4})));
  cases.push_back(binary("add_channel_bias", [](auto& a, auto& b) { return add_channel_bias(a, b); },
                         pair_of({3, 2, 4}, {3})));
  cases.push_back(unary("scale", [](auto& x) { return scale(x, 1.7); }, dense({5})));
  cases.push_back(unary("add_scalar", [](auto& x) { return square(add_scalar(x, 0.3)); }, dense({5})));
  cases.push_back(binary("matmul", [](auto& a, auto& b) { return matmul(a, b); }, pair_of({4, 5}, {5, 2})));
  cases.push_back({"linear", [](std::uint64_t seed) {
                     Rng rng(seed);
                     return gradient_error(
                         [&](const std::vector<TensorD>& in) { return project(linear(in[0], in[1], in[2]), seed); },
                         {random_tensor(rng, {3, 4}), random_tensor(rng, {4, 5}), random_tensor(rng, {5})});
                   }});
  cases.push_back(unary("relu", [](auto& x) { return relu(x); },
                        [](Rng& rng) { return random_away_from_zero(rng, {4, 4}, 0.05, 1.0); }));
  cases.push_back(unary("sigmoid", [](auto& x) { return sigmoid(x); }, dense({6}, -4.0, 4.0)));
  cases.push_back(unary("inverse_sigmoid", [](auto& x) { return inverse_sigmoid(x, 1e-5); }, dense({6}, 0.05, 0.95)));
  cases.push_back(unary("log", [](auto& x) { return log(x); }, dense({6}, 0.2, 3.0)));
  cases.push_back(unary("abs", [](auto& x) { return abs(x); },
                        [](Rng& rng) { return random_away_from_zero(rng, {6}, 0.05, 1.0); }));
  cases.push_back(unary("sqrt", [](auto& x) { return sqrt(x); }, dense({6}, 0.2, 3.0)));
  cases.push_back(unary("square", [](auto& x) { return square(x); }, dense({6})));
  cases.push_back(unary("clamp", [](auto& x) { return clamp(x, -0.5, 0.5); }, [](Rng& rng) {
    std::vector<double> v(8);
    for (auto& e : v) {
      // keep clear of both bounds
      e = rng.uniform(-1.0, 1.0);
      if (std::abs(std::abs(e) - 0.5) < 0.02) e *= 0.5;
    }
    return TensorD({8}, v, true);
  }));
  cases.push_back(unary("sum", [](auto& x) { return scale(sum(x), 1.0); }, dense({3, 3})));
  cases.push_back(unary("mean", [](auto& x) { return mean(x); }, dense({3, 3})));
  cases.push_back(unary("sum_last", [](auto& x) { return sum_last(x); }, dense({3, 4})));
  cases.push_back(unary("softmax_rows", [](auto& x) { return softmax(x, 1); }, dense({3, 5}, -2.0, 2.0)));
  cases.push_back(unary("softmax_cols", [](auto& x) { return softmax(x, 0); }, dense({4, 3}, -2.0, 2.0)));
  cases.push_back({"layer_norm", [](std::uint64_t seed) {
                     Rng rng(seed);
                     return gradient_error(
                         [&](const std::vector<TensorD>& in) {
                           return project(layer_norm(in[0], in[1], in[2]), seed);
                         },
                         {random_tensor(rng, {3, 6}), random_tensor(rng, {6}, 0.5, 1.5), random_tensor(rng, {6})});
                   }});
  cases.push_back(unary("reshape", [](auto& x) { return square(reshape(x, Shape{6, 2})); }, dense({3, 4})));
  cases.push_back(unary("transpose", [](auto& x) { return transpose(x); }, dense({3, 4})));
  cases.push_back(unary("slice_cols", [](auto& x) { return slice_cols(x, 1, 2); }, dense({3, 4})));
  cases.push_back(binary("concat_cols", [](auto& a, auto& b) { return concat_cols<double>({a, b, a}); },
                         pair_of({3, 2}, {3, 4})));
  cases.push_back(binary("concat_rows", [](auto& a, auto& b) { return concat_rows<double>({b, a}); },
                         pair_of({2, 3}, {4, 3})));
  cases.push_back(unary("gather_rows", [](auto& x) {
    const std::vector<std::size_t> rows{2, 0, 2, 3};
    return gather_rows(x, std::span<const std::size_t>(rows));
  }, dense({4, 3})));
  cases.push_back({"conv2d_3x3", [](std::uint64_t seed) {
                     Rng rng(seed);
                     return gradient_error(
                         [&](const std::vector<TensorD>& in) {
                           return project(conv2d(in[0], in[1], in[2], 1, 1), seed);
                         },
                         {random_tensor(rng, {2, 5, 6}), random_tensor(rng, {3, 2, 3, 3}), random_tensor(rng, {3})});
                   }});
  cases.push_back({"conv2d_strided", [](std::uint64_t seed) {
                     Rng rng(seed);
                     return gradient_error(
                         [&](const std::vector<TensorD>& in) {
                           return project(conv2d(in[0], in[1], in[2], 2, 3), seed);
                         },
                         {random_tensor(rng, {2, 8, 8}), random_tensor(rng, {2, 2, 7, 7}), random_tensor(rng, {2})});
                   }});
  cases.push_back({"conv2d_1x1", [](std::uint64_t seed) {
                     Rng rng(seed);
                     return gradient_error(
                         [&](const std::vector<TensorD>& in) {
                           return project(conv2d(in[0], in[1], in[2], 1, 0), seed);
                         },
                         {random_tensor(rng, {3, 4, 5}), random_tensor(rng, {2, 3, 1, 1}), random_tensor(rng, {2})});
                   }});
  cases.push_back(unary("max_pool2d", [](auto& x) { return max_pool2d(x, 2, 2); }, dense({2, 6, 6})));
  cases.push_back(unary("upsample_nearest2x", [](auto& x) { return upsample_nearest2x(x); }, dense({2, 3, 4})));
  cases.push_back(binary("bilinear_sample", [](auto& f, auto& p) { return bilinear_sample(f, p); }, [](Rng& rng) {
    return std::pair{random_tensor(rng, {3, 5, 6}), random_tensor(rng, {7, 2}, 0.15, 0.85)};
  }));
  cases.push_back({"deformable_sample", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const std::vector<LevelShape> levels{{4, 5, 0}, {2, 3, 20}};
                     const std::size_t heads = 2, groups = 3, k = 3;
                     auto value = random_tensor(rng, {26, 4});
                     auto locs = random_tensor(rng, {k, heads * 2 * groups * 2}, 0.2, 0.8);
                     auto w = random_tensor(rng, {k, heads * 2 * groups}, 0.0, 1.0);
                     return gradient_error(
                         [&](const std::vector<TensorD>& in) {
                           return project(deformable_sample(in[0], std::span<const LevelShape>(levels), in[1], in[2],
                                                            heads, groups),
                                          seed);
                         },
                         {value, locs, w});
                   }});
  cases.push_back(unary("sine_embed", [](auto& x) { return sine_embed(x, 8); }, dense({3, 6}, 0.0, 1.0)));
  cases.push_back(unary("canonicalize_lines", [](auto& x) { return canonicalize_lines(x, true); },
                        dense({5, 4}, 0.0, 1.0)));
  return cases;
}

namespace {

TensorD random_lines(Rng& rng, std::size_t n) {
  std::vector<double> v;
  for (std::size_t i = 0; i < n; ++i) {
    const double x1 = rng.uniform(0.0, 0.4), y1 = rng.uniform(0.0, 1.0);
    v.insert(v.end(), {x1, y1, x1 + rng.uniform(0.2, 0.6), y1 + rng.uniform(-0.1, 0.1)});
  }
  return TensorD({n, 4}, v, false);
}

// Predictions offset from the labels by at least 1e-3 per coordinate so
// absolute-value kinks sit well outside the difference stencil.
TensorD perturb(Rng& rng, const TensorD& base) {
  std::vector<double> v(base.data().begin(), base.data().end());
  for (auto& e : v) e += rng.uniform(0.001, 0.05) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
  return TensorD(base.shape(), v, true);
}

std::vector<double> random_labels(Rng& rng, std::size_t n) {
  std::vector<double> y(n);
  for (auto& e : y) e = rng.bernoulli(0.4) ? 1.0 : 0.0;
  y[0] = 1.0;
  return y;
}

GradCase classification_case(std::string name, ClassificationScope scope) {
  return {std::move(name), [scope](std::uint64_t seed) {
            Rng rng(seed);
            LossConfig cfg;
            cfg.classification_scope = scope;
            const auto labels = random_labels(rng, 7);
            auto logits = random_tensor(rng, {7}, -3.0, 3.0);
            return gradient_error(
                [&](const std::vector<TensorD>& in) {
                  return classification_loss<double>(labels, sigmoid(in[0]), cfg);
                },
                {logits});
          }};
}

}  // namespace

std::vector<GradCase> loss_gradient_cases() {
  std::vector<GradCase> cases;
  cases.push_back(classification_case("classification_all_queries", ClassificationScope::AllQueries));
  cases.push_back(classification_case("classification_matched_only", ClassificationScope::MatchedOnly));
  cases.push_back({"angle", [](std::uint64_t seed) {
                     Rng rng(seed);
                     auto gt = random_lines(rng, 5);
                     auto pred = perturb(rng, gt);
                     LossConfig cfg;
                     return gradient_error([&](const std::vector<TensorD>& in) { return angle_loss(gt, in[0], cfg); },
                                           {pred});
                   }});
  cases.push_back({"line", [](std::uint64_t seed) {
                     Rng rng(seed);
                     auto gt = random_lines(rng, 5);
                     auto pred = perturb(rng, gt);
                     return gradient_error([&](const std::vector<TensorD>& in) { return line_loss(gt, in[0]); }, {pred});
                   }});
  cases.push_back({"linestrip", [](std::uint64_t seed) {
                     Rng rng(seed);
                     auto gt = random_tensor(rng, {4, 32}, 0.0, 1.0, false);
                     auto pred = perturb(rng, gt);
                     return gradient_error([&](const std::vector<TensorD>& in) { return linestrip_loss(gt, in[0]); },
                                           {pred});
                   }});
  cases.push_back({"composite", [](std::uint64_t seed) {
                     // both axes, all four terms, shared by the weighted sum
                     Rng rng(seed);
                     LossConfig cfg;
                     const std::size_t p = 4;
                     std::vector<TensorD> inputs;
                     std::vector<TensorD> gts, gstrips;
                     std::vector<std::vector<double>> labels;
                     for (int axis = 0; axis < 2; ++axis) {
                       auto gt = random_lines(rng, 3);
                       gts.push_back(gt);
                       gstrips.push_back(random_tensor(rng, {3, 2 * p}, 0.0, 1.0, false));
                       labels.push_back(random_labels(rng, 5));
                       inputs.push_back(random_tensor(rng, {5}, -3.0, 3.0));
                       inputs.push_back(perturb(rng, gt));
                       inputs.push_back(perturb(rng, gstrips.back()));
                     }
                     return gradient_error(
                         [&](const std::vector<TensorD>& in) {
                           TensorD total;
                           for (std::size_t axis = 0; axis < 2; ++axis) {
                             LossTerms<double> t{
                                 classification_loss<double>(labels[axis], sigmoid(in[3 * axis]), cfg),
                                 angle_loss(gts[axis], in[3 * axis + 1], cfg),
                                 line_loss(gts[axis], in[3 * axis + 1]),
                                 linestrip_loss(gstrips[axis], in[3 * axis + 2]),
                             };
                             auto axis_loss = weighted_axis_loss(t, cfg);
                             total = total.defined() ? add(total, axis_loss) : axis_loss;
                           }
                           return total;
                         },
                         inputs);
                   }});
  return cases;
}

}  // namespace sepformer::testing
