#include "sepformer/losses.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "sepformer/ops.hpp"

namespace sepformer {

namespace {

template <typename T>
BasicTensor<T> zero_scalar() {
  return BasicTensor<T>::scalar(T(0));
}

template <typename T>
void require_pairs(const char* what, const BasicTensor<T>& gt, const BasicTensor<T>& pred, std::size_t width) {
  if (gt.rank() != 2 || pred.rank() != 2 || gt.shape() != pred.shape() || (width && gt.dim(1) != width)) {
    throw LossError(std::string(what) + ": shape mismatch " + shape_str(gt.shape()) + " vs " +
                    shape_str(pred.shape()));
  }
}

}  // namespace

void LossConfig::validate() const {
  if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0 || lambda4 < 0) throw LossError("loss weights must be non-negative");
  if (!(short_penalty_factor > 0)) throw LossError("short_penalty_factor must be positive");
}

template <typename T>
BasicTensor<T> classification_loss(std::span<const T> labels, const BasicTensor<T>& scores, const LossConfig& cfg) {
  if (labels.size() != scores.numel()) throw LossError("classification_loss: label/score count mismatch");
  std::vector<std::size_t> scope;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (cfg.classification_scope == ClassificationScope::AllQueries || labels[i] > T(0.5)) scope.push_back(i);
  }
  if (scope.empty()) return zero_scalar<T>();
  auto flat = reshape(scores, Shape{scores.numel()});
  auto p = gather_rows(flat, std::span<const std::size_t>(scope));
  std::vector<T> y(scope.size()), ny(scope.size());
  for (std::size_t i = 0; i < scope.size(); ++i) {
    y[i] = labels[scope[i]];
    ny[i] = T(1) - y[i];
  }
  const Shape shape{scope.size()};
  constexpr T kEps = T(1e-7);
  auto pc = clamp(p, kEps, T(1) - kEps);
  auto pos = mul(log(pc), BasicTensor<T>(shape, std::move(y)));
  auto neg = mul(log(add_scalar(scale(pc, T(-1)), T(1))), BasicTensor<T>(shape, std::move(ny)));
  return scale(sum(add(pos, neg)), T(-1) / static_cast<T>(scope.size()));
}

template <typename T>
BasicTensor<T> angle_loss(const BasicTensor<T>& gt_lines, const BasicTensor<T>& pred_lines, const LossConfig& cfg) {
  require_pairs("angle_loss", gt_lines, pred_lines, 4);
  const std::size_t n = gt_lines.dim(0);
  auto g = gt_lines.data();
  std::vector<std::size_t> keep;
  std::vector<T> gdir, glen;
  for (std::size_t i = 0; i < n; ++i) {
    const T dx = g[4 * i + 2] - g[4 * i], dy = g[4 * i + 3] - g[4 * i + 1];
    const T len = std::sqrt(dx * dx + dy * dy);
    if (len <= T(1e-6)) continue;
    keep.push_back(i);
    gdir.push_back(dx);
    gdir.push_back(dy);
    glen.push_back(len);
  }
  if (keep.empty()) return zero_scalar<T>();
  const std::size_t m = keep.size();
  auto pred = gather_rows(pred_lines, std::span<const std::size_t>(keep));
  // endpoint difference (x2 - x1, y2 - y1) as a fixed linear map
  const BasicTensor<T> diff(Shape{4, 2}, std::vector<T>{-1, 0, 0, -1, 1, 0, 0, 1});
  auto d = matmul(pred, diff);
  auto dot = sum_last(mul(d, BasicTensor<T>(Shape{m, 2}, gdir)));
  auto sq = sum_last(square(d));
  constexpr T kTiny = T(1e-24);
  std::vector<T> mask(m, T(1));
  for (std::size_t i = 0; i < m; ++i) {
    if (sq.data()[i] < kTiny) {
      mask[i] = T(0);
      std::fprintf(stderr, "angle_loss: zero-length prediction for pair %zu, cosine taken as 0\n", keep[i]);
    }
  }
  auto norm = sqrt(clamp(sq, kTiny, std::numeric_limits<T>::max()));
  std::vector<T> inv(m);
  for (std::size_t i = 0; i < m; ++i) {
    inv[i] = mask[i] / (glen[i] * glen[i] * static_cast<T>(cfg.short_penalty_factor));
  }
  // cos / (|d_gt| * factor) = dot / (|d| * |d_gt|^2 * factor)
  auto ratio = mul(div(dot, norm), BasicTensor<T>(Shape{m}, std::move(inv)));
  return add_scalar(scale(sum(ratio), T(-1) / static_cast<T>(m)), T(1));
}

template <typename T>
BasicTensor<T> line_loss(const BasicTensor<T>& gt_lines, const BasicTensor<T>& pred_lines) {
  require_pairs("line_loss", gt_lines, pred_lines, 4);
  const std::size_t n = gt_lines.dim(0);
  if (n == 0) return zero_scalar<T>();
  return scale(sum(abs(sub(pred_lines, gt_lines))), T(1) / static_cast<T>(n));
}

template <typename T>
BasicTensor<T> linestrip_loss(const BasicTensor<T>& gt_strips, const BasicTensor<T>& pred_strips) {
  require_pairs("linestrip_loss", gt_strips, pred_strips, 0);
  const std::size_t n = gt_strips.dim(0);
  if (gt_strips.dim(1) % 2 != 0) throw LossError("linestrip_loss: strips must hold (x, y) pairs");
  const std::size_t p = gt_strips.dim(1) / 2;
  if (n == 0 || p == 0) return zero_scalar<T>();
  return scale(sum(abs(sub(pred_strips, gt_strips))), T(1) / static_cast<T>(n * p));
}

template <typename T>
BasicTensor<T> weighted_axis_loss(const LossTerms<T>& terms, const LossConfig& cfg) {
  auto total = add(scale(terms.cls, static_cast<T>(cfg.lambda1)), scale(terms.line, static_cast<T>(cfg.lambda3)));
  total = add(total, scale(terms.linestrip, static_cast<T>(cfg.lambda4)));
  if (cfg.angle_loss_enabled) total = add(total, scale(terms.angle, static_cast<T>(cfg.lambda2)));
  return total;
}

double weighted_axis_total(const LossBreakdown& t, const LossConfig& cfg) {
  const double angle = cfg.angle_loss_enabled ? cfg.lambda2 * t.angle : 0.0;
  return cfg.lambda1 * t.cls + angle + cfg.lambda3 * t.line + cfg.lambda4 * t.linestrip;
}

SeparatorLoss total_loss(LossBreakdown row, LossBreakdown col, const LossConfig& cfg) {
  row.axis_total = weighted_axis_total(row, cfg);
  col.axis_total = weighted_axis_total(col, cfg);
  const double grand = row.axis_total + col.axis_total;
  row.grand_total = grand;
  col.grand_total = grand;
  return {row, col, grand};
}

template <typename T>
LossBreakdown breakdown_of(const LossTerms<T>& terms, const LossConfig& cfg) {
  LossBreakdown b;
  b.cls = terms.cls.item();
  b.angle = cfg.angle_loss_enabled ? static_cast<double>(terms.angle.item()) : 0.0;
  b.line = terms.line.item();
  b.linestrip = terms.linestrip.item();
  b.axis_total = weighted_axis_total(b, cfg);
  return b;
}

template <typename T>
BasicTensor<T> lines_tensor(std::span<const SingleLine> lines) {
  std::vector<T> v;
  v.reserve(lines.size() * 4);
  for (const auto& l : lines) {
    v.push_back(static_cast<T>(l.p1.x));
    v.push_back(static_cast<T>(l.p1.y));
    v.push_back(static_cast<T>(l.p2.x));
    v.push_back(static_cast<T>(l.p2.y));
  }
  return BasicTensor<T>(Shape{lines.size(), 4}, std::move(v));
}

template <typename T>
BasicTensor<T> strips_tensor(std::span<const LineStrip> strips, std::size_t points) {
  std::vector<T> v;
  v.reserve(strips.size() * points * 2);
  for (const auto& s : strips) {
    if (s.size() != points) throw LossError("strips_tensor: strip length mismatch");
    for (const auto& p : s.points) {
      v.push_back(static_cast<T>(p.x));
      v.push_back(static_cast<T>(p.y));
    }
  }
  return BasicTensor<T>(Shape{strips.size(), 2 * points}, std::move(v));
}

#define SEPFORMER_INSTANTIATE_LOSSES(T)                                                                  \
  template BasicTensor<T> classification_loss(std::span<const T>, const BasicTensor<T>&, const LossConfig&); \
  template BasicTensor<T> angle_loss(const BasicTensor<T>&, const BasicTensor<T>&, const LossConfig&);   \
  template BasicTensor<T> line_loss(const BasicTensor<T>&, const BasicTensor<T>&);                       \
  template BasicTensor<T> linestrip_loss(const BasicTensor<T>&, const BasicTensor<T>&);                  \
  template BasicTensor<T> weighted_axis_loss(const LossTerms<T>&, const LossConfig&);                    \
  template LossBreakdown breakdown_of(const LossTerms<T>&, const LossConfig&);                           \
  template BasicTensor<T> lines_tensor<T>(std::span<const SingleLine>);                                  \
  template BasicTensor<T> strips_tensor<T>(std::span<const LineStrip>, std::size_t);

SEPFORMER_INSTANTIATE_LOSSES(float)
SEPFORMER_INSTANTIATE_LOSSES(double)

#undef SEPFORMER_INSTANTIATE_LOSSES

}  // namespace sepformer
