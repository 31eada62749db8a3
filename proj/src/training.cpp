#include "sepformer/training.hpp"

#include <cmath>
#include <numeric>

#include "sepformer/ops.hpp"

namespace sepformer {

namespace {

template <typename T>
struct StepTerms {
  BasicTensor<T> cls, angle, line;
};

MatchConfig line_only(MatchConfig cfg) {
  cfg.use_line = true;
  cfg.use_strip = false;
  return cfg;
}

template <typename T>
BasicTensor<T> zero() {
  return BasicTensor<T>::scalar(T(0));
}

template <typename T>
BasicTensor<T> mean_of(const std::vector<BasicTensor<T>>& xs) {
  if (xs.empty()) return zero<T>();
  auto total = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) total = add(total, xs[i]);
  return scale(total, T(1) / static_cast<T>(xs.size()));
}

std::vector<SingleLine> gt_lines(const std::vector<LabeledSeparator>& gts) {
  std::vector<SingleLine> out;
  for (const auto& g : gts) out.push_back(g.line);
  return out;
}

std::vector<LineStrip> gt_strips(const std::vector<LabeledSeparator>& gts) {
  std::vector<LineStrip> out;
  for (const auto& g : gts) out.push_back(g.strip);
  return out;
}

template <typename T>
MatchResult match_stage(const StageOutput<T>& stage, Axis axis, const std::vector<LabeledSeparator>& gts,
                        const MatchConfig& cfg) {
  const auto preds = scored_separators(stage, axis);
  return hungarian_match(gts, preds, stage.strips.defined() ? cfg : line_only(cfg));
}

template <typename T>
StepTerms<T> supervise_step(const StageOutput<T>& stage, const std::vector<LabeledSeparator>& gts,
                            const MatchResult& m, const LossConfig& cfg) {
  const std::size_t k = stage.logits.numel();
  std::vector<T> labels(k, T(0));
  for (auto q : m.assignment) labels[q] = T(1);
  StepTerms<T> t;
  t.cls = classification_loss<T>(labels, sigmoid(stage.logits), cfg);
  if (gts.empty()) {
    t.angle = zero<T>();
    t.line = zero<T>();
    return t;
  }
  const auto lines = gt_lines(gts);
  auto gt = lines_tensor<T>(lines);
  auto pred = gather_rows(stage.lines, std::span<const std::size_t>(m.assignment));
  t.angle = angle_loss(gt, pred, cfg);
  t.line = line_loss(gt, pred);
  return t;
}

template <typename T>
BasicTensor<T> strip_term(const BasicTensor<T>& strips, std::span<const std::size_t> rows,
                          const std::vector<LabeledSeparator>& gts, std::size_t points) {
  if (gts.empty()) return zero<T>();
  const auto s = gt_strips(gts);
  return linestrip_loss(strips_tensor<T>(s, points), gather_rows(strips, rows));
}

}  // namespace

template <typename T>
std::vector<ScoredSeparator> scored_separators(const StageOutput<T>& stage, Axis axis) {
  const std::size_t k = stage.lines.dim(0);
  const std::size_t sw = stage.strips.defined() ? stage.strips.dim(1) : 0;
  std::vector<ScoredSeparator> out(k);
  for (std::size_t q = 0; q < k; ++q) {
    auto& s = out[q];
    const double z = stage.logits.data()[q];
    s.score = 1.0 / (1.0 + std::exp(-z));
    const auto l = stage.lines.data().subspan(4 * q, 4);
    s.line = {{l[0], l[1]}, {l[2], l[3]}};
    s.axis = axis;
    if (sw) {
      LineStrip strip;
      const auto v = stage.strips.data().subspan(q * sw, sw);
      for (std::size_t i = 0; i + 1 < sw; i += 2) strip.points.push_back({v[i], v[i + 1]});
      s.strip = std::move(strip);
    }
  }
  return out;
}

template <typename T>
AxisLoss<T> axis_loss(const SepFormer<T>& model, const EncoderMemory<T>& memory, Axis axis,
                      const std::vector<LabeledSeparator>& targets, const LossConfig& loss_cfg,
                      const MatchConfig& match_cfg) {
  const auto& mc = model.config();
  const bool deep = loss_cfg.deep_supervision;
  auto coarse = model.coarse_forward(memory, axis);

  // decoding steps supervised with classification, angle and line terms
  std::vector<const StageOutput<T>*> steps;
  if (deep) {
    steps.push_back(&coarse.selection.proposals);
    for (const auto& l : coarse.layers) steps.push_back(&l);
  } else {
    steps.push_back(&coarse.layers.back());
  }

  std::vector<BasicTensor<T>> cls, angle, line, strip;
  auto add_step = [&](const StageOutput<T>& st, const MatchResult& m) {
    auto t = supervise_step(st, targets, m, loss_cfg);
    cls.push_back(t.cls);
    angle.push_back(t.angle);
    line.push_back(t.line);
  };

  if (mc.two_stage()) {
    const std::size_t k = mc.queries(axis);
    std::optional<FineResult<T>> fine_all;
    MatchResult last_match;
    if (match_cfg.use_strip) {
      std::vector<std::size_t> all(k);
      std::iota(all.begin(), all.end(), 0);
      fine_all = model.fine_forward(memory, axis, coarse, all);
      StageOutput<T> final_step = coarse.layers.back();
      final_step.strips = fine_all->layers.back().strips;
      last_match = match_stage(final_step, axis, targets, match_cfg);
    } else {
      last_match = match_stage(coarse.layers.back(), axis, targets, match_cfg);
    }
    for (const auto* st : steps) {
      const bool is_last = st == &coarse.layers.back();
      add_step(*st, is_last ? last_match : match_stage(*st, axis, targets, match_cfg));
    }
    const auto& a = last_match.assignment;
    FineResult<T> fine;
    std::vector<std::size_t> rows;
    if (fine_all) {
      fine = std::move(*fine_all);
      rows = a;
    } else {
      fine = model.fine_forward(memory, axis, coarse, a);
      rows.resize(a.size());
      std::iota(rows.begin(), rows.end(), 0);
    }
    const std::size_t first = deep ? 0 : fine.layers.size() - 1;
    for (std::size_t l = first; l < fine.layers.size(); ++l) {
      strip.push_back(strip_term(fine.layers[l].strips, rows, targets, mc.points));
    }
  } else {
    for (const auto* st : steps) {
      const auto m = match_stage(*st, axis, targets, match_cfg);
      add_step(*st, m);
      if (st->strips.defined()) strip.push_back(strip_term(st->strips, m.assignment, targets, mc.points));
    }
  }

  AxisLoss<T> out;
  out.terms = {mean_of(cls), mean_of(angle), mean_of(line), mean_of(strip)};
  out.total = weighted_axis_loss(out.terms, loss_cfg);
  out.values = breakdown_of(out.terms, loss_cfg);
  return out;
}

template <typename T>
SampleLoss<T> sample_loss(const SepFormer<T>& model, const BasicTensor<T>& image, const SeparatorTargets& targets,
                          const LossConfig& loss_cfg, const MatchConfig& match_cfg) {
  const auto memory = model.encode(image);
  auto row = axis_loss(model, memory, Axis::Row, targets.rows, loss_cfg, match_cfg);
  auto col = axis_loss(model, memory, Axis::Col, targets.cols, loss_cfg, match_cfg);
  const auto combined = total_loss(row.values, col.values, loss_cfg);
  return {add(row.total, col.total), combined.row, combined.col};
}

template std::vector<ScoredSeparator> scored_separators(const StageOutput<float>&, Axis);
template std::vector<ScoredSeparator> scored_separators(const StageOutput<double>&, Axis);
template AxisLoss<float> axis_loss(const SepFormer<float>&, const EncoderMemory<float>&, Axis,
                                   const std::vector<LabeledSeparator>&, const LossConfig&, const MatchConfig&);
template AxisLoss<double> axis_loss(const SepFormer<double>&, const EncoderMemory<double>&, Axis,
                                    const std::vector<LabeledSeparator>&, const LossConfig&, const MatchConfig&);
template SampleLoss<float> sample_loss(const SepFormer<float>&, const BasicTensor<float>&, const SeparatorTargets&,
                                       const LossConfig&, const MatchConfig&);
template SampleLoss<double> sample_loss(const SepFormer<double>&, const BasicTensor<double>&,
                                        const SeparatorTargets&, const LossConfig&, const MatchConfig&);

}  // namespace sepformer
