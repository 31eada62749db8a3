#include "sepformer/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <optional>

#include "sepformer/attention.hpp"
#include "sepformer/checkpoint.hpp"
#include "sepformer/config.hpp"

namespace sepformer {

std::string_view decoder_stages_name(DecoderStages s) {
  switch (s) {
    case DecoderStages::TwoStage3Layer: return "two-stage";
    case DecoderStages::OneStage3Layer: return "one-stage-3";
    case DecoderStages::OneStage6Layer: return "one-stage-6";
  }
  return "two-stage";
}

DecoderStages parse_decoder_stages(std::string_view name) {
  if (name == "two-stage") return DecoderStages::TwoStage3Layer;
  if (name == "one-stage-3") return DecoderStages::OneStage3Layer;
  if (name == "one-stage-6") return DecoderStages::OneStage6Layer;
  throw ModelError("unknown decoder configuration '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* what) {
    if (v == 0) throw ModelError(std::string("ModelConfig: ") + what + " must be at least 1");
  };
  positive(channels, "channels");
  positive(heads, "heads");
  positive(deform_points, "deform_points");
  positive(encoder_layers, "encoder_layers");
  positive(coarse_layers, "coarse_layers");
  positive(fine_layers, "fine_layers");
  positive(k_row, "k_row");
  positive(k_col, "k_col");
  if (points < 2) throw ModelError("ModelConfig: P must be at least 2");
  if (channels % heads != 0) throw ModelError("ModelConfig: channels must be divisible by heads");
  if (channels % 4 != 0) throw ModelError("ModelConfig: channels must be a multiple of 4");
  if (!(tau_row >= 0.0 && std::isfinite(tau_row)) || !(tau_col >= 0.0 && std::isfinite(tau_col))) {
    throw ModelError("ModelConfig: tau must be finite and non-negative");
  }
  if (strides != std::vector<std::size_t>{8, 16, 32}) throw ModelError("ModelConfig: strides must be 8, 16, 32");
  if (backbone_widths.size() != 4) throw ModelError("ModelConfig: need 4 backbone widths (stem + 3 stages)");
  for (auto w : backbone_widths) positive(w, "backbone width");
  if (!(proposal_base_scale > 0.0)) throw ModelError("ModelConfig: proposal scale must be positive");
  if (!(min_line_extent > 0.0)) throw ModelError("ModelConfig: min_line_extent must be positive");
  if (!(class_prior > 0.0 && class_prior < 1.0)) throw ModelError("ModelConfig: class_prior must lie in (0, 1)");
  positive(ffn_multiplier, "ffn_multiplier");
}

template <typename T>
std::vector<std::size_t> top_k_indices(std::span<const T> scores, std::size_t k) {
  if (k > scores.size()) {
    throw ModelError("cannot select " + std::to_string(k) + " queries from " + std::to_string(scores.size()) +
                     " positions");
  }
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); });
  idx.resize(k);
  return idx;
}

template <typename T>
BasicTensor<T> sample_strips(const BasicTensor<T>& lines, std::size_t points) {
  std::vector<T> m(4 * 2 * points, T(0));
  const std::size_t cols = 2 * points;
  for (std::size_t t = 1; t <= points; ++t) {
    const T a = static_cast<T>(t) / static_cast<T>(points);
    const std::size_t cx = 2 * (t - 1), cy = cx + 1;
    m[0 * cols + cx] = T(1) - a;
    m[2 * cols + cx] = a;
    m[1 * cols + cy] = T(1) - a;
    m[3 * cols + cy] = a;
  }
  return matmul(lines, BasicTensor<T>(Shape{4, cols}, std::move(m)));
}

template <typename T>
BasicTensor<T> proposal_anchors(std::span<const LevelShape> levels, Axis axis, double base_scale) {
  GeometryConfig g;
  g.proposal_base_scale = base_scale;
  std::vector<T> v;
  std::size_t rows = 0;
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const auto centers = feature_centers(levels[l].height, levels[l].width);
    for (const auto& line : make_line_proposals(static_cast<int>(l + 1), centers, axis, g)) {
      v.insert(v.end(), {static_cast<T>(line.p1.x), static_cast<T>(line.p1.y), static_cast<T>(line.p2.x),
                         static_cast<T>(line.p2.y)});
      ++rows;
    }
  }
  return BasicTensor<T>(Shape{rows, 4}, std::move(v));
}

namespace {

template <typename T>
BasicTensor<T> flatten_level(const BasicTensor<T>& x) {
  return transpose(reshape(x, Shape{x.dim(0), x.dim(1) * x.dim(2)}));
}

template <typename T>
BasicTensor<T> unflatten_level(const BasicTensor<T>& x, std::size_t h, std::size_t w) {
  return reshape(transpose(x), Shape{x.dim(1), h, w});
}

template <typename T>
struct ResBlock {
  Conv2d<T> a, b, skip;

  ResBlock(ParamSet<T>& ps, const std::string& name, std::size_t in, std::size_t out)
      : a(ps, name + ".a", in, out, 3, 2, 1),
        b(ps, name + ".b", out, out, 3, 1, 1, 0.5),
        skip(ps, name + ".skip", in, out, 1, 2, 0) {}

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return relu(add(skip(x), b(relu(a(x))))); }
};

template <typename T>
struct EncoderLayer {
  MultiheadAttention<T> attn;
  LayerNorm<T> ln1, ln2;
  Linear<T> ff1, ff2;

  EncoderLayer(ParamSet<T>& ps, const std::string& name, std::size_t c, std::size_t heads, std::size_t hidden)
      : attn(ps, name + ".attn", c, heads),
        ln1(ps, name + ".ln1", c),
        ln2(ps, name + ".ln2", c),
        ff1(ps, name + ".ff1", c, hidden),
        ff2(ps, name + ".ff2", hidden, c) {}

  BasicTensor<T> operator()(const BasicTensor<T>& x, const BasicTensor<T>& pos) const {
    auto q = add(x, pos);
    auto h = ln1(add(x, attn(q, q, x)));
    return ln2(add(h, ff2(relu(ff1(h)))));
  }
};

template <typename T>
struct Fusion {
  Conv2d<T> reduce, refine;

  Fusion(ParamSet<T>& ps, const std::string& name, std::size_t c)
      : reduce(ps, name + ".reduce", 2 * c, c, 1, 1, 0), refine(ps, name + ".refine", c, c, 3, 1, 1, 0.5) {}

  BasicTensor<T> operator()(const BasicTensor<T>& x) const {
    auto y = relu(reduce(x));
    return add(y, relu(refine(y)));
  }
};

template <typename T>
struct DecoderLayer {
  MultiheadAttention<T> self_attn;
  LayerNorm<T> ln1, ln2, ln3;
  DeformableAttention<T> cross;
  Linear<T> ff1, ff2;

  DecoderLayer(ParamSet<T>& ps, const std::string& name, const ModelConfig& cfg, std::size_t refs,
               DeformMode mode)
      : self_attn(ps, name + ".self", cfg.channels, cfg.heads),
        ln1(ps, name + ".ln1", cfg.channels),
        ln2(ps, name + ".ln2", cfg.channels),
        ln3(ps, name + ".ln3", cfg.channels),
        cross(ps, name + ".cross", {cfg.channels, cfg.heads, 3, refs, cfg.deform_points, mode, cfg.min_line_extent}),
        ff1(ps, name + ".ff1", cfg.channels, cfg.channels * cfg.ffn_multiplier),
        ff2(ps, name + ".ff2", cfg.channels * cfg.ffn_multiplier, cfg.channels) {}

  BasicTensor<T> operator()(const BasicTensor<T>& tgt, const BasicTensor<T>& pos, const BasicTensor<T>& refs,
                            const EncoderMemory<T>& memory) const {
    auto q = add(tgt, pos);
    auto h = ln1(add(tgt, self_attn(q, q, tgt)));
    h = ln2(add(h, cross(add(h, pos), refs, memory.sequence, memory.levels)));
    return ln3(add(h, ff2(relu(ff1(h)))));
  }
};

template <typename T>
Mlp<T> zero_last_mlp(ParamSet<T>& ps, const std::string& name, std::size_t c, std::size_t out) {
  Mlp<T> m(ps, name, {c, c, c, out});
  m.last().zero_weight();
  return m;
}

template <typename T>
Linear<T> class_head(ParamSet<T>& ps, const std::string& name, std::size_t c, double prior) {
  Linear<T> l(ps, name, c, 1);
  l.fill_bias(prior_bias(prior));
  return l;
}

template <typename T>
BasicTensor<T> maybe_detach(const BasicTensor<T>& x, bool detach) {
  return detach ? x.detach() : x;
}

}  // namespace

template <typename T>
struct SepFormer<T>::Impl {

  struct Coarse {
    Mlp<T> pos;
    std::vector<DecoderLayer<T>> layers;
    std::vector<Linear<T>> cls;
    std::vector<Mlp<T>> line_reg;
    std::vector<Mlp<T>> strip_reg;  // one-stage only
  };

  struct Fine {
    Mlp<T> pos;
    std::vector<DecoderLayer<T>> layers;
    std::vector<Mlp<T>> strip_reg;
  };

  struct AxisModules {
    Linear<T> score;
    Mlp<T> reg;
    Coarse coarse;
    std::optional<Fine> fine;
  };

  // backbone
  Conv2d<T> stem;
  std::vector<ResBlock<T>> stages;
  // hybrid encoder
  std::vector<Conv2d<T>> proj;
  std::vector<EncoderLayer<T>> encoder;
  std::vector<Fusion<T>> top_down, bottom_up;
  std::vector<Conv2d<T>> down;
  Linear<T> enc_out;
  LayerNorm<T> enc_ln;
  std::vector<AxisModules> axes;

  Impl(ParamSet<T>& ps, const ModelConfig& cfg) {
    const auto& w = cfg.backbone_widths;
    const std::size_t c = cfg.channels;
    stem = Conv2d<T>(ps, "backbone.stem", 3, w[0], 7, 2, 3);
    for (std::size_t i = 0; i < 3; ++i) stages.emplace_back(ps, "backbone.stage" + std::to_string(i + 1), w[i], w[i + 1]);
    for (std::size_t i = 0; i < 3; ++i) proj.emplace_back(ps, "encoder.proj" + std::to_string(i), w[i + 1], c, 1, 1, 0);
    for (std::size_t i = 0; i < cfg.encoder_layers; ++i) {
      encoder.emplace_back(ps, "encoder.aifi" + std::to_string(i), c, cfg.heads, c * cfg.ffn_multiplier);
    }
    for (std::size_t i = 0; i < 2; ++i) top_down.emplace_back(ps, "encoder.td" + std::to_string(i), c);
    for (std::size_t i = 0; i < 2; ++i) {
      down.emplace_back(ps, "encoder.down" + std::to_string(i), c, c, 3, 2, 1);
      bottom_up.emplace_back(ps, "encoder.bu" + std::to_string(i), c);
    }
    enc_out = Linear<T>(ps, "select.proj", c, c);
    enc_ln = LayerNorm<T>(ps, "select.ln", c);
    for (Axis axis : {Axis::Row, Axis::Col}) {
      const std::string a(axis_name(axis));
      AxisModules m{class_head<T>(ps, a + ".select.score", c, cfg.class_prior),
                    zero_last_mlp<T>(ps, a + ".select.reg", c, 4), Coarse{}, std::nullopt};
      if (cfg.two_stage()) {
        m.coarse.pos = Mlp<T>(ps, a + ".coarse.pos", {c, c, c});
        for (std::size_t l = 0; l < cfg.coarse_layers; ++l) {
          const std::string n = a + ".coarse" + std::to_string(l);
          m.coarse.layers.emplace_back(ps, n, cfg, 2, DeformMode::LineEndpoints);
          m.coarse.cls.push_back(class_head<T>(ps, n + ".cls", c, cfg.class_prior));
          m.coarse.line_reg.push_back(zero_last_mlp<T>(ps, n + ".reg", c, 4));
        }
        Fine f;
        f.pos = Mlp<T>(ps, a + ".fine.pos", {c, c, c});
        for (std::size_t l = 0; l < cfg.fine_layers; ++l) {
          const std::string n = a + ".fine" + std::to_string(l);
          f.layers.emplace_back(ps, n, cfg, cfg.points, DeformMode::Points);
          f.strip_reg.push_back(zero_last_mlp<T>(ps, n + ".reg", c, 2 * cfg.points));
        }
        m.fine = std::move(f);
      } else {
        m.coarse.pos = Mlp<T>(ps, a + ".onestage.pos", {c, c, c});
        for (std::size_t l = 0; l < cfg.one_stage_layers(); ++l) {
          const std::string n = a + ".onestage" + std::to_string(l);
          m.coarse.layers.emplace_back(ps, n, cfg, cfg.points, DeformMode::Points);
          m.coarse.cls.push_back(class_head<T>(ps, n + ".cls", c, cfg.class_prior));
          m.coarse.line_reg.push_back(zero_last_mlp<T>(ps, n + ".reg", c, 4));
          m.coarse.strip_reg.push_back(zero_last_mlp<T>(ps, n + ".strip", c, 2 * cfg.points));
        }
      }
      axes.push_back(std::move(m));
    }
  }

  const AxisModules& axis(Axis a) const { return axes[a == Axis::Row ? 0 : 1]; }
};

template <typename T>
SepFormer<T>::SepFormer(ModelConfig cfg) : cfg_(std::move(cfg)), params_(cfg_.init_seed) {
  cfg_.validate();
  impl_ = std::make_unique<Impl>(params_, cfg_);
}

template <typename T>
SepFormer<T>::~SepFormer() = default;
template <typename T>
SepFormer<T>::SepFormer(SepFormer&&) noexcept = default;
template <typename T>
SepFormer<T>& SepFormer<T>::operator=(SepFormer&&) noexcept = default;

template <typename T>
std::array<BasicTensor<T>, 3> SepFormer<T>::backbone_forward(const BasicTensor<T>& image) const {
  if (image.rank() != 3 || image.dim(0) != 3) throw ModelError("image must be [3, H, W], got " + shape_str(image.shape()));
  if (image.dim(1) % 32 != 0 || image.dim(2) % 32 != 0 || image.dim(1) == 0 || image.dim(2) == 0) {
    throw ModelError("image sides must be positive multiples of 32, got " + shape_str(image.shape()));
  }
  auto x = max_pool2d(relu(impl_->stem(image)), 2, 2);
  std::array<BasicTensor<T>, 3> out;
  for (std::size_t i = 0; i < 3; ++i) {
    x = impl_->stages[i](x);
    out[i] = x;
  }
  return out;
}

template <typename T>
EncoderMemory<T> SepFormer<T>::encoder_forward(const std::array<BasicTensor<T>, 3>& features) const {
  const auto& m = *impl_;
  std::array<BasicTensor<T>, 3> p;
  for (std::size_t i = 0; i < 3; ++i) p[i] = m.proj[i](features[i]);
  if (p[1].dim(1) != 2 * p[2].dim(1) || p[0].dim(1) != 2 * p[1].dim(1) || p[1].dim(2) != 2 * p[2].dim(2) ||
      p[0].dim(2) != 2 * p[1].dim(2)) {
    throw ModelError("feature levels are not consecutive powers of two");
  }
  // intra-scale interaction on the coarsest level only
  const std::size_t h4 = p[2].dim(1), w4 = p[2].dim(2);
  BasicTensor<T> pos;
  {
    NoGradGuard guard;
    std::vector<T> pts;
    for (const auto& c : feature_centers(h4, w4)) {
      pts.push_back(static_cast<T>(c.x));
      pts.push_back(static_cast<T>(c.y));
    }
    pos = sine_embed(BasicTensor<T>(Shape{h4 * w4, 2}, std::move(pts)), cfg_.channels);
  }
  auto tokens = flatten_level(p[2]);
  for (const auto& layer : m.encoder) tokens = layer(tokens, pos);
  auto f4 = unflatten_level(tokens, h4, w4);
  // cross-scale fusion, top-down then bottom-up
  auto t3 = m.top_down[0](concat_rows<T>({upsample_nearest2x(f4), p[1]}));
  auto t2 = m.top_down[1](concat_rows<T>({upsample_nearest2x(t3), p[0]}));
  auto n3 = m.bottom_up[0](concat_rows<T>({relu(m.down[0](t2)), t3}));
  auto n4 = m.bottom_up[1](concat_rows<T>({relu(m.down[1](n3)), f4}));

  EncoderMemory<T> mem;
  std::size_t offset = 0;
  for (const auto* lvl : {&t2, &n3, &n4}) {
    mem.levels.push_back({lvl->dim(1), lvl->dim(2), offset});
    offset += lvl->dim(1) * lvl->dim(2);
  }
  mem.sequence = concat_rows<T>({flatten_level(t2), flatten_level(n3), flatten_level(n4)});
  return mem;
}

template <typename T>
EncoderMemory<T> SepFormer<T>::encode(const BasicTensor<T>& image) const {
  return encoder_forward(backbone_forward(image));
}

template <typename T>
QuerySelection<T> SepFormer<T>::query_select(const EncoderMemory<T>& memory, Axis axis) const {
  const auto& am = impl_->axis(axis);
  const std::size_t s = memory.sequence.dim(0);
  const std::size_t k = cfg_.queries(axis);
  if (k > s) throw ModelError("K = " + std::to_string(k) + " exceeds sequence length " + std::to_string(s));
  auto enc = impl_->enc_ln(impl_->enc_out(memory.sequence));
  auto logits = reshape(am.score(enc), Shape{s});
  const auto pick = top_k_indices<T>(logits.data(), k);
  const std::span<const std::size_t> rows(pick);

  BasicTensor<T> anchor_logits;
  {
    NoGradGuard guard;
    auto anchors = proposal_anchors<T>(memory.levels, axis, cfg_.proposal_base_scale);
    anchor_logits = inverse_sigmoid(gather_rows(anchors, rows));
  }
  auto deltas = am.reg(gather_rows(enc, rows));
  auto z = add(anchor_logits, deltas);

  QuerySelection<T> sel;
  sel.proposals.logits = gather_rows(logits, rows);
  sel.proposals.lines = canonicalize_lines(sigmoid(z), axis == Axis::Row);
  sel.proposals.deltas = deltas;
  sel.reference_logits = maybe_detach(z, cfg_.detach_references);
  sel.content = gather_rows(memory.sequence, rows);
  sel.positions = pick;
  return sel;
}

template <typename T>
CoarseResult<T> SepFormer<T>::coarse_forward(const EncoderMemory<T>& memory, Axis axis) const {
  const auto& am = impl_->axis(axis);
  const bool by_x = axis == Axis::Row;
  const bool detach = cfg_.detach_references;
  CoarseResult<T> res;
  res.selection = query_select(memory, axis);
  auto z = res.selection.reference_logits;
  auto tgt = res.selection.content;
  const auto& st = am.coarse;

  if (cfg_.two_stage()) {
    for (std::size_t l = 0; l < st.layers.size(); ++l) {
      auto refs = canonicalize_lines(sigmoid(z), by_x);
      auto pos = st.pos(sine_embed(refs, cfg_.channels));
      tgt = st.layers[l](tgt, pos, refs, memory);
      StageOutput<T> out;
      out.deltas = st.line_reg[l](tgt);
      auto znew = add(z, out.deltas);
      out.lines = canonicalize_lines(sigmoid(znew), by_x);
      out.logits = reshape(st.cls[l](tgt), Shape{tgt.dim(0)});
      res.layers.push_back(out);
      z = maybe_detach(znew, detach);
    }
  } else {
    auto strips = maybe_detach(sample_strips(res.selection.proposals.lines, cfg_.points), detach);
    auto zs = inverse_sigmoid(strips);
    auto refs = strips;
    for (std::size_t l = 0; l < st.layers.size(); ++l) {
      auto pos = st.pos(sine_embed(refs, cfg_.channels));
      tgt = st.layers[l](tgt, pos, refs, memory);
      StageOutput<T> out;
      out.deltas = st.line_reg[l](tgt);
      auto znew = add(z, out.deltas);
      auto zsnew = add(zs, st.strip_reg[l](tgt));
      out.lines = canonicalize_lines(sigmoid(znew), by_x);
      out.strips = sigmoid(zsnew);
      out.logits = reshape(st.cls[l](tgt), Shape{tgt.dim(0)});
      res.layers.push_back(out);
      z = maybe_detach(znew, detach);
      zs = maybe_detach(zsnew, detach);
      refs = maybe_detach(out.strips, detach);
    }
  }
  res.embeddings = tgt;
  return res;
}

template <typename T>
FineResult<T> SepFormer<T>::fine_forward(const EncoderMemory<T>& memory, Axis axis, const CoarseResult<T>& coarse,
                                         std::span<const std::size_t> queries) const {
  const auto& am = impl_->axis(axis);
  if (!am.fine) throw ModelError("fine decoding requested for a one-stage model");
  FineResult<T> res;
  res.queries.assign(queries.begin(), queries.end());
  const auto& st = *am.fine;
  if (queries.empty()) {
    for (std::size_t l = 0; l < st.layers.size(); ++l) {
      res.layers.push_back({{}, {}, BasicTensor<T>::zeros(Shape{0, 2 * cfg_.points}), {}});
    }
    return res;
  }
  const bool detach = cfg_.detach_references;
  auto lines = maybe_detach(gather_rows(coarse.layers.back().lines, queries), detach);
  auto refs = sample_strips(lines, cfg_.points);
  auto zs = inverse_sigmoid(refs);
  auto tgt = gather_rows(coarse.embeddings, queries);
  for (std::size_t l = 0; l < st.layers.size(); ++l) {
    auto pos = st.pos(sine_embed(refs, cfg_.channels));
    tgt = st.layers[l](tgt, pos, refs, memory);
    StageOutput<T> out;
    out.deltas = st.strip_reg[l](tgt);
    auto zsnew = add(zs, out.deltas);
    out.strips = sigmoid(zsnew);
    res.layers.push_back(out);
    zs = maybe_detach(zsnew, detach);
    refs = maybe_detach(out.strips, detach);
  }
  return res;
}

namespace {

LineStrip strip_row(std::span<const double> v) {
  LineStrip s;
  for (std::size_t i = 0; i + 1 < v.size(); i += 2) s.points.push_back({v[i], v[i + 1]});
  return s;
}

}  // namespace

template <typename T>
Prediction SepFormer<T>::forward(const BasicTensor<T>& image, bool threshold) const {
  NoGradGuard guard;
  const auto memory = encode(image);
  Prediction pred;
  for (Axis axis : {Axis::Row, Axis::Col}) {
    const auto coarse = coarse_forward(memory, axis);
    const auto& last = coarse.layers.back();
    const std::size_t k = last.logits.numel();
    std::vector<std::size_t> keep;
    std::vector<double> scores(k);
    for (std::size_t q = 0; q < k; ++q) {
      scores[q] = 1.0 / (1.0 + std::exp(-static_cast<double>(last.logits.data()[q])));
      if (!threshold || scores[q] >= cfg_.tau(axis)) keep.push_back(q);
    }
    BasicTensor<T> strips;
    if (cfg_.two_stage()) {
      strips = fine_forward(memory, axis, coarse, keep).layers.back().strips;
    } else {
      strips = gather_rows(last.strips, std::span<const std::size_t>(keep));
    }
    auto& out = axis == Axis::Row ? pred.rows : pred.cols;
    for (std::size_t i = 0; i < keep.size(); ++i) {
      const std::size_t q = keep[i];
      const auto l = last.lines.data().subspan(4 * q, 4);
      std::vector<double> sv(2 * cfg_.points);
      for (std::size_t j = 0; j < sv.size(); ++j) sv[j] = strips.data()[i * sv.size() + j];
      ScoredSeparator s;
      s.score = scores[q];
      s.line = {{l[0], l[1]}, {l[2], l[3]}};
      s.strip = strip_row(sv);
      s.axis = axis;
      out.separators.push_back(std::move(s));
    }
  }
  return pred;
}

template <typename T>
void SepFormer<T>::save(const std::filesystem::path& path) const {
  save_checkpoint(path, params_.entries());
  std::ofstream cfg(config_path_for(path));
  if (!cfg) throw CheckpointError("cannot write config next to " + path.string());
  cfg << to_json(cfg_).dump(2) << "\n";
}

template <typename T>
void SepFormer<T>::load(const std::filesystem::path& path) {
  params_.assign(load_checkpoint<T>(path));
}

std::filesystem::path config_path_for(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p += ".json";
  return p;
}

template std::vector<std::size_t> top_k_indices<float>(std::span<const float>, std::size_t);
template std::vector<std::size_t> top_k_indices<double>(std::span<const double>, std::size_t);
template BasicTensor<float> sample_strips(const BasicTensor<float>&, std::size_t);
template BasicTensor<double> sample_strips(const BasicTensor<double>&, std::size_t);
template BasicTensor<float> proposal_anchors<float>(std::span<const LevelShape>, Axis, double);
template BasicTensor<double> proposal_anchors<double>(std::span<const LevelShape>, Axis, double);
template class SepFormer<float>;
template class SepFormer<double>;

}  // namespace sepformer
