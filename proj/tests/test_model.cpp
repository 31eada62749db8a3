#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "sepformer/attention.hpp"
#include "sepformer/model.hpp"
#include "sepformer/ops.hpp"
#include "sepformer/rng.hpp"
#include "sepformer/training.hpp"
#include "support/gradcheck.hpp"

using namespace sepformer;
using sepformer::testing::gradient_error;
using sepformer::testing::random_tensor;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.channels = 16;
  cfg.heads = 2;
  cfg.k_row = 6;
  cfg.k_col = 5;
  cfg.points = 4;
  cfg.backbone_widths = {4, 8, 8, 16};
  return cfg;
}

template <typename T>
BasicTensor<T> noise_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<T> v(3 * h * w);
  for (auto& x : v) x = static_cast<T>(rng.uniform(-1.0, 1.0));
  return BasicTensor<T>(Shape{3, h, w}, std::move(v));
}

template <typename T>
bool in_unit(const BasicTensor<T>& x) {
  return std::all_of(x.data().begin(), x.data().end(), [](T v) { return v >= T(0) && v <= T(1); });
}

template <typename T>
bool canonical_rows(const BasicTensor<T>& lines, Axis axis) {
  auto d = lines.data();
  for (std::size_t q = 0; q < lines.dim(0); ++q) {
    const std::size_t c = axis == Axis::Row ? 0 : 1;
    if (d[4 * q + c] > d[4 * q + 2 + c]) return false;
  }
  return true;
}

template <typename T>
void randomize(ParamSet<T>& ps, const std::string& needle, std::uint64_t seed, double bound) {
  Rng rng(seed);
  for (auto& [name, t] : ps.entries()) {
    if (name.find(needle) == std::string::npos) continue;
    auto tt = t;
    for (auto& v : tt.data_mut()) v = static_cast<T>(rng.uniform(-bound, bound));
  }
}

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
}

LabeledSeparator labeled(double x1, double y1, double x2, double y2, std::size_t p) {
  SingleLine l{{x1, y1}, {x2, y2}};
  return {l, sample_points(l, p)};
}

}  // namespace

TEST_CASE("backbone output strides") {
  SepFormer<float> model(small_config());
  auto f = model.backbone_forward(noise_image<float>(256, 256, 1));
  CHECK(f[0].dim(1) == 32);
  CHECK(f[0].dim(2) == 32);
  CHECK(f[1].dim(1) == 16);
  CHECK(f[2].dim(1) == 8);
  CHECK(f[2].dim(0) == 16);
  auto g = model.backbone_forward(noise_image<float>(256, 320, 2));
  CHECK(g[0].dim(2) == 40);
  CHECK(g[1].dim(2) == 20);
  CHECK(g[2].dim(2) == 10);
  CHECK_THROWS_AS(model.backbone_forward(noise_image<float>(100, 256, 3)), ModelError);
}

TEST_CASE("encoder sequence length") {
  for (std::size_t c : {8u, 16u}) {
    auto cfg = small_config();
    cfg.channels = c;
    SepFormer<float> model(cfg);
    auto mem = model.encode(Tensor::zeros({3, 256, 256}));
    CHECK(mem.sequence.dim(0) == 1344);
    CHECK(mem.sequence.dim(1) == c);
    REQUIRE(mem.levels.size() == 3);
    CHECK(mem.levels[0].offset == 0);
    CHECK(mem.levels[1].offset == 1024);
    CHECK(mem.levels[2].offset == 1280);
    CHECK(std::all_of(mem.sequence.data().begin(), mem.sequence.data().end(), [](float v) { return std::isfinite(v); }));
  }
}

TEST_CASE("top-k selection") {
  const std::vector<double> s{0.9, 0.2, 0.5, 0.1};
  CHECK(top_k_indices<double>(s, 2) == std::vector<std::size_t>{0, 2});
  CHECK(top_k_indices<double>(std::vector<double>{0.3, 0.3, 0.3}, 2) == std::vector<std::size_t>{0, 1});
  CHECK_THROWS_AS(top_k_indices<double>(s, 5), ModelError);

  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> scores(40);
    for (auto& v : scores) v = rng.uniform(0.0, 1.0);
    std::vector<std::size_t> perm(scores.size());
    std::iota(perm.begin(), perm.end(), 0);
    shuffle(perm, rng);
    std::vector<double> permuted(scores.size());
    for (std::size_t i = 0; i < perm.size(); ++i) permuted[i] = scores[perm[i]];
    auto a = top_k_indices<double>(scores, 7);
    auto b = top_k_indices<double>(permuted, 7);
    for (auto& i : b) i = perm[i];
    CHECK(a == b);
  }
}

TEST_CASE("query selection is stable under memory permutation") {
  auto cfg = small_config();
  SepFormer<double> model(cfg);
  auto mem = model.encode(noise_image<double>(64, 64, 4));
  const std::size_t s = mem.sequence.dim(0);
  auto sel = model.query_select(mem, Axis::Row);
  // permuting M permutes the scores the same way; the selected embeddings follow
  std::vector<std::size_t> perm(s);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(5);
  shuffle(perm, rng);
  auto permuted = mem;
  permuted.sequence = gather_rows(mem.sequence, std::span<const std::size_t>(perm));
  auto psel = model.query_select(permuted, Axis::Row);
  for (std::size_t q = 0; q < cfg.k_row; ++q) CHECK(perm[psel.positions[q]] == sel.positions[q]);
  CHECK(std::equal(sel.content.data().begin(), sel.content.data().end(), psel.content.data().begin()));
}

TEST_CASE("query selection and coarse decoding") {
  auto cfg = small_config();
  SepFormer<double> model(cfg);
  auto mem = model.encode(noise_image<double>(64, 96, 6));
  for (Axis axis : {Axis::Row, Axis::Col}) {
    auto coarse = model.coarse_forward(mem, axis);
    const auto& p = coarse.selection.proposals;
    CHECK(p.lines.dim(0) == cfg.queries(axis));
    CHECK(in_unit(p.lines));
    CHECK(canonical_rows(p.lines, axis));
    REQUIRE(coarse.layers.size() == 3);
    for (const auto& l : coarse.layers) {
      CHECK(l.logits.numel() == cfg.queries(axis));
      CHECK(in_unit(l.lines));
      CHECK(canonical_rows(l.lines, axis));
      // freshly initialised regression heads emit zero deltas
      CHECK(std::equal(l.lines.data().begin(), l.lines.data().end(), p.lines.data().begin()));
    }
    std::vector<std::size_t> all(cfg.queries(axis));
    std::iota(all.begin(), all.end(), 0);
    auto fine = model.fine_forward(mem, axis, coarse, all);
    REQUIRE(fine.layers.size() == 3);
    auto expect = sample_strips(coarse.layers.back().lines, cfg.points);
    for (const auto& l : fine.layers) {
      CHECK(l.strips.dim(1) == 2 * cfg.points);
      CHECK(in_unit(l.strips));
      for (std::size_t i = 0; i < expect.numel(); ++i) CHECK(l.strips.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-9));
    }
    auto none = model.fine_forward(mem, axis, coarse, {});
    CHECK(none.layers.back().strips.dim(0) == 0);
  }
}

TEST_CASE("refinement telescopes") {
  auto cfg = small_config();
  cfg.proposal_base_scale = 0.2;
  SepFormer<double> model(cfg);
  randomize(model.params(), ".reg.", 21, 0.3);
  auto mem = model.encode(noise_image<double>(64, 64, 7));
  for (Axis axis : {Axis::Row, Axis::Col}) {
    auto coarse = model.coarse_forward(mem, axis);
    auto anchors = proposal_anchors<double>(mem.levels, axis, cfg.proposal_base_scale);
    auto z = inverse_sigmoid(gather_rows(anchors, std::span<const std::size_t>(coarse.selection.positions)));
    z = add(z, coarse.selection.proposals.deltas);
    for (const auto& l : coarse.layers) z = add(z, l.deltas);
    auto expect = canonicalize_lines(sigmoid(z), axis == Axis::Row);
    const auto& got = coarse.layers.back().lines;
    CHECK(std::equal(got.data().begin(), got.data().end(), expect.data().begin()));
    // the deltas did move the lines
    CHECK_FALSE(std::equal(got.data().begin(), got.data().end(), coarse.selection.proposals.lines.data().begin()));
    CHECK(in_unit(got));
  }
}

TEST_CASE("forward output sizes, determinism and checkpoint round trip") {
  auto cfg = small_config();
  SepFormer<float> model(cfg);
  randomize(model.params(), ".reg.", 3, 0.2);
  const auto image = noise_image<float>(64, 64, 8);
  auto a = model.forward(image, false);
  CHECK(a.rows.separators.size() == cfg.k_row);
  CHECK(a.cols.separators.size() == cfg.k_col);
  for (const auto* side : {&a.rows, &a.cols}) {
    for (const auto& s : side->separators) {
      REQUIRE(s.strip);
      CHECK(s.strip->size() == cfg.points);
      for (const auto& pt : s.strip->points) CHECK((pt.x >= 0 && pt.x <= 1 && pt.y >= 0 && pt.y <= 1));
    }
  }
  auto b = model.forward(image, false);
  auto same = [](const Prediction& x, const Prediction& y) {
    auto eq = [](const AxisPrediction& p, const AxisPrediction& q) {
      if (p.separators.size() != q.separators.size()) return false;
      for (std::size_t i = 0; i < p.separators.size(); ++i) {
        const auto &s = p.separators[i], &t = q.separators[i];
        if (s.score != t.score || !(s.line == t.line) || !(s.strip == t.strip)) return false;
      }
      return true;
    };
    return eq(x.rows, y.rows) && eq(x.cols, y.cols);
  };
  CHECK(same(a, b));

  const auto dir = std::filesystem::temp_directory_path() / "sepformer_model_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "model.ckpt";
  model.save(path);
  CHECK(std::filesystem::exists(config_path_for(path)));
  auto other_cfg = cfg;
  other_cfg.init_seed = 99;
  SepFormer<float> other(other_cfg);
  CHECK_FALSE(same(other.forward(image, false), a));
  other.load(path);
  CHECK(same(other.forward(image, false), a));
  std::filesystem::remove_all(dir);

  // a threshold nothing can reach leaves no separators
  auto strict = cfg;
  strict.tau_row = 0.999999;
  strict.tau_col = 0.999999;
  SepFormer<float> thresholded(strict);
  auto t = thresholded.forward(image, true);
  CHECK(t.rows.separators.empty());
  CHECK(t.cols.separators.empty());
}

TEST_CASE("one-stage decoders") {
  for (auto stages : {DecoderStages::OneStage3Layer, DecoderStages::OneStage6Layer}) {
    auto cfg = small_config();
    cfg.decoder_stages = stages;
    SepFormer<double> model(cfg);
    auto mem = model.encode(noise_image<double>(64, 64, 9));
    auto coarse = model.coarse_forward(mem, Axis::Col);
    CHECK(coarse.layers.size() == cfg.one_stage_layers());
    for (const auto& l : coarse.layers) {
      REQUIRE(l.strips.defined());
      CHECK(l.strips.dim(1) == 2 * cfg.points);
      CHECK(in_unit(l.strips));
    }
    CHECK_THROWS_AS(model.fine_forward(mem, Axis::Col, coarse, {}), ModelError);
    auto pred = model.forward(noise_image<double>(64, 64, 9), false);
    CHECK(pred.cols.separators.size() == cfg.k_col);
  }
  CHECK(parse_decoder_stages("one-stage-6") == DecoderStages::OneStage6Layer);
  CHECK(decoder_stages_name(DecoderStages::TwoStage3Layer) == "two-stage");
  CHECK_THROWS_AS(parse_decoder_stages("three-stage"), ModelError);
}

TEST_CASE("config validation") {
  auto cfg = small_config();
  cfg.heads = 3;
  CHECK_THROWS_AS(SepFormer<float>{cfg}, ModelError);
  cfg = small_config();
  cfg.tau_row = -0.5;
  CHECK_THROWS_AS(SepFormer<float>{cfg}, ModelError);
  cfg.tau_row = std::nan("");
  CHECK_THROWS_AS(SepFormer<float>{cfg}, ModelError);
  cfg.tau_row = 1.01;
  CHECK(SepFormer<float>{cfg}.forward(noise_image<float>(32, 32, 1)).rows.separators.empty());
  cfg = small_config();
  cfg.k_row = 0;
  CHECK_THROWS_AS(SepFormer<float>{cfg}, ModelError);
  cfg = small_config();
  cfg.k_row = 100;
  SepFormer<float> model(cfg);
  CHECK_THROWS_AS(model.forward(noise_image<float>(32, 32, 1)), ModelError);
}

namespace {

// true when no sample sits within 1e-3 pixels of a lattice line
bool off_lattice(const TensorD& loc, const std::vector<LevelShape>& levels, std::size_t per_level) {
  const std::size_t groups = loc.dim(1) / 2;
  for (std::size_t q = 0; q < loc.dim(0); ++q) {
    for (std::size_t g = 0; g < groups; ++g) {
      const auto& lv = levels[(g / per_level) % levels.size()];
      const double px = loc.data()[q * loc.dim(1) + 2 * g] * lv.width - 0.5;
      const double py = loc.data()[q * loc.dim(1) + 2 * g + 1] * lv.height - 0.5;
      if (std::abs(px - std::round(px)) < 1e-3 || std::abs(py - std::round(py)) < 1e-3) return false;
    }
  }
  return true;
}

TensorD unflatten(const TensorD& seq, std::size_t h, std::size_t w) {
  return reshape(transpose(seq), Shape{seq.dim(1), h, w});
}

}  // namespace

TEST_CASE("deformable attention reduces to a projected bilinear sample") {
  Rng rng(31);
  ParamSet<double> ps(4);
  DeformConfig dc{8, 1, 1, 1, 1, DeformMode::Points, 0.05};
  DeformableAttention<double> attn(ps, "a", dc);
  for (auto& v : attn.offsets().b.data_mut()) v = 0.0;
  const std::vector<LevelShape> levels{{5, 7, 0}};
  auto memory = random_tensor(rng, {35, 8}, -1, 1, false);
  auto query = random_tensor(rng, {3, 8}, -1, 1, false);
  auto refs = random_tensor(rng, {3, 2}, 0, 1, false);
  auto got = attn(query, refs, memory, levels);
  auto value = unflatten(attn.value_proj()(memory), 5, 7);
  auto expect = attn.out_proj()(bilinear_sample(value, refs));
  for (std::size_t i = 0; i < expect.numel(); ++i) CHECK(got.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-12));
}

TEST_CASE("deformable attention with zero offsets averages samples at the references") {
  Rng rng(32);
  ParamSet<double> ps(5);
  const std::size_t c = 8, heads = 2;
  DeformConfig dc{c, heads, 3, 2, 4, DeformMode::LineEndpoints, 0.05};
  DeformableAttention<double> attn(ps, "a", dc);
  for (auto& v : attn.offsets().b.data_mut()) v = 0.0;
  const std::vector<LevelShape> levels{{8, 8, 0}, {4, 4, 64}, {2, 2, 80}};
  auto memory = random_tensor(rng, {84, c}, -1, 1, false);
  auto query = random_tensor(rng, {4, c}, -1, 1, false);
  auto refs = random_tensor(rng, {4, 4}, 0, 1, false);
  auto got = attn(query, refs, memory, levels);

  auto value = attn.value_proj()(memory);
  std::vector<TensorD> ends{slice_cols(refs, 0, 2), slice_cols(refs, 2, 2)};
  TensorD acc = TensorD::zeros({4, c});
  for (const auto& lv : levels) {
    std::vector<std::size_t> rows(lv.height * lv.width);
    std::iota(rows.begin(), rows.end(), lv.offset);
    auto feat = unflatten(gather_rows(value, std::span<const std::size_t>(rows)), lv.height, lv.width);
    for (const auto& e : ends) acc = add(acc, bilinear_sample(feat, e));
  }
  // with every weight equal each head's channels take the plain mean
  auto expect = attn.out_proj()(scale(acc, 1.0 / 6.0));
  for (std::size_t i = 0; i < expect.numel(); ++i) CHECK(got.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-12));
}

TEST_CASE("deformable attention reference gradients") {
  for (auto mode : {DeformMode::LineEndpoints, DeformMode::Points}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(100 + seed);
      ParamSet<double> ps(seed);
      DeformConfig dc{8, 2, 3, 2, 2, mode, 0.05};
      DeformableAttention<double> attn(ps, "a", dc);
      randomize(ps, ".offsets", seed, 0.3);
      randomize(ps, ".weights", seed + 1, 0.5);
      const std::vector<LevelShape> levels{{6, 5, 0}, {3, 3, 30}, {2, 1, 39}};
      auto memory = random_tensor(rng, {41, 8}, -1, 1, false);
      auto query = random_tensor(rng, {3, 8}, -1, 1, false);
      // endpoints kept apart so the extent clamp stays inactive, and every
      // sample kept off the bilinear lattice where the interpolant has kinks
      TensorD refs;
      do {
        std::vector<double> r;
        for (int q = 0; q < 3; ++q) {
          const double x = rng.uniform(0.1, 0.4), y = rng.uniform(0.1, 0.4);
          r.insert(r.end(), {x, y, x + rng.uniform(0.2, 0.5), y + rng.uniform(0.2, 0.5)});
        }
        refs = TensorD({3, 4}, r);
      } while (!off_lattice(attn.locations(query, refs, levels), levels, 2 * 2));
      const double err = gradient_error(
          [&](const std::vector<TensorD>& in) {
            return sepformer::testing::project(attn(in[1], in[0], in[2], levels), seed);
          },
          {refs, query, memory});
      INFO("seed ", seed, " mode ", static_cast<int>(mode));
      CHECK(err <= 1e-6);
    }
  }
}

TEST_CASE("end-to-end loss gradient matches finite differences") {
  ModelConfig cfg;
  cfg.channels = 8;
  cfg.heads = 2;
  cfg.deform_points = 2;
  cfg.k_row = 3;
  cfg.k_col = 3;
  cfg.points = 4;
  cfg.backbone_widths = {4, 4, 8, 8};
  cfg.detach_references = false;
  cfg.proposal_base_scale = 0.2;
  const auto image = noise_image<double>(32, 32, 12);
  SeparatorTargets targets;
  targets.rows = {labeled(0.05, 0.3, 0.9, 0.35, cfg.points), labeled(0.1, 0.7, 0.95, 0.65, cfg.points)};
  targets.cols = {labeled(0.4, 0.05, 0.45, 0.9, cfg.points), labeled(0.8, 0.1, 0.75, 0.95, cfg.points)};

  for (auto stages : {DecoderStages::TwoStage3Layer, DecoderStages::OneStage3Layer}) {
    for (bool ls : {false, true}) {
      cfg.decoder_stages = stages;
      SepFormer<double> model(cfg);
      // move the zero-initialised heads off their special point
      randomize(model.params(), ".reg.2.w", 41, 0.05);
      randomize(model.params(), ".strip.2.w", 42, 0.05);
      MatchConfig mc;
      mc.use_strip = ls;
      LossConfig lc;
      auto loss = [&](const std::vector<TensorD>&) { return sample_loss(model, image, targets, lc, mc).total; };
      // key biases shift every logit of a query equally, so their gradient is
      // exactly zero and central differences return rounding noise
      const double err = gradient_error(loss, model.params().tensors(), 1e-5, 1e-6);
      INFO(decoder_stages_name(stages), " ls-match ", ls);
      CHECK(err <= 1e-3);
    }
  }
}
