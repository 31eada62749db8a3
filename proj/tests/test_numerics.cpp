#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "sepformer/checkpoint.hpp"
#include "sepformer/ops.hpp"
#include "sepformer/optim.hpp"
#include "sepformer/rng.hpp"
#include "support/gradcheck.hpp"

using namespace sepformer;
using sepformer::testing::random_tensor;

namespace {

void check_close(std::span<const double> got, std::initializer_list<double> want, double tol = 1e-12) {
  REQUIRE(got.size() == want.size());
  std::size_t i = 0;
  for (double w : want) CHECK(got[i++] == doctest::Approx(w).epsilon(tol));
}

}  // namespace

TEST_CASE("tensor construction validates shape and values") {
  CHECK_THROWS_AS(TensorD({2, 2}, {1, 2, 3}), NumericError);
  CHECK_THROWS_AS(TensorD({1}, {std::nan("")}), NumericError);
  auto t = TensorD::zeros({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.dim(1) == 3);
}

TEST_CASE("non-finite op results are rejected") {
  TensorD a({2}, {1.0, 1.0});
  TensorD b({2}, {0.0, 1.0});
  CHECK_THROWS_AS(div(a, b), NumericError);
  CHECK_THROWS_AS(log(TensorD({1}, {0.0})), NumericError);
}

TEST_CASE("matmul examples") {
  Rng rng(1);
  TensorD eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto b = random_tensor(rng, {3, 4}, -1, 1, false);
  auto p = matmul(eye, b);
  for (std::size_t i = 0; i < b.numel(); ++i) CHECK(p.data()[i] == b.data()[i]);

  TensorD m({2, 2}, {1, 2, 3, 4});
  TensorD ones({2, 1}, {1, 1});
  auto r = matmul(m, ones);
  CHECK(r.shape() == Shape{2, 1});
  check_close(r.data(), {3, 7});
  CHECK_THROWS_AS(matmul(m, TensorD::zeros({3, 1})), NumericError);
}

TEST_CASE("matmul gradient on a 4x5 by 5x2 product") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    auto a = random_tensor(rng, {4, 5});
    auto b = random_tensor(rng, {5, 2});
    const double err = sepformer::testing::gradient_error(
        [&](const std::vector<TensorD>& in) { return sepformer::testing::project(matmul(in[0], in[1]), seed); },
        {a, b});
    CHECK(err <= 1e-6);
  }
}

TEST_CASE("bilinear sampling on lattice nodes and midpoints") {
  // 1 channel, 2x2 lattice: top row 0,0, bottom row 4,4
  TensorD feat({1, 2, 2}, {0, 0, 4, 4});
  TensorD node({1, 2}, {0.75, 0.75});
  CHECK(bilinear_sample(feat, node).item() == 4.0);
  TensorD node2({1, 2}, {0.25, 0.25});
  CHECK(bilinear_sample(feat, node2).item() == 0.0);
  TensorD center({1, 2}, {0.5, 0.5});
  CHECK(bilinear_sample(feat, center).item() == doctest::Approx(2.0));

  // border clamp: beyond the outermost node returns the border value
  TensorD outside({2, 2}, {0.0, 1.0, 1.0, 0.0});
  auto out = bilinear_sample(feat, outside);
  CHECK(out.at(0, 0) == 4.0);
  CHECK(out.at(1, 0) == 0.0);

  auto empty = bilinear_sample(feat, TensorD::zeros({0, 2}));
  CHECK(empty.numel() == 0);
}

TEST_CASE("bilinear sampling gradients, feature and points") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto f = random_tensor(rng, {2, 4, 5});
    auto p = random_tensor(rng, {6, 2}, 0.15, 0.85);
    const double err = sepformer::testing::gradient_error(
        [&](const std::vector<TensorD>& in) { return sepformer::testing::project(bilinear_sample(in[0], in[1]), seed); },
        {f, p});
    CHECK(err <= 1e-5);
  }
}

TEST_CASE("softmax, sigmoid and conv2d examples") {
  auto s = softmax(TensorD({3}, {0, 0, 0}), 0);
  check_close(s.data(), {1.0 / 3, 1.0 / 3, 1.0 / 3});
  CHECK(sigmoid(TensorD::scalar(0.0)).item() == 0.5);

  auto x = TensorD::full({1, 3, 3}, 1.0);
  auto w = TensorD::full({1, 1, 1, 1}, 2.0);
  auto y = conv2d(x, w, TensorD(), 1, 0);
  CHECK(y.shape() == Shape{1, 3, 3});
  for (double v : y.data()) CHECK(v == 2.0);

  CHECK_THROWS_AS(softmax(TensorD::zeros({2, 2}), 2), NumericError);
  CHECK_THROWS_AS(inverse_sigmoid(TensorD::scalar(0.5), 0.0), NumericError);
  CHECK_THROWS_AS(inverse_sigmoid(TensorD::scalar(0.5), -1.0), NumericError);
}

TEST_CASE("softmax rows form a simplex") {
  Rng rng(3);
  auto x = random_tensor(rng, {6, 9}, -10, 10, false);
  auto s = softmax(x, 1);
  for (std::size_t r = 0; r < 6; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < 9; ++c) {
      CHECK(s.at(r, c) >= 0.0);
      total += s.at(r, c);
    }
    CHECK(std::abs(total - 1.0) <= 1e-6);
  }
}

TEST_CASE("inverse_sigmoid undoes sigmoid on [-8, 8]") {
  std::vector<double> xs;
  for (int i = -80; i <= 80; ++i) xs.push_back(i / 10.0);
  const std::size_t n = xs.size();
  auto back = inverse_sigmoid(sigmoid(TensorD({n}, xs)), 1e-5);
  for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(back.data()[i] - xs[i]) <= 1e-5);

  std::vector<float> xf(xs.begin(), xs.end());
  auto backf = inverse_sigmoid(sigmoid(Tensor({n}, xf)), 1e-5f);
  for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(backf.data()[i] - xf[i]) <= 2e-3f);
}

TEST_CASE("layer_norm output statistics before gain and bias") {
  Rng rng(11);
  auto x = random_tensor(rng, {8, 16}, -5, 5, false);
  auto y = layer_norm(x, TensorD::full({16}, 1.0), TensorD::zeros({16}));
  for (std::size_t r = 0; r < 8; ++r) {
    double mu = 0.0, var = 0.0;
    for (std::size_t c = 0; c < 16; ++c) mu += y.at(r, c);
    mu /= 16;
    for (std::size_t c = 0; c < 16; ++c) var += (y.at(r, c) - mu) * (y.at(r, c) - mu);
    var /= 16;
    CHECK(std::abs(mu) <= 1e-6);
    CHECK(std::abs(var - 1.0) <= 1e-5);
  }
}

TEST_CASE("forward ops are bit-identical on repeat") {
  Rng rng(5);
  auto x = random_tensor(rng, {3, 8, 8}, -1, 1, false);
  auto w = random_tensor(rng, {4, 3, 3, 3}, -1, 1, false);
  auto a = conv2d(x, w, TensorD(), 2, 1);
  auto b = conv2d(x, w, TensorD(), 2, 1);
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST_CASE("every differentiable op matches central differences") {
  for (const auto& c : sepformer::testing::op_gradient_cases()) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const double err = c.run(1000 + seed);
      INFO(c.name, " seed ", seed, " rel-err ", err);
      CHECK(err <= 1e-4);
    }
  }
}

TEST_CASE("adam examples") {
  SUBCASE("zero gradients leave parameters unchanged") {
    std::vector<double> w{0.3, -1.2};
    std::vector<double> g{0.0, 0.0};
    AdamState<double> st;
    adam_step<double>(w, g, st, 0.1, AdamConfig{});
    CHECK(w[0] == 0.3);
    CHECK(w[1] == -1.2);
  }
  SUBCASE("one step on w^2 descends") {
    std::vector<double> w{1.0};
    AdamState<double> st;
    std::vector<double> g{2.0 * w[0]};
    adam_step<double>(w, g, st, 0.1, AdamConfig{});
    CHECK(w[0] < 1.0);
  }
  SUBCASE("200 steps on a 2-D quadratic reach the minimum") {
    TensorD w({2}, {1.5, -2.0}, true);
    Adam<double> opt({w}, AdamConfig{});
    for (int i = 0; i < 200; ++i) {
      opt.zero_grad();
      auto loss = sum(mul(TensorD({2}, {1.0, 3.0}), square(w)));
      loss.backward();
      opt.step(0.05);
    }
    CHECK(std::hypot(w.data()[0], w.data()[1]) < 1e-2);
  }
  SUBCASE("NaN gradient aborts before any write") {
    std::vector<double> w{1.0, 2.0};
    std::vector<double> g{0.5, std::nan("")};
    AdamState<double> st;
    CHECK_THROWS_AS(adam_step<double>(w, g, st, 0.1, AdamConfig{}), NumericError);
    CHECK(w[0] == 1.0);
    CHECK(st.step == 0);
  }
}

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(3e-5, 0, 100) == doctest::Approx(3e-5));
  const double half = cosine_lr(3e-5, 50, 100);
  CHECK(half == doctest::Approx(3e-5 * std::pow(std::cos(M_PI / 4), 2)));
  CHECK(cosine_lr(3e-5, 100, 100) == doctest::Approx(0.0));
}

TEST_CASE("random source determinism") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  // fixed by the engine definition
  Rng c(5489);
  CHECK(c.next_u64() == 14514284786278117030ull);
  CHECK(Rng::mix_seed(1, 2) != Rng::mix_seed(2, 1));
}

TEST_CASE("checkpoint byte layout and round trip") {
  NamedTensors<float> entries{{"w", Tensor({2}, {1.0f, -2.0f})}};
  auto bytes = encode_checkpoint(entries);
  const std::vector<std::uint8_t> want{'S', 'E', 'P', 'F', 1, 0, 0, 0, 1, 0, 0, 0,  // magic, version, count
                                       1, 0, 0, 0, 'w',                             // name
                                       0, 0, 0, 0,                                  // dtype f32
                                       1, 0, 0, 0, 2, 0, 0, 0,                      // rank, dims
                                       0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0};
  CHECK(bytes == want);

  auto path = std::filesystem::temp_directory_path() / "sepformer_ckpt_test.bin";
  Rng rng(9);
  NamedTensors<float> many;
  for (int i = 0; i < 3; ++i) {
    std::vector<float> v(12);
    for (auto& e : v) e = static_cast<float>(rng.normal());
    many.push_back({"t" + std::to_string(i), Tensor({3, 4}, v)});
  }
  save_checkpoint(path, many);
  auto loaded = load_checkpoint<float>(path);
  REQUIRE(loaded.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(loaded[i].first == many[i].first);
    CHECK(loaded[i].second.shape() == many[i].second.shape());
    CHECK(std::equal(loaded[i].second.data().begin(), loaded[i].second.data().end(),
                     many[i].second.data().begin()));
  }
  std::filesystem::remove(path);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint<float>(bad), CheckpointError);
  bytes.pop_back();
  CHECK_THROWS_AS(decode_checkpoint<float>(bytes), CheckpointError);
}
