#include <cmath>

#include <doctest.h>

#include "betaprune/rng.hpp"
#include "betaprune/tensor.hpp"
#include "oracles/oracles.hpp"

using namespace betaprune;

namespace {

Tensor rand_tensor(Rng& rng, Shape shape, double lo = -2.0, double hi = 2.0) {
  std::vector<float> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return Tensor::from(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("conv2d hand examples") {
  Tensor x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor k = Tensor::from({1, 1, 2, 2}, {1, 0, 0, 1});
  Tensor y = conv2d(x, k, Tensor::zeros({1}), 1, 0);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.data()[0] == doctest::Approx(5.0f));  // diagonal sum

  Tensor zero_k = Tensor::zeros({3, 1, 2, 2});
  Tensor b = Tensor::from({3}, {0.5f, -1.0f, 2.0f});
  Tensor c = conv2d(x, zero_k, b, 1, 0);
  for (int o = 0; o < 3; ++o) CHECK(c.data()[static_cast<size_t>(o)] == b.data()[static_cast<size_t>(o)]);
}

TEST_CASE("conv2d matches the naive-loop oracle bitwise") {
  Rng rng(11);
  Tensor x = rand_tensor(rng, {1, 2, 5, 5});
  Tensor k = rand_tensor(rng, {3, 2, 3, 3});
  Tensor b = rand_tensor(rng, {3});
  Tensor y = conv2d(x, k, b, 2, 1);
  const auto want = oracle::conv2d(x.data(), 1, 2, 5, 5, k.data(), 3, 3, 3, b.data(), 2, 1);
  CHECK(y.shape() == Shape{1, 3, 3, 3});
  REQUIRE(want.size() == y.data().size());
  for (size_t i = 0; i < want.size(); ++i) CHECK(y.data()[i] == want[i]);
}

TEST_CASE("conv2d agrees with its explicit matrix on all shapes H,W <= 6") {
  Rng rng(12);
  for (int h = 1; h <= 6; ++h) {
    for (int w = 1; w <= 6; ++w) {
      for (int stride = 1; stride <= 2; ++stride) {
        for (int pad = 0; pad <= 1; ++pad) {
          const int kh = std::min(h + 2 * pad, 3);
          const int kw = std::min(w + 2 * pad, 3);
          if (h + 2 * pad < kh || w + 2 * pad < kw) continue;
          Tensor x = rand_tensor(rng, {1, 2, h, w});
          Tensor k = rand_tensor(rng, {2, 2, kh, kw});
          Tensor y = conv2d(x, k, Tensor::zeros({2}), stride, pad);
          int rows = 0, cols = 0;
          const auto m = oracle::conv2d_matrix(2, h, w, k.data(), 2, kh, kw, stride, pad,
                                               rows, cols);
          REQUIRE(rows == y.numel());
          for (int r = 0; r < rows; ++r) {
            double acc = 0.0;
            for (int c = 0; c < cols; ++c) {
              acc += m[static_cast<size_t>(r) * cols + c] * static_cast<double>(x.data()[c]);
            }
            CHECK(std::fabs(acc - static_cast<double>(y.data()[r])) < 1e-5);
          }
        }
      }
    }
  }
}

TEST_CASE("conv2d shape errors name both shapes") {
  Tensor x = Tensor::zeros({1, 2, 4, 4});
  Tensor k = Tensor::zeros({1, 3, 2, 2});  // wrong input channels
  CHECK_THROWS_WITH_AS(conv2d(x, k, Tensor::zeros({1}), 1, 0),
                       doctest::Contains("[1x2x4x4]"), Error);
  // output dims would be empty
  Tensor k2 = Tensor::zeros({1, 2, 5, 5});
  CHECK_THROWS_AS(conv2d(x, k2, Tensor::zeros({1}), 1, 0), Error);
}

TEST_CASE("conv2d_transpose hand examples") {
  Tensor x = Tensor::from({1, 1, 1, 1}, {2.0f});
  Tensor k = Tensor::full({1, 1, 2, 2}, 1.0f);
  Tensor y = conv2d_transpose(x, k, Tensor::zeros({1}), 1, 0);
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  for (float v : y.data()) CHECK(v == doctest::Approx(2.0f));

  Tensor zeros_in = Tensor::zeros({1, 2, 3, 3});
  Tensor k2 = Tensor::full({2, 3, 2, 2}, 0.25f);
  Tensor b = Tensor::from({3}, {1.0f, -2.0f, 0.5f});
  Tensor y2 = conv2d_transpose(zeros_in, k2, b, 2, 0);
  CHECK(y2.shape() == Shape{1, 3, 6, 6});
  for (int o = 0; o < 3; ++o) {
    for (int p = 0; p < 36; ++p) {
      CHECK(y2.data()[static_cast<size_t>(o) * 36 + p] == b.data()[static_cast<size_t>(o)]);
    }
  }
}

TEST_CASE("conv2d_transpose matches the transposed conv matrix") {
  Rng rng(13);
  // shapes where the strided conv maps exactly: H = (OH−1)·s − 2p + k
  struct Geo { int ci, co, k, stride, pad, oh; };
  for (const Geo g : {Geo{1, 2, 3, 1, 1, 4}, Geo{2, 1, 2, 2, 0, 3}, Geo{2, 2, 4, 2, 1, 3}}) {
    const int h = (g.oh - 1) * g.stride - 2 * g.pad + g.k;
    Tensor k = rand_tensor(rng, {g.co, g.ci, g.k, g.k});
    int rows = 0, cols = 0;
    const auto m = oracle::conv2d_matrix(g.ci, h, h, k.data(), g.co, g.k, g.k, g.stride, g.pad,
                                         rows, cols);
    Tensor u = rand_tensor(rng, {1, g.co, g.oh, g.oh});
    REQUIRE(rows == u.numel());
    Tensor got = conv2d_transpose(u, Tensor::from({g.co, g.ci, g.k, g.k}, k.data()),
                                  Tensor::zeros({g.ci}), g.stride, g.pad);
    REQUIRE(got.numel() == cols);
    for (int c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (int r = 0; r < rows; ++r) {
        acc += m[static_cast<size_t>(r) * cols + c] * static_cast<double>(u.data()[r]);
      }
      CHECK(std::fabs(acc - static_cast<double>(got.data()[c])) < 1e-5);
    }
  }
}

TEST_CASE("affine examples and oracle") {
  Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor y = affine(x, eye, Tensor::zeros({3}));
  CHECK(y.data() == x.data());

  Tensor b = Tensor::from({4}, {1, 2, 3, 4});
  Tensor y2 = affine(x, Tensor::zeros({3, 4}), b);
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 4; ++c) {
      CHECK(y2.data()[static_cast<size_t>(r) * 4 + c] == b.data()[static_cast<size_t>(c)]);
    }
  }

  Rng rng(14);
  Tensor a = rand_tensor(rng, {2, 3});
  Tensor w = rand_tensor(rng, {3, 4});
  Tensor bias = rand_tensor(rng, {4});
  Tensor got = affine(a, w, bias);
  const auto want = oracle::matmul(a.data(), 2, 3, w.data(), 4, bias.data());
  for (size_t i = 0; i < want.size(); ++i) CHECK(got.data()[i] == doctest::Approx(want[i]));

  CHECK_THROWS_AS(affine(a, Tensor::zeros({5, 2}), Tensor::zeros({2})), Error);
}

TEST_CASE("elementwise examples") {
  Tensor t = Tensor::from({3}, {-1, 0, 2});
  Tensor r = relu(t);
  CHECK(r.data() == std::vector<float>{0, 0, 2});

  CHECK(sigmoid(Tensor::from({1}, {0})).data()[0] == doctest::Approx(0.5f));

  Tensor a = Tensor::from({2}, {1, 2});
  Tensor bad = Tensor::from({3}, {1, 2, 3});
  CHECK_THROWS_AS(add(a, bad), Error);
  CHECK_THROWS_AS(mul(a, bad), Error);

  // scalar broadcast is the only broadcast
  Tensor s = add(a, Tensor::scalar(10.0f));
  CHECK(s.data() == std::vector<float>{11, 12});
  Tensor p = mul(Tensor::scalar(2.0f), a);
  CHECK(p.data() == std::vector<float>{2, 4});
}

TEST_CASE("exp gradient equals exp value under finite differences") {
  Rng rng(15);
  for (int c = 0; c < 20; ++c) {
    Tensor at = rand_tensor(rng, {5});
    const double err = finite_difference_check(
        [](const Tensor& t) { return sum(exp(t)); }, at, 1e-3);
    CHECK(err < 1e-3);
  }
}

TEST_CASE("log_softmax examples") {
  Tensor t = Tensor::zeros({4});
  Tensor y = log_softmax(t, 0);
  for (float v : y.data()) CHECK(v == doctest::Approx(-std::log(4.0f)));

  Rng rng(16);
  for (int c = 0; c < 50; ++c) {
    Tensor logits = rand_tensor(rng, {3, 7}, -50.0, 50.0);
    Tensor ls = log_softmax(logits, 1);
    for (int r = 0; r < 3; ++r) {
      double s = 0.0;
      for (int j = 0; j < 7; ++j) {
        s += std::exp(static_cast<double>(ls.data()[static_cast<size_t>(r) * 7 + j]));
      }
      CHECK(std::fabs(s - 1.0) < 1e-6);
    }
  }

  Tensor extreme = log_softmax(Tensor::from({2}, {1000.0f, 0.0f}), 0);
  for (float v : extreme.data()) CHECK(std::isfinite(v));

  CHECK_THROWS_AS(log_softmax(Tensor::zeros({2, 2}), 2), Error);
}

TEST_CASE("backward basics") {
  Tensor w = Tensor::from({4}, {1, -2, 3, 0.5f}, true);
  backward(sum(w));
  for (float g : w.grad()) CHECK(g == doctest::Approx(1.0f));

  Tensor w2 = Tensor::from({4}, {1, -2, 3, 0.5f}, true);
  backward(sum(mul(w2, w2)));
  for (size_t i = 0; i < 4; ++i) CHECK(w2.grad()[i] == doctest::Approx(2.0f * w2.data()[i]));

  // fan-out: f = sum(w) + sum(w∘w) → grad = 1 + 2w
  Tensor w3 = Tensor::from({4}, {1, -2, 3, 0.5f}, true);
  backward(add(sum(w3), sum(mul(w3, w3))));
  for (size_t i = 0; i < 4; ++i) {
    CHECK(w3.grad()[i] == doctest::Approx(1.0f + 2.0f * w3.data()[i]));
  }

  Tensor nonscalar = Tensor::from({2}, {1, 2}, true);
  CHECK_THROWS_AS(backward(add(nonscalar, nonscalar)), Error);
}

TEST_CASE("finite_difference_check examples") {
  Tensor at = Tensor::from({6}, {0.3f, -1.2f, 0.7f, 1.9f, -0.4f, 0.0f});
  CHECK(finite_difference_check([](const Tensor& t) { return sum(t); }, at, 1e-3) < 1e-6);

  Tensor zeros = Tensor::zeros({5});
  CHECK(finite_difference_check([](const Tensor& t) { return sum(sigmoid(t)); }, zeros, 1e-3) <
        1e-4);

  CHECK_THROWS_AS(
      finite_difference_check([](const Tensor& t) { return add(t, t); }, zeros, 1e-3), Error);
}

TEST_CASE("finite differences across every op, 100 random cases each") {
  Rng rng(17);
  auto sweep = [&rng](const std::function<Tensor(const Tensor&)>& f, Shape shape,
                      bool avoid_zero = false) {
    double worst = 0.0;
    for (int c = 0; c < 100; ++c) {
      Tensor at = rand_tensor(rng, shape);
      if (avoid_zero) {
        for (auto& v : at.data()) {
          if (std::fabs(v) < 0.05f) v = v < 0 ? v - 0.05f : v + 0.05f;
        }
      }
      worst = std::max(worst, finite_difference_check(f, at, 1e-3));
    }
    return worst;
  };

  Rng init(18);
  Tensor ck = rand_tensor(init, {2, 2, 3, 3}, -0.5, 0.5);
  Tensor cb = rand_tensor(init, {2}, -0.5, 0.5);
  Tensor cx = rand_tensor(init, {1, 2, 4, 4});
  Tensor tk = rand_tensor(init, {2, 2, 2, 2}, -0.5, 0.5);
  Tensor aw = rand_tensor(init, {4, 3}, -0.5, 0.5);
  Tensor ab = rand_tensor(init, {3}, -0.5, 0.5);
  Tensor ax = rand_tensor(init, {2, 4});
  Tensor mate = rand_tensor(init, {2, 3});

  CHECK(sweep([&](const Tensor& t) { return sum(conv2d(t, ck, cb, 1, 1)); }, {1, 2, 4, 4}) < 1e-3);
  CHECK(sweep([&](const Tensor& t) { return sum(conv2d(cx, t, cb, 2, 1)); }, {2, 2, 3, 3}) < 1e-3);
  CHECK(sweep([&](const Tensor& t) { return sum(conv2d(cx, ck, t, 1, 1)); }, {2}) < 1e-3);
  CHECK(sweep([&](const Tensor& t) { return sum(conv2d_transpose(t, tk, cb, 2, 0)); },
              {1, 2, 3, 3}) < 1e-3);
  CHECK(sweep([&](const Tensor& t) { return sum(conv2d_transpose(cx, t, cb, 2, 0)); },
              {2, 2, 2, 2}) < 1e-3);
  CHECK(sweep([&](const Tensor& t) { return sum(affine(t, aw, ab)); }, {2, 4}) < 1e-3);
  CHECK(sweep([&](const Tensor& t) { return sum(affine(ax, t, ab)); }, {4, 3}) < 1e-3);
  CHECK(sweep([&](const Tensor& t) { return sum(affine(ax, aw, t)); }, {3}) < 1e-3);
  CHECK(sweep([](const Tensor& t) { return sum(relu(t)); }, {2, 3}, true) < 1e-3);
  CHECK(sweep([](const Tensor& t) { return sum(sigmoid(t)); }, {2, 3}) < 1e-3);
  CHECK(sweep([](const Tensor& t) { return sum(exp(t)); }, {2, 3}) < 1e-3);
  CHECK(sweep([&](const Tensor& t) { return sum(add(t, mate)); }, {2, 3}) < 1e-3);
  CHECK(sweep([&](const Tensor& t) { return sum(mul(t, mate)); }, {2, 3}) < 1e-3);
  CHECK(sweep([](const Tensor& t) { return sum(scale(t, -1.7)); }, {2, 3}) < 1e-3);
  CHECK(sweep([](const Tensor& t) { return sum(t); }, {7}) < 1e-3);
  CHECK(sweep([](const Tensor& t) { return mean(t); }, {7}) < 1e-3);
  CHECK(sweep([](const Tensor& t) { return sum(mul(log_softmax(t, 1), t)); }, {3, 5}) < 1e-3);
  CHECK(sweep([](const Tensor& t) {
          Tensor v = reshape(t, {3, 4});
          return sum(mul(v, v));
        },
              {2, 6}) < 1e-3);
}

TEST_CASE("ops are deterministic within one build") {
  Rng rng(19);
  Tensor x = rand_tensor(rng, {2, 3, 6, 6});
  Tensor k = rand_tensor(rng, {4, 3, 3, 3});
  Tensor b = rand_tensor(rng, {4});
  Tensor y1 = conv2d(x, k, b, 2, 1);
  Tensor y2 = conv2d(x, k, b, 2, 1);
  CHECK(y1.data() == y2.data());

  Tensor s1 = log_softmax(reshape(y1, {2, static_cast<int>(y1.numel() / 2)}), 1);
  Tensor s2 = log_softmax(reshape(y2, {2, static_cast<int>(y2.numel() / 2)}), 1);
  CHECK(s1.data() == s2.data());
}
