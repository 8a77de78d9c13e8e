#include "oracles/verify_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "betaprune/betavae.hpp"
#include "betaprune/classifier.hpp"
#include "betaprune/pruning.hpp"
#include "betaprune/rng.hpp"
#include "betaprune/tensor.hpp"
#include "oracles/oracles.hpp"

namespace {

using namespace betaprune;

constexpr double kFdTol = 1e-3;
constexpr double kFdStep = 1e-3;
constexpr int kFdCases = 100;

struct Suite {
  std::ostream& out;
  bool all_ok = true;

  void check(const std::string& name, bool ok, const std::string& detail = "") {
    out << (ok ? "ok   " : "FAIL ") << name;
    if (!detail.empty()) out << " — " << detail;
    out << "\n";
    all_ok = all_ok && ok;
  }
};

Tensor random_tensor(Rng& rng, Shape shape, double lo = -2.0, double hi = 2.0) {
  std::vector<float> data(static_cast<size_t>(shape_numel(shape)));
  for (auto& v : data) v = static_cast<float>(rng.uniform(lo, hi));
  return Tensor::from(std::move(shape), std::move(data));
}

// Random values bounded away from zero (for the relu kink).
Tensor random_tensor_nonzero(Rng& rng, Shape shape) {
  std::vector<float> data(static_cast<size_t>(shape_numel(shape)));
  for (auto& v : data) {
    double u = rng.uniform(-2.0, 2.0);
    if (std::fabs(u) < 0.05) u = u < 0 ? u - 0.05 : u + 0.05;
    v = static_cast<float>(u);
  }
  return Tensor::from(std::move(shape), std::move(data));
}

// Worst finite-difference error of `f` over `cases` random probe points.
double fd_sweep(Rng& rng, const std::function<Tensor(const Tensor&)>& f, Shape shape, int cases,
                bool avoid_zero = false) {
  double worst = 0.0;
  for (int c = 0; c < cases; ++c) {
    Tensor at = avoid_zero ? random_tensor_nonzero(rng, shape) : random_tensor(rng, shape);
    worst = std::max(worst, finite_difference_check(f, at, kFdStep));
  }
  return worst;
}

void fd_checks(Suite& s) {
  Rng rng(20240101);

  struct Case {
    const char* name;
    Shape shape;
    std::function<Tensor(const Tensor&)> f;
    bool avoid_zero;
  };

  Tensor kernel = random_tensor(rng, {3, 2, 3, 3}, -0.5, 0.5);
  Tensor kbias = random_tensor(rng, {3}, -0.5, 0.5);
  Tensor conv_x = random_tensor(rng, {2, 2, 5, 5});
  Tensor tkernel = random_tensor(rng, {2, 3, 2, 2}, -0.5, 0.5);
  Tensor weight = random_tensor(rng, {4, 3}, -0.5, 0.5);
  Tensor wbias = random_tensor(rng, {3}, -0.5, 0.5);
  Tensor affine_x = random_tensor(rng, {2, 4});
  Tensor other = random_tensor(rng, {2, 3});

  const std::vector<Case> cases = {
      {"conv2d/input", {2, 2, 5, 5},
       [&](const Tensor& t) { return sum(conv2d(t, kernel, kbias, 2, 1)); }, false},
      {"conv2d/kernel", {3, 2, 3, 3},
       [&](const Tensor& t) { return sum(conv2d(conv_x, t, kbias, 1, 1)); }, false},
      {"conv2d/bias", {3},
       [&](const Tensor& t) { return sum(conv2d(conv_x, kernel, t, 1, 1)); }, false},
      {"conv2d_transpose/input", {2, 2, 3, 3},
       [&](const Tensor& t) { return sum(conv2d_transpose(t, tkernel, kbias, 2, 0)); }, false},
      {"conv2d_transpose/kernel", {2, 3, 2, 2},
       [&](const Tensor& t) { return sum(conv2d_transpose(conv_x, t, kbias, 2, 0)); }, false},
      {"affine/input", {2, 4},
       [&](const Tensor& t) { return sum(affine(t, weight, wbias)); }, false},
      {"affine/weight", {4, 3},
       [&](const Tensor& t) { return sum(affine(affine_x, t, wbias)); }, false},
      {"affine/bias", {3},
       [&](const Tensor& t) { return sum(affine(affine_x, weight, t)); }, false},
      {"relu", {2, 3}, [](const Tensor& t) { return sum(relu(t)); }, true},
      {"sigmoid", {2, 3}, [](const Tensor& t) { return sum(sigmoid(t)); }, false},
      {"exp", {2, 3}, [](const Tensor& t) { return sum(exp(t)); }, false},
      {"add", {2, 3}, [&](const Tensor& t) { return sum(add(t, other)); }, false},
      {"mul", {2, 3}, [&](const Tensor& t) { return sum(mul(t, other)); }, false},
      {"scale", {2, 3}, [](const Tensor& t) { return sum(scale(t, -1.7)); }, false},
      {"sum", {7}, [](const Tensor& t) { return sum(t); }, false},
      {"mean", {7}, [](const Tensor& t) { return mean(t); }, false},
      {"log_softmax", {3, 5},
       [](const Tensor& t) { return sum(mul(log_softmax(t, 1), t)); }, false},
      {"reshape", {2, 6}, [](const Tensor& t) { return sum(mul(reshape(t, {3, 4}), reshape(t, {3, 4}))); },
       false},
      {"fanout sum(w)+sum(w∘w)", {5},
       [](const Tensor& t) { return add(sum(t), sum(mul(t, t))); }, false},
  };

  for (const auto& c : cases) {
    const double worst = fd_sweep(rng, c.f, c.shape, kFdCases, c.avoid_zero);
    std::ostringstream detail;
    detail << "max rel err " << std::scientific << std::setprecision(2) << worst << " over "
           << kFdCases << " cases";
    s.check(std::string("fd/") + c.name, worst < kFdTol, detail.str());
  }
}

void conv_oracle_checks(Suite& s) {
  Rng rng(7788);
  // conv2d vs the naive loop, bit-exact under shared f64 accumulation.
  bool exact = true;
  for (int c = 0; c < 50 && exact; ++c) {
    const int n = 1 + static_cast<int>(rng.below(2));
    const int ci = 1 + static_cast<int>(rng.below(3));
    const int co = 1 + static_cast<int>(rng.below(3));
    const int h = 2 + static_cast<int>(rng.below(5));
    const int w = 2 + static_cast<int>(rng.below(5));
    const int kh = 1 + static_cast<int>(rng.below(std::min(3, h)));
    const int kw = 1 + static_cast<int>(rng.below(std::min(3, w)));
    const int stride = 1 + static_cast<int>(rng.below(2));
    const int pad = static_cast<int>(rng.below(2));
    if (h + 2 * pad < kh || w + 2 * pad < kw) continue;
    Tensor x = random_tensor(rng, {n, ci, h, w});
    Tensor k = random_tensor(rng, {co, ci, kh, kw});
    Tensor b = random_tensor(rng, {co});
    Tensor y = conv2d(x, k, b, stride, pad);
    const auto want = oracle::conv2d(x.data(), n, ci, h, w, k.data(), co, kh, kw, b.data(),
                                     stride, pad);
    exact = want == y.data();
  }
  s.check("conv2d vs naive-loop oracle", exact, "bitwise over 50 random shapes");

  // conv2d_transpose equals the transpose of conv2d's explicit matrix.
  double worst = 0.0;
  for (int c = 0; c < 20; ++c) {
    const int ci = 1 + static_cast<int>(rng.below(2));
    const int co = 1 + static_cast<int>(rng.below(2));
    const int stride = 1 + static_cast<int>(rng.below(2));
    const int kk = stride == 2 ? 2 : 1 + static_cast<int>(rng.below(3));
    const int pad = kk > 1 ? static_cast<int>(rng.below(2)) : 0;
    // pick an input size the strided conv maps onto exactly
    const int oh = 2 + static_cast<int>(rng.below(3));
    const int h = (oh - 1) * stride - 2 * pad + kk;
    if (h < kk) continue;
    Tensor k = random_tensor(rng, {co, ci, kk, kk});
    int rows = 0, cols = 0;
    const auto m =
        oracle::conv2d_matrix(ci, h, h, k.data(), co, kk, kk, stride, pad, rows, cols);
    Tensor u = random_tensor(rng, {1, co, oh, oh});
    // transposed kernel is I×O×kh×kw with I = co of the forward conv, which
    // reinterprets the same O×I×kh×kw buffer in place
    Tensor got = conv2d_transpose(u, Tensor::from({co, ci, kk, kk}, k.data()),
                                  Tensor::zeros({ci}), stride, pad);
    for (int col = 0; col < cols; ++col) {
      double acc = 0.0;
      for (int r = 0; r < rows; ++r) {
        acc += m[static_cast<size_t>(r) * cols + col] * static_cast<double>(u.data()[r]);
      }
      worst = std::max(worst, std::fabs(acc - static_cast<double>(got.data()[col])));
    }
  }
  s.check("conv2d_transpose vs matrix adjoint", worst < 1e-4,
          "max abs diff " + std::to_string(worst));
}

void kl_and_closed_form_checks(Suite& s) {
  Rng rng(424242);
  double worst = 0.0;
  for (int c = 0; c < 40; ++c) {
    const double mu = rng.uniform(-2.0, 2.0);
    const double lv = rng.uniform(-2.0, 2.0);
    Tensor m = Tensor::from({1, 1}, {static_cast<float>(mu)});
    Tensor g = Tensor::from({1, 1}, {static_cast<float>(lv)});
    const double got = kl_divergence(m, g).kl.item_f64();
    const double want = oracle::kl_quadrature(static_cast<double>(static_cast<float>(mu)),
                                              static_cast<double>(static_cast<float>(lv)));
    worst = std::max(worst, std::fabs(got - want));
  }
  s.check("kl_divergence vs quadrature", worst < 1e-4, "max abs diff " + std::to_string(worst));

  {
    Tensor m = Tensor::from({1, 1}, {1.0f});
    Tensor g = Tensor::from({1, 1}, {0.0f});
    const double got = kl_divergence(m, g).kl.item_f64();
    s.check("kl(mu=1,logvar=0) = 0.5", std::fabs(got - 0.5) < 1e-6, std::to_string(got));
  }
  {
    Tensor lp = Tensor::from({2, 10}, std::vector<float>(20, std::log(0.1f)));
    const double got = cross_entropy({3, 7}, log_softmax(lp, 1)).item_f64();
    s.check("cross_entropy(uniform) = ln 10", std::fabs(got - std::log(10.0)) < 1e-6,
            std::to_string(got));
  }
  {
    Tensor x = Tensor::full({1, 1, 2, 2}, 0.5f);
    Tensor p = Tensor::full({1, 1, 2, 2}, 0.5f);
    const double got = reconstruction_loss(x, p).item_f64();
    s.check("recon(x=x_hat=0.5, 2x2) = 4 ln 2", std::fabs(got - 4.0 * std::log(2.0)) < 1e-5,
            std::to_string(got));
  }
}

void mask_oracle_checks(Suite& s) {
  Rng rng(99);
  bool ok = true;
  for (int c = 0; c < 1000 && ok; ++c) {
    const size_t n = 1 + rng.below(64);
    std::vector<float> w(n);
    for (auto& v : w) {
      v = static_cast<float>(rng.uniform(-1.0, 1.0));
      if (rng.below(8) == 0) v = 0.0f;  // exercise magnitude ties
    }
    if (n > 2) w[n - 1] = -w[0];  // tied magnitude, opposite sign

    const double sparsity = rng.uniform(0.0, 0.95);

    ModelParams params;
    params.add("t.kernel", Tensor::from({static_cast<int>(n)}, w, true), true);
    const SparsityMask masks = compute_masks(params, sparsity);
    ok = masks.keep.at("t.kernel") == oracle::mask_fullsort(w, sparsity);
  }
  s.check("compute_masks vs full-sort oracle", ok, "1000 random tensors");
}

}  // namespace

bool run_verify_suite(std::ostream& out) {
  Suite s{out};
  fd_checks(s);
  conv_oracle_checks(s);
  kl_and_closed_form_checks(s);
  mask_oracle_checks(s);
  out << (s.all_ok ? "verify: all checks passed\n" : "verify: FAILURES\n");
  return s.all_ok;
}
