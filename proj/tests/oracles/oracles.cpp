#include "oracles/oracles.hpp"

#include <algorithm>
#include <cmath>

namespace oracle {

std::vector<float> conv2d(const std::vector<float>& x, int n, int ci, int h, int w,
                          const std::vector<float>& k, int co, int kh, int kw,
                          const std::vector<float>& bias, int stride, int pad) {
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (w + 2 * pad - kw) / stride + 1;
  std::vector<float> y(static_cast<size_t>(n) * co * oh * ow);
  for (int im = 0; im < n; ++im) {
    for (int o = 0; o < co; ++o) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          double acc = bias[static_cast<size_t>(o)];
          for (int i = 0; i < ci; ++i) {
            for (int ky = 0; ky < kh; ++ky) {
              for (int kx = 0; kx < kw; ++kx) {
                const int iy = oy * stride + ky - pad;
                const int ix = ox * stride + kx - pad;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += static_cast<double>(x[((static_cast<size_t>(im) * ci + i) * h + iy) * w + ix]) *
                       static_cast<double>(k[((static_cast<size_t>(o) * ci + i) * kh + ky) * kw + kx]);
              }
            }
          }
          y[((static_cast<size_t>(im) * co + o) * oh + oy) * ow + ox] = static_cast<float>(acc);
        }
      }
    }
  }
  return y;
}

std::vector<double> conv2d_matrix(int ci, int h, int w, const std::vector<float>& k, int co,
                                  int kh, int kw, int stride, int pad, int& out_rows,
                                  int& out_cols) {
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (w + 2 * pad - kw) / stride + 1;
  out_rows = co * oh * ow;
  out_cols = ci * h * w;
  std::vector<double> m(static_cast<size_t>(out_rows) * out_cols, 0.0);
  const std::vector<float> zero_bias(static_cast<size_t>(co), 0.0f);
  std::vector<float> basis(static_cast<size_t>(out_cols), 0.0f);
  for (int c = 0; c < out_cols; ++c) {
    basis[static_cast<size_t>(c)] = 1.0f;
    const auto col = conv2d(basis, 1, ci, h, w, k, co, kh, kw, zero_bias, stride, pad);
    for (int r = 0; r < out_rows; ++r) {
      m[static_cast<size_t>(r) * out_cols + c] = col[static_cast<size_t>(r)];
    }
    basis[static_cast<size_t>(c)] = 0.0f;
  }
  return m;
}

std::vector<float> matmul(const std::vector<float>& a, int n, int d, const std::vector<float>& b,
                          int m, const std::vector<float>& bias) {
  std::vector<float> y(static_cast<size_t>(n) * m);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < m; ++c) {
      double acc = bias[static_cast<size_t>(c)];
      for (int i = 0; i < d; ++i) {
        acc += static_cast<double>(a[static_cast<size_t>(r) * d + i]) *
               static_cast<double>(b[static_cast<size_t>(i) * m + c]);
      }
      y[static_cast<size_t>(r) * m + c] = static_cast<float>(acc);
    }
  }
  return y;
}

double kl_quadrature(double mu, double logvar, int intervals) {
  const double sigma = std::exp(0.5 * logvar);
  const double lo = mu - 10.0 * sigma;
  const double hi = mu + 10.0 * sigma;
  const double step = (hi - lo) / intervals;
  const double inv_2pi = 1.0 / std::sqrt(2.0 * 3.14159265358979323846);

  auto integrand = [&](double z) {
    const double q = inv_2pi / sigma * std::exp(-0.5 * (z - mu) * (z - mu) / (sigma * sigma));
    if (q <= 0.0) return 0.0;
    const double log_q = std::log(inv_2pi / sigma) - 0.5 * (z - mu) * (z - mu) / (sigma * sigma);
    const double log_p = std::log(inv_2pi) - 0.5 * z * z;
    return q * (log_q - log_p);
  };

  // Simpson's rule (intervals must be even).
  double acc = integrand(lo) + integrand(hi);
  for (int i = 1; i < intervals; ++i) {
    acc += integrand(lo + i * step) * (i % 2 ? 4.0 : 2.0);
  }
  return acc * step / 3.0;
}

std::vector<uint8_t> mask_fullsort(const std::vector<float>& w, double sparsity) {
  const size_t n = w.size();
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&w](size_t a, size_t b) {
    const float ma = std::fabs(w[a]);
    const float mb = std::fabs(w[b]);
    return ma < mb || (ma == mb && a < b);
  });
  const auto drop = static_cast<size_t>(std::floor(static_cast<double>(n) * sparsity));
  std::vector<uint8_t> keep(n, 1);
  for (size_t i = 0; i < drop; ++i) keep[idx[i]] = 0;
  return keep;
}

void mean_std(const std::vector<double>& values, double& mean, double& std_dev) {
  double sum = 0.0;
  for (double v : values) sum += v;
  mean = sum / static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  std_dev = std::sqrt(var / static_cast<double>(values.size()));
}

double bce(const std::vector<float>& x, const std::vector<float>& p, int n) {
  double total = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double t = x[i];
    const double q = std::min(1.0 - 1e-7, std::max(1e-7, static_cast<double>(p[i])));
    total -= t * std::log(q) + (1.0 - t) * std::log(1.0 - q);
  }
  return total / n;
}

double cross_entropy(const std::vector<int>& labels, const std::vector<float>& log_probs, int c) {
  double total = 0.0;
  for (size_t i = 0; i < labels.size(); ++i) {
    total -= static_cast<double>(log_probs[i * static_cast<size_t>(c) + labels[i]]);
  }
  return total / static_cast<double>(labels.size());
}

double accuracy_pct(const std::vector<float>& logits, int n, int c,
                    const std::vector<int>& labels) {
  int64_t correct = 0;
  for (int i = 0; i < n; ++i) {
    const float* row = logits.data() + static_cast<size_t>(i) * c;
    int best = 0;
    for (int j = 1; j < c; ++j) {
      if (row[j] > row[best]) best = j;
    }
    if (best == labels[static_cast<size_t>(i)]) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / n;
}

}  // namespace oracle
