#include "betaprune/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace betaprune {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

thread_local bool g_shadow_mode = false;

[[noreturn]] void shape_error(const std::string& msg) {
  throw Error(ErrorKind::config, msg);
}

void check_shape(const Shape& shape) {
  for (int d : shape) {
    if (d <= 0) shape_error("tensor shape has non-positive extent " + shape_str(shape));
  }
}

bool any_requires(const std::vector<Tensor>& inputs) {
  for (const auto& t : inputs) {
    if (t.requires_grad()) return true;
  }
  return false;
}

}  // namespace

Tensor Tensor::from(Shape shape, std::vector<float> data, bool requires_grad) {
  check_shape(shape);
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    shape_error("tensor data length " + std::to_string(data.size()) +
                " does not match shape " + shape_str(shape));
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0f, requires_grad);
}

Tensor Tensor::full(Shape shape, float v, bool requires_grad) {
  check_shape(shape);
  const auto count = static_cast<size_t>(shape_numel(shape));
  return from(std::move(shape), std::vector<float>(count, v), requires_grad);
}

Tensor Tensor::scalar(float v) {
  Tensor t = from({1}, {v});
  t.node_->has_hi = true;
  t.node_->hi = static_cast<double>(v);
  return t;
}

const std::vector<float>& Tensor::grad() const {
  if (node_->grad.empty()) {
    throw Error(ErrorKind::config, "tensor has no gradient (op " + std::string(node_->op) + ")");
  }
  return node_->grad;
}

std::vector<float>& Tensor::grad() {
  if (node_->grad.empty()) {
    throw Error(ErrorKind::config, "tensor has no gradient (op " + std::string(node_->op) + ")");
  }
  return node_->grad;
}

float Tensor::item() const {
  if (numel() != 1) shape_error("item() on non-scalar tensor " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::item_f64() const {
  if (numel() != 1) shape_error("item_f64() on non-scalar tensor " + shape_str(shape()));
  if (!node_->shadow.empty()) return node_->shadow[0];
  return node_->has_hi ? node_->hi : static_cast<double>(node_->value[0]);
}

ShadowGuard::ShadowGuard() : prev_(g_shadow_mode) { g_shadow_mode = true; }
ShadowGuard::~ShadowGuard() { g_shadow_mode = prev_; }
bool shadow_mode() { return g_shadow_mode; }

Tensor Tensor::detached(bool requires_grad) const {
  return from(node_->shape, node_->value, requires_grad);
}

Tensor Tensor::make_op(const char* op, Shape shape, std::vector<float> value,
                       std::vector<Tensor> inputs, std::function<void(Node&)> backprop) {
  check_shape(shape);
  if (shape_numel(shape) != static_cast<int64_t>(value.size())) {
    shape_error(std::string(op) + ": result data length does not match shape " + shape_str(shape));
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  if (any_requires(inputs)) {
    n->requires_grad = true;
    n->inputs.reserve(inputs.size());
    for (const auto& t : inputs) n->inputs.push_back(t.node());
    n->backprop = std::move(backprop);
  }
  return Tensor(std::move(n));
}

// ---- conv2d ----------------------------------------------------------------

namespace {

struct ConvDims {
  int n, ci, h, w;      // input
  int co, kh, kw;       // kernel
  int stride, pad;
  int oh, ow;           // output
};

ConvDims conv_dims(const char* op, const Tensor& input, const Tensor& kernel,
                   const Tensor& bias, int stride, int padding, bool transposed) {
  if (input.rank() != 4) {
    shape_error(std::string(op) + ": input must be NCHW, got " + shape_str(input.shape()));
  }
  if (kernel.rank() != 4) {
    shape_error(std::string(op) + ": kernel must be rank 4, got " + shape_str(kernel.shape()));
  }
  if (stride < 1) shape_error(std::string(op) + ": stride must be positive");
  if (padding < 0) shape_error(std::string(op) + ": padding must be non-negative");

  ConvDims d{};
  d.n = input.dim(0);
  d.ci = input.dim(1);
  d.h = input.dim(2);
  d.w = input.dim(3);
  d.stride = stride;
  d.pad = padding;
  // conv kernel O×I×kh×kw, transposed kernel I×O×kh×kw
  const int k_in = transposed ? kernel.dim(0) : kernel.dim(1);
  d.co = transposed ? kernel.dim(1) : kernel.dim(0);
  d.kh = kernel.dim(2);
  d.kw = kernel.dim(3);
  if (k_in != d.ci) {
    shape_error(std::string(op) + ": input channels mismatch, input " + shape_str(input.shape()) +
                " vs kernel " + shape_str(kernel.shape()));
  }
  if (bias.rank() != 1 || bias.dim(0) != d.co) {
    shape_error(std::string(op) + ": bias must be length " + std::to_string(d.co) +
                ", got " + shape_str(bias.shape()));
  }
  if (transposed) {
    d.oh = (d.h - 1) * stride - 2 * padding + d.kh;
    d.ow = (d.w - 1) * stride - 2 * padding + d.kw;
  } else {
    d.oh = (d.h + 2 * padding - d.kh) / stride + 1;
    d.ow = (d.w + 2 * padding - d.kw) / stride + 1;
    if (d.h + 2 * padding < d.kh || d.w + 2 * padding < d.kw) d.oh = 0;
  }
  if (d.oh < 1 || d.ow < 1) {
    shape_error(std::string(op) + ": output spatial dims < 1 for input " +
                shape_str(input.shape()) + ", kernel " + shape_str(kernel.shape()) +
                ", stride " + std::to_string(stride) + ", pad " + std::to_string(padding));
  }
  return d;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int padding) {
  const ConvDims d = conv_dims("conv2d", input, kernel, bias, stride, padding, false);
  const float* x = input.data().data();
  const float* k = kernel.data().data();
  const float* b = bias.data().data();

  std::vector<float> out(static_cast<size_t>(d.n) * d.co * d.oh * d.ow);
  float* y = out.data();

#pragma omp parallel for collapse(2) schedule(static) if (static_cast<int64_t>(d.n) * d.co * d.oh * d.ow * d.ci * d.kh * d.kw > 16384)
  for (int n = 0; n < d.n; ++n) {
    for (int o = 0; o < d.co; ++o) {
      for (int oy = 0; oy < d.oh; ++oy) {
        for (int ox = 0; ox < d.ow; ++ox) {
          double acc = b[o];
          for (int i = 0; i < d.ci; ++i) {
            for (int ky = 0; ky < d.kh; ++ky) {
              const int iy = oy * d.stride + ky - d.pad;
              if (iy < 0 || iy >= d.h) continue;
              const float* xrow = x + ((static_cast<int64_t>(n) * d.ci + i) * d.h + iy) * d.w;
              const float* krow = k + ((static_cast<int64_t>(o) * d.ci + i) * d.kh + ky) * d.kw;
              for (int kx = 0; kx < d.kw; ++kx) {
                const int ix = ox * d.stride + kx - d.pad;
                if (ix < 0 || ix >= d.w) continue;
                acc += static_cast<double>(xrow[ix]) * static_cast<double>(krow[kx]);
              }
            }
          }
          y[((static_cast<int64_t>(n) * d.co + o) * d.oh + oy) * d.ow + ox] =
              static_cast<float>(acc);
        }
      }
    }
  }

  auto xn = input.node();
  auto kn = kernel.node();
  auto bn = bias.node();
  Tensor result = Tensor::make_op(
      "conv2d", {d.n, d.co, d.oh, d.ow}, std::move(out), {input, kernel, bias},
      [xn, kn, bn, d](Tensor::Node& self) {
        const float* dy = self.grad.data();
        if (xn->requires_grad) {
          xn->ensure_grad();
          float* dx = xn->grad.data();
          const float* k = kn->value.data();
#pragma omp parallel for collapse(2) schedule(static)
          for (int n = 0; n < d.n; ++n) {
            for (int i = 0; i < d.ci; ++i) {
              for (int iy = 0; iy < d.h; ++iy) {
                for (int ix = 0; ix < d.w; ++ix) {
                  double acc = 0.0;
                  for (int o = 0; o < d.co; ++o) {
                    for (int ky = 0; ky < d.kh; ++ky) {
                      const int ty = iy + d.pad - ky;
                      if (ty < 0 || ty % d.stride) continue;
                      const int oy = ty / d.stride;
                      if (oy >= d.oh) continue;
                      for (int kx = 0; kx < d.kw; ++kx) {
                        const int tx = ix + d.pad - kx;
                        if (tx < 0 || tx % d.stride) continue;
                        const int ox = tx / d.stride;
                        if (ox >= d.ow) continue;
                        acc += static_cast<double>(
                                   dy[((static_cast<int64_t>(n) * d.co + o) * d.oh + oy) * d.ow + ox]) *
                               static_cast<double>(
                                   k[((static_cast<int64_t>(o) * d.ci + i) * d.kh + ky) * d.kw + kx]);
                      }
                    }
                  }
                  dx[((static_cast<int64_t>(n) * d.ci + i) * d.h + iy) * d.w + ix] +=
                      static_cast<float>(acc);
                }
              }
            }
          }
        }
        if (kn->requires_grad) {
          kn->ensure_grad();
          float* dk = kn->grad.data();
          const float* x = xn->value.data();
#pragma omp parallel for collapse(2) schedule(static)
          for (int o = 0; o < d.co; ++o) {
            for (int i = 0; i < d.ci; ++i) {
              for (int ky = 0; ky < d.kh; ++ky) {
                for (int kx = 0; kx < d.kw; ++kx) {
                  double acc = 0.0;
                  for (int n = 0; n < d.n; ++n) {
                    for (int oy = 0; oy < d.oh; ++oy) {
                      const int iy = oy * d.stride + ky - d.pad;
                      if (iy < 0 || iy >= d.h) continue;
                      for (int ox = 0; ox < d.ow; ++ox) {
                        const int ix = ox * d.stride + kx - d.pad;
                        if (ix < 0 || ix >= d.w) continue;
                        acc += static_cast<double>(
                                   x[((static_cast<int64_t>(n) * d.ci + i) * d.h + iy) * d.w + ix]) *
                               static_cast<double>(
                                   dy[((static_cast<int64_t>(n) * d.co + o) * d.oh + oy) * d.ow + ox]);
                      }
                    }
                  }
                  dk[((static_cast<int64_t>(o) * d.ci + i) * d.kh + ky) * d.kw + kx] +=
                      static_cast<float>(acc);
                }
              }
            }
          }
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          float* db = bn->grad.data();
          for (int o = 0; o < d.co; ++o) {
            double acc = 0.0;
            for (int n = 0; n < d.n; ++n) {
              const float* row = dy + (static_cast<int64_t>(n) * d.co + o) * d.oh * d.ow;
              for (int p = 0; p < d.oh * d.ow; ++p) acc += row[p];
            }
            db[o] += static_cast<float>(acc);
          }
        }
      });
  if (g_shadow_mode) {
    std::vector<double> sh(result.data().size());
    for (int n = 0; n < d.n; ++n) {
      for (int o = 0; o < d.co; ++o) {
        for (int oy = 0; oy < d.oh; ++oy) {
          for (int ox = 0; ox < d.ow; ++ox) {
            double acc = bn->val64(static_cast<size_t>(o));
            for (int i = 0; i < d.ci; ++i) {
              for (int ky = 0; ky < d.kh; ++ky) {
                const int iy = oy * d.stride + ky - d.pad;
                if (iy < 0 || iy >= d.h) continue;
                for (int kx = 0; kx < d.kw; ++kx) {
                  const int ix = ox * d.stride + kx - d.pad;
                  if (ix < 0 || ix >= d.w) continue;
                  acc += xn->val64(((static_cast<size_t>(n) * d.ci + i) * d.h + iy) * d.w + ix) *
                         kn->val64(((static_cast<size_t>(o) * d.ci + i) * d.kh + ky) * d.kw + kx);
                }
              }
            }
            sh[((static_cast<size_t>(n) * d.co + o) * d.oh + oy) * d.ow + ox] = acc;
          }
        }
      }
    }
    result.node()->shadow = std::move(sh);
  }
  return result;
}

// ---- conv2d_transpose -------------------------------------------------------

Tensor conv2d_transpose(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                        int stride, int padding) {
  const ConvDims d = conv_dims("conv2d_transpose", input, kernel, bias, stride, padding, true);
  const float* x = input.data().data();
  const float* k = kernel.data().data();
  const float* b = bias.data().data();

  std::vector<float> out(static_cast<size_t>(d.n) * d.co * d.oh * d.ow);
  float* y = out.data();

  // Gather form: out[n,o,oy,ox] sums input positions that a forward conv2d
  // with this kernel would have taken this output pixel from.
#pragma omp parallel for collapse(2) schedule(static) if (static_cast<int64_t>(d.n) * d.co * d.oh * d.ow * d.ci * d.kh * d.kw > 16384)
  for (int n = 0; n < d.n; ++n) {
    for (int o = 0; o < d.co; ++o) {
      for (int oy = 0; oy < d.oh; ++oy) {
        for (int ox = 0; ox < d.ow; ++ox) {
          double acc = b[o];
          for (int i = 0; i < d.ci; ++i) {
            for (int ky = 0; ky < d.kh; ++ky) {
              const int ty = oy + d.pad - ky;
              if (ty < 0 || ty % d.stride) continue;
              const int sy = ty / d.stride;
              if (sy >= d.h) continue;
              for (int kx = 0; kx < d.kw; ++kx) {
                const int tx = ox + d.pad - kx;
                if (tx < 0 || tx % d.stride) continue;
                const int sx = tx / d.stride;
                if (sx >= d.w) continue;
                acc += static_cast<double>(
                           x[((static_cast<int64_t>(n) * d.ci + i) * d.h + sy) * d.w + sx]) *
                       static_cast<double>(
                           k[((static_cast<int64_t>(i) * d.co + o) * d.kh + ky) * d.kw + kx]);
              }
            }
          }
          y[((static_cast<int64_t>(n) * d.co + o) * d.oh + oy) * d.ow + ox] =
              static_cast<float>(acc);
        }
      }
    }
  }

  auto xn = input.node();
  auto kn = kernel.node();
  auto bn = bias.node();
  Tensor result = Tensor::make_op(
      "conv2d_transpose", {d.n, d.co, d.oh, d.ow}, std::move(out), {input, kernel, bias},
      [xn, kn, bn, d](Tensor::Node& self) {
        const float* dy = self.grad.data();
        if (xn->requires_grad) {
          xn->ensure_grad();
          float* dx = xn->grad.data();
          const float* k = kn->value.data();
          // dIn is a plain strided cross-correlation of dOut with the kernel.
#pragma omp parallel for collapse(2) schedule(static)
          for (int n = 0; n < d.n; ++n) {
            for (int i = 0; i < d.ci; ++i) {
              for (int sy = 0; sy < d.h; ++sy) {
                for (int sx = 0; sx < d.w; ++sx) {
                  double acc = 0.0;
                  for (int o = 0; o < d.co; ++o) {
                    for (int ky = 0; ky < d.kh; ++ky) {
                      const int oy = sy * d.stride + ky - d.pad;
                      if (oy < 0 || oy >= d.oh) continue;
                      for (int kx = 0; kx < d.kw; ++kx) {
                        const int ox = sx * d.stride + kx - d.pad;
                        if (ox < 0 || ox >= d.ow) continue;
                        acc += static_cast<double>(
                                   dy[((static_cast<int64_t>(n) * d.co + o) * d.oh + oy) * d.ow + ox]) *
                               static_cast<double>(
                                   k[((static_cast<int64_t>(i) * d.co + o) * d.kh + ky) * d.kw + kx]);
                      }
                    }
                  }
                  dx[((static_cast<int64_t>(n) * d.ci + i) * d.h + sy) * d.w + sx] +=
                      static_cast<float>(acc);
                }
              }
            }
          }
        }
        if (kn->requires_grad) {
          kn->ensure_grad();
          float* dk = kn->grad.data();
          const float* x = xn->value.data();
#pragma omp parallel for collapse(2) schedule(static)
          for (int i = 0; i < d.ci; ++i) {
            for (int o = 0; o < d.co; ++o) {
              for (int ky = 0; ky < d.kh; ++ky) {
                for (int kx = 0; kx < d.kw; ++kx) {
                  double acc = 0.0;
                  for (int n = 0; n < d.n; ++n) {
                    for (int sy = 0; sy < d.h; ++sy) {
                      const int oy = sy * d.stride + ky - d.pad;
                      if (oy < 0 || oy >= d.oh) continue;
                      for (int sx = 0; sx < d.w; ++sx) {
                        const int ox = sx * d.stride + kx - d.pad;
                        if (ox < 0 || ox >= d.ow) continue;
                        acc += static_cast<double>(
                                   x[((static_cast<int64_t>(n) * d.ci + i) * d.h + sy) * d.w + sx]) *
                               static_cast<double>(
                                   dy[((static_cast<int64_t>(n) * d.co + o) * d.oh + oy) * d.ow + ox]);
                      }
                    }
                  }
                  dk[((static_cast<int64_t>(i) * d.co + o) * d.kh + ky) * d.kw + kx] +=
                      static_cast<float>(acc);
                }
              }
            }
          }
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          float* db = bn->grad.data();
          for (int o = 0; o < d.co; ++o) {
            double acc = 0.0;
            for (int n = 0; n < d.n; ++n) {
              const float* row = dy + (static_cast<int64_t>(n) * d.co + o) * d.oh * d.ow;
              for (int p = 0; p < d.oh * d.ow; ++p) acc += row[p];
            }
            db[o] += static_cast<float>(acc);
          }
        }
      });
  if (g_shadow_mode) {
    std::vector<double> sh(result.data().size());
    for (int n = 0; n < d.n; ++n) {
      for (int o = 0; o < d.co; ++o) {
        for (int oy = 0; oy < d.oh; ++oy) {
          for (int ox = 0; ox < d.ow; ++ox) {
            double acc = bn->val64(static_cast<size_t>(o));
            for (int i = 0; i < d.ci; ++i) {
              for (int ky = 0; ky < d.kh; ++ky) {
                const int ty = oy + d.pad - ky;
                if (ty < 0 || ty % d.stride) continue;
                const int sy = ty / d.stride;
                if (sy >= d.h) continue;
                for (int kx = 0; kx < d.kw; ++kx) {
                  const int tx = ox + d.pad - kx;
                  if (tx < 0 || tx % d.stride) continue;
                  const int sx = tx / d.stride;
                  if (sx >= d.w) continue;
                  acc += xn->val64(((static_cast<size_t>(n) * d.ci + i) * d.h + sy) * d.w + sx) *
                         kn->val64(((static_cast<size_t>(i) * d.co + o) * d.kh + ky) * d.kw + kx);
                }
              }
            }
            sh[((static_cast<size_t>(n) * d.co + o) * d.oh + oy) * d.ow + ox] = acc;
          }
        }
      }
    }
    result.node()->shadow = std::move(sh);
  }
  return result;
}

// ---- affine ----------------------------------------------------------------

Tensor affine(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  if (input.rank() != 2 || weight.rank() != 2 || bias.rank() != 1 ||
      input.dim(1) != weight.dim(0) || weight.dim(1) != bias.dim(0)) {
    shape_error("affine: shape mismatch, input " + shape_str(input.shape()) +
                ", weight " + shape_str(weight.shape()) + ", bias " + shape_str(bias.shape()));
  }
  const int n = input.dim(0), din = input.dim(1), dout = weight.dim(1);
  const float* x = input.data().data();
  const float* w = weight.data().data();
  const float* b = bias.data().data();

  std::vector<float> out(static_cast<size_t>(n) * dout);
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(n) * din * dout > 16384)
  for (int r = 0; r < n; ++r) {
    std::vector<double> acc(static_cast<size_t>(dout));
    for (int j = 0; j < dout; ++j) acc[j] = b[j];
    const float* xr = x + static_cast<int64_t>(r) * din;
    for (int i = 0; i < din; ++i) {
      const double xv = xr[i];
      const float* wr = w + static_cast<int64_t>(i) * dout;
      for (int j = 0; j < dout; ++j) acc[j] += xv * wr[j];
    }
    float* yr = out.data() + static_cast<int64_t>(r) * dout;
    for (int j = 0; j < dout; ++j) yr[j] = static_cast<float>(acc[j]);
  }

  auto xn = input.node();
  auto wn = weight.node();
  auto bn = bias.node();
  Tensor result = Tensor::make_op(
      "affine", {n, dout}, std::move(out), {input, weight, bias},
      [xn, wn, bn, n, din, dout](Tensor::Node& self) {
        const float* dy = self.grad.data();
        if (xn->requires_grad) {
          xn->ensure_grad();
          float* dx = xn->grad.data();
          const float* w = wn->value.data();
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(n) * din * dout > 16384)
          for (int r = 0; r < n; ++r) {
            const float* dyr = dy + static_cast<int64_t>(r) * dout;
            for (int i = 0; i < din; ++i) {
              const float* wr = w + static_cast<int64_t>(i) * dout;
              double acc = 0.0;
              for (int j = 0; j < dout; ++j) acc += static_cast<double>(dyr[j]) * wr[j];
              dx[static_cast<int64_t>(r) * din + i] += static_cast<float>(acc);
            }
          }
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          float* dw = wn->grad.data();
          const float* x = xn->value.data();
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(n) * din * dout > 16384)
          for (int i = 0; i < din; ++i) {
            std::vector<double> acc(static_cast<size_t>(dout), 0.0);
            for (int r = 0; r < n; ++r) {
              const double xv = x[static_cast<int64_t>(r) * din + i];
              const float* dyr = dy + static_cast<int64_t>(r) * dout;
              for (int j = 0; j < dout; ++j) acc[j] += xv * dyr[j];
            }
            float* dwr = dw + static_cast<int64_t>(i) * dout;
            for (int j = 0; j < dout; ++j) dwr[j] += static_cast<float>(acc[j]);
          }
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          float* db = bn->grad.data();
          for (int j = 0; j < dout; ++j) {
            double acc = 0.0;
            for (int r = 0; r < n; ++r) acc += dy[static_cast<int64_t>(r) * dout + j];
            db[j] += static_cast<float>(acc);
          }
        }
      });
}

// ---- elementwise -----------------------------------------------------------

Tensor relu(const Tensor& t) {
  std::vector<float> out(t.data());
  for (auto& v : out) v = v > 0.0f ? v : 0.0f;
  auto in = t.node();
  return Tensor::make_op("relu", t.shape(), std::move(out), {t},
                         [in](Tensor::Node& self) {
                           in->ensure_grad();
                           const float* x = in->value.data();
                           const float* dy = self.grad.data();
                           float* dx = in->grad.data();
                           const size_t n = in->value.size();
                           for (size_t i = 0; i < n; ++i) {
                             if (x[i] > 0.0f) dx[i] += dy[i];
                           }
                         });
}

Tensor sigmoid(const Tensor& t) {
  std::vector<float> out(t.data().size());
  const auto& x = t.data();
  for (size_t i = 0; i < x.size(); ++i) {
    out[i] = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(x[i]))));
  }
  auto in = t.node();
  return Tensor::make_op("sigmoid", t.shape(), std::move(out), {t},
                         [in](Tensor::Node& self) {
                           in->ensure_grad();
                           const float* y = self.value.data();
                           const float* dy = self.grad.data();
                           float* dx = in->grad.data();
                           const size_t n = in->value.size();
                           for (size_t i = 0; i < n; ++i) {
                             const double s = y[i];
                             dx[i] += static_cast<float>(s * (1.0 - s) * dy[i]);
                           }
                         });
}

Tensor exp(const Tensor& t) {
  std::vector<float> out(t.data().size());
  const auto& x = t.data();
  for (size_t i = 0; i < x.size(); ++i) {
    out[i] = static_cast<float>(std::exp(static_cast<double>(x[i])));
  }
  auto in = t.node();
  return Tensor::make_op("exp", t.shape(), std::move(out), {t},
                         [in](Tensor::Node& self) {
                           in->ensure_grad();
                           const float* y = self.value.data();
                           const float* dy = self.grad.data();
                           float* dx = in->grad.data();
                           const size_t n = in->value.size();
                           for (size_t i = 0; i < n; ++i) {
                             dx[i] += static_cast<float>(static_cast<double>(y[i]) * dy[i]);
                           }
                         });
}

namespace {

enum class BinKind { both_full, a_scalar, b_scalar };

BinKind binary_kind(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return BinKind::both_full;
  if (a.numel() == 1) return BinKind::a_scalar;
  if (b.numel() == 1) return BinKind::b_scalar;
  shape_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()) + " (only tensor-by-scalar broadcast is allowed)");
}

// f64 scalar mirror for scalar-valued elementwise results.
double hi_of(const Tensor& t) {
  return t.node()->has_hi ? t.node()->hi : static_cast<double>(t.data()[0]);
}

void set_hi(Tensor& t, double hi) {
  t.node()->has_hi = true;
  t.node()->hi = hi;
  t.node()->value[0] = static_cast<float>(hi);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const BinKind kind = binary_kind("add", a, b);
  const auto& av = a.data();
  const auto& bv = b.data();
  const Shape& out_shape = kind == BinKind::a_scalar ? b.shape() : a.shape();
  const size_t n = static_cast<size_t>(shape_numel(out_shape));
  std::vector<float> out(n);
  for (size_t i = 0; i < n; ++i) {
    const float x = kind == BinKind::a_scalar ? av[0] : av[i];
    const float y = kind == BinKind::b_scalar ? bv[0] : bv[i];
    out[i] = x + y;
  }
  auto an = a.node();
  auto bn = b.node();
  Tensor r = Tensor::make_op(
      "add", out_shape, std::move(out), {a, b},
      [an, bn, kind](Tensor::Node& self) {
        const float* dy = self.grad.data();
        const size_t n = self.value.size();
        if (an->requires_grad) {
          an->ensure_grad();
          float* da = an->grad.data();
          if (kind == BinKind::a_scalar) {
            double acc = 0.0;
            for (size_t i = 0; i < n; ++i) acc += dy[i];
            da[0] += static_cast<float>(acc);
          } else {
            for (size_t i = 0; i < n; ++i) da[i] += dy[i];
          }
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          float* db = bn->grad.data();
          if (kind == BinKind::b_scalar) {
            double acc = 0.0;
            for (size_t i = 0; i < n; ++i) acc += dy[i];
            db[0] += static_cast<float>(acc);
          } else {
            for (size_t i = 0; i < n; ++i) db[i] += dy[i];
          }
        }
      });
  if (r.numel() == 1 && a.numel() == 1 && b.numel() == 1) set_hi(r, hi_of(a) + hi_of(b));
  return r;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const BinKind kind = binary_kind("mul", a, b);
  const auto& av = a.data();
  const auto& bv = b.data();
  const Shape& out_shape = kind == BinKind::a_scalar ? b.shape() : a.shape();
  const size_t n = static_cast<size_t>(shape_numel(out_shape));
  std::vector<float> out(n);
  for (size_t i = 0; i < n; ++i) {
    const float x = kind == BinKind::a_scalar ? av[0] : av[i];
    const float y = kind == BinKind::b_scalar ? bv[0] : bv[i];
    out[i] = x * y;
  }
  auto an = a.node();
  auto bn = b.node();
  Tensor r = Tensor::make_op(
      "mul", out_shape, std::move(out), {a, b},
      [an, bn, kind](Tensor::Node& self) {
        const float* dy = self.grad.data();
        const float* av = an->value.data();
        const float* bv = bn->value.data();
        const size_t n = self.value.size();
        if (an->requires_grad) {
          an->ensure_grad();
          float* da = an->grad.data();
          if (kind == BinKind::a_scalar) {
            double acc = 0.0;
            for (size_t i = 0; i < n; ++i) acc += static_cast<double>(dy[i]) * bv[i];
            da[0] += static_cast<float>(acc);
          } else {
            for (size_t i = 0; i < n; ++i) {
              const float bvi = kind == BinKind::b_scalar ? bv[0] : bv[i];
              da[i] += dy[i] * bvi;
            }
          }
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          float* db = bn->grad.data();
          if (kind == BinKind::b_scalar) {
            double acc = 0.0;
            for (size_t i = 0; i < n; ++i) acc += static_cast<double>(dy[i]) * av[i];
            db[0] += static_cast<float>(acc);
          } else {
            for (size_t i = 0; i < n; ++i) {
              const float avi = kind == BinKind::a_scalar ? av[0] : av[i];
              db[i] += dy[i] * avi;
            }
          }
        }
      });
  if (r.numel() == 1 && a.numel() == 1 && b.numel() == 1) set_hi(r, hi_of(a) * hi_of(b));
  return r;
}

Tensor scale(const Tensor& t, double c) {
  const auto& x = t.data();
  std::vector<float> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    out[i] = static_cast<float>(c * static_cast<double>(x[i]));
  }
  auto in = t.node();
  Tensor r = Tensor::make_op("scale", t.shape(), std::move(out), {t},
                             [in, c](Tensor::Node& self) {
                               in->ensure_grad();
                               const float* dy = self.grad.data();
                               float* dx = in->grad.data();
                               const size_t n = in->value.size();
                               for (size_t i = 0; i < n; ++i) {
                                 dx[i] += static_cast<float>(c * dy[i]);
                               }
                             });
  if (r.numel() == 1) set_hi(r, c * hi_of(t));
  return r;
}

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& t) {
  double acc = 0.0;
  for (float v : t.data()) acc += v;
  auto in = t.node();
  Tensor r = Tensor::make_op("sum", {1}, {static_cast<float>(acc)}, {t},
                             [in](Tensor::Node& self) {
                               in->ensure_grad();
                               const float g = self.grad[0];
                               for (auto& dv : in->grad) dv += g;
                             });
  set_hi(r, acc);
  return r;
}

Tensor mean(const Tensor& t) {
  const double inv = 1.0 / static_cast<double>(t.numel());
  double acc = 0.0;
  for (float v : t.data()) acc += v;
  acc *= inv;
  auto in = t.node();
  Tensor r = Tensor::make_op("mean", {1}, {static_cast<float>(acc)}, {t},
                             [in, inv](Tensor::Node& self) {
                               in->ensure_grad();
                               const double g = static_cast<double>(self.grad[0]) * inv;
                               for (auto& dv : in->grad) dv += static_cast<float>(g);
                             });
  set_hi(r, acc);
  return r;
}

Tensor log_softmax(const Tensor& t, int axis) {
  if (t.rank() < 1 || t.rank() > 2 || axis < 0 || axis >= t.rank()) {
    shape_error("log_softmax: unsupported axis " + std::to_string(axis) + " for shape " +
                shape_str(t.shape()));
  }
  // Treat as `rows` independent distributions of length `len`.
  const bool row_major = (t.rank() == 1) || axis == 1;
  const int rows = t.rank() == 1 ? 1 : (row_major ? t.dim(0) : t.dim(1));
  const int len = t.rank() == 1 ? t.dim(0) : (row_major ? t.dim(1) : t.dim(0));
  const int rstride = row_major ? len : 1;
  const int estride = row_major ? 1 : (t.rank() == 2 ? t.dim(1) : 1);

  const auto& x = t.data();
  std::vector<float> out(x.size());
  for (int r = 0; r < rows; ++r) {
    const float* xr = x.data() + static_cast<int64_t>(r) * rstride;
    float m = xr[0];
    for (int j = 1; j < len; ++j) m = std::max(m, xr[static_cast<int64_t>(j) * estride]);
    double s = 0.0;
    for (int j = 0; j < len; ++j) {
      s += std::exp(static_cast<double>(xr[static_cast<int64_t>(j) * estride]) - m);
    }
    const double lse = std::log(s) + m;
    float* yr = out.data() + static_cast<int64_t>(r) * rstride;
    for (int j = 0; j < len; ++j) {
      const int64_t k = static_cast<int64_t>(j) * estride;
      yr[k] = static_cast<float>(static_cast<double>(xr[k]) - lse);
    }
  }

  auto in = t.node();
  return Tensor::make_op(
      "log_softmax", t.shape(), std::move(out), {t},
      [in, rows, len, rstride, estride](Tensor::Node& self) {
        in->ensure_grad();
        const float* y = self.value.data();
        const float* dy = self.grad.data();
        float* dx = in->grad.data();
        for (int r = 0; r < rows; ++r) {
          const int64_t base = static_cast<int64_t>(r) * rstride;
          double total = 0.0;
          for (int j = 0; j < len; ++j) total += dy[base + static_cast<int64_t>(j) * estride];
          for (int j = 0; j < len; ++j) {
            const int64_t k = base + static_cast<int64_t>(j) * estride;
            dx[k] += static_cast<float>(dy[k] - std::exp(static_cast<double>(y[k])) * total);
          }
        }
      });
}

Tensor reshape(const Tensor& t, Shape shape) {
  check_shape(shape);
  if (shape_numel(shape) != t.numel()) {
    shape_error("reshape: cannot view " + shape_str(t.shape()) + " as " + shape_str(shape));
  }
  auto in = t.node();
  return Tensor::make_op("reshape", std::move(shape), std::vector<float>(t.data()), {t},
                         [in](Tensor::Node& self) {
                           in->ensure_grad();
                           const float* dy = self.grad.data();
                           float* dx = in->grad.data();
                           const size_t n = in->value.size();
                           for (size_t i = 0; i < n; ++i) dx[i] += dy[i];
                         });
}

// ---- backward --------------------------------------------------------------

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw Error(ErrorKind::config,
                "backward: loss must be a scalar tensor" +
                    (loss.defined() ? std::string(", got ") + shape_str(loss.shape()) : ""));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS over requires_grad nodes; constants are skipped.
  std::vector<Tensor::Node*> order;
  std::unordered_set<Tensor::Node*> visited;
  struct Frame {
    Tensor::Node* node;
    size_t next_input;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.node().get(), 0});
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_input < f.node->inputs.size()) {
      Tensor::Node* in = f.node->inputs[f.next_input++].get();
      if (in->requires_grad && visited.insert(in).second) {
        stack.push_back({in, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  auto* root = loss.node().get();
  root->ensure_grad();
  root->grad[0] = 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Tensor::Node* node = *it;
    if (node->backprop) {
      node->ensure_grad();  // no incoming grad means zero contribution
      node->backprop(*node);
    }
  }
}

// ---- finite differences ----------------------------------------------------

double finite_difference_check(const std::function<Tensor(const Tensor&)>& f,
                               const Tensor& at, double h) {
  Tensor probe = at.detached(true);
  Tensor base = f(probe);
  if (base.numel() != 1) {
    throw Error(ErrorKind::config, "finite_difference_check: f must be scalar-valued, got " +
                                       shape_str(base.shape()));
  }
  if (!std::isfinite(base.item_f64())) {
    throw Error(ErrorKind::config, "finite_difference_check: f is not finite at the probe point");
  }
  backward(base);
  const std::vector<float> analytic = probe.grad();

  Tensor x = at.detached(false);
  auto& xd = x.data();
  double worst = 0.0;
  for (size_t i = 0; i < xd.size(); ++i) {
    const float keep = xd[i];
    xd[i] = static_cast<float>(static_cast<double>(keep) + h);
    const double up = f(x).item_f64();
    xd[i] = static_cast<float>(static_cast<double>(keep) - h);
    const double down = f(x).item_f64();
    xd[i] = keep;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw Error(ErrorKind::config, "finite_difference_check: f is not finite near the probe point");
    }
    const double numeric = (up - down) / (2.0 * h);
    const double rel = std::abs(static_cast<double>(analytic[i]) - numeric) /
                       std::max(std::abs(numeric), 1e-8);
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace betaprune
