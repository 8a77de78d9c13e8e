#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "betaprune/common.hpp"

namespace betaprune {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense f32 tensor participating in a reverse-mode autodiff graph.
//
// A Tensor is a shared handle to a graph node. Ops record their inputs and a
// backward closure on the result node whenever any input requires gradients,
// so each forward pass builds a fresh single-use tape; parameters are the
// persistent leaves. backward() releases nothing — dropping the loss handle
// frees the intermediates while leaves owned elsewhere survive.
//
// Values are stored in f32; reductions, convolution inner loops and the
// backward kernels accumulate in f64. Scalar results additionally carry an
// f64 mirror of their value (item_f64) so finite-difference checks are not
// limited by f32 rounding of the loss.
class Tensor {
public:
  struct Node {
    Shape shape;
    std::vector<float> value;
    std::vector<float> grad;  // sized lazily by ensure_grad()
    std::vector<double> shadow;  // f64 forward values, shadow mode only
    bool requires_grad = false;
    bool has_hi = false;
    double hi = 0.0;  // f64 mirror for scalar results
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backprop;

    int64_t numel() const { return static_cast<int64_t>(value.size()); }
    void ensure_grad() {
      if (grad.size() != value.size()) grad.assign(value.size(), 0.0f);
    }
    // f64 view of element i: the shadow when present, the f32 value otherwise.
    double val64(size_t i) const {
      return shadow.empty() ? static_cast<double>(value[i]) : shadow[i];
    }
  };

  Tensor() = default;

  static Tensor from(Shape shape, std::vector<float> data, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float v, bool requires_grad = false);
  static Tensor scalar(float v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return node_->numel(); }

  std::vector<float>& data() { return node_->value; }
  const std::vector<float>& data() const { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<float>& grad() const;
  std::vector<float>& grad();
  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.assign(node_->value.size(), 0.0f);
  }

  float item() const;
  double item_f64() const;

  // Detached copy of the values (fresh leaf).
  Tensor detached(bool requires_grad = false) const;

  std::shared_ptr<Node> node() const { return node_; }

  // Op builder for fused ops defined outside this module. `backprop` sees the
  // result node (value + accumulated grad) and adds into the inputs' grads.
  static Tensor make_op(const char* op, Shape shape, std::vector<float> value,
                        std::vector<Tensor> inputs,
                        std::function<void(Node&)> backprop);

private:
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  std::shared_ptr<Node> node_;
};

// ---- layer ops -------------------------------------------------------------

// input N×C×H×W, kernel O×I×kh×kw, bias O; cross-correlation.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int padding);

// input N×C×H×W, kernel I×O×kh×kw (I = this op's input channels), bias O.
// Adjoint of conv2d: output spatial extent (in−1)·stride − 2·padding + k.
Tensor conv2d_transpose(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                        int stride, int padding);

// input N×D, weight D×K, bias K.
Tensor affine(const Tensor& input, const Tensor& weight, const Tensor& bias);

// ---- elementwise -----------------------------------------------------------

Tensor relu(const Tensor& t);
Tensor sigmoid(const Tensor& t);
Tensor exp(const Tensor& t);
// Equal shapes, or one operand scalar (the only broadcast allowed).
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& t, double c);

// ---- reductions & shape ----------------------------------------------------

Tensor sum(const Tensor& t);
Tensor mean(const Tensor& t);
// Stabilized by row-max subtraction; rank 1 (axis 0) or rank 2 (axis 0/1).
Tensor log_softmax(const Tensor& t, int axis);
Tensor reshape(const Tensor& t, Shape shape);

// ---- autodiff --------------------------------------------------------------

// Populates grad on every requires_grad tensor reachable from `loss`.
// loss must be scalar.
void backward(const Tensor& loss);

// While a guard is alive, every op additionally carries exact f64 forward
// values so scalar readouts are free of f32 rounding. Used by the
// finite-difference oracle; training never pays for it.
class ShadowGuard {
public:
  ShadowGuard();
  ~ShadowGuard();
  ShadowGuard(const ShadowGuard&) = delete;
  ShadowGuard& operator=(const ShadowGuard&) = delete;

private:
  bool prev_;
};
bool shadow_mode();

// Max over elements of |analytic − numeric| / max(|numeric|, 1e-8), with
// central differences of step h run in f64 accumulation (shadow mode).
double finite_difference_check(const std::function<Tensor(const Tensor&)>& f,
                               const Tensor& at, double h);

}  // namespace betaprune
