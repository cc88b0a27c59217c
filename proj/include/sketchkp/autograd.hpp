#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sketchkp/tensor.hpp"

namespace sketchkp {

// Reverse-mode autodiff over Tensor values. Each op returns a Var holding the
// result plus a closure that scatters the incoming gradient to its parents.
// Graphs are built per episode and freed when the loss Var goes out of scope;
// parameters are long-lived leaves owned by the model.

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first use, same shape as value
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backprop;
  std::string name;  // set for parameters, used by checkpoints

  Tensor& ensure_grad() {
    if (grad.empty()) grad = Tensor(value.shape());
    return grad;
  }
  double scalar() const { return value[0]; }
};

// Grad recording can be suspended (inference paths); ops then return plain
// value nodes with no parents.
bool grad_enabled();

struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
  bool prev;
};

Var make_leaf(Tensor value, bool requires_grad = false, std::string name = "");
Var make_constant(Tensor value);
Var make_scalar(double v);

// Detached copy of v's value; gradients never flow through.
Var detach(const Var& v);

// Runs backprop from a scalar root (seeds d(root)/d(root) = 1).
void backward(const Var& root);

void zero_grad(const std::vector<Var>& params);

// ---- elementwise / shape ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);          // hadamard, same shape
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var exp_of(const Var& a);
Var neg(const Var& a);
Var concat(const Var& a, const Var& b);       // 1-D vectors
Var flatten(const Var& a);
Var sum_scalars(const std::vector<Var>& xs);  // n-ary scalar sum
Var mean_vectors(const std::vector<Var>& xs); // mean of equal-length vectors

// ---- reductions / losses ----
Var sum(const Var& a);                          // scalar
Var sq_l2_diff(const Var& a, const Var& b);     // ||a-b||^2, scalar
Var l2_diff(const Var& a, const Var& b);        // ||a-b||,   scalar (grad 0 at 0)
Var l1_diff(const Var& a, const Var& b);        // sum |a-b|, scalar
Var softmax(const Var& logits);                 // 1-D
Var pick_neg_log(const Var& probs, int index);  // -log(p[index]), scalar
Var cross_entropy_logits(const Var& logits, int index);  // fused, stable

// ---- linear algebra / conv ----
// W: (out,in) matrix, x: (in) vector, b: (out) vector -> (out)
Var linear(const Var& W, const Var& b, const Var& x);
// x: (cin,h,w), W: (cout,cin,k,k), b: (cout); zero padding
Var conv2d(const Var& x, const Var& W, const Var& b, int stride, int pad);
Var maxpool2d(const Var& x, int k, int stride);
Var avgpool2d(const Var& x, int factor);  // non-overlapping k=stride=factor
Var global_avg_pool(const Var& x);        // (c,h,w) -> (c)
// A[ch,y,x] = f[ch,y,x] * v[ch]
Var broadcast_mul_channels(const Var& f, const Var& v);
// out[ch] = sum_{y,x} w[y,x] * f[ch,y,x] with constant spatial weights
Var weighted_spatial_sum(const Var& f, const Tensor& w);

// global-norm gradient clipping over parameter grads; returns pre-clip norm
double clip_grad_norm(const std::vector<Var>& params, double max_norm);

}  // namespace sketchkp
