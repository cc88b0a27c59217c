#pragma once

#include <string>
#include <vector>

#include "sketchkp/autograd.hpp"
#include "sketchkp/rng.hpp"

namespace sketchkp::nn {

// Parameters are named leaves; names key the checkpoint archive.
struct ParamRegistry {
  std::vector<Var> params;
  Var add(Tensor init, const std::string& name, bool trainable = true) {
    Var p = make_leaf(std::move(init), trainable, name);
    params.push_back(p);
    return p;
  }
};

Tensor he_normal(std::vector<int> shape, int fan_in, Rng& rng);

struct Linear {
  Var W, b;  // W: (out,in)
  int in = 0, out = 0;

  Linear() = default;
  Linear(int in, int out, const std::string& name, ParamRegistry& reg, Rng& rng);
  Var forward(const Var& x) const { return linear(W, b, x); }
};

struct Conv2d {
  Var W, b;  // W: (cout,cin,k,k)
  int in_ch = 0, out_ch = 0, k = 3, stride = 1, pad = 1;

  Conv2d() = default;
  Conv2d(int in_ch, int out_ch, int k, int stride, int pad, const std::string& name,
         ParamRegistry& reg, Rng& rng);
  Var forward(const Var& x) const { return conv2d(x, W, b, stride, pad); }
};

struct Adam {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t t = 0;
  std::vector<Tensor> m, v;

  explicit Adam(double lr = 1e-4) : lr(lr) {}
  void step(const std::vector<Var>& params);
};

}  // namespace sketchkp::nn
