#include "sketchkp/nn.hpp"

#include <cmath>

namespace sketchkp::nn {

Tensor he_normal(std::vector<int> shape, int fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.gaussian(0.0, stddev);
  return t;
}

Linear::Linear(int in, int out, const std::string& name, ParamRegistry& reg, Rng& rng)
    : in(in), out(out) {
  W = reg.add(he_normal({out, in}, in, rng), name + ".W");
  b = reg.add(Tensor({out}), name + ".b");
}

Conv2d::Conv2d(int in_ch, int out_ch, int k, int stride, int pad, const std::string& name,
               ParamRegistry& reg, Rng& rng)
    : in_ch(in_ch), out_ch(out_ch), k(k), stride(stride), pad(pad) {
  W = reg.add(he_normal({out_ch, in_ch, k, k}, in_ch * k * k, rng), name + ".W");
  b = reg.add(Tensor({out_ch}), name + ".b");
}

void Adam::step(const std::vector<Var>& params) {
  if (m.empty()) {
    m.reserve(params.size());
    v.reserve(params.size());
    for (const auto& p : params) {
      m.emplace_back(p->value.shape());
      v.emplace_back(p->value.shape());
    }
  }
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p->requires_grad || p->grad.empty()) continue;
    for (std::int64_t j = 0; j < p->value.size(); ++j) {
      const double g = p->grad[j];
      m[i][j] = beta1 * m[i][j] + (1.0 - beta1) * g;
      v[i][j] = beta2 * v[i][j] + (1.0 - beta2) * g * g;
      const double mhat = m[i][j] / bc1;
      const double vhat = v[i][j] / bc2;
      p->value[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace sketchkp::nn
