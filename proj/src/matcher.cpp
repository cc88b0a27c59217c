#include "sketchkp/matcher.hpp"

#include <string>

#include "sketchkp/errors.hpp"

namespace sketchkp {

std::vector<Prototype> build_prototypes(const std::vector<std::vector<Var>>& deltas,
                                        const std::vector<std::vector<bool>>& vis) {
  if (deltas.empty() || deltas.size() != vis.size())
    throw ShapeError("build_prototypes: deltas and visibility grids must agree on K");
  const size_t n_kp = deltas[0].size();
  for (size_t k = 0; k < deltas.size(); ++k)
    if (deltas[k].size() != n_kp || vis[k].size() != n_kp)
      throw ShapeError("build_prototypes: ragged keypoint dimension");

  std::vector<Prototype> protos(n_kp);
  for (size_t n = 0; n < n_kp; ++n) {
    std::vector<Var> contributors;
    for (size_t k = 0; k < deltas.size(); ++k)
      if (vis[k][n]) contributors.push_back(deltas[k][n]);
    if (contributors.empty()) {
      // Placeholder shape comes from any embedding of this keypoint.
      protos[n].values = make_constant(Tensor(deltas[0][n]->value.shape()));
      protos[n].visible = false;
    } else if (contributors.size() == 1) {
      protos[n].values = contributors[0];
      protos[n].visible = true;
    } else {
      protos[n].values = mean_vectors(contributors);
      protos[n].visible = true;
    }
  }
  return protos;
}

Var correlate(const Var& query_fmap, const Var& mu) {
  if (query_fmap->value.ndim() != 3)
    throw ShapeError("correlate expects a (c,h,w) query feature map");
  if (mu->value.ndim() != 1 || mu->value.dim(0) != query_fmap->value.dim(0))
    throw ShapeError("correlate: prototype length " + Tensor::shape_str(mu->value.shape()) +
                     " does not match feature channels " +
                     std::to_string(query_fmap->value.dim(0)));
  return broadcast_mul_channels(query_fmap, mu);
}

DescriptorNet::DescriptorNet(int in_channels, nn::ParamRegistry& reg, Rng& rng)
    : in_channels_(in_channels) {
  if (in_channels < 4 || in_channels % 4 != 0)
    throw ConfigError("descriptor network needs channels divisible by 4, got " +
                      std::to_string(in_channels));
  const int q = in_channels / 4;  // reference: 2048 -> 512, 512, 1024
  c1_ = nn::Conv2d(in_channels, q, 3, 2, 1, "descriptor.c1", reg, rng);
  c2_ = nn::Conv2d(q, q, 3, 2, 1, "descriptor.c2", reg, rng);
  c3_ = nn::Conv2d(q, 2 * q, 3, 2, 1, "descriptor.c3", reg, rng);
}

namespace {

int halved(int s) { return (s - 1) / 2 + 1; }  // 3x3 stride-2 pad-1 output size

}  // namespace

Var DescriptorNet::describe(const Var& correlated) const {
  const Tensor& v = correlated->value;
  if (v.ndim() != 3 || v.dim(0) != in_channels_)
    throw ShapeError("describe expects a (" + std::to_string(in_channels_) +
                     ",h,w) map, got " + Tensor::shape_str(v.shape()));
  if (halved(halved(v.dim(1))) < 1 || halved(halved(v.dim(2))) < 1)
    throw ShapeError("describe: spatial size " + std::to_string(v.dim(1)) +
                     " collapses before the final convolution");
  Var h = relu(c1_.forward(correlated));
  h = relu(c2_.forward(h));
  h = relu(c3_.forward(h));
  return flatten(h);
}

int DescriptorNet::out_dim(int feat_size) const {
  const int s = halved(halved(halved(feat_size)));
  return (in_channels_ / 2) * s * s;
}

}  // namespace sketchkp
