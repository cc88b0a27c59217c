#pragma once

#include <vector>

#include "sketchkp/autograd.hpp"
#include "sketchkp/nn.hpp"

namespace sketchkp {

// Support keypoint prototype: mean of the visible de-stylized embeddings.
// Keypoints visible in no support carry a zero placeholder that must never be
// consumed (the visible flag gates all downstream use).
struct Prototype {
  Var values;
  bool visible = false;
};

// deltas[k][n]: de-stylized embedding of keypoint n in support k.
// vis[k][n]: whether that keypoint is labeled visible in support k.
// Prototype n averages over supports with vis=1 (divisor = visible count).
std::vector<Prototype> build_prototypes(const std::vector<std::vector<Var>>& deltas,
                                        const std::vector<std::vector<bool>>& vis);

// Correlated map A[x] = f_m[x] * mu (per channel, every spatial cell).
Var correlate(const Var& query_fmap, const Var& mu);

// Query keypoint descriptor network: three 3x3 stride-2 pad-1 convolutions
// with rectified activations, channels c -> c/4 -> c/4 -> c/2, then flatten.
// Reference scale: 2048x12x12 -> 512x6x6 -> 512x3x3 -> 1024x2x2 -> 4096.
class DescriptorNet {
 public:
  DescriptorNet() = default;
  DescriptorNet(int in_channels, nn::ParamRegistry& reg, Rng& rng);

  Var describe(const Var& correlated) const;
  int out_dim(int feat_size) const;  // descriptor length for an h=w=feat_size map
  int in_channels() const { return in_channels_; }

 private:
  int in_channels_ = 0;
  nn::Conv2d c1_, c2_, c3_;
};

}  // namespace sketchkp
