#pragma once

#include <vector>

#include "sketchkp/autograd.hpp"
#include "sketchkp/nn.hpp"

namespace sketchkp {

// Maps support keypoint embeddings to style-agnostic embeddings by fusing the
// local embedding with the global context of its feature map:
//   g     = global average pool of the feature map        (c)
//   ctx   = MLP1([phi; g])        2c -> c -> c, rectified between layers
//   fused = phi + ctx
//   gated = fused * sigmoid(fused)
//   out   = MLP2(gated)           c -> c -> c, rectified between layers
// With `identity` set the embedding passes through untouched (baseline mode)
// and no parameters are created.
class DestyleNet {
 public:
  DestyleNet() = default;
  DestyleNet(int channels, bool identity, nn::ParamRegistry& reg, Rng& rng);

  // g must be the length-c global average pool of the embedding's feature map.
  Var destylize_pooled(const Var& phi, const Var& g) const;

  // Convenience form that derives g from the feature map itself.
  Var destylize(const Var& phi, const Var& fmap) const;

  bool identity() const { return identity_; }
  int channels() const { return channels_; }

 private:
  bool identity_ = true;
  int channels_ = 0;
  nn::Linear mlp1_in_, mlp1_out_;  // 2c -> c, c -> c
  nn::Linear mlp2_in_, mlp2_out_;  // c -> c,  c -> c
};

// Style-consistency loss over three de-stylized variants of the same support
// (primary edgemap and two alternative styles): for every visible keypoint n,
// the pairwise distances ||d - d1|| + ||d - d2|| + ||d1 - d2|| are summed.
Var style_loss(const std::vector<Var>& d_s, const std::vector<Var>& d_s1,
               const std::vector<Var>& d_s2, const std::vector<bool>& visible);

}  // namespace sketchkp
