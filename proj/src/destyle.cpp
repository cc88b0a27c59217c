#include "sketchkp/destyle.hpp"

#include "sketchkp/errors.hpp"

namespace sketchkp {

DestyleNet::DestyleNet(int channels, bool identity, nn::ParamRegistry& reg, Rng& rng)
    : identity_(identity), channels_(channels) {
  if (identity_) return;
  mlp1_in_ = nn::Linear(2 * channels, channels, "destyle.mlp1_in", reg, rng);
  mlp1_out_ = nn::Linear(channels, channels, "destyle.mlp1_out", reg, rng);
  mlp2_in_ = nn::Linear(channels, channels, "destyle.mlp2_in", reg, rng);
  mlp2_out_ = nn::Linear(channels, channels, "destyle.mlp2_out", reg, rng);
}

Var DestyleNet::destylize_pooled(const Var& phi, const Var& g) const {
  if (identity_) return phi;
  if (phi->value.ndim() != 1 || phi->value.dim(0) != channels_)
    throw ShapeError("destylize expects a length-" + std::to_string(channels_) +
                     " embedding, got " + Tensor::shape_str(phi->value.shape()));
  if (g->value.ndim() != 1 || g->value.dim(0) != channels_)
    throw ShapeError("destylize expects a length-" + std::to_string(channels_) +
                     " global context, got " + Tensor::shape_str(g->value.shape()));
  Var ctx = mlp1_out_.forward(relu(mlp1_in_.forward(concat(phi, g))));
  Var fused = add(phi, ctx);
  Var gated = mul(fused, sigmoid(fused));
  return mlp2_out_.forward(relu(mlp2_in_.forward(gated)));
}

Var DestyleNet::destylize(const Var& phi, const Var& fmap) const {
  if (identity_) return phi;
  if (fmap->value.ndim() != 3)
    throw ShapeError("destylize expects a (c,h,w) feature map");
  return destylize_pooled(phi, global_avg_pool(fmap));
}

Var style_loss(const std::vector<Var>& d_s, const std::vector<Var>& d_s1,
               const std::vector<Var>& d_s2, const std::vector<bool>& visible) {
  if (d_s.size() != d_s1.size() || d_s.size() != d_s2.size() || d_s.size() != visible.size())
    throw ShapeError("style_loss: variant lists must be aligned by keypoint");
  std::vector<Var> terms;
  for (size_t n = 0; n < d_s.size(); ++n) {
    if (!visible[n]) continue;
    terms.push_back(l2_diff(d_s[n], d_s1[n]));
    terms.push_back(l2_diff(d_s[n], d_s2[n]));
    terms.push_back(l2_diff(d_s1[n], d_s2[n]));
  }
  if (terms.empty()) return make_scalar(0.0);
  return sum_scalars(terms);
}

}  // namespace sketchkp
