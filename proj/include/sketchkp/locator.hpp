#pragma once

#include <vector>

#include "sketchkp/autograd.hpp"
#include "sketchkp/nn.hpp"

namespace sketchkp {

// Ground truth for one keypoint at one grid scale.
struct GridTarget {
  int scale = 0;            // L_i
  int label = 0;            // cell index in {0 .. L_i^2 - 1}, row-major
  double off_x = 0.0;       // within-cell offsets in [-1, 1]
  double off_y = 0.0;
};

struct GridPoint {
  double ux = 0.0;
  double uy = 0.0;
};

// Normalized coords -> grid cell + offsets:
//   t = (u/2 + 0.5) * L, z = floor(clamp(t, 0, L - 1e-6)),
//   label = z_y * L + z_x, offset = 2 (t - z - 0.5) clamped to [-1, 1].
GridTarget encode_grid_target(double ux, double uy, int L);

// Exact inverse away from the boundary clamp:
//   z = (label mod L, label div L), t = z + 0.5 + offset/2, u = 2 t / L - 1.
GridPoint decode_grid(int label, double off_x, double off_y, int L);

// Validated, strictly increasing grid scale list.
struct GridScales {
  std::vector<int> scales;
  explicit GridScales(std::vector<int> s);
  int count() const { return static_cast<int>(scales.size()); }
};

// Per-scale classifier (d -> L^2 probabilities) and regressor (d -> 2) heads.
class GridLocator {
 public:
  GridLocator() = default;
  GridLocator(int descriptor_dim, const GridScales& scales, nn::ParamRegistry& reg, Rng& rng);

  const std::vector<int>& scales() const { return scales_; }
  int scale_at(int scale_index) const;

  // Softmax over the scale's linear head; entries sum to 1.
  Var classify_grid(const Var& psi, int scale_index) const;

  // Unconstrained offset pair; consumers clamp to [-1,1] at decode time.
  Var regress_offset(const Var& psi, int scale_index) const;

  // Inference: per scale, argmax cell + clamped offsets, decoded and averaged.
  // When gt_labels is non-null (training-time decoding), the scale's ground
  // truth cell replaces the argmax and only the offsets come from the heads.
  GridPoint predict_keypoint(const Var& psi, const std::vector<int>* gt_labels = nullptr) const;

 private:
  std::vector<int> scales_;
  std::vector<nn::Linear> cls_heads_;
  std::vector<nn::Linear> reg_heads_;
};

// -log(probs[gt_label]); cross entropy against a one-hot target.
Var classification_loss(const Var& probs, int gt_label);

// l1 distance between the predicted offset pair and the encoded target.
Var offset_loss(const Var& pred_offsets, double gt_off_x, double gt_off_y);

}  // namespace sketchkp
