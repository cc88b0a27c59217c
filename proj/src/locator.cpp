#include "sketchkp/locator.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sketchkp/errors.hpp"

namespace sketchkp {

namespace {

constexpr double kCellEps = 1e-6;  // keeps floor(t) below L at the u = +1 boundary

double clamp_unit(double v) { return std::clamp(v, -1.0, 1.0); }

}  // namespace

GridTarget encode_grid_target(double ux, double uy, int L) {
  if (L <= 0) throw ValidationError("grid scale must be positive");
  if (ux < -1.0 || ux > 1.0 || uy < -1.0 || uy > 1.0)
    throw ValidationError("encode_grid_target: coordinates must lie in [-1, 1], got (" +
                          std::to_string(ux) + ", " + std::to_string(uy) + ")");
  // The clamp only pins the cell index inside the grid; offsets measure the
  // raw t so a boundary point lands exactly on the outer cell's far edge.
  const double tx = (ux / 2.0 + 0.5) * L;
  const double ty = (uy / 2.0 + 0.5) * L;
  const int zx = static_cast<int>(std::floor(std::clamp(tx, 0.0, L - kCellEps)));
  const int zy = static_cast<int>(std::floor(std::clamp(ty, 0.0, L - kCellEps)));
  GridTarget t;
  t.scale = L;
  t.label = zy * L + zx;
  t.off_x = clamp_unit(2.0 * (tx - zx - 0.5));
  t.off_y = clamp_unit(2.0 * (ty - zy - 0.5));
  return t;
}

GridPoint decode_grid(int label, double off_x, double off_y, int L) {
  if (L <= 0) throw ValidationError("grid scale must be positive");
  if (label < 0 || label >= L * L)
    throw ValidationError("decode_grid: label " + std::to_string(label) +
                          " out of range for scale " + std::to_string(L));
  const int zx = label % L;
  const int zy = label / L;
  GridPoint p;
  p.ux = 2.0 * (zx + 0.5 + off_x / 2.0) / L - 1.0;
  p.uy = 2.0 * (zy + 0.5 + off_y / 2.0) / L - 1.0;
  return p;
}

GridScales::GridScales(std::vector<int> s) : scales(std::move(s)) {
  if (scales.empty()) throw ConfigError("grid scale list must not be empty");
  for (size_t i = 0; i < scales.size(); ++i) {
    if (scales[i] <= 0) throw ConfigError("grid scales must be positive");
    if (i > 0 && scales[i] <= scales[i - 1])
      throw ConfigError("grid scales must be strictly increasing");
  }
}

GridLocator::GridLocator(int descriptor_dim, const GridScales& scales, nn::ParamRegistry& reg,
                         Rng& rng)
    : scales_(scales.scales) {
  for (int L : scales_) {
    std::string base = "locator.s" + std::to_string(L);
    cls_heads_.emplace_back(descriptor_dim, L * L, base + ".cls", reg, rng);
    reg_heads_.emplace_back(descriptor_dim, 2, base + ".reg", reg, rng);
  }
}

int GridLocator::scale_at(int scale_index) const {
  if (scale_index < 0 || scale_index >= static_cast<int>(scales_.size()))
    throw ConfigError("unknown grid scale index " + std::to_string(scale_index));
  return scales_[static_cast<size_t>(scale_index)];
}

Var GridLocator::classify_grid(const Var& psi, int scale_index) const {
  scale_at(scale_index);  // range check
  return softmax(cls_heads_[static_cast<size_t>(scale_index)].forward(psi));
}

Var GridLocator::regress_offset(const Var& psi, int scale_index) const {
  scale_at(scale_index);
  return reg_heads_[static_cast<size_t>(scale_index)].forward(psi);
}

GridPoint GridLocator::predict_keypoint(const Var& psi, const std::vector<int>* gt_labels) const {
  if (gt_labels && gt_labels->size() != scales_.size())
    throw ValidationError("predict_keypoint: ground-truth labels must cover every scale");
  double sx = 0.0, sy = 0.0;
  for (int si = 0; si < static_cast<int>(scales_.size()); ++si) {
    const int L = scales_[static_cast<size_t>(si)];
    int label;
    if (gt_labels) {
      label = (*gt_labels)[static_cast<size_t>(si)];
    } else {
      Var probs = classify_grid(psi, si);
      label = 0;
      for (std::int64_t j = 1; j < probs->value.size(); ++j)
        if (probs->value[j] > probs->value[label]) label = static_cast<int>(j);
    }
    Var off = regress_offset(psi, si);
    GridPoint p = decode_grid(label, clamp_unit(off->value[0]), clamp_unit(off->value[1]), L);
    sx += p.ux;
    sy += p.uy;
  }
  const double inv = 1.0 / static_cast<double>(scales_.size());
  return {sx * inv, sy * inv};
}

Var classification_loss(const Var& probs, int gt_label) {
  if (gt_label < 0 || gt_label >= probs->value.size())
    throw ValidationError("classification_loss: ground-truth label " +
                          std::to_string(gt_label) + " out of range");
  return pick_neg_log(probs, gt_label);
}

Var offset_loss(const Var& pred_offsets, double gt_off_x, double gt_off_y) {
  return l1_diff(pred_offsets, make_constant(Tensor({2}, {gt_off_x, gt_off_y})));
}

}  // namespace sketchkp
