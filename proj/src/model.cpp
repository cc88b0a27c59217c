#include "sketchkp/model.hpp"

#include <map>
#include <set>

#include "sketchkp/checkpoint.hpp"
#include "sketchkp/errors.hpp"

namespace sketchkp {

Model Model::build(const RunConfig& cfg) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  // Initialization draws are independent of the episode stream.
  Rng init_rng(Rng::derive(cfg.seed, 0x1217));
  m.backbone = make_backbone(cfg, m.reg, init_rng);
  const BackboneSpec spec = m.backbone->spec();
  m.destyle = DestyleNet(spec.channels, cfg.destyle_identity, m.reg, init_rng);
  m.descriptor = DescriptorNet(spec.channels, m.reg, init_rng);
  m.locator = GridLocator(m.descriptor.out_dim(spec.feat_size), GridScales(cfg.scales), m.reg,
                          init_rng);

  if (!cfg.weights.empty()) {
    Checkpoint ck = load_checkpoint(cfg.weights);
    m.load_named_tensors(ck.tensors, "encoder.", /*require_all=*/true);
  }
  if (cfg.freeze) {
    for (const Var& p : m.reg.params)
      if (p->name.rfind("encoder.", 0) == 0) p->requires_grad = false;
  }
  return m;
}

std::vector<Var> Model::trainable_params() const {
  std::vector<Var> out;
  for (const Var& p : reg.params)
    if (p->requires_grad) out.push_back(p);
  return out;
}

std::vector<std::pair<std::string, Tensor>> Model::named_tensors() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(reg.params.size());
  for (const Var& p : reg.params) out.emplace_back(p->name, p->value);
  return out;
}

void Model::load_named_tensors(const std::vector<std::pair<std::string, Tensor>>& tensors,
                               const std::string& prefix_filter, bool require_all) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : tensors) by_name[name] = &t;

  size_t loaded = 0;
  for (const Var& p : reg.params) {
    if (!prefix_filter.empty() && p->name.rfind(prefix_filter, 0) != 0) continue;
    auto it = by_name.find(p->name);
    if (it == by_name.end()) {
      if (require_all)
        throw ValidationError("weight archive is missing tensor '" + p->name + "'");
      continue;
    }
    if (it->second->shape() != p->value.shape())
      throw ShapeError("weight tensor '" + p->name + "' has shape " +
                       Tensor::shape_str(it->second->shape()) + ", expected " +
                       Tensor::shape_str(p->value.shape()));
    p->value = *it->second;
    ++loaded;
  }
  if (loaded == 0)
    throw ValidationError("weight archive contains no tensors matching '" + prefix_filter + "'");
}

Var Model::encode_raster(const cv::Mat& bgr) const {
  return backbone->encode(make_constant(raster_to_tensor(bgr)));
}

SupportForward encode_supports(const Model& model, const DatasetIndex& index,
                               const std::vector<SupportItem>& supports) {
  SupportForward fwd;
  const bool need_gap = !model.destyle.identity();
  for (const SupportItem& item : supports) {
    cv::Mat raster = load_raster(index, item.primary, model.cfg);
    Var f = model.encode_raster(raster);
    fwd.fmaps.push_back(f);
    if (need_gap) fwd.gaps.push_back(global_avg_pool(f));
  }
  return fwd;
}

SupportSetEmbeddings support_embeddings(const Model& model, const SupportForward& fwd,
                                        const std::vector<SupportItem>& supports,
                                        const KeypointSet& set) {
  if (fwd.fmaps.size() != supports.size())
    throw ShapeError("support forward pass does not match the support list");
  SupportSetEmbeddings out;
  const int input_size = model.cfg.image_size;
  const double xi = model.cfg.xi;
  for (size_t k = 0; k < supports.size(); ++k) {
    const AnnotatedImage& ann = supports[k].primary;
    const int n = set.count(ann);
    std::vector<Var> deltas(static_cast<size_t>(n));
    std::vector<bool> vis(static_cast<size_t>(n), false);
    for (int j = 0; j < n; ++j) {
      const Keypoint& kp = set.of(ann, j);
      if (!kp.visible()) {
        // Placeholder keeps the grid rectangular; never consumed (vis gates it).
        deltas[static_cast<size_t>(j)] =
            make_constant(Tensor({model.backbone->spec().channels}));
        continue;
      }
      Var phi = gaussian_pool(fwd.fmaps[k], kp.ux, kp.uy, input_size, xi);
      deltas[static_cast<size_t>(j)] =
          model.destyle.identity() ? phi : model.destyle.destylize_pooled(phi, fwd.gaps[k]);
      vis[static_cast<size_t>(j)] = true;
    }
    out.deltas.push_back(std::move(deltas));
    out.vis.push_back(std::move(vis));
  }
  out.prototypes = build_prototypes(out.deltas, out.vis);
  return out;
}

}  // namespace sketchkp
