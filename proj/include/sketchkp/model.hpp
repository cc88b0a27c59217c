#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <opencv2/core.hpp>

#include "sketchkp/config.hpp"
#include "sketchkp/dataset.hpp"
#include "sketchkp/destyle.hpp"
#include "sketchkp/encoder.hpp"
#include "sketchkp/locator.hpp"
#include "sketchkp/matcher.hpp"

namespace sketchkp {

// The assembled network: shared encoder, de-stylization net, descriptor net,
// and grid locator heads. Parameter registration order is fixed (encoder,
// destyle, descriptor, locator) so optimizer state aligns across runs.
struct Model {
  RunConfig cfg;
  nn::ParamRegistry reg;
  std::unique_ptr<Backbone> backbone;
  DestyleNet destyle;
  DescriptorNet descriptor;
  GridLocator locator;

  // Builds all submodules with seed-derived initialization; loads encoder
  // weights from cfg.weights when set and applies cfg.freeze.
  static Model build(const RunConfig& cfg);

  // Parameters the optimizer updates (frozen encoder params excluded).
  std::vector<Var> trainable_params() const;

  // Stable name->tensor snapshot of every parameter.
  std::vector<std::pair<std::string, Tensor>> named_tensors() const;

  // Copies matching tensors into parameters. With require_all set, every
  // parameter whose name starts with prefix_filter must be present.
  void load_named_tensors(const std::vector<std::pair<std::string, Tensor>>& tensors,
                          const std::string& prefix_filter, bool require_all);

  // Raster -> input leaf -> encoder feature map.
  Var encode_raster(const cv::Mat& bgr) const;
};

// Which keypoint family of an annotated image an episode step works on:
// the sampled vocabulary subset (main) or the synthesized auxiliary points.
struct KeypointSet {
  std::vector<int> ids;  // vocabulary ids; unused for the aux family
  bool aux = false;

  int count(const AnnotatedImage& img) const {
    return aux ? static_cast<int>(img.aux.size()) : static_cast<int>(ids.size());
  }
  const Keypoint& of(const AnnotatedImage& img, int j) const {
    return aux ? img.aux.at(static_cast<size_t>(j))
               : img.keypoints.at(static_cast<size_t>(ids.at(static_cast<size_t>(j))));
  }
};

// Encoded support set: feature maps of the primary modality plus their global
// average pools (skipped when de-stylization is the identity).
struct SupportForward {
  std::vector<Var> fmaps;
  std::vector<Var> gaps;  // empty when not needed
};

SupportForward encode_supports(const Model& model, const DatasetIndex& index,
                               const std::vector<SupportItem>& supports);

// Per-support de-stylized embeddings and the prototypes built from them.
struct SupportSetEmbeddings {
  std::vector<std::vector<Var>> deltas;  // [k][j]
  std::vector<std::vector<bool>> vis;    // [k][j]
  std::vector<Prototype> prototypes;     // [j]
};

SupportSetEmbeddings support_embeddings(const Model& model, const SupportForward& fwd,
                                        const std::vector<SupportItem>& supports,
                                        const KeypointSet& set);

}  // namespace sketchkp
