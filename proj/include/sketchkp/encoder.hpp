#pragma once

#include <memory>
#include <vector>

#include <opencv2/core.hpp>

#include "sketchkp/autograd.hpp"
#include "sketchkp/config.hpp"
#include "sketchkp/nn.hpp"

namespace sketchkp {

// BGR 8-bit raster -> (3,H,W) tensor, RGB channel order, values in [-1, 1].
Tensor raster_to_tensor(const cv::Mat& bgr);

struct BackboneSpec {
  int input_size = 0;  // expected H = W
  int feat_size = 0;   // output h = w
  int channels = 0;    // output C
  int stride() const { return input_size / feat_size; }
};

// Shared support/query encoder: (3,H,W) -> (C,h,w).
class Backbone {
 public:
  virtual ~Backbone() = default;
  virtual Var forward(const Var& image) const = 0;
  virtual BackboneSpec spec() const = 0;

  // Validates the input tensor then runs forward.
  Var encode(const Var& image) const;
};

// Compact CPU-scale encoder: three stride-2 convolutions (3->16->32->64),
// then non-overlapping average pooling down to a 12x12 map when the input
// allows it (inputs divisible by 96). 384 -> 48 -> pool 4 -> 12; 96 -> 12.
class TinyBackbone : public Backbone {
 public:
  TinyBackbone(int input_size, nn::ParamRegistry& reg, Rng& rng);
  Var forward(const Var& image) const override;
  BackboneSpec spec() const override { return spec_; }

 private:
  BackboneSpec spec_;
  int pool_factor_ = 1;
  nn::Conv2d c1_, c2_, c3_;
};

// Full-size encoder: 7x7 stride-2 stem, 2x2 max pool, then four
// bottleneck-residual stages reaching 2048 channels at total stride 32
// (384 -> 12). Weights load from `encoder.weights` when configured.
class ReferenceBackbone : public Backbone {
 public:
  ReferenceBackbone(int input_size, nn::ParamRegistry& reg, Rng& rng);
  Var forward(const Var& image) const override;
  BackboneSpec spec() const override { return spec_; }

 private:
  struct Bottleneck {
    nn::Conv2d reduce, conv, expand;  // 1x1, 3x3 (carries the stride), 1x1
    nn::Conv2d project;               // 1x1 shortcut when shape changes
    bool projected = false;
    Var forward(const Var& x) const;
  };

  BackboneSpec spec_;
  nn::Conv2d stem_;
  std::vector<Bottleneck> blocks_;
};

// Builds the configured backbone, registering its parameters under "encoder.".
std::unique_ptr<Backbone> make_backbone(const RunConfig& cfg, nn::ParamRegistry& reg, Rng& rng);

// Spatial weights for pooling a feature map around normalized point (ux, uy):
// w[y][x] = exp(-dist^2 / (2 xi^2)) with distances in input pixels and the
// cell (x, y) centered at ((x + 0.5) * stride, (y + 0.5) * stride).
Tensor gaussian_pool_weights(double ux, double uy, int feat_size, int input_size, double xi);

// Keypoint embedding: weighted spatial sum of the feature map (no
// normalization by the weight total).
Var gaussian_pool(const Var& fmap, double ux, double uy, int input_size, double xi);

}  // namespace sketchkp
