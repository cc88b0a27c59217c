#include "sketchkp/encoder.hpp"

#include <cmath>

#include "sketchkp/dataset.hpp"
#include "sketchkp/errors.hpp"

namespace sketchkp {

Tensor raster_to_tensor(const cv::Mat& bgr) {
  if (bgr.empty() || bgr.type() != CV_8UC3)
    throw ValidationError("raster_to_tensor expects a non-empty 8-bit BGR image");
  const int h = bgr.rows, w = bgr.cols;
  Tensor t({3, h, w});
  for (int y = 0; y < h; ++y) {
    const cv::Vec3b* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < w; ++x) {
      // BGR -> RGB, scaled to [-1, 1]
      t.at3(0, y, x) = row[x][2] / 127.5 - 1.0;
      t.at3(1, y, x) = row[x][1] / 127.5 - 1.0;
      t.at3(2, y, x) = row[x][0] / 127.5 - 1.0;
    }
  }
  return t;
}

Var Backbone::encode(const Var& image) const {
  const BackboneSpec s = spec();
  const Tensor& v = image->value;
  if (v.ndim() != 3 || v.dim(0) != 3 || v.dim(1) != s.input_size || v.dim(2) != s.input_size)
    throw ShapeError("encoder expects a 3x" + std::to_string(s.input_size) + "x" +
                     std::to_string(s.input_size) + " input, got " +
                     Tensor::shape_str(v.shape()));
  return forward(image);
}

namespace {

// Keeps feature maps at the descriptor-friendly 12x12 footprint when the
// post-conv resolution divides evenly.
constexpr int kTargetMap = 12;

}  // namespace

TinyBackbone::TinyBackbone(int input_size, nn::ParamRegistry& reg, Rng& rng)
    : c1_(3, 16, 3, 2, 1, "encoder.c1", reg, rng),
      c2_(16, 32, 3, 2, 1, "encoder.c2", reg, rng),
      c3_(32, 64, 3, 2, 1, "encoder.c3", reg, rng) {
  if (input_size % 8 != 0)
    throw ConfigError("tiny backbone needs an input size divisible by 8, got " +
                      std::to_string(input_size));
  const int post_conv = input_size / 8;
  pool_factor_ = (post_conv > kTargetMap && post_conv % kTargetMap == 0)
                     ? post_conv / kTargetMap
                     : 1;
  spec_ = {input_size, post_conv / pool_factor_, 64};
}

Var TinyBackbone::forward(const Var& image) const {
  Var h = relu(c1_.forward(image));
  h = relu(c2_.forward(h));
  h = relu(c3_.forward(h));
  if (pool_factor_ > 1) h = avgpool2d(h, pool_factor_);
  return h;
}

Var ReferenceBackbone::Bottleneck::forward(const Var& x) const {
  Var h = relu(reduce.forward(x));
  h = relu(conv.forward(h));
  h = expand.forward(h);
  Var skip = projected ? project.forward(x) : x;
  return relu(add(h, skip));
}

ReferenceBackbone::ReferenceBackbone(int input_size, nn::ParamRegistry& reg, Rng& rng)
    : stem_(3, 64, 7, 2, 3, "encoder.stem", reg, rng) {
  if (input_size % 32 != 0)
    throw ConfigError("reference backbone needs an input size divisible by 32, got " +
                      std::to_string(input_size));
  spec_ = {input_size, input_size / 32, 2048};

  struct StagePlan {
    int in, mid, out, stride;
  };
  const StagePlan plan[4] = {
      {64, 64, 256, 1}, {256, 128, 512, 2}, {512, 256, 1024, 2}, {1024, 512, 2048, 2}};
  int bi = 0;
  for (const auto& st : plan) {
    Bottleneck b;
    std::string base = "encoder.block" + std::to_string(bi++);
    b.reduce = nn::Conv2d(st.in, st.mid, 1, 1, 0, base + ".reduce", reg, rng);
    b.conv = nn::Conv2d(st.mid, st.mid, 3, st.stride, 1, base + ".conv", reg, rng);
    b.expand = nn::Conv2d(st.mid, st.out, 1, 1, 0, base + ".expand", reg, rng);
    b.projected = st.in != st.out || st.stride != 1;
    if (b.projected)
      b.project = nn::Conv2d(st.in, st.out, 1, st.stride, 0, base + ".project", reg, rng);
    blocks_.push_back(std::move(b));
  }
}

Var ReferenceBackbone::forward(const Var& image) const {
  Var h = relu(stem_.forward(image));
  h = maxpool2d(h, 2, 2);
  for (const auto& b : blocks_) h = b.forward(h);
  return h;
}

std::unique_ptr<Backbone> make_backbone(const RunConfig& cfg, nn::ParamRegistry& reg, Rng& rng) {
  if (cfg.backbone == "tiny") return std::make_unique<TinyBackbone>(cfg.image_size, reg, rng);
  if (cfg.backbone == "reference")
    return std::make_unique<ReferenceBackbone>(cfg.image_size, reg, rng);
  throw ConfigError("unknown encoder.backbone '" + cfg.backbone + "'");
}

Tensor gaussian_pool_weights(double ux, double uy, int feat_size, int input_size, double xi) {
  if (xi <= 0.0) throw ValidationError("gaussian pooling needs xi > 0");
  if (feat_size <= 0 || input_size <= 0 || input_size % feat_size != 0)
    throw ShapeError("feature size must evenly divide the input size");
  const double stride = static_cast<double>(input_size) / feat_size;
  const double px = unit_to_pixel(ux, input_size);
  const double py = unit_to_pixel(uy, input_size);
  const double inv = 1.0 / (2.0 * xi * xi);
  Tensor w({feat_size, feat_size});
  for (int y = 0; y < feat_size; ++y) {
    const double cy = (y + 0.5) * stride;
    for (int x = 0; x < feat_size; ++x) {
      const double cx = (x + 0.5) * stride;
      const double d2 = (cx - px) * (cx - px) + (cy - py) * (cy - py);
      w[y * feat_size + x] = std::exp(-d2 * inv);
    }
  }
  return w;
}

Var gaussian_pool(const Var& fmap, double ux, double uy, int input_size, double xi) {
  const Tensor& v = fmap->value;
  if (v.ndim() != 3) throw ShapeError("gaussian_pool expects a (c,h,w) map");
  if (v.dim(1) != v.dim(2)) throw ShapeError("gaussian_pool expects a square map");
  Tensor w = gaussian_pool_weights(ux, uy, v.dim(1), input_size, xi);
  return weighted_spatial_sum(fmap, w);
}

}  // namespace sketchkp
