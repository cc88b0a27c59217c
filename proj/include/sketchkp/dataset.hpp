#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <opencv2/core.hpp>

#include "sketchkp/config.hpp"
#include "sketchkp/errors.hpp"
#include "sketchkp/rng.hpp"

namespace sketchkp {

// Which raster a sample presents to the encoder.
//   photo       original image
//   edge_s      primary edgemap slot        <stem>.S.png
//   edge_s1     first style variant slot    <stem>.S1.png
//   edge_s2     second style variant slot   <stem>.S2.png
enum class Modality { photo, edge_s, edge_s1, edge_s2 };

const char* modality_suffix(Modality m);  // "S", "S1", "S2"; photo has none

// One named keypoint in normalized coordinates u in [-1, 1]^2
// (u = 2 * pixel / image_size - 1). v != 0 means visible/labeled.
struct Keypoint {
  double ux = 0.0;
  double uy = 0.0;
  int v = 0;
  bool visible() const { return v != 0; }
};

struct AnnotatedImage {
  std::string path;         // resolved path of the photo on disk
  std::string stem;         // filename without directory/extension, keys the cache
  std::string class_label;
  std::array<double, 4> bbox{};  // pixel units in the resize-target frame: x0,y0,x1,y1
  std::vector<Keypoint> keypoints;  // indexed by keypoint id, full vocabulary
  std::vector<Keypoint> aux;        // auxiliary interpolants, fixed at load time
  Modality modality = Modality::photo;
};

struct DatasetIndex {
  std::string root_dir;  // directory of the index file; relative paths resolve here
  std::vector<std::string> keypoint_names;
  std::vector<int> base_keypoints;
  std::vector<int> novel_keypoints;
  std::vector<std::pair<int, int>> aux_pairs;
  std::vector<AnnotatedImage> images;
  std::vector<std::string> classes;                 // sorted, unique
  std::map<std::string, std::vector<int>> by_class; // class -> image indices

  int num_keypoints() const { return static_cast<int>(keypoint_names.size()); }
  int num_aux(const std::vector<double>& t_values) const {
    return static_cast<int>(aux_pairs.size() * t_values.size());
  }
};

// Foreground mask in the resize-target frame. Either read from
// <mask_dir>/<stem>.mask.png (nonzero = salient) or synthesized by filling
// the annotation's bounding box.
struct SaliencyMask {
  cv::Mat mask;  // CV_8U, image_size x image_size
  enum class Source { precomputed, bbox_fill } source = Source::bbox_fill;

  bool contains(double ux, double uy, int image_size) const;
};

SaliencyMask load_saliency_mask(const AnnotatedImage& img, const std::string& mask_dir,
                                int image_size);

// Parses the annotation index (JSON) and normalizes keypoints/bboxes to the
// resize-target frame. Also fixes each image's auxiliary keypoints: for every
// labeled pair (a, b) with both endpoints visible and every t in t_values,
// the point u_a + t * (u_b - u_a), visible iff it falls on the saliency mask.
DatasetIndex load_annotations(const std::string& index_path, int image_size,
                              const std::string& mask_dir,
                              const std::vector<double>& t_values);

// Edge detector choices for the primary slot. External slots are precomputed
// by other tools; this binary only consumes their files.
enum class EdgeDetector { canny_builtin, external_s, external_s1, external_s2 };

EdgeDetector parse_edge_detector(const std::string& name);

// Plain Canny edge extraction (grayscale -> blur -> Canny), white edges on black.
cv::Mat canny_edgemap(const cv::Mat& image_bgr, double low, double high);

// Returns the edgemap raster for `img`, honoring the cache:
//   canny_builtin  computes on a miss and writes <cache_dir>/<stem>.S.png
//   external_*     never computes; a missing file raises CacheMissError
// The write is atomic (temp file + rename) so concurrent runs see whole files.
cv::Mat synthesize_edgemap(const cv::Mat& image_bgr, EdgeDetector detector,
                           const std::string& cache_dir, const std::string& stem,
                           double canny_low, double canny_high);

// Full raster load for one sample: photo from disk (resized to size x size),
// or the cached/synthesized edgemap for edge modalities.
cv::Mat load_raster(const DatasetIndex& index, const AnnotatedImage& img,
                    const RunConfig& cfg);

// One support sample plus its optional style-variant companions (same
// annotations, different edge styles). Companions are present only when the
// corresponding cache file exists.
struct SupportItem {
  AnnotatedImage primary;
  std::optional<AnnotatedImage> s1;
  std::optional<AnnotatedImage> s2;
};

struct Episode {
  std::string class_label;
  std::vector<SupportItem> support;    // K items
  std::vector<AnnotatedImage> query;   // M photos
  std::vector<int> keypoint_ids;       // which vocabulary entries this episode uses
};

// What sample_episode needs beyond the index.
struct EpisodeSpec {
  int k = 1;
  int m = 5;
  std::vector<int> keypoint_ids;          // e.g. base ids during training
  std::vector<std::string> classes;       // candidate classes (must be non-empty)
  Modality support_modality = Modality::edge_s;
  bool want_style_variants = false;       // attach s1/s2 companions when cached
  std::string cache_dir;                  // needed to probe for companions
  // Optional per-class instance whitelist (e.g. the train side of a split).
  // Null means every instance of the class is fair game.
  const std::map<std::string, std::vector<int>>* instance_pool = nullptr;
};

// Samples one episode: a class with at least k+m instances, then k support and
// m query images without overlap. Deterministic in `seed`.
Episode sample_episode(const DatasetIndex& index, const EpisodeSpec& spec,
                       unsigned long long seed);

// Convenience wrapper used by the trainer: builds an EpisodeSpec from the run
// config (base keypoints, train classes, support modality for this episode).
Episode sample_training_episode(const DatasetIndex& index, const RunConfig& cfg,
                                Modality support_modality, unsigned long long seed);

// Classes used for training: cfg.train_classes when given, otherwise every
// class in the index minus cfg.eval_classes. Errors on names absent from the
// index and on an empty result.
std::vector<std::string> resolve_train_classes(const DatasetIndex& index, const RunConfig& cfg);

// Instance-level split. Training classes contribute a split_train_fraction
// share of their images to `train` and the rest to `eval`; held-out classes
// contribute everything to `eval`. Deterministic in cfg.split_seed and
// independent of class enumeration order.
struct InstanceSplit {
  std::map<std::string, std::vector<int>> train;
  std::map<std::string, std::vector<int>> eval;
};

InstanceSplit split_instances(const DatasetIndex& index, const RunConfig& cfg);

// Auxiliary keypoint construction for one image (exposed for tests).
std::vector<Keypoint> generate_auxiliary_keypoints(const std::vector<Keypoint>& keypoints,
                                                   const std::vector<std::pair<int, int>>& pairs,
                                                   const std::vector<double>& t_values,
                                                   const SaliencyMask& mask, int image_size);

// Pixel <-> normalized coordinate maps for the resize-target frame.
inline double pixel_to_unit(double pixel, int image_size) {
  return 2.0 * pixel / static_cast<double>(image_size) - 1.0;
}
inline double unit_to_pixel(double u, int image_size) {
  return (u + 1.0) * 0.5 * static_cast<double>(image_size);
}

}  // namespace sketchkp
