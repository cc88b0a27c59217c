#pragma once

// Deterministic synthetic polygon dataset for desk-scale tests: hexagonal
// shapes in four silhouette classes, six vertex keypoints each, rendered as
// filled photos plus pre-written S1/S2 edge-style variants in the cache.

#include <string>
#include <vector>

#include "sketchkp/config.hpp"

namespace sketchkp::testsupport {

struct SyntheticSpec {
  std::string root;               // directory to create (images/, index.json, edgemaps/)
  int image_count = 50;
  int image_size = 96;
  unsigned long long seed = 1;
  bool style_variants = true;     // write <stem>.S1.png / <stem>.S2.png into the cache
};

struct SyntheticDataset {
  std::string root;
  std::string index_path;
  std::string cache_dir;
  std::vector<std::string> classes;  // e.g. {"hexa", "pin", "slab", "spike"}
};

SyntheticDataset generate_synthetic_dataset(const SyntheticSpec& spec);

// Tiny-backbone run configuration wired to a generated dataset; callers
// override iteration counts, lambdas, and class splits per test.
RunConfig synthetic_run_config(const SyntheticDataset& ds, int image_size);

}  // namespace sketchkp::testsupport
