#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sketchkp/tensor.hpp"

namespace sketchkp {

// Single-file versioned archive of a training run: iteration counter, the
// canonical config snapshot, all named parameter tensors, and (optionally)
// Adam state aligned with the trainable-parameter order. Round-trips
// bit-exactly through save/load on a little-endian host.
struct Checkpoint {
  std::uint64_t iteration = 0;
  std::string config_text;
  std::vector<std::pair<std::string, Tensor>> tensors;

  bool has_optimizer = false;
  std::int64_t adam_t = 0;
  std::vector<Tensor> adam_m;
  std::vector<Tensor> adam_v;
};

// Atomic write (temp file + rename).
void save_checkpoint(const std::string& path, const Checkpoint& ck);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace sketchkp
