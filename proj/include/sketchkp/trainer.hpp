#pragma once

#include <iosfwd>
#include <string>

#include "sketchkp/checkpoint.hpp"
#include "sketchkp/model.hpp"

namespace sketchkp {

// Weighted episode loss: w_kp (kp + kp_aux) + w_da (da + da_aux) +
// w_style (style + style_aux). Weights come from the config; terms whose
// weight is zero are left out of the graph entirely.
Var total_loss(const Var& kp, const Var& kp_aux, const Var& da, const Var& da_aux,
               const Var& style, const Var& style_aux, const RunConfig& cfg);

// Loss breakdown of one episode. Part values are unweighted; `total` is the
// weighted graph root. The *_computed flags record whether the corresponding
// pipeline ran at all (they stay false when the weight is zero or no inputs
// exist, e.g. photo supports without edgemap companions).
struct EpisodeResult {
  Var total;
  double total_value = 0.0;
  double kp = 0.0, kp_aux = 0.0;
  double da = 0.0, da_aux = 0.0;
  double style = 0.0, style_aux = 0.0;
  int kp_pairs = 0;       // (query, keypoint) pairs entering the main loss
  int kp_aux_pairs = 0;
  bool da_computed = false;
  bool style_computed = false;
};

// Full training pipeline for one episode: encode -> pool -> destylize
// (support only) -> prototypes -> correlate -> describe -> grid losses,
// plus transport and style-consistency terms and their auxiliary-keypoint
// variants. Keypoints are skipped when invisible in the query or lacking a
// visible prototype.
EpisodeResult run_episode(const Model& model, const DatasetIndex& index, const Episode& episode,
                          const RunConfig& cfg);

struct TrainOutcome {
  std::string checkpoint_path;
  std::uint64_t iterations_run = 0;
};

// Episodic training loop: Adam at the configured rate, optional global-norm
// gradient clipping, per-iteration JSONL records to `log`, periodic rolling
// checkpoints under cfg.run_dir. Deterministic under a fixed seed.
TrainOutcome train(Model& model, const DatasetIndex& index, const RunConfig& cfg,
                   std::ostream& log);

// Support modality used for training iteration `it` under the configured
// mode (multimodal alternates edgemap/photo by parity).
Modality support_modality_for_iteration(const RunConfig& cfg, std::uint64_t it);

}  // namespace sketchkp
