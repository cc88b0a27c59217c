#include "sketchkp/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <ostream>

#include <json.hpp>

#include "sketchkp/domainadapt.hpp"
#include "sketchkp/errors.hpp"

namespace fs = std::filesystem;

namespace sketchkp {

namespace {

void require_finite(const Var& part, const char* what) {
  if (part && !part->value.all_finite())
    throw ValidationError(std::string("training abort: non-finite ") + what + " loss part");
}

// Adds w * (a + b) to terms, tolerating absent parts.
void add_weighted(std::vector<Var>& terms, const Var& a, const Var& b, double w) {
  if (w == 0.0) return;
  if (a && b)
    terms.push_back(scale(add(a, b), w));
  else if (a)
    terms.push_back(scale(a, w));
  else if (b)
    terms.push_back(scale(b, w));
}

}  // namespace

Var total_loss(const Var& kp, const Var& kp_aux, const Var& da, const Var& da_aux,
               const Var& style, const Var& style_aux, const RunConfig& cfg) {
  require_finite(kp, "keypoint");
  require_finite(kp_aux, "auxiliary keypoint");
  require_finite(da, "domain adaptation");
  require_finite(da_aux, "auxiliary domain adaptation");
  require_finite(style, "style");
  require_finite(style_aux, "auxiliary style");
  std::vector<Var> terms;
  add_weighted(terms, kp, kp_aux, cfg.lambda_kp);
  add_weighted(terms, da, da_aux, cfg.lambda_da);
  add_weighted(terms, style, style_aux, cfg.effective_lambda_style());
  if (terms.empty()) return make_scalar(0.0);
  if (terms.size() == 1) return terms[0];
  return sum_scalars(terms);
}

Modality support_modality_for_iteration(const RunConfig& cfg, std::uint64_t it) {
  switch (cfg.modality_mode) {
    case ModalityMode::sketch_support: return Modality::edge_s;
    case ModalityMode::photo_support: return Modality::photo;
    case ModalityMode::multimodal: return (it % 2 == 0) ? Modality::edge_s : Modality::photo;
  }
  return Modality::edge_s;
}

namespace {

// Localization terms for one keypoint set over all queries: per visible
// (query, keypoint) pair with a visible prototype, correlate -> describe ->
// per-scale cross entropy + offset l1.
Var keypoint_loss_terms(const Model& model, const std::vector<Var>& query_fmaps,
                        const std::vector<AnnotatedImage>& queries,
                        const std::vector<Prototype>& protos, const KeypointSet& set,
                        int* pair_count) {
  std::vector<Var> terms;
  const int n_scales = static_cast<int>(model.locator.scales().size());
  for (size_t m = 0; m < queries.size(); ++m) {
    const AnnotatedImage& q = queries[m];
    const int n = set.count(q);
    if (static_cast<size_t>(n) != protos.size())
      throw ShapeError("episode keypoint set does not match prototype count");
    for (int j = 0; j < n; ++j) {
      if (!protos[static_cast<size_t>(j)].visible) continue;
      const Keypoint& kp = set.of(q, j);
      if (!kp.visible()) continue;
      Var corr = correlate(query_fmaps[m], protos[static_cast<size_t>(j)].values);
      Var psi = model.descriptor.describe(corr);
      for (int si = 0; si < n_scales; ++si) {
        const int L = model.locator.scale_at(si);
        GridTarget gt = encode_grid_target(kp.ux, kp.uy, L);
        terms.push_back(classification_loss(model.locator.classify_grid(psi, si), gt.label));
        terms.push_back(offset_loss(model.locator.regress_offset(psi, si), gt.off_x, gt.off_y));
      }
      if (pair_count) ++*pair_count;
    }
  }
  if (terms.empty()) return nullptr;
  return sum_scalars(terms);
}

// Raw pooled query embeddings grouped per keypoint, for the transport loss.
std::vector<std::vector<Var>> query_embedding_lists(const Model& model,
                                                    const std::vector<Var>& query_fmaps,
                                                    const std::vector<AnnotatedImage>& queries,
                                                    const KeypointSet& set, size_t n_kp) {
  std::vector<std::vector<Var>> per_kp(n_kp);
  for (size_t m = 0; m < queries.size(); ++m) {
    const AnnotatedImage& q = queries[m];
    for (size_t j = 0; j < n_kp; ++j) {
      const Keypoint& kp = set.of(q, static_cast<int>(j));
      if (!kp.visible()) continue;
      per_kp[j].push_back(
          gaussian_pool(query_fmaps[m], kp.ux, kp.uy, model.cfg.image_size, model.cfg.xi));
    }
  }
  return per_kp;
}

// Style-consistency terms for one keypoint set: supports with both style
// companions cached contribute Eq-style pairwise distances between the
// de-stylized primary/S1/S2 embeddings.
Var style_loss_terms(const Model& model, const DatasetIndex& index,
                     const std::vector<SupportItem>& supports,
                     const SupportSetEmbeddings& primary, const KeypointSet& set,
                     bool* computed) {
  std::vector<Var> terms;
  for (size_t k = 0; k < supports.size(); ++k) {
    const SupportItem& item = supports[k];
    if (!item.s1 || !item.s2) continue;
    Var f1 = model.encode_raster(load_raster(index, *item.s1, model.cfg));
    Var f2 = model.encode_raster(load_raster(index, *item.s2, model.cfg));
    Var g1, g2;
    if (!model.destyle.identity()) {
      g1 = global_avg_pool(f1);
      g2 = global_avg_pool(f2);
    }
    const AnnotatedImage& ann = item.primary;
    const int n = set.count(ann);
    std::vector<Var> d_s, d_s1, d_s2;
    std::vector<bool> vis;
    for (int j = 0; j < n; ++j) {
      const Keypoint& kp = set.of(ann, j);
      d_s.push_back(primary.deltas[k][static_cast<size_t>(j)]);
      if (!kp.visible()) {
        d_s1.push_back(d_s.back());
        d_s2.push_back(d_s.back());
        vis.push_back(false);
        continue;
      }
      Var p1 = gaussian_pool(f1, kp.ux, kp.uy, model.cfg.image_size, model.cfg.xi);
      Var p2 = gaussian_pool(f2, kp.ux, kp.uy, model.cfg.image_size, model.cfg.xi);
      d_s1.push_back(model.destyle.identity() ? p1 : model.destyle.destylize_pooled(p1, g1));
      d_s2.push_back(model.destyle.identity() ? p2 : model.destyle.destylize_pooled(p2, g2));
      vis.push_back(true);
    }
    terms.push_back(style_loss(d_s, d_s1, d_s2, vis));
    if (computed) *computed = true;
  }
  if (terms.empty()) return nullptr;
  if (terms.size() == 1) return terms[0];
  return sum_scalars(terms);
}

double value_of(const Var& v) { return v ? v->value[0] : 0.0; }

}  // namespace

EpisodeResult run_episode(const Model& model, const DatasetIndex& index, const Episode& episode,
                          const RunConfig& cfg) {
  if (episode.support.empty() || episode.query.empty())
    throw ValidationError("run_episode: episode needs support and query items");

  EpisodeResult res;
  const KeypointSet main_set{episode.keypoint_ids, /*aux=*/false};
  const KeypointSet aux_set{{}, /*aux=*/true};
  const double w_da = cfg.lambda_da;
  const double w_style = cfg.effective_lambda_style();

  // Support side: encode once, embed/destylize per keypoint family.
  SupportForward fwd = encode_supports(model, index, episode.support);
  SupportSetEmbeddings main_sup = support_embeddings(model, fwd, episode.support, main_set);
  SupportSetEmbeddings aux_sup = support_embeddings(model, fwd, episode.support, aux_set);

  // Query side: encode each photo once, reuse across loss families.
  std::vector<Var> query_fmaps;
  for (const AnnotatedImage& q : episode.query)
    query_fmaps.push_back(model.encode_raster(load_raster(index, q, cfg)));

  Var kp = keypoint_loss_terms(model, query_fmaps, episode.query, main_sup.prototypes, main_set,
                               &res.kp_pairs);
  Var kp_aux = keypoint_loss_terms(model, query_fmaps, episode.query, aux_sup.prototypes,
                                   aux_set, &res.kp_aux_pairs);

  Var da, da_aux;
  if (w_da > 0.0) {
    da = transport_loss_auto(main_sup.prototypes,
                             query_embedding_lists(model, query_fmaps, episode.query, main_set,
                                                   main_sup.prototypes.size()));
    da_aux = transport_loss_auto(aux_sup.prototypes,
                                 query_embedding_lists(model, query_fmaps, episode.query,
                                                       aux_set, aux_sup.prototypes.size()));
    res.da_computed = true;
  }

  Var style, style_aux;
  if (w_style > 0.0) {
    style = style_loss_terms(model, index, episode.support, main_sup, main_set,
                             &res.style_computed);
    style_aux = style_loss_terms(model, index, episode.support, aux_sup, aux_set, nullptr);
  }

  res.total = total_loss(kp, kp_aux, da, da_aux, style, style_aux, cfg);
  res.total_value = res.total->value[0];
  res.kp = value_of(kp);
  res.kp_aux = value_of(kp_aux);
  res.da = value_of(da);
  res.da_aux = value_of(da_aux);
  res.style = value_of(style);
  res.style_aux = value_of(style_aux);
  return res;
}

TrainOutcome train(Model& model, const DatasetIndex& index, const RunConfig& cfg,
                   std::ostream& log) {
  fs::create_directories(cfg.run_dir);
  const std::string ck_path = (fs::path(cfg.run_dir) / "checkpoint.skkp").string();

  std::vector<Var> params = model.trainable_params();
  nn::Adam opt(cfg.learning_rate);

  auto write_checkpoint = [&](std::uint64_t iteration) {
    Checkpoint ck;
    ck.iteration = iteration;
    ck.config_text = cfg.canonical();
    ck.tensors = model.named_tensors();
    ck.has_optimizer = true;
    ck.adam_t = opt.t;
    ck.adam_m = opt.m;
    ck.adam_v = opt.v;
    save_checkpoint(ck_path, ck);
  };

  for (std::uint64_t it = 0; it < static_cast<std::uint64_t>(cfg.iterations); ++it) {
    const Modality modality = support_modality_for_iteration(cfg, it);
    Episode episode =
        sample_training_episode(index, cfg, modality, Rng::derive(cfg.seed, 0xE0000000ull + it));
    EpisodeResult res = run_episode(model, index, episode, cfg);

    double grad_norm = 0.0;
    if (res.total->requires_grad) {
      backward(res.total);
      grad_norm = cfg.grad_clip > 0.0 ? clip_grad_norm(params, cfg.grad_clip)
                                      : clip_grad_norm(params, 1e300);
      opt.step(params);
      zero_grad(params);
    }

    nlohmann::ordered_json line;
    line["iter"] = it;
    line["total"] = res.total_value;
    line["kp"] = res.kp;
    line["kp_aux"] = res.kp_aux;
    line["da"] = res.da;
    line["da_aux"] = res.da_aux;
    line["style"] = res.style;
    line["style_aux"] = res.style_aux;
    line["pairs"] = res.kp_pairs;
    line["aux_pairs"] = res.kp_aux_pairs;
    line["grad_norm"] = grad_norm;
    line["class"] = episode.class_label;
    log << line.dump() << '\n';

    if ((it + 1) % static_cast<std::uint64_t>(cfg.checkpoint_every) == 0)
      write_checkpoint(it + 1);
  }
  write_checkpoint(static_cast<std::uint64_t>(cfg.iterations));
  log.flush();
  return {ck_path, static_cast<std::uint64_t>(cfg.iterations)};
}

}  // namespace sketchkp
