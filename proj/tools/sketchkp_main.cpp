// Command-line front end: data preparation, episodic training, evaluation,
// prediction, and report rendering on top of the sketchkp core library.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "sketchkp/checkpoint.hpp"
#include "sketchkp/config.hpp"
#include "sketchkp/dataset.hpp"
#include "sketchkp/errors.hpp"
#include "sketchkp/evaluator.hpp"
#include "sketchkp/model.hpp"
#include "sketchkp/trainer.hpp"

namespace fs = std::filesystem;
using namespace sketchkp;

namespace {

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open file for writing: " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

// Canonical config text is "key = value" lines; pull them into a map so the
// snapshot stored in a checkpoint can be compared against the live config.
std::map<std::string, std::string> parse_canonical(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return kv;
}

// Keys that determine parameter shapes or input geometry. A checkpoint whose
// snapshot disagrees on any of them cannot be loaded into the current model.
void require_matching_structure(const Checkpoint& ck, const RunConfig& cfg) {
  const auto saved = parse_canonical(ck.config_text);
  const auto current = parse_canonical(cfg.canonical());
  static const char* const keys[] = {"encoder.backbone", "dataset.image_size",
                                     "encoder.xi", "destyle.identity", "locator.scales"};
  for (const char* key : keys) {
    auto a = saved.find(key);
    auto b = current.find(key);
    if (a == saved.end() || b == current.end()) continue;
    if (a->second != b->second)
      throw ConfigError(std::string("checkpoint/config mismatch: ") + key + " was " +
                        a->second + " at training time but the config says " + b->second);
  }
}

Model load_trained_model(const RunConfig& cfg, const std::string& checkpoint_path) {
  Checkpoint ck = load_checkpoint(checkpoint_path);
  require_matching_structure(ck, cfg);
  Model model = Model::build(cfg);
  model.load_named_tensors(ck.tensors, /*prefix_filter=*/"", /*require_all=*/true);
  return model;
}

cv::Mat load_query_image(const std::string& path, int size) {
  cv::Mat img = cv::imread(path, cv::IMREAD_COLOR);
  if (img.empty()) throw IoError("cannot read image: " + path);
  const int interp =
      (img.cols > size || img.rows > size) ? cv::INTER_AREA : cv::INTER_LINEAR;
  cv::Mat out;
  cv::resize(img, out, cv::Size(size, size), 0, 0, interp);
  return out;
}

int run_make_edgemaps(const std::string& config_path, const std::string& detector_flag,
                      const std::string& cache_dir_flag) {
  RunConfig cfg = RunConfig::load(config_path, {});
  if (!cache_dir_flag.empty()) cfg.cache_dir = cache_dir_flag;

  const std::string det_name =
      !detector_flag.empty()
          ? detector_flag
          : (cfg.s_detector == "canny_builtin" ? std::string("canny_builtin")
                                               : std::string("external_s"));
  const EdgeDetector det = parse_edge_detector(det_name);
  if (det == EdgeDetector::canny_builtin) cfg.s_detector = "canny_builtin";
  const Modality slot = det == EdgeDetector::external_s1   ? Modality::edge_s1
                        : det == EdgeDetector::external_s2 ? Modality::edge_s2
                                                           : Modality::edge_s;

  DatasetIndex index =
      load_annotations(cfg.index_path, cfg.image_size, cfg.mask_dir, cfg.t_values);

  long long generated = 0, skipped = 0;
  std::vector<std::string> missing;
  for (const AnnotatedImage& img : index.images) {
    const fs::path target =
        fs::path(cfg.cache_dir) / (img.stem + "." + modality_suffix(slot) + ".png");
    if (fs::exists(target)) {
      ++skipped;
      continue;
    }
    if (det != EdgeDetector::canny_builtin) {
      missing.push_back(target.string());
      continue;
    }
    AnnotatedImage probe = img;
    probe.modality = Modality::edge_s;
    load_raster(index, probe, cfg);  // computes and writes the cache entry
    ++generated;
  }

  std::cout << "generated " << generated << " skipped " << skipped << " missing "
            << missing.size() << "\n";
  if (!missing.empty()) {
    for (const auto& p : missing) std::cout << "missing: " << p << "\n";
    std::cerr << "error: " << missing.size()
              << " edgemap(s) must be precomputed by an external detector\n";
    return 2;
  }
  return 0;
}

int run_train(const std::string& config_path, const std::vector<std::string>& overrides) {
  RunConfig cfg = RunConfig::load(config_path, overrides);
  DatasetIndex index =
      load_annotations(cfg.index_path, cfg.image_size, cfg.mask_dir, cfg.t_values);
  Model model = Model::build(cfg);

  fs::create_directories(cfg.run_dir);
  const fs::path log_path = fs::path(cfg.run_dir) / "train_log.jsonl";
  std::ofstream log(log_path, std::ios::binary | std::ios::trunc);
  if (!log) throw IoError("cannot open training log: " + log_path.string());

  TrainOutcome outcome = train(model, index, cfg, log);
  std::cout << outcome.checkpoint_path << "\n";
  return 0;
}

int run_eval(const std::string& config_path, const std::vector<std::string>& overrides,
             const std::string& checkpoint_path, const std::string& protocol_name_arg,
             double tau, const std::string& out_path) {
  RunConfig cfg = RunConfig::load(config_path, overrides);
  DatasetIndex index =
      load_annotations(cfg.index_path, cfg.image_size, cfg.mask_dir, cfg.t_values);
  Model model = load_trained_model(cfg, checkpoint_path);

  EvalReport report =
      evaluate(model, index, parse_protocol(protocol_name_arg), cfg, tau);
  const std::string json = report_to_json(report);
  if (!out_path.empty()) write_text_file(out_path, json);
  std::cout << json;
  return 0;
}

int run_predict(const std::string& config_path, const std::vector<std::string>& overrides,
                const std::string& checkpoint_path, const std::string& support_path,
                const std::vector<std::string>& query_paths, const std::string& out_path,
                const std::string& overlay_dir, bool debug_scales) {
  RunConfig cfg = RunConfig::load(config_path, overrides);
  Model model = load_trained_model(cfg, checkpoint_path);
  Checkpoint ck = load_checkpoint(checkpoint_path);

  // The support file uses the annotation-index schema; every image in it is a
  // support sample whose raster is read straight from its path (a hand-drawn
  // sketch or photo — no edgemap cache involved).
  DatasetIndex sup_index =
      load_annotations(support_path, cfg.image_size, cfg.mask_dir, cfg.t_values);
  if (sup_index.images.empty())
    throw ValidationError("support annotation file lists no images: " + support_path);

  NoGradGuard inference;
  std::vector<SupportItem> supports;
  for (const AnnotatedImage& img : sup_index.images)
    supports.push_back(SupportItem{img, std::nullopt, std::nullopt});

  SupportForward fwd = encode_supports(model, sup_index, supports);
  std::vector<int> all_ids(static_cast<size_t>(sup_index.num_keypoints()));
  std::iota(all_ids.begin(), all_ids.end(), 0);
  const KeypointSet set{all_ids, /*aux=*/false};
  SupportSetEmbeddings sup = support_embeddings(model, fwd, supports, set);

  if (!overlay_dir.empty()) fs::create_directories(overlay_dir);

  nlohmann::ordered_json queries = nlohmann::ordered_json::array();
  for (size_t qi = 0; qi < query_paths.size(); ++qi) {
    const std::string& qpath = query_paths[qi];
    cv::Mat raster = load_query_image(qpath, cfg.image_size);
    Var fmap = model.encode_raster(raster);

    nlohmann::ordered_json kps = nlohmann::ordered_json::array();
    std::vector<cv::Point2d> points;
    std::vector<bool> vis;
    for (size_t j = 0; j < all_ids.size(); ++j) {
      nlohmann::ordered_json entry;
      entry["name"] = sup_index.keypoint_names[j];
      if (!sup.prototypes[j].visible) {
        entry["visible"] = false;
        entry["x"] = nullptr;
        entry["y"] = nullptr;
        points.emplace_back(0, 0);
        vis.push_back(false);
        kps.push_back(entry);
        continue;
      }
      Var psi = model.descriptor.describe(correlate(fmap, sup.prototypes[j].values));
      GridPoint p = model.locator.predict_keypoint(psi);
      const double px = unit_to_pixel(p.ux, cfg.image_size);
      const double py = unit_to_pixel(p.uy, cfg.image_size);
      entry["visible"] = true;
      entry["x"] = px;
      entry["y"] = py;
      if (debug_scales) {
        nlohmann::ordered_json per_scale;
        for (size_t si = 0; si < model.locator.scales().size(); ++si) {
          const int L = model.locator.scale_at(static_cast<int>(si));
          Var probs = model.locator.classify_grid(psi, static_cast<int>(si));
          int label = 0;
          for (std::size_t c = 1; c < probs->value.size(); ++c)
            if (probs->value[c] > probs->value[static_cast<size_t>(label)])
              label = static_cast<int>(c);
          Var off = model.locator.regress_offset(psi, static_cast<int>(si));
          GridPoint sp = decode_grid(label, std::clamp(off->value[0], -1.0, 1.0),
                                     std::clamp(off->value[1], -1.0, 1.0), L);
          per_scale[std::to_string(L)] = {unit_to_pixel(sp.ux, cfg.image_size),
                                          unit_to_pixel(sp.uy, cfg.image_size)};
        }
        entry["scales"] = per_scale;
      }
      points.emplace_back(px, py);
      vis.push_back(true);
      kps.push_back(entry);
    }

    nlohmann::ordered_json qrec;
    qrec["image"] = qpath;
    qrec["keypoints"] = kps;
    queries.push_back(qrec);

    if (!overlay_dir.empty()) {
      char prefix[16];
      std::snprintf(prefix, sizeof(prefix), "%03zu_", qi);
      const fs::path out = fs::path(overlay_dir) /
                           (prefix + fs::path(qpath).stem().string() + ".overlay.png");
      render_overlay(raster, points, {}, vis, out.string());
    }
  }

  nlohmann::ordered_json root;
  root["config_hash"] = cfg.hash();
  root["checkpoint_iteration"] = ck.iteration;
  root["image_size"] = cfg.image_size;
  root["keypoint_names"] = sup_index.keypoint_names;
  root["queries"] = queries;
  const std::string json = root.dump(2) + "\n";
  if (!out_path.empty()) write_text_file(out_path, json);
  std::cout << json;
  return 0;
}

int run_report(const std::vector<std::string>& report_paths) {
  std::vector<EvalReport> reports;
  for (const auto& path : report_paths)
    reports.push_back(report_from_json(read_text_file(path), path));
  std::cout << render_report_table(reports);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  cv::setNumThreads(0);  // single-threaded image ops keep runs bit-reproducible

  CLI::App app{"Few-shot keypoint detection: localize keypoints on query photos "
               "from a handful of annotated sketch/edgemap supports."};
  app.require_subcommand(1);

  std::string config_path, detector_flag, cache_dir_flag;
  std::string checkpoint_path, protocol_arg, out_path, support_path, overlay_dir;
  std::vector<std::string> overrides, query_paths, report_paths;
  double tau = 0.1;
  bool debug_scales = false;

  CLI::App* mk = app.add_subcommand("make-edgemaps",
                                    "Populate the edgemap cache for every indexed image");
  mk->add_option("--config", config_path, "run config file")->required();
  mk->add_option("--detector", detector_flag,
                 "edge detector slot: canny_builtin, external_s, external_s1, external_s2");
  mk->add_option("--cache-dir", cache_dir_flag, "override the cache directory");

  CLI::App* tr = app.add_subcommand("train", "Run episodic training");
  tr->add_option("--config", config_path, "run config file")->required();
  tr->add_option("overrides", overrides, "key=value config overrides");

  CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint under one protocol");
  ev->add_option("--config", config_path, "run config file")->required();
  ev->add_option("--checkpoint", checkpoint_path, "trained checkpoint file")->required();
  ev->add_option("--protocol", protocol_arg,
                 "seen_base, seen_novel, unseen_base, or unseen_novel")
      ->required();
  ev->add_option("--tau", tau, "PCK threshold fraction of the larger bbox side");
  ev->add_option("--out", out_path, "also write the report JSON to this path");
  ev->add_option("overrides", overrides, "key=value config overrides");

  CLI::App* pr = app.add_subcommand("predict",
                                    "Localize keypoints on query images from an "
                                    "annotated support set");
  pr->add_option("--config", config_path, "run config file")->required();
  pr->add_option("--checkpoint", checkpoint_path, "trained checkpoint file")->required();
  pr->add_option("--support", support_path,
                 "annotation-index JSON whose images form the support set")
      ->required();
  pr->add_option("--out", out_path, "also write the prediction JSON to this path");
  pr->add_option("--overlay-dir", overlay_dir, "write overlay figures here");
  pr->add_flag("--debug-scales", debug_scales,
               "include per-grid-scale decoded points in the output");
  pr->add_option("queries", query_paths, "query image files")->required();

  CLI::App* rp = app.add_subcommand("report", "Render eval reports as a text table");
  rp->add_option("reports", report_paths, "report JSON files")->required();

  try {
    app.parse(argc, argv);
    if (app.got_subcommand(mk))
      return run_make_edgemaps(config_path, detector_flag, cache_dir_flag);
    if (app.got_subcommand(tr)) return run_train(config_path, overrides);
    if (app.got_subcommand(ev))
      return run_eval(config_path, overrides, checkpoint_path, protocol_arg, tau, out_path);
    if (app.got_subcommand(pr))
      return run_predict(config_path, overrides, checkpoint_path, support_path,
                         query_paths, out_path, overlay_dir, debug_scales);
    if (app.got_subcommand(rp)) return run_report(report_paths);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
