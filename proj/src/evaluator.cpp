#include "sketchkp/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <json.hpp>

#include "sketchkp/errors.hpp"

namespace sketchkp {

Protocol parse_protocol(const std::string& name) {
  if (name == "seen_base") return Protocol::seen_base;
  if (name == "seen_novel") return Protocol::seen_novel;
  if (name == "unseen_base") return Protocol::unseen_base;
  if (name == "unseen_novel") return Protocol::unseen_novel;
  throw ConfigError("unknown protocol '" + name +
                    "' (expected seen_base, seen_novel, unseen_base, unseen_novel)");
}

std::string protocol_name(Protocol p) {
  switch (p) {
    case Protocol::seen_base: return "seen_base";
    case Protocol::seen_novel: return "seen_novel";
    case Protocol::unseen_base: return "unseen_base";
    case Protocol::unseen_novel: return "unseen_novel";
  }
  return "?";
}

double pck(const std::vector<cv::Point2d>& predictions,
           const std::vector<cv::Point2d>& ground_truths,
           const std::vector<std::array<double, 4>>& bboxes, double tau,
           const std::vector<bool>& visibility) {
  if (tau <= 0.0) throw ValidationError("pck: tau must be positive");
  if (predictions.size() != ground_truths.size() || predictions.size() != bboxes.size() ||
      predictions.size() != visibility.size())
    throw ShapeError("pck: input lists must be aligned");
  long long total = 0, correct = 0;
  for (size_t i = 0; i < predictions.size(); ++i) {
    if (!visibility[i]) continue;
    ++total;
    const auto& b = bboxes[i];
    const double threshold = tau * std::max(b[2] - b[0], b[3] - b[1]);
    const double d = std::hypot(predictions[i].x - ground_truths[i].x,
                                predictions[i].y - ground_truths[i].y);
    if (d <= threshold) ++correct;
  }
  if (total == 0)
    throw ValidationError("pck is undefined: no visible keypoints in the input");
  return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

namespace {

struct ClassTally {
  std::vector<cv::Point2d> pred, gt;
  std::vector<std::array<double, 4>> bbox;
  std::vector<bool> vis;
};

}  // namespace

EvalReport evaluate(const Model& model, const DatasetIndex& index, Protocol protocol,
                    const RunConfig& cfg, double tau) {
  const bool unseen =
      protocol == Protocol::unseen_base || protocol == Protocol::unseen_novel;
  const bool novel =
      protocol == Protocol::seen_novel || protocol == Protocol::unseen_novel;

  const std::vector<std::string> train_classes = resolve_train_classes(index, cfg);
  std::vector<std::string> classes;
  if (unseen) {
    if (cfg.eval_classes.empty())
      throw ConfigError("protocol " + protocol_name(protocol) +
                        " needs held-out classes (trainer.eval_classes is empty)");
    for (const auto& c : cfg.eval_classes) {
      if (std::find(train_classes.begin(), train_classes.end(), c) != train_classes.end())
        throw ConfigError("protocol " + protocol_name(protocol) + ": class '" + c +
                          "' is part of the training classes");
      classes.push_back(c);
    }
  } else {
    classes = train_classes;
  }

  std::vector<int> keypoint_ids = novel ? index.novel_keypoints : index.base_keypoints;
  if (keypoint_ids.empty())
    throw ConfigError("protocol " + protocol_name(protocol) + ": the index lists no " +
                      (novel ? "novel" : "base") + " keypoints");

  const InstanceSplit split = split_instances(index, cfg);
  const int need = cfg.k + cfg.m;
  for (const auto& cls : classes) {
    auto it = split.eval.find(cls);
    const int have = it == split.eval.end() ? 0 : static_cast<int>(it->second.size());
    if (have < need)
      throw ValidationError("class '" + cls + "' has " + std::to_string(have) +
                            " evaluation instances, need k + m = " + std::to_string(need));
  }

  const Modality support_modality =
      cfg.modality_mode == ModalityMode::photo_support ? Modality::photo : Modality::edge_s;

  NoGradGuard inference;
  std::map<std::string, ClassTally> tallies;
  for (long long e = 0; e < cfg.eval_episodes; ++e) {
    EpisodeSpec spec;
    spec.k = cfg.k;
    spec.m = cfg.m;
    spec.keypoint_ids = keypoint_ids;
    spec.classes = {classes[static_cast<size_t>(e) % classes.size()]};
    spec.support_modality = support_modality;
    spec.cache_dir = cfg.cache_dir;
    spec.instance_pool = &split.eval;
    Episode episode = sample_episode(index, spec, Rng::derive(cfg.seed, 0xA0000000ull + e));

    SupportForward fwd = encode_supports(model, index, episode.support);
    const KeypointSet set{episode.keypoint_ids, /*aux=*/false};
    SupportSetEmbeddings sup = support_embeddings(model, fwd, episode.support, set);

    ClassTally& tally = tallies[episode.class_label];
    for (const AnnotatedImage& q : episode.query) {
      Var fmap = model.encode_raster(load_raster(index, q, cfg));
      for (size_t j = 0; j < sup.prototypes.size(); ++j) {
        if (!sup.prototypes[j].visible) continue;
        const Keypoint& kp = set.of(q, static_cast<int>(j));
        if (!kp.visible()) continue;
        Var psi = model.descriptor.describe(correlate(fmap, sup.prototypes[j].values));
        GridPoint p = model.locator.predict_keypoint(psi);
        tally.pred.emplace_back(unit_to_pixel(p.ux, cfg.image_size),
                                unit_to_pixel(p.uy, cfg.image_size));
        tally.gt.emplace_back(unit_to_pixel(kp.ux, cfg.image_size),
                              unit_to_pixel(kp.uy, cfg.image_size));
        tally.bbox.push_back(q.bbox);
        tally.vis.push_back(true);
      }
    }
  }

  EvalReport report;
  report.protocol = protocol;
  report.n_episodes = cfg.eval_episodes;
  report.config_hash = cfg.hash();
  double sum = 0.0;
  for (const auto& cls : classes) {
    auto it = tallies.find(cls);
    if (it == tallies.end() || it->second.vis.empty())
      throw ValidationError("pck is undefined for class '" + cls +
                            "': no visible keypoint pairs were evaluated");
    const ClassTally& t = it->second;
    const double score = pck(t.pred, t.gt, t.bbox, tau, t.vis);
    report.per_class_pck[cls] = score;
    sum += score;
  }
  report.mean_pck = sum / static_cast<double>(classes.size());
  return report;
}

std::string report_to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["protocol"] = protocol_name(report.protocol);
  nlohmann::ordered_json classes;
  for (const auto& [cls, score] : report.per_class_pck) classes[cls] = score;
  j["per_class_pck"] = classes;
  j["mean_pck"] = report.mean_pck;
  j["n_episodes"] = report.n_episodes;
  j["config_hash"] = report.config_hash;
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text, const std::string& origin) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("report " + origin + " is not valid JSON: " + e.what());
  }
  EvalReport r;
  try {
    r.protocol = parse_protocol(j.at("protocol").get<std::string>());
    for (const auto& [cls, score] : j.at("per_class_pck").items())
      r.per_class_pck[cls] = score.get<double>();
    r.mean_pck = j.at("mean_pck").get<double>();
    r.n_episodes = j.at("n_episodes").get<long long>();
    r.config_hash = j.value("config_hash", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("report " + origin + " is missing fields: " + e.what());
  }
  return r;
}

std::string render_report_table(const std::vector<EvalReport>& reports) {
  std::set<std::string> class_set;
  for (const auto& r : reports)
    for (const auto& [cls, _] : r.per_class_pck) class_set.insert(cls);
  std::vector<std::string> classes(class_set.begin(), class_set.end());

  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return std::string(buf);
  };

  size_t wp = std::string("protocol").size();
  for (const auto& r : reports) wp = std::max(wp, protocol_name(r.protocol).size());
  std::vector<size_t> wc(classes.size());
  for (size_t c = 0; c < classes.size(); ++c) {
    wc[c] = classes[c].size();
    for (const auto& r : reports) {
      auto it = r.per_class_pck.find(classes[c]);
      if (it != r.per_class_pck.end()) wc[c] = std::max(wc[c], fmt(it->second).size());
    }
  }
  size_t wm = std::string("mean").size();
  for (const auto& r : reports) wm = std::max(wm, fmt(r.mean_pck).size());

  std::ostringstream out;
  auto pad = [&](const std::string& s, size_t w) {
    out << s << std::string(w - s.size(), ' ');
  };
  pad("protocol", wp);
  for (size_t c = 0; c < classes.size(); ++c) {
    out << "  ";
    pad(classes[c], wc[c]);
  }
  out << "  ";
  pad("mean", wm);
  out << '\n';
  for (const auto& r : reports) {
    pad(protocol_name(r.protocol), wp);
    for (size_t c = 0; c < classes.size(); ++c) {
      out << "  ";
      auto it = r.per_class_pck.find(classes[c]);
      pad(it == r.per_class_pck.end() ? "-" : fmt(it->second), wc[c]);
    }
    out << "  ";
    pad(fmt(r.mean_pck), wm);
    out << '\n';
  }
  return out.str();
}

void render_overlay(const cv::Mat& image, const std::vector<cv::Point2d>& predictions,
                    const std::vector<cv::Point2d>& ground_truths,
                    const std::vector<bool>& visibility, const std::string& out_path) {
  if (image.empty()) throw ValidationError("render_overlay: empty image");
  if (predictions.size() != visibility.size() ||
      (!ground_truths.empty() && ground_truths.size() != predictions.size()))
    throw ShapeError("render_overlay: keypoint lists must be aligned");

  static const cv::Scalar palette[] = {
      {0, 0, 230},   {0, 160, 0},   {230, 0, 0},   {0, 200, 230}, {230, 0, 230},
      {0, 230, 230}, {0, 100, 230}, {180, 0, 120}, {90, 160, 40}, {160, 90, 0},
      {40, 40, 40},  {140, 140, 0},
  };
  constexpr int kPaletteSize = static_cast<int>(sizeof(palette) / sizeof(palette[0]));

  cv::Mat canvas = image.clone();
  for (size_t j = 0; j < predictions.size(); ++j) {
    if (!visibility[j]) continue;
    const cv::Scalar color = palette[static_cast<int>(j) % kPaletteSize];
    cv::Point p(static_cast<int>(std::lround(predictions[j].x)),
                static_cast<int>(std::lround(predictions[j].y)));
    cv::drawMarker(canvas, p, color, cv::MARKER_CROSS, 9, 1);
    if (!ground_truths.empty()) {
      cv::Point g(static_cast<int>(std::lround(ground_truths[j].x)),
                  static_cast<int>(std::lround(ground_truths[j].y)));
      cv::circle(canvas, g, 3, color, cv::FILLED);
    }
  }
  if (!cv::imwrite(out_path, canvas))
    throw IoError("cannot write overlay figure: " + out_path);
}

}  // namespace sketchkp
