#include "sketchkp/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace sketchkp {

namespace {

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotation index: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError("annotation index " + path + " is not valid JSON: " + e.what());
  }
  return j;
}

[[noreturn]] void bad_image(const std::string& index_path, const std::string& image_path,
                            const std::string& why) {
  throw ValidationError("annotation index " + index_path + ", image '" + image_path +
                        "': " + why);
}

cv::Mat resize_to(const cv::Mat& src, int size, int interpolation_shrink) {
  if (src.cols == size && src.rows == size) return src;
  cv::Mat dst;
  int interp = (src.cols > size || src.rows > size) ? interpolation_shrink : cv::INTER_LINEAR;
  cv::resize(src, dst, cv::Size(size, size), 0, 0, interp);
  return dst;
}

}  // namespace

const char* modality_suffix(Modality m) {
  switch (m) {
    case Modality::edge_s: return "S";
    case Modality::edge_s1: return "S1";
    case Modality::edge_s2: return "S2";
    case Modality::photo: break;
  }
  throw ValidationError("photo modality has no edgemap cache suffix");
}

bool SaliencyMask::contains(double ux, double uy, int image_size) const {
  if (mask.empty()) return false;
  int px = static_cast<int>(std::lround(unit_to_pixel(ux, image_size) - 0.5));
  int py = static_cast<int>(std::lround(unit_to_pixel(uy, image_size) - 0.5));
  px = std::clamp(px, 0, mask.cols - 1);
  py = std::clamp(py, 0, mask.rows - 1);
  return mask.at<unsigned char>(py, px) != 0;
}

SaliencyMask load_saliency_mask(const AnnotatedImage& img, const std::string& mask_dir,
                                int image_size) {
  SaliencyMask out;
  if (!mask_dir.empty()) {
    fs::path p = fs::path(mask_dir) / (img.stem + ".mask.png");
    if (fs::exists(p)) {
      cv::Mat m = cv::imread(p.string(), cv::IMREAD_GRAYSCALE);
      if (m.empty()) throw IoError("unreadable saliency mask: " + p.string());
      out.mask = resize_to(m, image_size, cv::INTER_NEAREST);
      out.source = SaliencyMask::Source::precomputed;
      return out;
    }
  }
  // Fallback: fill the annotated bounding box.
  out.mask = cv::Mat::zeros(image_size, image_size, CV_8U);
  int x0 = std::clamp(static_cast<int>(std::floor(img.bbox[0])), 0, image_size - 1);
  int y0 = std::clamp(static_cast<int>(std::floor(img.bbox[1])), 0, image_size - 1);
  int x1 = std::clamp(static_cast<int>(std::ceil(img.bbox[2])), 0, image_size - 1);
  int y1 = std::clamp(static_cast<int>(std::ceil(img.bbox[3])), 0, image_size - 1);
  cv::rectangle(out.mask, cv::Point(x0, y0), cv::Point(x1, y1), cv::Scalar(255), cv::FILLED);
  out.source = SaliencyMask::Source::bbox_fill;
  return out;
}

std::vector<Keypoint> generate_auxiliary_keypoints(const std::vector<Keypoint>& keypoints,
                                                   const std::vector<std::pair<int, int>>& pairs,
                                                   const std::vector<double>& t_values,
                                                   const SaliencyMask& mask, int image_size) {
  std::vector<Keypoint> aux;
  aux.reserve(pairs.size() * t_values.size());
  for (const auto& [a, b] : pairs) {
    const Keypoint& ka = keypoints.at(static_cast<size_t>(a));
    const Keypoint& kb = keypoints.at(static_cast<size_t>(b));
    for (double t : t_values) {
      Keypoint kp;
      if (ka.visible() && kb.visible()) {
        kp.ux = ka.ux + t * (kb.ux - ka.ux);
        kp.uy = ka.uy + t * (kb.uy - ka.uy);
        kp.v = mask.contains(kp.ux, kp.uy, image_size) ? 1 : 0;
      }
      aux.push_back(kp);
    }
  }
  return aux;
}

DatasetIndex load_annotations(const std::string& index_path, int image_size,
                              const std::string& mask_dir,
                              const std::vector<double>& t_values) {
  json j = load_json_file(index_path);
  DatasetIndex idx;
  idx.root_dir = fs::path(index_path).parent_path().string();

  auto require = [&](const char* key) -> const json& {
    if (!j.contains(key))
      throw ValidationError("annotation index " + index_path + ": missing key '" + key + "'");
    return j.at(key);
  };

  for (const auto& name : require("keypoint_names"))
    idx.keypoint_names.push_back(name.get<std::string>());
  if (idx.keypoint_names.empty())
    throw ValidationError("annotation index " + index_path + ": keypoint_names is empty");
  const int n_kp = idx.num_keypoints();

  auto read_id_list = [&](const char* key, std::vector<int>& out) {
    for (const auto& v : require(key)) {
      int id = v.get<int>();
      if (id < 0 || id >= n_kp)
        throw ValidationError("annotation index " + index_path + ": " + key +
                              " entry " + std::to_string(id) + " out of range");
      out.push_back(id);
    }
  };
  read_id_list("base_keypoints", idx.base_keypoints);
  read_id_list("novel_keypoints", idx.novel_keypoints);
  if (idx.base_keypoints.empty())
    throw ValidationError("annotation index " + index_path + ": base_keypoints is empty");
  {
    std::set<int> seen(idx.base_keypoints.begin(), idx.base_keypoints.end());
    for (int id : idx.novel_keypoints)
      if (seen.count(id))
        throw ValidationError("annotation index " + index_path + ": keypoint " +
                              std::to_string(id) + " is both base and novel");
  }

  for (const auto& p : require("aux_pairs")) {
    if (!p.is_array() || p.size() != 2)
      throw ValidationError("annotation index " + index_path +
                            ": aux_pairs entries must be [a, b]");
    int a = p[0].get<int>();
    int b = p[1].get<int>();
    if (a < 0 || a >= n_kp || b < 0 || b >= n_kp || a == b)
      throw ValidationError("annotation index " + index_path + ": bad aux pair [" +
                            std::to_string(a) + ", " + std::to_string(b) + "]");
    idx.aux_pairs.emplace_back(a, b);
  }

  std::set<std::string> stems;
  for (const auto& je : require("images")) {
    AnnotatedImage img;
    std::string rel = je.value("path", std::string());
    if (rel.empty())
      throw ValidationError("annotation index " + index_path + ": image with empty path");
    fs::path p(rel);
    img.path = p.is_absolute() ? rel : (fs::path(idx.root_dir) / p).string();
    img.stem = stem_of(rel);
    if (!stems.insert(img.stem).second)
      bad_image(index_path, rel, "duplicate filename stem '" + img.stem +
                                     "' (stems key the edgemap cache and must be unique)");
    img.class_label = je.value("class", std::string());
    if (img.class_label.empty()) bad_image(index_path, rel, "missing class label");

    if (!je.contains("bbox") || !je.at("bbox").is_array() || je.at("bbox").size() != 4)
      bad_image(index_path, rel, "bbox must be [x0, y0, x1, y1]");
    for (int t = 0; t < 4; ++t) img.bbox[t] = je.at("bbox")[t].get<double>();
    if (!(img.bbox[2] > img.bbox[0]) || !(img.bbox[3] > img.bbox[1]))
      bad_image(index_path, rel, "bbox has non-positive extent");

    if (!je.contains("keypoints") || !je.at("keypoints").is_array())
      bad_image(index_path, rel, "missing keypoints array");
    if (static_cast<int>(je.at("keypoints").size()) != n_kp)
      bad_image(index_path, rel,
                "expected " + std::to_string(n_kp) + " keypoints, got " +
                    std::to_string(je.at("keypoints").size()));
    for (const auto& jk : je.at("keypoints")) {
      Keypoint kp;
      kp.v = jk.value("v", 0);
      if (kp.v != 0) {
        if (!jk.contains("x") || !jk.contains("y"))
          bad_image(index_path, rel, "visible keypoint lacks x/y");
        kp.ux = pixel_to_unit(jk.at("x").get<double>(), image_size);
        kp.uy = pixel_to_unit(jk.at("y").get<double>(), image_size);
      }
      img.keypoints.push_back(kp);
    }

    SaliencyMask mask = load_saliency_mask(img, mask_dir, image_size);
    img.aux = generate_auxiliary_keypoints(img.keypoints, idx.aux_pairs, t_values, mask,
                                           image_size);
    idx.images.push_back(std::move(img));
  }
  if (idx.images.empty())
    throw ValidationError("annotation index " + index_path + ": images is empty");

  for (size_t i = 0; i < idx.images.size(); ++i)
    idx.by_class[idx.images[i].class_label].push_back(static_cast<int>(i));
  for (const auto& [cls, _] : idx.by_class) idx.classes.push_back(cls);
  return idx;
}

EdgeDetector parse_edge_detector(const std::string& name) {
  if (name == "canny_builtin" || name == "canny") return EdgeDetector::canny_builtin;
  if (name == "external_s") return EdgeDetector::external_s;
  if (name == "external_s1") return EdgeDetector::external_s1;
  if (name == "external_s2") return EdgeDetector::external_s2;
  throw ConfigError("unknown edge detector '" + name +
                    "' (expected canny_builtin, external_s, external_s1, external_s2)");
}

cv::Mat canny_edgemap(const cv::Mat& image_bgr, double low, double high) {
  if (image_bgr.empty()) throw ValidationError("canny_edgemap: empty input image");
  cv::Mat gray;
  if (image_bgr.channels() == 3)
    cv::cvtColor(image_bgr, gray, cv::COLOR_BGR2GRAY);
  else
    gray = image_bgr;
  cv::Mat blurred;
  cv::GaussianBlur(gray, blurred, cv::Size(5, 5), 1.4);
  cv::Mat edges;
  cv::Canny(blurred, edges, low, high);
  return edges;  // CV_8U, 255 on edges
}

namespace {

const char* detector_suffix(EdgeDetector d) {
  switch (d) {
    case EdgeDetector::canny_builtin:
    case EdgeDetector::external_s: return "S";
    case EdgeDetector::external_s1: return "S1";
    case EdgeDetector::external_s2: return "S2";
  }
  return "S";
}

void atomic_imwrite(const fs::path& target, const cv::Mat& image) {
  // the temp name must keep the image extension: imwrite picks its codec from it
  fs::path tmp = target.parent_path() / (target.stem().string() + ".tmp" +
                                         target.extension().string());
  if (!cv::imwrite(tmp.string(), image))
    throw IoError("cannot write edgemap: " + tmp.string());
  fs::rename(tmp, target);
}

}  // namespace

cv::Mat synthesize_edgemap(const cv::Mat& image_bgr, EdgeDetector detector,
                           const std::string& cache_dir, const std::string& stem,
                           double canny_low, double canny_high) {
  if (cache_dir.empty()) throw ConfigError("edgemap cache directory is not set");
  fs::path target = fs::path(cache_dir) / (stem + "." + detector_suffix(detector) + ".png");
  if (fs::exists(target)) {
    cv::Mat cached = cv::imread(target.string(), cv::IMREAD_GRAYSCALE);
    if (cached.empty()) throw IoError("unreadable cached edgemap: " + target.string());
    return cached;
  }
  if (detector != EdgeDetector::canny_builtin)
    throw CacheMissError("edgemap not found: " + target.string() +
                         " (this slot is filled by an external detector; precompute the file "
                         "and place it in the cache directory)");
  cv::Mat edges = canny_edgemap(image_bgr, canny_low, canny_high);
  fs::create_directories(cache_dir);
  atomic_imwrite(target, edges);
  return edges;
}

cv::Mat load_raster(const DatasetIndex&, const AnnotatedImage& img, const RunConfig& cfg) {
  const int size = cfg.image_size;
  auto load_photo = [&]() {
    cv::Mat photo = cv::imread(img.path, cv::IMREAD_COLOR);
    if (photo.empty()) throw IoError("cannot read image: " + img.path);
    return resize_to(photo, size, cv::INTER_AREA);
  };

  if (img.modality == Modality::photo) return load_photo();

  EdgeDetector det;
  switch (img.modality) {
    case Modality::edge_s:
      det = (cfg.s_detector == "canny_builtin") ? EdgeDetector::canny_builtin
                                                : EdgeDetector::external_s;
      break;
    case Modality::edge_s1: det = EdgeDetector::external_s1; break;
    case Modality::edge_s2: det = EdgeDetector::external_s2; break;
    default: det = EdgeDetector::external_s; break;
  }

  cv::Mat edges;
  if (det == EdgeDetector::canny_builtin) {
    // Probe the cache first so a hit avoids decoding the photo.
    fs::path target = fs::path(cfg.cache_dir) / (img.stem + ".S.png");
    if (fs::exists(target)) {
      edges = cv::imread(target.string(), cv::IMREAD_GRAYSCALE);
      if (edges.empty()) throw IoError("unreadable cached edgemap: " + target.string());
    } else {
      edges = synthesize_edgemap(load_photo(), det, cfg.cache_dir, img.stem, cfg.canny_low,
                                 cfg.canny_high);
    }
  } else {
    edges = synthesize_edgemap(cv::Mat(), det, cfg.cache_dir, img.stem, cfg.canny_low,
                               cfg.canny_high);
  }
  edges = resize_to(edges, size, cv::INTER_NEAREST);
  cv::Mat bgr;
  cv::cvtColor(edges, bgr, cv::COLOR_GRAY2BGR);
  return bgr;
}

std::vector<std::string> resolve_train_classes(const DatasetIndex& index, const RunConfig& cfg) {
  auto known = [&](const std::string& c) { return index.by_class.count(c) != 0; };
  for (const auto& c : cfg.eval_classes)
    if (!known(c)) throw ConfigError("eval class '" + c + "' is not in the annotation index");
  std::vector<std::string> out;
  if (!cfg.train_classes.empty()) {
    for (const auto& c : cfg.train_classes) {
      if (!known(c)) throw ConfigError("train class '" + c + "' is not in the annotation index");
      out.push_back(c);
    }
  } else {
    std::set<std::string> held(cfg.eval_classes.begin(), cfg.eval_classes.end());
    for (const auto& c : index.classes)
      if (!held.count(c)) out.push_back(c);
  }
  if (out.empty()) throw ConfigError("no training classes remain after excluding eval classes");
  return out;
}

InstanceSplit split_instances(const DatasetIndex& index, const RunConfig& cfg) {
  InstanceSplit split;
  std::vector<std::string> train_classes = resolve_train_classes(index, cfg);
  std::set<std::string> train_set(train_classes.begin(), train_classes.end());
  for (const auto& [cls, members] : index.by_class) {
    if (!train_set.count(cls)) {
      split.eval[cls] = members;  // held-out class: everything is eval
      continue;
    }
    std::vector<int> pool = members;
    Rng rng(Rng::derive(cfg.split_seed, fnv1a64(cls)));
    rng.shuffle(pool);
    int n = static_cast<int>(pool.size());
    int n_train = static_cast<int>(std::lround(n * cfg.split_train_fraction));
    if (n >= 2) n_train = std::clamp(n_train, 1, n - 1);
    split.train[cls].assign(pool.begin(), pool.begin() + n_train);
    split.eval[cls].assign(pool.begin() + n_train, pool.end());
    std::sort(split.train[cls].begin(), split.train[cls].end());
    std::sort(split.eval[cls].begin(), split.eval[cls].end());
  }
  return split;
}

Episode sample_episode(const DatasetIndex& index, const EpisodeSpec& spec,
                       unsigned long long seed) {
  if (spec.classes.empty()) throw ValidationError("episode sampling: no candidate classes");
  if (spec.keypoint_ids.empty()) throw ValidationError("episode sampling: no keypoint ids");
  const int need = spec.k + spec.m;

  auto class_pool = [&](const std::string& cls) -> const std::vector<int>& {
    if (spec.instance_pool) {
      auto it = spec.instance_pool->find(cls);
      if (it == spec.instance_pool->end())
        throw ValidationError("episode sampling: class '" + cls +
                              "' has no instances in the selected split");
      return it->second;
    }
    auto it = index.by_class.find(cls);
    if (it == index.by_class.end())
      throw ValidationError("episode sampling: class '" + cls +
                            "' is not in the annotation index");
    return it->second;
  };

  std::vector<std::string> eligible;
  for (const auto& cls : spec.classes) {
    if (static_cast<int>(class_pool(cls).size()) >= need) eligible.push_back(cls);
  }
  if (eligible.empty()) {
    if (spec.classes.size() == 1)
      throw ValidationError("episode sampling: class '" + spec.classes[0] + "' has fewer than " +
                            std::to_string(need) + " instances (need k + m)");
    throw ValidationError("episode sampling: no class has at least " + std::to_string(need) +
                          " instances (need k + m)");
  }

  Rng rng(seed);
  const std::string cls = eligible[rng.next_below(eligible.size())];
  std::vector<int> pool = class_pool(cls);
  // Partial Fisher-Yates: only the first k+m slots matter.
  for (int j = 0; j < need; ++j) {
    size_t pick = static_cast<size_t>(j) + rng.next_below(pool.size() - static_cast<size_t>(j));
    std::swap(pool[static_cast<size_t>(j)], pool[pick]);
  }

  Episode ep;
  ep.class_label = cls;
  ep.keypoint_ids = spec.keypoint_ids;
  for (int j = 0; j < spec.k; ++j) {
    SupportItem item;
    item.primary = index.images[static_cast<size_t>(pool[static_cast<size_t>(j)])];
    item.primary.modality = spec.support_modality;
    if (spec.want_style_variants && spec.support_modality == Modality::edge_s &&
        !spec.cache_dir.empty()) {
      fs::path s1 = fs::path(spec.cache_dir) / (item.primary.stem + ".S1.png");
      fs::path s2 = fs::path(spec.cache_dir) / (item.primary.stem + ".S2.png");
      if (fs::exists(s1)) {
        item.s1 = item.primary;
        item.s1->modality = Modality::edge_s1;
      }
      if (fs::exists(s2)) {
        item.s2 = item.primary;
        item.s2->modality = Modality::edge_s2;
      }
    }
    ep.support.push_back(std::move(item));
  }
  for (int j = spec.k; j < need; ++j) {
    AnnotatedImage q = index.images[static_cast<size_t>(pool[static_cast<size_t>(j)])];
    q.modality = Modality::photo;
    ep.query.push_back(std::move(q));
  }
  return ep;
}

Episode sample_training_episode(const DatasetIndex& index, const RunConfig& cfg,
                                Modality support_modality, unsigned long long seed) {
  EpisodeSpec spec;
  spec.k = cfg.k;
  spec.m = cfg.m;
  spec.keypoint_ids = index.base_keypoints;
  spec.classes = resolve_train_classes(index, cfg);
  spec.support_modality = support_modality;
  spec.want_style_variants =
      support_modality == Modality::edge_s && cfg.effective_lambda_style() > 0.0;
  spec.cache_dir = cfg.cache_dir;
  return sample_episode(index, spec, seed);
}

}  // namespace sketchkp
