#pragma once

#include <map>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "sketchkp/model.hpp"

namespace sketchkp {

// The four evaluation settings: class seen/unseen during training x
// keypoint vocabulary base/novel.
enum class Protocol { seen_base, seen_novel, unseen_base, unseen_novel };

Protocol parse_protocol(const std::string& name);
std::string protocol_name(Protocol p);

struct EvalReport {
  Protocol protocol = Protocol::seen_base;
  std::map<std::string, double> per_class_pck;  // percentage per class
  double mean_pck = 0.0;                        // arithmetic mean of class values
  long long n_episodes = 0;
  std::string config_hash;
};

// Percentage of visible keypoints whose prediction lands within
// tau * max(bbox width, bbox height) pixels of the ground truth (inclusive).
// All quantities are in pixel space. Lists are aligned; entries with
// visible=false are ignored. An empty visible set is an error, not 0.
double pck(const std::vector<cv::Point2d>& predictions,
           const std::vector<cv::Point2d>& ground_truths,
           const std::vector<std::array<double, 4>>& bboxes, double tau,
           const std::vector<bool>& visibility);

// Runs cfg.eval_episodes inference episodes for one protocol, cycling through
// the protocol's classes deterministically, and aggregates per-class PCK@tau.
EvalReport evaluate(const Model& model, const DatasetIndex& index, Protocol protocol,
                    const RunConfig& cfg, double tau = 0.1);

// Report serialization: JSON object and an aligned-column text table over one
// or more reports (rows = protocols, columns = union of classes + mean).
std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text, const std::string& origin);
std::string render_report_table(const std::vector<EvalReport>& reports);

// Draws predictions as crosses and ground truths as filled discs, one color
// per keypoint index, and writes the raster to out_path.
void render_overlay(const cv::Mat& image, const std::vector<cv::Point2d>& predictions,
                    const std::vector<cv::Point2d>& ground_truths,
                    const std::vector<bool>& visibility, const std::string& out_path);

}  // namespace sketchkp
