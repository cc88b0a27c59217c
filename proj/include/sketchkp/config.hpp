#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sketchkp/errors.hpp"

namespace sketchkp {

// One parsed config value. Arrays are homogeneous; integers are kept apart
// from floats so "seed = 7" round-trips exactly.
struct ConfigValue {
  enum class Kind { boolean, integer, real, text, array };
  Kind kind = Kind::text;
  bool b = false;
  long long i = 0;
  double d = 0.0;
  std::string s;
  std::vector<ConfigValue> items;

  static ConfigValue of_bool(bool v);
  static ConfigValue of_int(long long v);
  static ConfigValue of_real(double v);
  static ConfigValue of_text(std::string v);
  static ConfigValue of_array(std::vector<ConfigValue> v);

  bool as_bool(const std::string& key) const;
  long long as_int(const std::string& key) const;
  double as_real(const std::string& key) const;  // promotes integers
  const std::string& as_text(const std::string& key) const;
  std::vector<double> as_real_list(const std::string& key) const;
  std::vector<int> as_int_list(const std::string& key) const;
  std::vector<std::string> as_text_list(const std::string& key) const;

  // Canonical single-line rendering (used for hashing and snapshots).
  std::string render() const;
};

// Flat map of "section.key" -> value parsed from an INI/TOML-style file:
//   [section]
//   key = value        # comment
// Values: "quoted strings", true/false, integers, floats, [a, b, c].
class ConfigMap {
 public:
  static ConfigMap parse_file(const std::string& path);
  static ConfigMap parse_text(const std::string& text, const std::string& origin);

  // Applies "key=value" override strings. Keys without a dot are assumed to
  // live in [trainer]. Values use the same grammar as the file; anything that
  // fails to parse as bool/number/array is taken as a bare string.
  void apply_overrides(const std::vector<std::string>& overrides);

  bool has(const std::string& key) const;
  const ConfigValue& at(const std::string& key) const;

  // Typed lookups with defaults for absent keys.
  bool get_bool(const std::string& key, bool fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  double get_real(const std::string& key, double fallback) const;
  std::string get_text(const std::string& key, const std::string& fallback) const;
  std::vector<int> get_int_list(const std::string& key, std::vector<int> fallback) const;
  std::vector<double> get_real_list(const std::string& key, std::vector<double> fallback) const;
  std::vector<std::string> get_text_list(const std::string& key,
                                         std::vector<std::string> fallback) const;

  const std::map<std::string, ConfigValue>& entries() const { return entries_; }

  // Keys present in the file but never read back; used to reject typos.
  std::vector<std::string> unconsumed() const;

 private:
  void set(const std::string& key, ConfigValue value);
  std::map<std::string, ConfigValue> entries_;  // ordered => deterministic
  mutable std::map<std::string, bool> consumed_;
};

// Modality of a support set during training/evaluation.
enum class ModalityMode { sketch_support, photo_support, multimodal };

ModalityMode parse_modality_mode(const std::string& name);
std::string modality_mode_name(ModalityMode m);

// Everything a run needs, resolved from file + overrides + defaults.
// Unknown keys in the file are rejected so typos cannot silently change runs.
struct RunConfig {
  // [dataset]
  std::string index_path;
  std::string cache_dir;       // default: $SKETCHKP_CACHE or <index dir>/edgemaps
  std::string mask_dir;        // empty => bounding-box fallback masks
  int image_size = 384;
  double canny_low = 100.0;
  double canny_high = 200.0;
  std::string s_detector = "canny_builtin";  // what fills the .S.png slot

  // [encoder]
  std::string backbone = "reference";  // "reference" | "tiny"
  std::string weights;                 // optional checkpoint of encoder tensors
  bool freeze = false;
  double xi = 14.0;  // gaussian pooling radius, input-pixel units

  // [destyle]
  bool destyle_identity = false;

  // [locator]
  std::vector<int> scales{8, 12, 16};

  // [trainer]
  int k = 1;
  int m = 5;
  long long iterations = 80000;
  double learning_rate = 1e-4;
  double lambda_kp = 0.5;
  double lambda_da = 0.001;
  double lambda_style = 0.001;
  bool lambda_style_explicit = false;  // true when the file/override set it
  unsigned long long seed = 0;
  ModalityMode modality_mode = ModalityMode::sketch_support;
  double grad_clip = 10.0;  // <= 0 disables clipping
  long long checkpoint_every = 1000;
  std::string run_dir = "runs/default";
  std::vector<double> t_values{0.25, 0.5, 0.75};
  std::vector<std::string> train_classes;  // empty => all classes minus eval_classes
  std::vector<std::string> eval_classes;   // held out as "unseen species"
  unsigned long long split_seed = 0;       // drives the 7:3 seen-class split
  double split_train_fraction = 0.7;

  // [eval]
  long long eval_episodes = 1000;

  static RunConfig load(const std::string& path, const std::vector<std::string>& overrides);
  static RunConfig from_map(ConfigMap& map);

  void validate() const;

  // Effective lambda_style: multimodal training uses a much smaller weight
  // unless the config sets one explicitly.
  double effective_lambda_style() const;

  // Canonical "key = value" lines, sorted by key; identical configs hash equal.
  std::string canonical() const;
  std::string hash() const;  // FNV-1a 64-bit over canonical(), hex
};

// FNV-1a 64-bit, shared by config hashing and log naming.
std::uint64_t fnv1a64(const std::string& text);
std::string to_hex64(std::uint64_t v);

}  // namespace sketchkp
