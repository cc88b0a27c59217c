#include "sketchkp/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace sketchkp {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

// Drops a trailing "# ..." comment, respecting double quotes.
std::string strip_comment(const std::string& line) {
  bool in_quote = false;
  for (size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (c == '"' && (i == 0 || line[i - 1] != '\\')) in_quote = !in_quote;
    if (c == '#' && !in_quote) return line.substr(0, i);
  }
  return line;
}

std::string render_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

bool parse_int_strict(const std::string& s, long long& out) {
  const char* b = s.data();
  const char* e = b + s.size();
  if (b != e && *b == '+') ++b;
  auto res = std::from_chars(b, e, out);
  return res.ec == std::errc() && res.ptr == e;
}

bool parse_real_strict(const std::string& s, double& out) {
  const char* b = s.data();
  const char* e = b + s.size();
  if (b != e && *b == '+') ++b;
  auto res = std::from_chars(b, e, out);
  return res.ec == std::errc() && res.ptr == e;
}

// Splits "a, b, c" at top-level commas (no nested arrays supported).
std::vector<std::string> split_array_items(const std::string& body, const std::string& where) {
  std::vector<std::string> items;
  std::string cur;
  bool in_quote = false;
  for (size_t i = 0; i < body.size(); ++i) {
    char c = body[i];
    if (c == '"' && (i == 0 || body[i - 1] != '\\')) in_quote = !in_quote;
    if (c == '[' && !in_quote) throw ParseError(where + ": nested arrays are not supported");
    if (c == ',' && !in_quote) {
      items.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!trim(cur).empty() || !items.empty()) items.push_back(cur);
  // A trailing comma leaves an empty last item; drop it.
  while (!items.empty() && trim(items.back()).empty()) items.pop_back();
  return items;
}

std::string unescape_quoted(const std::string& raw, const std::string& where) {
  if (raw.size() < 2 || raw.back() != '"')
    throw ParseError(where + ": unterminated string " + raw);
  std::string out;
  for (size_t i = 1; i + 1 < raw.size(); ++i) {
    char c = raw[i];
    if (c == '\\') {
      if (i + 2 >= raw.size()) throw ParseError(where + ": dangling escape");
      char n = raw[++i];
      switch (n) {
        case '"': out.push_back('"'); break;
        case '\\': out.push_back('\\'); break;
        case 'n': out.push_back('\n'); break;
        case 't': out.push_back('\t'); break;
        default: throw ParseError(where + ": unknown escape \\" + std::string(1, n));
      }
    } else {
      out.push_back(c);
    }
  }
  return out;
}

ConfigValue parse_value(const std::string& raw, const std::string& where, bool bare_strings_ok) {
  std::string v = trim(raw);
  if (v.empty()) throw ParseError(where + ": empty value");
  if (v.front() == '"') return ConfigValue::of_text(unescape_quoted(v, where));
  if (v.front() == '[') {
    if (v.back() != ']') throw ParseError(where + ": unterminated array " + v);
    std::vector<ConfigValue> items;
    for (const auto& item : split_array_items(v.substr(1, v.size() - 2), where))
      items.push_back(parse_value(item, where, bare_strings_ok));
    return ConfigValue::of_array(std::move(items));
  }
  if (v == "true") return ConfigValue::of_bool(true);
  if (v == "false") return ConfigValue::of_bool(false);
  long long i = 0;
  if (parse_int_strict(v, i)) return ConfigValue::of_int(i);
  double d = 0.0;
  if (parse_real_strict(v, d)) return ConfigValue::of_real(d);
  if (bare_strings_ok) return ConfigValue::of_text(v);
  throw ParseError(where + ": cannot parse value " + v);
}

std::string kind_name(ConfigValue::Kind k) {
  switch (k) {
    case ConfigValue::Kind::boolean: return "bool";
    case ConfigValue::Kind::integer: return "integer";
    case ConfigValue::Kind::real: return "float";
    case ConfigValue::Kind::text: return "string";
    case ConfigValue::Kind::array: return "array";
  }
  return "?";
}

[[noreturn]] void wrong_kind(const std::string& key, const ConfigValue& v, const char* wanted) {
  throw ConfigError("config key '" + key + "' has type " + kind_name(v.kind) +
                    ", expected " + wanted);
}

}  // namespace

ConfigValue ConfigValue::of_bool(bool v) {
  ConfigValue c;
  c.kind = Kind::boolean;
  c.b = v;
  return c;
}
ConfigValue ConfigValue::of_int(long long v) {
  ConfigValue c;
  c.kind = Kind::integer;
  c.i = v;
  return c;
}
ConfigValue ConfigValue::of_real(double v) {
  ConfigValue c;
  c.kind = Kind::real;
  c.d = v;
  return c;
}
ConfigValue ConfigValue::of_text(std::string v) {
  ConfigValue c;
  c.kind = Kind::text;
  c.s = std::move(v);
  return c;
}
ConfigValue ConfigValue::of_array(std::vector<ConfigValue> v) {
  ConfigValue c;
  c.kind = Kind::array;
  c.items = std::move(v);
  return c;
}

bool ConfigValue::as_bool(const std::string& key) const {
  if (kind != Kind::boolean) wrong_kind(key, *this, "bool");
  return b;
}

long long ConfigValue::as_int(const std::string& key) const {
  if (kind != Kind::integer) wrong_kind(key, *this, "integer");
  return i;
}

double ConfigValue::as_real(const std::string& key) const {
  if (kind == Kind::integer) return static_cast<double>(i);
  if (kind != Kind::real) wrong_kind(key, *this, "float");
  return d;
}

const std::string& ConfigValue::as_text(const std::string& key) const {
  if (kind != Kind::text) wrong_kind(key, *this, "string");
  return s;
}

std::vector<double> ConfigValue::as_real_list(const std::string& key) const {
  if (kind != Kind::array) wrong_kind(key, *this, "array of floats");
  std::vector<double> out;
  for (const auto& it : items) out.push_back(it.as_real(key));
  return out;
}

std::vector<int> ConfigValue::as_int_list(const std::string& key) const {
  if (kind != Kind::array) wrong_kind(key, *this, "array of integers");
  std::vector<int> out;
  for (const auto& it : items) out.push_back(static_cast<int>(it.as_int(key)));
  return out;
}

std::vector<std::string> ConfigValue::as_text_list(const std::string& key) const {
  if (kind != Kind::array) wrong_kind(key, *this, "array of strings");
  std::vector<std::string> out;
  for (const auto& it : items) out.push_back(it.as_text(key));
  return out;
}

std::string ConfigValue::render() const {
  switch (kind) {
    case Kind::boolean: return b ? "true" : "false";
    case Kind::integer: return std::to_string(i);
    case Kind::real: return render_real(d);
    case Kind::text: return quote(s);
    case Kind::array: {
      std::string out = "[";
      for (size_t j = 0; j < items.size(); ++j) {
        if (j) out += ", ";
        out += items[j].render();
      }
      return out + "]";
    }
  }
  return "";
}

ConfigMap ConfigMap::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str(), path);
}

ConfigMap ConfigMap::parse_text(const std::string& text, const std::string& origin) {
  ConfigMap map;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string where = origin + ":" + std::to_string(lineno);
    std::string body = trim(strip_comment(line));
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']') throw ParseError(where + ": malformed section header " + body);
      section = trim(body.substr(1, body.size() - 2));
      if (section.empty()) throw ParseError(where + ": empty section name");
      continue;
    }
    size_t eq = body.find('=');
    if (eq == std::string::npos) throw ParseError(where + ": expected key = value, got " + body);
    std::string key = trim(body.substr(0, eq));
    if (key.empty()) throw ParseError(where + ": empty key");
    std::string full = section.empty() ? key : section + "." + key;
    if (map.entries_.count(full)) throw ParseError(where + ": duplicate key " + full);
    map.set(full, parse_value(body.substr(eq + 1), where, /*bare_strings_ok=*/false));
  }
  return map;
}

void ConfigMap::apply_overrides(const std::vector<std::string>& overrides) {
  for (const auto& ov : overrides) {
    size_t eq = ov.find('=');
    if (eq == std::string::npos)
      throw ConfigError("override must look like key=value, got: " + ov);
    std::string key = trim(ov.substr(0, eq));
    if (key.empty()) throw ConfigError("override with empty key: " + ov);
    if (key.find('.') == std::string::npos) key = "trainer." + key;
    set(key, parse_value(ov.substr(eq + 1), "override " + ov, /*bare_strings_ok=*/true));
  }
}

void ConfigMap::set(const std::string& key, ConfigValue value) {
  entries_[key] = std::move(value);
}

bool ConfigMap::has(const std::string& key) const { return entries_.count(key) != 0; }

const ConfigValue& ConfigMap::at(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("missing config key: " + key);
  consumed_[key] = true;
  return it->second;
}

bool ConfigMap::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  return at(key).as_bool(key);
}
long long ConfigMap::get_int(const std::string& key, long long fallback) const {
  if (!has(key)) return fallback;
  return at(key).as_int(key);
}
double ConfigMap::get_real(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  return at(key).as_real(key);
}
std::string ConfigMap::get_text(const std::string& key, const std::string& fallback) const {
  if (!has(key)) return fallback;
  return at(key).as_text(key);
}
std::vector<int> ConfigMap::get_int_list(const std::string& key, std::vector<int> fallback) const {
  if (!has(key)) return fallback;
  return at(key).as_int_list(key);
}
std::vector<double> ConfigMap::get_real_list(const std::string& key,
                                             std::vector<double> fallback) const {
  if (!has(key)) return fallback;
  return at(key).as_real_list(key);
}
std::vector<std::string> ConfigMap::get_text_list(const std::string& key,
                                                  std::vector<std::string> fallback) const {
  if (!has(key)) return fallback;
  return at(key).as_text_list(key);
}

std::vector<std::string> ConfigMap::unconsumed() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : entries_)
    if (!consumed_.count(k)) out.push_back(k);
  return out;
}

ModalityMode parse_modality_mode(const std::string& name) {
  if (name == "sketch_support") return ModalityMode::sketch_support;
  if (name == "photo_support") return ModalityMode::photo_support;
  if (name == "multimodal") return ModalityMode::multimodal;
  throw ConfigError("unknown modality_mode '" + name +
                    "' (expected sketch_support, photo_support, or multimodal)");
}

std::string modality_mode_name(ModalityMode m) {
  switch (m) {
    case ModalityMode::sketch_support: return "sketch_support";
    case ModalityMode::photo_support: return "photo_support";
    case ModalityMode::multimodal: return "multimodal";
  }
  return "?";
}

RunConfig RunConfig::load(const std::string& path, const std::vector<std::string>& overrides) {
  ConfigMap map = ConfigMap::parse_file(path);
  map.apply_overrides(overrides);
  RunConfig cfg = from_map(map);
  if (cfg.cache_dir.empty()) {
    const char* env = std::getenv("SKETCHKP_CACHE");
    if (env && *env) {
      cfg.cache_dir = env;
    } else if (!cfg.index_path.empty()) {
      cfg.cache_dir =
          (std::filesystem::path(cfg.index_path).parent_path() / "edgemaps").string();
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::from_map(ConfigMap& map) {
  RunConfig c;
  c.index_path = map.get_text("dataset.index", c.index_path);
  c.cache_dir = map.get_text("dataset.cache_dir", c.cache_dir);
  c.mask_dir = map.get_text("dataset.mask_dir", c.mask_dir);
  c.image_size = static_cast<int>(map.get_int("dataset.image_size", c.image_size));
  c.canny_low = map.get_real("dataset.canny_low", c.canny_low);
  c.canny_high = map.get_real("dataset.canny_high", c.canny_high);
  c.s_detector = map.get_text("dataset.s_detector", c.s_detector);

  c.backbone = map.get_text("encoder.backbone", c.backbone);
  c.weights = map.get_text("encoder.weights", c.weights);
  c.freeze = map.get_bool("encoder.freeze", c.freeze);
  c.xi = map.get_real("encoder.xi", c.xi);

  c.destyle_identity = map.get_bool("destyle.identity", c.destyle_identity);

  c.scales = map.get_int_list("locator.scales", c.scales);

  c.k = static_cast<int>(map.get_int("trainer.k", c.k));
  c.m = static_cast<int>(map.get_int("trainer.m", c.m));
  c.iterations = map.get_int("trainer.iterations", c.iterations);
  c.learning_rate = map.get_real("trainer.learning_rate", c.learning_rate);
  c.lambda_kp = map.get_real("trainer.lambda_kp", c.lambda_kp);
  c.lambda_da = map.get_real("trainer.lambda_da", c.lambda_da);
  c.lambda_style_explicit = map.has("trainer.lambda_style");
  c.lambda_style = map.get_real("trainer.lambda_style", c.lambda_style);
  c.seed = static_cast<unsigned long long>(map.get_int("trainer.seed", 0));
  c.modality_mode = parse_modality_mode(
      map.get_text("trainer.modality_mode", modality_mode_name(c.modality_mode)));
  c.grad_clip = map.get_real("trainer.grad_clip", c.grad_clip);
  c.checkpoint_every = map.get_int("trainer.checkpoint_every", c.checkpoint_every);
  c.run_dir = map.get_text("trainer.run_dir", c.run_dir);
  c.t_values = map.get_real_list("trainer.t_values", c.t_values);
  c.train_classes = map.get_text_list("trainer.train_classes", c.train_classes);
  c.eval_classes = map.get_text_list("trainer.eval_classes", c.eval_classes);
  c.split_seed = static_cast<unsigned long long>(map.get_int("trainer.split_seed", 0));
  c.split_train_fraction = map.get_real("trainer.split_train_fraction", c.split_train_fraction);

  c.eval_episodes = map.get_int("eval.episodes", c.eval_episodes);

  auto leftover = map.unconsumed();
  if (!leftover.empty()) {
    std::string msg = "unknown config key(s):";
    for (const auto& k : leftover) msg += " " + k;
    throw ConfigError(msg);
  }
  return c;
}

void RunConfig::validate() const {
  if (backbone != "reference" && backbone != "tiny")
    throw ConfigError("encoder.backbone must be 'reference' or 'tiny', got '" + backbone + "'");
  if (s_detector != "canny_builtin" && s_detector != "external")
    throw ConfigError("dataset.s_detector must be 'canny_builtin' or 'external', got '" +
                      s_detector + "'");
  if (image_size <= 0) throw ConfigError("dataset.image_size must be positive");
  if (canny_low < 0 || canny_high < canny_low)
    throw ConfigError("canny thresholds must satisfy 0 <= low <= high");
  if (xi <= 0.0) throw ConfigError("encoder.xi must be positive");
  if (scales.empty()) throw ConfigError("locator.scales must not be empty");
  for (size_t j = 0; j < scales.size(); ++j) {
    if (scales[j] <= 0) throw ConfigError("locator.scales entries must be positive");
    if (j > 0 && scales[j] <= scales[j - 1])
      throw ConfigError("locator.scales must be strictly increasing");
  }
  if (k < 1) throw ConfigError("trainer.k must be >= 1");
  if (m < 1) throw ConfigError("trainer.m must be >= 1");
  if (iterations < 0) throw ConfigError("trainer.iterations must be >= 0");
  if (learning_rate <= 0) throw ConfigError("trainer.learning_rate must be positive");
  if (lambda_kp < 0 || lambda_da < 0 || lambda_style < 0)
    throw ConfigError("loss weights must be >= 0");
  if (t_values.empty()) throw ConfigError("trainer.t_values must not be empty");
  for (double t : t_values)
    if (!(t > 0.0 && t < 1.0)) throw ConfigError("trainer.t_values entries must lie in (0, 1)");
  if (checkpoint_every < 1) throw ConfigError("trainer.checkpoint_every must be >= 1");
  if (!(split_train_fraction > 0.0 && split_train_fraction < 1.0))
    throw ConfigError("trainer.split_train_fraction must lie in (0, 1)");
  if (eval_episodes < 1) throw ConfigError("eval.episodes must be >= 1");
}

double RunConfig::effective_lambda_style() const {
  if (modality_mode == ModalityMode::multimodal && !lambda_style_explicit) return 1e-8;
  return lambda_style;
}

std::string RunConfig::canonical() const {
  auto int_list = [](const std::vector<int>& v) {
    std::vector<ConfigValue> items;
    for (int x : v) items.push_back(ConfigValue::of_int(x));
    return ConfigValue::of_array(std::move(items)).render();
  };
  auto real_list = [](const std::vector<double>& v) {
    std::vector<ConfigValue> items;
    for (double x : v) items.push_back(ConfigValue::of_real(x));
    return ConfigValue::of_array(std::move(items)).render();
  };
  auto text_list = [](const std::vector<std::string>& v) {
    std::vector<ConfigValue> items;
    for (const auto& x : v) items.push_back(ConfigValue::of_text(x));
    return ConfigValue::of_array(std::move(items)).render();
  };

  std::vector<std::pair<std::string, std::string>> kv = {
      {"dataset.cache_dir", quote(cache_dir)},
      {"dataset.canny_high", render_real(canny_high)},
      {"dataset.canny_low", render_real(canny_low)},
      {"dataset.image_size", std::to_string(image_size)},
      {"dataset.index", quote(index_path)},
      {"dataset.mask_dir", quote(mask_dir)},
      {"dataset.s_detector", quote(s_detector)},
      {"destyle.identity", destyle_identity ? "true" : "false"},
      {"encoder.backbone", quote(backbone)},
      {"encoder.freeze", freeze ? "true" : "false"},
      {"encoder.weights", quote(weights)},
      {"encoder.xi", render_real(xi)},
      {"eval.episodes", std::to_string(eval_episodes)},
      {"locator.scales", int_list(scales)},
      {"trainer.checkpoint_every", std::to_string(checkpoint_every)},
      {"trainer.eval_classes", text_list(eval_classes)},
      {"trainer.grad_clip", render_real(grad_clip)},
      {"trainer.iterations", std::to_string(iterations)},
      {"trainer.k", std::to_string(k)},
      {"trainer.lambda_da", render_real(lambda_da)},
      {"trainer.lambda_kp", render_real(lambda_kp)},
      {"trainer.lambda_style", render_real(effective_lambda_style())},
      {"trainer.learning_rate", render_real(learning_rate)},
      {"trainer.m", std::to_string(m)},
      {"trainer.modality_mode", quote(modality_mode_name(modality_mode))},
      {"trainer.run_dir", quote(run_dir)},
      {"trainer.seed", std::to_string(seed)},
      {"trainer.split_seed", std::to_string(split_seed)},
      {"trainer.split_train_fraction", render_real(split_train_fraction)},
      {"trainer.t_values", real_list(t_values)},
      {"trainer.train_classes", text_list(train_classes)},
  };
  std::sort(kv.begin(), kv.end());
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

std::string RunConfig::hash() const { return to_hex64(fnv1a64(canonical())); }

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string to_hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace sketchkp
