#pragma once

// Configuration documents. A small TOML subset and JSON both parse into one
// JSON tree, which is then mapped onto experiment and session settings.
// Unknown sections or keys are errors.

#include <algorithm>
#include <cctype>
#include <exception>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"
#include "progclean/baselines.hpp"
#include "progclean/common.hpp"
#include "progclean/detector.hpp"
#include "progclean/harness.hpp"
#include "progclean/updater.hpp"

namespace progclean {

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// TOML subset: [section] and [a.b] headers, [[array]] tables, key = value with
// strings, integers, floats, booleans and (possibly multi-line) arrays of
// those, and # comments.

namespace detail {

class TomlParser {
 public:
  explicit TomlParser(const std::string& text) : text_(text) {}

  Json parse() {
    Json root = Json::object();
    Json* table = &root;
    std::size_t pos = 0;
    line_ = 1;
    while (pos < text_.size()) {
      skip_blank(pos);
      if (pos >= text_.size()) break;
      const char c = text_[pos];
      if (c == '\n') {
        ++pos;
        ++line_;
        continue;
      }
      if (c == '#') {
        skip_comment(pos);
        continue;
      }
      if (c == '[') {
        table = header(root, pos);
      } else {
        const std::string key = bare_key(pos);
        skip_blank(pos);
        if (pos >= text_.size() || text_[pos] != '=') fail("expected '=' after key '" + key + "'");
        ++pos;
        skip_blank(pos);
        Json v = value(pos);
        if (table->contains(key)) fail("duplicate key '" + key + "'");
        (*table)[key] = std::move(v);
      }
      end_of_line(pos);
    }
    return root;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw Error("config line " + std::to_string(line_) + ": " + what);
  }

  void skip_blank(std::size_t& pos) const {
    while (pos < text_.size() && (text_[pos] == ' ' || text_[pos] == '\t' || text_[pos] == '\r')) ++pos;
  }

  void skip_comment(std::size_t& pos) const {
    while (pos < text_.size() && text_[pos] != '\n') ++pos;
  }

  // Whitespace, comments and newlines inside arrays.
  void skip_space(std::size_t& pos) {
    for (;;) {
      skip_blank(pos);
      if (pos < text_.size() && text_[pos] == '#') skip_comment(pos);
      if (pos < text_.size() && text_[pos] == '\n') {
        ++pos;
        ++line_;
        continue;
      }
      return;
    }
  }

  void end_of_line(std::size_t& pos) {
    skip_blank(pos);
    if (pos < text_.size() && text_[pos] == '#') skip_comment(pos);
    if (pos < text_.size() && text_[pos] != '\n') fail("unexpected text after value");
  }

  std::string bare_key(std::size_t& pos) const {
    const std::size_t start = pos;
    while (pos < text_.size() &&
           (std::isalnum(static_cast<unsigned char>(text_[pos])) || text_[pos] == '_' || text_[pos] == '-'))
      ++pos;
    if (pos == start) fail("expected a key");
    return text_.substr(start, pos - start);
  }

  Json* header(Json& root, std::size_t& pos) {
    const bool array = pos + 1 < text_.size() && text_[pos + 1] == '[';
    pos += array ? 2 : 1;
    std::vector<std::string> path;
    for (;;) {
      skip_blank(pos);
      path.push_back(bare_key(pos));
      skip_blank(pos);
      if (pos < text_.size() && text_[pos] == '.') {
        ++pos;
        continue;
      }
      break;
    }
    const std::string close = array ? "]]" : "]";
    if (text_.compare(pos, close.size(), close) != 0) fail("unterminated table header");
    pos += close.size();
    Json* t = &root;
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
      Json& next = (*t)[path[i]];
      if (next.is_null()) next = Json::object();
      if (next.is_array() && !next.empty()) t = &next.back();
      else if (next.is_object()) t = &next;
      else fail("'" + path[i] + "' is not a table");
    }
    Json& leaf = (*t)[path.back()];
    if (array) {
      if (leaf.is_null()) leaf = Json::array();
      if (!leaf.is_array()) fail("'" + path.back() + "' is not an array of tables");
      leaf.push_back(Json::object());
      return &leaf.back();
    }
    if (leaf.is_null()) leaf = Json::object();
    else if (!leaf.is_object() || defined_.count(&leaf)) fail("table '" + path.back() + "' defined twice");
    defined_.insert(&leaf);
    return &leaf;
  }

  Json value(std::size_t& pos) {
    if (pos >= text_.size()) fail("missing value");
    const char c = text_[pos];
    if (c == '"') return string(pos);
    if (c == '\'') return literal(pos);
    if (c == '[') {
      ++pos;
      Json arr = Json::array();
      for (;;) {
        skip_space(pos);
        if (pos < text_.size() && text_[pos] == ']') {
          ++pos;
          return arr;
        }
        arr.push_back(value(pos));
        skip_space(pos);
        if (pos < text_.size() && text_[pos] == ',') {
          ++pos;
          continue;
        }
        skip_space(pos);
        if (pos < text_.size() && text_[pos] == ']') {
          ++pos;
          return arr;
        }
        fail("expected ',' or ']' in array");
      }
    }
    const std::size_t start = pos;
    while (pos < text_.size() && text_[pos] != ',' && text_[pos] != ']' && text_[pos] != '#' &&
           text_[pos] != '\n' && text_[pos] != ' ' && text_[pos] != '\t' && text_[pos] != '\r')
      ++pos;
    const std::string tok = text_.substr(start, pos - start);
    if (tok == "true") return true;
    if (tok == "false") return false;
    std::string digits = tok;
    digits.erase(std::remove(digits.begin(), digits.end(), '_'), digits.end());
    const bool integral = !digits.empty() &&
                          digits.find_first_not_of("+-0123456789") == std::string::npos &&
                          digits.find_first_of("0123456789") != std::string::npos;
    if (integral) {
      try {
        std::size_t used = 0;
        const long long v = std::stoll(digits, &used);
        if (used == digits.size()) return v;
      } catch (const std::exception&) {
      }
      fail("integer out of range: '" + tok + "'");
    }
    double d;
    if (!parse_number(digits, d) || tok.empty()) fail("cannot parse value '" + tok + "'");
    return d;
  }

  Json string(std::size_t& pos) {
    ++pos;
    std::string out;
    while (pos < text_.size() && text_[pos] != '"') {
      char c = text_[pos++];
      if (c == '\n') fail("newline in string");
      if (c == '\\') {
        if (pos >= text_.size()) break;
        const char e = text_[pos++];
        switch (e) {
          case 'n': c = '\n'; break;
          case 't': c = '\t'; break;
          case '"': c = '"'; break;
          case '\\': c = '\\'; break;
          default: fail(std::string("unknown escape '\\") + e + "'");
        }
      }
      out.push_back(c);
    }
    if (pos >= text_.size()) fail("unterminated string");
    ++pos;
    return out;
  }

  // Single-quoted strings take their content verbatim.
  Json literal(std::size_t& pos) {
    const std::size_t start = ++pos;
    while (pos < text_.size() && text_[pos] != '\'' && text_[pos] != '\n') ++pos;
    if (pos >= text_.size() || text_[pos] != '\'') fail("unterminated string");
    return text_.substr(start, pos++ - start);
  }

  const std::string& text_;
  std::size_t line_ = 1;
  std::set<const Json*> defined_;
};

}  // namespace detail

inline Json parse_toml(const std::string& text) { return detail::TomlParser(text).parse(); }

/// JSON when the first non-blank character is '{', TOML otherwise.
inline Json parse_config_text(const std::string& text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    try {
      return Json::parse(text);
    } catch (const Json::parse_error& e) {
      throw Error(std::string("config: ") + e.what());
    }
  }
  return parse_toml(text);
}

inline Json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

// ---------------------------------------------------------------------------
// Typed access

namespace detail {

/// Reads the members of one table and rejects any it does not know.
class Section {
 public:
  Section(const Json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_null() && !j_.is_object()) throw Error("config: '" + name_ + "' must be a table");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() || !j_.is_object()) return;
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw Error("config: unknown key '" + where(it.key()) + "'");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.is_object() && j_.contains(key);
  }
  const Json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void get(const std::string& key, double& out) {
    if (!has(key)) return;
    const Json& v = raw(key);
    if (!v.is_number()) throw Error("config: '" + where(key) + "' must be a number");
    out = v.get<double>();
  }
  void get(const std::string& key, bool& out) {
    if (!has(key)) return;
    const Json& v = raw(key);
    if (!v.is_boolean()) throw Error("config: '" + where(key) + "' must be true or false");
    out = v.get<bool>();
  }
  void get(const std::string& key, std::string& out) {
    if (!has(key)) return;
    const Json& v = raw(key);
    if (!v.is_string()) throw Error("config: '" + where(key) + "' must be a string");
    out = v.get<std::string>();
  }
  template <class Int>
    requires std::is_integral_v<Int>
  void get(const std::string& key, Int& out) {
    if (!has(key)) return;
    out = to_int<Int>(raw(key), where(key));
  }
  template <class T>
  void get(const std::string& key, std::vector<T>& out) {
    if (!has(key)) return;
    const Json& v = raw(key);
    if (!v.is_array()) throw Error("config: '" + where(key) + "' must be an array");
    out.clear();
    for (const Json& e : v) {
      if constexpr (std::is_integral_v<T>) out.push_back(to_int<T>(e, where(key)));
      else if constexpr (std::is_same_v<T, double>) {
        if (!e.is_number()) throw Error("config: '" + where(key) + "' must hold numbers");
        out.push_back(e.get<double>());
      } else {
        if (!e.is_string()) throw Error("config: '" + where(key) + "' must hold strings");
        out.push_back(e.get<std::string>());
      }
    }
  }

  std::string where(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

 private:
  template <class Int>
  static Int to_int(const Json& v, const std::string& where) {
    if (v.is_number_integer() || v.is_number_unsigned()) {
      if constexpr (std::is_unsigned_v<Int>) {
        if (v.is_number_integer() && v.get<long long>() < 0)
          throw Error("config: '" + where + "' must be non-negative");
      }
      return v.get<Int>();
    }
    if (v.is_number_float()) {
      const double d = v.get<double>();
      if (d == std::floor(d) && (!std::is_unsigned_v<Int> || d >= 0)) return static_cast<Int>(d);
    }
    throw Error("config: '" + where + "' must be an integer");
  }

  const Json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

inline const Json& member(const Json& root, const std::string& key) {
  static const Json null;
  return root.is_object() && root.contains(key) ? root.at(key) : null;
}

}  // namespace detail

inline CorruptionKind parse_corruption_kind(const std::string& s) {
  if (s == "systematic") return CorruptionKind::systematic;
  if (s == "random_outlier" || s == "random") return CorruptionKind::random_outlier;
  throw Error("unknown corruption kind '" + s + "'");
}

inline std::string to_string(CorruptionKind k) {
  return k == CorruptionKind::systematic ? "systematic" : "random_outlier";
}

inline TaylorForm parse_taylor_form(const std::string& s) {
  if (s == "jacobian") return TaylorForm::jacobian;
  if (s == "literal") return TaylorForm::literal;
  throw Error("unknown taylor form '" + s + "'");
}

inline void apply_update_section(const Json& j, UpdateConfig& u) {
  detail::Section s(j, "update");
  s.get("batch_size", u.batch_size);
  s.get("budget", u.budget);
  s.get("gamma0", u.schedule.gamma0);
  std::string mode = to_string(u.schedule.mode);
  s.get("step_mode", mode);
  u.schedule.mode = parse_step_mode(mode);
  s.get("floor_epsilon", u.floor_epsilon);
  std::string form = u.taylor_form == TaylorForm::jacobian ? "jacobian" : "literal";
  s.get("taylor_form", form);
  u.taylor_form = parse_taylor_form(form);
}

/// Detector tuning shared by experiments and sessions; `mode` is read by the
/// caller when it applies.
inline void apply_detector_section(detail::Section& s, double& margin_threshold, ClassifierOptions& c) {
  s.get("margin_threshold", margin_threshold);
  s.get("l2_reg", c.l2_reg);
  s.get("tolerance", c.tolerance);
  s.get("max_epochs", c.max_epochs);
  s.get("balance_classes", c.balance_classes);
  s.get("quadratic", c.quadratic);
  s.get("duplicate_counts", c.duplicate_counts);
}

/// `[[rules]]` entries: name, feature or label index, optional min, max and allowed values.
inline RuleSet rules_from_json(const Json& j) {
  RuleSet rules;
  if (j.is_null()) return rules;
  if (!j.is_array()) throw Error("config: 'rules' must be an array of tables");
  for (std::size_t i = 0; i < j.size(); ++i) {
    detail::Section s(j[i], "rules[" + std::to_string(i) + "]");
    Rule r;
    s.get("name", r.name);
    const bool f = s.has("feature"), l = s.has("label");
    if (f == l) throw Error("config: rules[" + std::to_string(i) + "] needs exactly one of 'feature' or 'label'");
    s.get(f ? "feature" : "label", r.index);
    r.on_label = l;
    if (s.has("min")) {
      double v = 0;
      s.get("min", v);
      r.min = v;
    }
    if (s.has("max")) {
      double v = 0;
      s.get("max", v);
      r.max = v;
    }
    std::vector<double> allowed;
    s.get("allowed", allowed);
    r.allowed.insert(allowed.begin(), allowed.end());
    if (r.name.empty()) r.name = (r.on_label ? "label" : "feature") + std::to_string(r.index);
    rules.push_back(std::move(r));
  }
  return rules;
}

inline void apply_model_section(const Json& j, LossKind& loss, bool& thresholded, double& reg, std::size_t& classes) {
  detail::Section s(j, "model");
  std::string name = to_string(loss);
  s.get("loss", name);
  loss = parse_loss(name);
  s.get("thresholded", thresholded);
  s.get("reg_per_example", reg);
  s.get("classes", classes);
}

inline ExperimentConfig experiment_from_json(const Json& root) {
  if (!root.is_object()) throw Error("config: top level must be a table");
  for (auto it = root.begin(); it != root.end(); ++it) {
    static const std::set<std::string> known = {"dataset", "corruption", "model",   "update",
                                                "detector", "experiment", "session", "rules"};
    if (!known.count(it.key())) throw Error("config: unknown section '" + it.key() + "'");
  }
  ExperimentConfig cfg;
  {
    detail::Section s(detail::member(root, "dataset"), "dataset");
    if (s.has("csv")) {
      std::string p;
      s.get("csv", p);
      cfg.csv_path = p;
    }
    std::string task = to_string(cfg.benchmark.task);
    s.get("task", task);
    cfg.benchmark.task = parse_task(task);
    s.get("n", cfg.benchmark.n);
    s.get("d", cfg.benchmark.d);
    s.get("separation", cfg.benchmark.separation);
    if (s.has("margin")) {
      const Json& m = s.raw("margin");
      if (m.is_boolean() && !m.get<bool>()) cfg.benchmark.margin.reset();
      else if (m.is_number()) cfg.benchmark.margin = m.get<double>();
      else throw Error("config: 'dataset.margin' must be a number or false");
    }
    s.get("concentration", cfg.benchmark.concentration);
    s.get("noise", cfg.benchmark.noise);
    s.get("weight_scale", cfg.benchmark.weight_scale);
    s.get("test_fraction", cfg.test_fraction);
  }
  {
    detail::Section s(detail::member(root, "corruption"), "corruption");
    s.get("enabled", cfg.apply_corruption);
    std::string kind = to_string(cfg.corruption.kind);
    s.get("kind", kind);
    cfg.corruption.kind = parse_corruption_kind(kind);
    s.get("rate", cfg.corruption.rate);
    s.get("num_features", cfg.corruption.num_features);
    s.get("outlier_scale", cfg.corruption.outlier_scale);
    s.get("seed", cfg.corruption.seed);
  }
  apply_model_section(detail::member(root, "model"), cfg.loss, cfg.thresholded, cfg.reg_per_example, cfg.classes);
  apply_update_section(detail::member(root, "update"), cfg.update);
  {
    detail::Section s(detail::member(root, "detector"), "detector");
    apply_detector_section(s, cfg.margin_threshold, cfg.classifier);
    if (s.has("mode")) s.raw("mode");  // session-only; accepted so one file can serve both
  }
  {
    detail::Section s(detail::member(root, "experiment"), "experiment");
    if (s.has("strategies")) {
      std::vector<std::string> names;
      s.get("strategies", names);
      cfg.strategies.clear();
      for (const std::string& n : names) cfg.strategies.push_back(parse_strategy(n));
    }
    s.get("seeds", cfg.seeds);
    s.get("checkpoints", cfg.checkpoints);
    s.get("parallel", cfg.parallel);
    s.get("record_timing", cfg.record_timing);
  }
  rules_from_json(detail::member(root, "rules"));  // validated even when unused here
  {
    // Checked for well-formedness only; sessions read it via session_from_json.
    detail::Section s(detail::member(root, "session"), "session");
    for (const char* k : {"plan", "detector", "strategy", "seed"})
      if (s.has(k)) s.raw(k);
  }
  cfg.validate();
  return cfg;
}

/// Relative `dataset.csv` paths resolve against the config file's directory.
inline ExperimentConfig load_experiment_config(const std::string& path) {
  ExperimentConfig cfg = experiment_from_json(load_config_file(path));
  if (cfg.csv_path && std::filesystem::path(*cfg.csv_path).is_relative())
    cfg.csv_path = (std::filesystem::path(path).parent_path() / *cfg.csv_path).string();
  return cfg;
}

// ---------------------------------------------------------------------------
// Interactive sessions

struct SessionConfig {
  LossKind loss = LossKind::linear_regression;
  bool thresholded = true;
  double reg_per_example = 1e-4;
  std::size_t classes = 2;
  UpdateConfig update;
  PlanKind plan = PlanKind::estimator;
  DetectorMode detector = DetectorMode::adaptive;
  double margin_threshold = 0.0;
  ClassifierOptions classifier;
  RuleSet rules;
  std::uint64_t seed = 0;

  ModelSpec model_spec(std::size_t d, std::size_t n) const {
    ModelSpec s = ModelSpec::make(loss, d, n, reg_per_example);
    s.thresholded = thresholded;
    s.classes = classes;
    return s;
  }

  Detector make_detector() const {
    Detector d;
    d.mode = detector;
    d.rules = rules;
    d.margin_threshold = margin_threshold;
    d.classifier_options = classifier;
    return d;
  }
};

/// Reads model, update, detector, rules and session sections. A
/// `session.strategy` naming a progressive strategy sets plan and detector,
/// which explicit `session.plan` / `session.detector` then override.
inline SessionConfig session_from_json(const Json& root) {
  if (!root.is_null() && !root.is_object()) throw Error("config: top level must be a table");
  SessionConfig c;
  apply_model_section(detail::member(root, "model"), c.loss, c.thresholded, c.reg_per_example, c.classes);
  apply_update_section(detail::member(root, "update"), c.update);
  {
    detail::Section s(detail::member(root, "detector"), "detector");
    apply_detector_section(s, c.margin_threshold, c.classifier);
    std::string mode = to_string(c.detector);
    s.get("mode", mode);
    c.detector = parse_detector_mode(mode);
  }
  c.rules = rules_from_json(detail::member(root, "rules"));
  {
    detail::Section s(detail::member(root, "session"), "session");
    if (s.has("strategy")) {
      std::string name;
      s.get("strategy", name);
      const ProgressiveSetup setup = progressive_setup(parse_strategy(name));
      c.plan = setup.plan;
      c.detector = setup.detector;
    }
    if (s.has("plan")) {
      std::string p;
      s.get("plan", p);
      c.plan = parse_plan_kind(p);
    }
    if (s.has("detector")) {
      std::string m;
      s.get("detector", m);
      c.detector = parse_detector_mode(m);
    }
    s.get("seed", c.seed);
  }
  if (c.detector == DetectorMode::rules && c.rules.empty()) throw Error("config: rules detector needs [[rules]]");
  c.update.validate();
  return c;
}

}  // namespace progclean
