#pragma once

// HTTP session API over the interactive cleaning loop. Sessions live in a
// SessionStore (usable without HTTP); mount_routes() exposes it through
// cpp-httplib. Every accepted mutation is snapshotted to disk before it
// becomes visible, so a restarted service resumes where it stopped.

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "progclean/common.hpp"
#include "progclean/config.hpp"
#include "progclean/dataset.hpp"
#include "progclean/updater.hpp"

namespace progclean {

/// An error with the HTTP status it maps to.
class ApiError : public Error {
 public:
  ApiError(int status, const std::string& what) : Error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

inline constexpr int kSnapshotVersion = 1;
inline constexpr const char* kSnapshotFormat = "progclean-session";

// ---------------------------------------------------------------------------
// JSON encoding

namespace wire {

inline Json exact(std::span<const double> v) {
  Json a = Json::array();
  for (double x : v) a.push_back(format_double(x));
  return a;
}

inline Json numbers(std::span<const double> v) {
  Json a = Json::array();
  for (double x : v) a.push_back(x);
  return a;
}

/// Accepts numbers or decimal strings.
inline double to_double(const Json& j, const std::string& what) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    double v;
    if (detail::parse_number(j.get<std::string>(), v)) return v;
  }
  throw ApiError(400, what + ": expected a number");
}

inline Vector to_vector(const Json& j, const std::string& what) {
  if (!j.is_array()) throw ApiError(400, what + ": expected an array");
  Vector v;
  for (const Json& e : j) v.push_back(to_double(e, what));
  return v;
}

inline std::int64_t to_id(const Json& j, const std::string& what) {
  if (j.is_number_integer() || j.is_number_unsigned()) return j.get<std::int64_t>();
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    try {
      std::size_t used = 0;
      const long long v = std::stoll(s, &used);
      if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
  }
  throw ApiError(400, what + ": expected an integer record id");
}

inline Json optional_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

inline Json history_point(const HistoryPoint& h) {
  Json j = {{"t", h.t},
            {"records_cleaned", h.records_cleaned},
            {"training_loss", h.training_loss},
            {"wall_ms", h.wall_ms},
            {"dirty_count", h.dirty_count},
            {"clean_count", h.clean_count}};
  if (h.relative_model_error) j["relative_model_error"] = *h.relative_model_error;
  if (h.test_accuracy) j["test_accuracy"] = *h.test_accuracy;
  if (h.detector_accuracy) j["detector_accuracy"] = *h.detector_accuracy;
  return j;
}

// Snapshot forms keep every double as a round-trip decimal string.
inline Json opt_exact(const std::optional<double>& v) { return v ? Json(format_double(*v)) : Json(nullptr); }

inline std::optional<double> opt_from(const Json& j) {
  if (j.is_null()) return std::nullopt;
  return to_double(j, "snapshot");
}

inline Json history_exact(const HistoryPoint& h) {
  return {{"t", h.t},
          {"records_cleaned", h.records_cleaned},
          {"relative_model_error", opt_exact(h.relative_model_error)},
          {"test_accuracy", opt_exact(h.test_accuracy)},
          {"training_loss", format_double(h.training_loss)},
          {"wall_ms", format_double(h.wall_ms)},
          {"dirty_count", h.dirty_count},
          {"clean_count", h.clean_count},
          {"detector_accuracy", opt_exact(h.detector_accuracy)}};
}

inline HistoryPoint history_from(const Json& j) {
  HistoryPoint h;
  h.t = j.at("t").get<std::size_t>();
  h.records_cleaned = j.at("records_cleaned").get<std::size_t>();
  h.relative_model_error = opt_from(j.at("relative_model_error"));
  h.test_accuracy = opt_from(j.at("test_accuracy"));
  h.training_loss = to_double(j.at("training_loss"), "snapshot");
  h.wall_ms = to_double(j.at("wall_ms"), "snapshot");
  h.dirty_count = j.at("dirty_count").get<std::size_t>();
  h.clean_count = j.at("clean_count").get<std::size_t>();
  h.detector_accuracy = opt_from(j.at("detector_accuracy"));
  return h;
}

inline Json record_exact(const Record& r) {
  Json j = {{"id", r.id}, {"x", exact(r.x)}, {"y", exact(r.y)}};
  if (r.clean_x) j["clean_x"] = exact(*r.clean_x);
  if (r.clean_y) j["clean_y"] = exact(*r.clean_y);
  if (r.error_class) j["error_class"] = *r.error_class;
  return j;
}

inline Record record_from(const Json& j) {
  Record r;
  r.id = j.at("id").get<std::int64_t>();
  r.x = to_vector(j.at("x"), "snapshot");
  r.y = to_vector(j.at("y"), "snapshot");
  if (j.contains("clean_x")) r.clean_x = to_vector(j.at("clean_x"), "snapshot");
  if (j.contains("clean_y")) r.clean_y = to_vector(j.at("clean_y"), "snapshot");
  if (j.contains("error_class")) r.error_class = j.at("error_class").get<int>();
  return r;
}

inline Json accumulator_exact(const DeltaStats::Accumulator& a) {
  return {{"sum_x", exact(a.sum_x)}, {"sum_y", exact(a.sum_y)}, {"weight_x", exact(a.weight_x)},
          {"weight_y", exact(a.weight_y)}};
}

inline DeltaStats::Accumulator accumulator_from(const Json& j) {
  return {to_vector(j.at("sum_x"), "snapshot"), to_vector(j.at("sum_y"), "snapshot"),
          to_vector(j.at("weight_x"), "snapshot"), to_vector(j.at("weight_y"), "snapshot")};
}

}  // namespace wire

// ---------------------------------------------------------------------------
// Session store

class SessionStore {
 public:
  /// With a snapshot directory, existing snapshots are loaded and every
  /// accepted change is persisted there.
  explicit SessionStore(std::optional<std::filesystem::path> snapshot_dir = std::nullopt,
                        bool record_timing = true)
      : dir_(std::move(snapshot_dir)), record_timing_(record_timing) {
    if (dir_) {
      std::filesystem::create_directories(*dir_);
      load_all();
    }
  }

  /// Body: {"csv": text} or {"path": file}, optional "config" (object, or
  /// TOML/JSON text) and optional "seed". Returns the session document.
  Json create(const Json& body) {
    if (!body.is_object()) throw ApiError(400, "request body must be a JSON object");
    DatasetView data;
    try {
      if (body.contains("csv")) {
        if (!body.at("csv").is_string()) throw ApiError(400, "'csv' must be a string");
        std::istringstream in(body.at("csv").get<std::string>());
        data = parse_csv(in);
      } else if (body.contains("path")) {
        if (!body.at("path").is_string()) throw ApiError(400, "'path' must be a string");
        data = load_csv(body.at("path").get<std::string>());
      } else {
        throw ApiError(400, "provide the dataset as 'csv' text or a 'path'");
      }
    } catch (const ApiError&) {
      throw;
    } catch (const Error& e) {
      throw ApiError(400, e.what());
    }
    if (data.empty()) throw ApiError(400, "dataset has no records");

    Json config = Json::object();
    if (body.contains("config")) {
      const Json& c = body.at("config");
      if (c.is_string()) {
        try {
          config = parse_config_text(c.get<std::string>());
        } catch (const Error& e) {
          throw ApiError(400, e.what());
        }
      } else if (c.is_object()) {
        config = c;
      } else {
        throw ApiError(400, "'config' must be an object or config text");
      }
    }
    if (body.contains("seed")) {
      if (!body.at("seed").is_number_integer() || body.at("seed").get<std::int64_t>() < 0)
        throw ApiError(400, "'seed' must be a non-negative integer");
      config["session"]["seed"] = body.at("seed");
    }

    auto entry = std::make_shared<Entry>();
    try {
      entry->config = config;
      entry->state = start_session(data, config);
    } catch (const ApiError&) {
      throw;
    } catch (const Error& e) {
      throw ApiError(400, e.what());
    }
    std::lock_guard<std::mutex> lock(mu_);
    entry->state.id = "s" + std::to_string(next_id_++);
    persist(*entry, entry->state);
    sessions_[entry->state.id] = entry;
    return document(*entry);
  }

  /// Proposes the next batch, or fails with 409 when one is pending or the
  /// session is done.
  Json next_batch(const std::string& id) {
    auto entry = find(id);
    std::lock_guard<std::mutex> lock(entry->mu);
    SessionState& s = entry->state;
    if (s.status == SessionStatus::done || s.exhausted()) throw ApiError(409, "session is done");
    if (!s.pending.empty()) throw ApiError(409, "a batch is already pending; submit it first");
    SessionState next = s;
    propose_batch(next);
    persist(*entry, next);
    s = std::move(next);
    return batch_document(*entry);
  }

  /// Body: {"repairs": [{"id", "x", "y", "error_class"} | {"id", "mark_clean": true}]}.
  /// error_class may be an integer or a tag name; names map to integers per
  /// session, with "clean" and "" meaning 0.
  Json submit(const std::string& id, const Json& body) {
    auto entry = find(id);
    std::lock_guard<std::mutex> lock(entry->mu);
    SessionState& s = entry->state;
    if (s.pending.empty()) throw ApiError(409, "no batch is pending");
    if (!body.is_object() || !body.contains("repairs") || !body.at("repairs").is_array())
      throw ApiError(400, "body must hold a 'repairs' array");
    std::map<std::string, int> names = entry->class_names;
    std::vector<Repair> repairs;
    for (const Json& j : body.at("repairs")) {
      if (!j.is_object() || !j.contains("id")) throw ApiError(400, "each repair needs an 'id'");
      Repair r;
      r.id = wire::to_id(j.at("id"), "repair id");
      const std::string what = "record " + std::to_string(r.id);
      if (!s.data.contains(r.id)) throw ApiError(400, "unknown record id " + std::to_string(r.id));
      const bool mark = j.contains("mark_clean") && j.at("mark_clean").is_boolean() && j.at("mark_clean").get<bool>();
      if (mark) {
        r.x = s.data.record(r.id).x;
        r.y = s.data.record(r.id).y;
      } else {
        if (!j.contains("x") || !j.contains("y")) throw ApiError(400, what + ": needs 'x' and 'y' or mark_clean");
        r.x = wire::to_vector(j.at("x"), what + " x");
        r.y = wire::to_vector(j.at("y"), what + " y");
      }
      r.error_class = 0;
      if (j.contains("error_class")) r.error_class = class_of(j.at("error_class"), names, what);
      repairs.push_back(std::move(r));
    }
    SessionState next = s;
    try {
      apply_batch(next, repairs);
    } catch (const Error& e) {
      throw ApiError(400, e.what());
    }
    persist(entry->config, names, next);
    s = std::move(next);
    entry->class_names = std::move(names);
    Json out = wire::history_point(s.history.back());
    out["status"] = to_string(s.status);
    out["budget_remaining"] = s.budget_remaining;
    out["theta"] = wire::exact(s.theta.values);
    return out;
  }

  /// Batch size and margin threshold changes, effective from the next batch.
  Json update_settings(const std::string& id, const Json& body) {
    auto entry = find(id);
    std::lock_guard<std::mutex> lock(entry->mu);
    SessionState& s = entry->state;
    if (s.status == SessionStatus::done) throw ApiError(409, "session is done");
    if (!s.pending.empty()) throw ApiError(409, "settings cannot change while a batch is pending");
    if (!body.is_object()) throw ApiError(400, "request body must be a JSON object");
    SessionState next = s;
    Json config = entry->config;
    for (auto it = body.begin(); it != body.end(); ++it) {
      if (it.key() == "batch_size") {
        if (!it->is_number_integer() || it->get<std::int64_t>() < 1)
          throw ApiError(400, "batch_size must be a positive integer");
        next.cfg.batch_size = it->get<std::size_t>();
        config["update"]["batch_size"] = *it;
      } else if (it.key() == "margin_threshold") {
        if (!it->is_number()) throw ApiError(400, "margin_threshold must be a number");
        next.detector.margin_threshold = it->get<double>();
        config["detector"]["margin_threshold"] = *it;
      } else {
        throw ApiError(400, "unknown setting '" + it.key() + "'");
      }
    }
    detail::refresh_partition(next);
    detail::refresh_status(next);
    persist(config, entry->class_names, next);
    s = std::move(next);
    entry->config = std::move(config);
    return document(*entry);
  }

  /// Ends a session and drops any pending batch; the final parameters stay
  /// available.
  Json stop(const std::string& id) {
    auto entry = find(id);
    std::lock_guard<std::mutex> lock(entry->mu);
    SessionState next = entry->state;
    next.pending.clear();
    next.status = SessionStatus::done;
    persist(*entry, next);
    entry->state = std::move(next);
    return document(*entry);
  }

  Json progress(const std::string& id) {
    auto entry = find(id);
    std::lock_guard<std::mutex> lock(entry->mu);
    return document(*entry);
  }

  std::vector<std::string> ids() const {
    std::lock_guard<std::mutex> lock(mu_);
    std::vector<std::string> out;
    for (const auto& [id, e] : sessions_) out.push_back(id);
    return out;
  }

  /// Copy of a session's state, for inspection.
  SessionState state(const std::string& id) {
    auto entry = find(id);
    std::lock_guard<std::mutex> lock(entry->mu);
    return entry->state;
  }

  /// The snapshot document of a session, exactly as persisted.
  Json snapshot(const std::string& id) {
    auto entry = find(id);
    std::lock_guard<std::mutex> lock(entry->mu);
    return snapshot_of(*entry, entry->state);
  }

  /// Rebuilds a session from a snapshot document.
  static SessionState restore(const Json& snap, Json& config, std::map<std::string, int>& class_names) {
    if (!snap.is_object() || snap.value("format", "") != kSnapshotFormat)
      throw Error("not a session snapshot");
    const int version = snap.value("version", 0);
    if (version != kSnapshotVersion)
      throw Error("unsupported snapshot version " + std::to_string(version));
    config = snap.at("config");
    class_names = snap.at("class_names").get<std::map<std::string, int>>();
    const SessionConfig sc = session_from_json(config);

    const Json& data = snap.at("data");
    std::vector<Record> records;
    for (const Json& r : data.at("records")) records.push_back(wire::record_from(r));
    SessionState s;
    s.id = snap.at("id").get<std::string>();
    s.data = DatasetView(std::move(records), data.at("d").get<std::size_t>(), data.at("l").get<std::size_t>());
    s.spec = sc.model_spec(s.data.d(), snap.at("n_reference").get<std::size_t>());
    s.cfg = sc.update;
    s.plan = sc.plan;
    s.detector = sc.make_detector();
    s.stats = DeltaStats(s.detector.mode == DetectorMode::adaptive ? DeltaMode::adaptive : DeltaMode::apriori,
                         s.data.d(), s.data.l());
    const Json& st = snap.at("stats");
    s.stats.mutable_features() = wire::accumulator_from(st.at("features"));
    for (const Json& c : st.at("classes"))
      s.stats.mutable_classes()[c.at("class").get<int>()] = wire::accumulator_from(c.at("acc"));
    s.theta.values = wire::to_vector(snap.at("theta"), "snapshot");
    s.rng.restore(snap.at("rng").get<std::string>());
    s.budget_remaining = snap.at("budget_remaining").get<std::size_t>();
    s.t = snap.at("t").get<std::size_t>();
    for (const Json& id : snap.at("cleaned")) s.cleaned.insert(id.get<std::int64_t>());
    for (const Json& r : snap.at("originals")) {
      Record rec = wire::record_from(r);
      const std::int64_t rid = rec.id;
      s.originals.emplace(rid, std::move(rec));
    }
    for (const Json& t : snap.at("tags")) s.tags[t.at(0).get<std::int64_t>()] = t.at(1).get<int>();
    for (const Json& p : snap.at("pending"))
      s.pending.push_back({p.at("id").get<std::int64_t>(), wire::to_double(p.at("p"), "snapshot")});
    for (const Json& h : snap.at("history")) s.history.push_back(wire::history_from(h));
    if (!snap.at("reference").is_null()) s.evaluator.reference = Theta{wire::to_vector(snap.at("reference"), "snapshot")};
    s.record_timing = snap.value("record_timing", false);
    detail::retrain_classifier(s);
    std::set<std::int64_t> dirty;
    for (const Json& id : snap.at("dirty_ids")) dirty.insert(id.get<std::int64_t>());
    s.data.set_partition(dirty);
    s.status = parse_status(snap.at("status").get<std::string>());
    return s;
  }

 private:
  struct Entry {
    Json config;
    SessionState state;
    std::map<std::string, int> class_names;
    std::mutex mu;
  };

  static SessionStatus parse_status(const std::string& s) {
    for (SessionStatus v : {SessionStatus::active, SessionStatus::awaiting_batch, SessionStatus::done})
      if (to_string(v) == s) return v;
    throw Error("unknown session status '" + s + "'");
  }

  SessionState start_session(const DatasetView& data, const Json& config) const {
    const SessionConfig sc = session_from_json(config);
    bool truth = true;
    for (const Record& r : data.records()) truth = truth && r.has_ground_truth();
    if (sc.detector == DetectorMode::known && !truth)
      throw ApiError(400, "the known detector needs clean_* ground-truth columns");
    const ModelSpec spec = sc.model_spec(data.d(), data.size());
    Evaluator eval;
    if (truth) {
      std::vector<Record> clean;
      for (const Record& r : data.records()) {
        Record c = r;
        c.x = *r.clean_x;
        c.y = *r.clean_y;
        clean.push_back(std::move(c));
      }
      const Theta ref = train_full(spec, example_refs(clean));
      if (norm2(ref.values) > 0) eval.reference = ref;
    }
    SessionState s = make_session(data, spec, sc.update, sc.plan, sc.make_detector(), sc.seed, std::move(eval));
    s.record_timing = record_timing_;
    return s;
  }

  static int class_of(const Json& j, std::map<std::string, int>& names, const std::string& what) {
    if (j.is_number_integer() || j.is_number_unsigned()) {
      const int v = j.get<int>();
      if (v < 0) throw ApiError(400, what + ": negative error class");
      return v;
    }
    if (!j.is_string()) throw ApiError(400, what + ": error_class must be an integer or a tag name");
    const std::string name = j.get<std::string>();
    if (name.empty() || name == "clean") return 0;
    auto it = names.find(name);
    if (it != names.end()) return it->second;
    int next = 1;
    for (const auto& [n, v] : names) next = std::max(next, v + 1);
    names[name] = next;
    return next;
  }

  std::shared_ptr<Entry> find(const std::string& id) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw ApiError(404, "no session '" + id + "'");
    return it->second;
  }

  Json document(const Entry& e) const {
    const SessionState& s = e.state;
    Json history = Json::array();
    for (const HistoryPoint& h : s.history) history.push_back(wire::history_point(h));
    Json doc = {{"id", s.id},
                {"status", to_string(s.status)},
                {"t", s.t},
                {"budget_remaining", s.budget_remaining},
                {"records_cleaned", s.records_cleaned()},
                {"dirty_count", s.n_dirty()},
                {"clean_count", s.n_clean()},
                {"training_loss", training_loss(s)},
                {"detector_accuracy", wire::optional_number(detector_accuracy(s))},
                {"batch_size", s.cfg.batch_size},
                {"margin_threshold", s.detector.margin_threshold},
                {"plan", to_string(s.plan)},
                {"detector", to_string(s.detector.mode)},
                {"n", s.data.size()},
                {"d", s.data.d()},
                {"l", s.data.l()},
                {"theta", wire::exact(s.theta.values)},
                {"class_names", e.class_names},
                {"pending", Json::array()},
                {"history", history}};
    for (std::int64_t id : s.pending_ids()) doc["pending"].push_back(id);
    return doc;
  }

  Json batch_document(const Entry& e) const {
    const SessionState& s = e.state;
    std::map<std::int64_t, std::pair<double, std::size_t>> draws;
    for (const PendingDraw& d : s.pending) {
      auto& [p, count] = draws[d.id];
      p = d.p;
      ++count;
    }
    Json records = Json::array();
    for (std::int64_t id : s.pending_ids()) {
      const Record& r = s.data.record(id);
      const DetectorOutput hint = s.detector.detect(r);
      Json h = {{"dirty", hint.is_dirty}, {"error_class", hint.error_class}};
      std::vector<std::size_t> f(hint.features.begin(), hint.features.end());
      std::vector<std::size_t> l(hint.labels.begin(), hint.labels.end());
      h["features"] = f;
      h["labels"] = l;
      if (s.detector.mode == DetectorMode::rules) {
        Json violated = Json::array();
        for (const Rule& rule : s.detector.rules) {
          const auto& vals = rule.on_label ? r.y : r.x;
          if (rule.index < vals.size() && rule.violated(vals[rule.index])) violated.push_back(rule.name);
        }
        h["violated"] = violated;
      }
      for (const auto& [name, k] : e.class_names)
        if (k == hint.error_class && k != 0) h["error_tag"] = name;
      records.push_back({{"id", id},
                         {"x", wire::numbers(r.x)},
                         {"y", wire::numbers(r.y)},
                         {"probability", draws[id].first},
                         {"draws", draws[id].second},
                         {"hint", h}});
    }
    return {{"session", s.id}, {"t", s.t}, {"budget_remaining", s.budget_remaining}, {"records", records}};
  }

  Json snapshot_of(const Entry& e, const SessionState& s) const { return snapshot_of(e.config, e.class_names, s); }

  static Json snapshot_of(const Json& config, const std::map<std::string, int>& class_names, const SessionState& s) {
    Json records = Json::array();
    for (const Record& r : s.data.records()) records.push_back(wire::record_exact(r));
    Json originals = Json::array();
    for (const auto& [id, r] : s.originals) originals.push_back(wire::record_exact(r));
    Json classes = Json::array();
    for (const auto& [c, acc] : s.stats.classes()) classes.push_back({{"class", c}, {"acc", wire::accumulator_exact(acc)}});
    Json tags = Json::array();
    for (const auto& [id, t] : s.tags) tags.push_back({id, t});
    Json pending = Json::array();
    for (const PendingDraw& d : s.pending) pending.push_back({{"id", d.id}, {"p", format_double(d.p)}});
    Json history = Json::array();
    for (const HistoryPoint& h : s.history) history.push_back(wire::history_exact(h));
    return {{"format", kSnapshotFormat},
            {"version", kSnapshotVersion},
            {"id", s.id},
            {"config", config},
            {"class_names", class_names},
            {"n_reference", s.spec.n_reference},
            {"data", {{"d", s.data.d()}, {"l", s.data.l()}, {"records", records}}},
            {"dirty_ids", s.data.dirty_ids()},
            {"cleaned", s.cleaned},
            {"originals", originals},
            {"tags", tags},
            {"stats", {{"features", wire::accumulator_exact(s.stats.features())}, {"classes", classes}}},
            {"theta", wire::exact(s.theta.values)},
            {"reference", s.evaluator.reference ? wire::exact(s.evaluator.reference->values) : Json(nullptr)},
            {"rng", s.rng.state()},
            {"budget_remaining", s.budget_remaining},
            {"t", s.t},
            {"pending", pending},
            {"history", history},
            {"status", to_string(s.status)},
            {"record_timing", s.record_timing}};
  }

  /// Writes `<id>.json` through a temporary file and a rename.
  void persist(const Entry& e, const SessionState& s) const { persist(e.config, e.class_names, s); }

  void persist(const Json& config, const std::map<std::string, int>& class_names, const SessionState& s) const {
    if (!dir_) return;
    const std::filesystem::path target = *dir_ / (s.id + ".json");
    const std::filesystem::path tmp = *dir_ / (s.id + ".json.tmp");
    {
      std::ofstream out(tmp, std::ios::trunc);
      if (!out) throw ApiError(500, "cannot write snapshot " + tmp.string());
      out << snapshot_of(config, class_names, s).dump();
      out.flush();
      if (!out) throw ApiError(500, "failed writing snapshot " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, target, ec);
    if (ec) throw ApiError(500, "cannot replace snapshot " + target.string() + ": " + ec.message());
  }

  void load_all() {
    for (const auto& f : std::filesystem::directory_iterator(*dir_)) {
      if (f.path().extension() != ".json") continue;
      std::ifstream in(f.path());
      Json snap;
      try {
        snap = Json::parse(in);
      } catch (const Json::parse_error& e) {
        throw Error("snapshot " + f.path().string() + ": " + e.what());
      }
      auto entry = std::make_shared<Entry>();
      try {
        entry->state = restore(snap, entry->config, entry->class_names);
      } catch (const std::exception& e) {
        throw Error("snapshot " + f.path().string() + ": " + e.what());
      }
      const std::string& id = entry->state.id;
      if (id.size() > 1 && id[0] == 's') {
        try {
          next_id_ = std::max<std::size_t>(next_id_, std::stoull(id.substr(1)) + 1);
        } catch (const std::exception&) {
        }
      }
      sessions_[id] = entry;
    }
  }

  std::optional<std::filesystem::path> dir_;
  bool record_timing_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::size_t next_id_ = 1;
};

// ---------------------------------------------------------------------------
// HTTP

struct ServiceOptions {
  std::string cors_origin = "*";
};

inline void mount_routes(httplib::Server& server, SessionStore& store, ServiceOptions opt = {}) {
  auto reply = [](httplib::Response& res, int status, const Json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  };
  auto guarded = [reply](auto&& fn) {
    return [reply, fn](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const ApiError& e) {
        reply(res, e.status(), {{"error", e.what()}});
      } catch (const Json::exception& e) {
        reply(res, 400, {{"error", std::string("malformed request: ") + e.what()}});
      } catch (const std::exception& e) {
        reply(res, 500, {{"error", e.what()}});
      }
    };
  };
  auto body_of = [](const httplib::Request& req) {
    if (req.body.empty()) return Json::object();
    try {
      return Json::parse(req.body);
    } catch (const Json::parse_error& e) {
      throw ApiError(400, std::string("request body is not JSON: ") + e.what());
    }
  };

  server.set_default_headers({{"Access-Control-Allow-Origin", opt.cors_origin},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  server.Post("/sessions", guarded([&store, reply, body_of](const httplib::Request& req, httplib::Response& res) {
                reply(res, 201, store.create(body_of(req)));
              }));
  server.Get("/sessions", guarded([&store, reply](const httplib::Request&, httplib::Response& res) {
               reply(res, 200, {{"sessions", store.ids()}});
             }));
  server.Get(R"(/sessions/([^/]+))", guarded([&store, reply](const httplib::Request& req, httplib::Response& res) {
               reply(res, 200, store.progress(req.matches[1]));
             }));
  server.Get(R"(/sessions/([^/]+)/batch)",
             guarded([&store, reply](const httplib::Request& req, httplib::Response& res) {
               reply(res, 200, store.next_batch(req.matches[1]));
             }));
  server.Post(R"(/sessions/([^/]+)/clean)",
              guarded([&store, reply, body_of](const httplib::Request& req, httplib::Response& res) {
                reply(res, 200, store.submit(req.matches[1], body_of(req)));
              }));
  server.Post(R"(/sessions/([^/]+)/settings)",
              guarded([&store, reply, body_of](const httplib::Request& req, httplib::Response& res) {
                reply(res, 200, store.update_settings(req.matches[1], body_of(req)));
              }));
  server.Post(R"(/sessions/([^/]+)/stop)",
              guarded([&store, reply](const httplib::Request& req, httplib::Response& res) {
                reply(res, 200, store.stop(req.matches[1]));
              }));
}

}  // namespace progclean
