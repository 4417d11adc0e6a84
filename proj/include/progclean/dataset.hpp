#pragma once

// Records, the dirty/clean partition, CSV interchange, synthetic corruption,
// and cleaning functions (record-by-record and set-of-records).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "progclean/common.hpp"

namespace progclean {

struct Record {
  std::int64_t id = 0;
  Vector x;
  Vector y;
  std::optional<Vector> clean_x;
  std::optional<Vector> clean_y;
  std::optional<int> error_class;

  bool has_ground_truth() const { return clean_x.has_value() && clean_y.has_value(); }

  // True when ground truth is present and differs from the observed values.
  bool is_corrupted() const {
    return has_ground_truth() && (*clean_x != x || *clean_y != y);
  }
};

/// An ordered set of records plus the R_dirty / R_clean partition over their ids.
class DatasetView {
 public:
  DatasetView() = default;

  // All records start dirty.
  DatasetView(std::vector<Record> records, std::size_t d, std::size_t l)
      : records_(std::move(records)), d_(d), l_(l) {
    for (std::size_t i = 0; i < records_.size(); ++i) {
      const Record& r = records_[i];
      if (r.x.size() != d_ || r.y.size() != l_)
        throw Error("record " + std::to_string(r.id) + ": dimension mismatch");
      if (r.clean_x && r.clean_x->size() != d_)
        throw Error("record " + std::to_string(r.id) + ": clean_x length differs from x");
      if (r.clean_y && r.clean_y->size() != l_)
        throw Error("record " + std::to_string(r.id) + ": clean_y length differs from y");
      if (!index_.emplace(r.id, i).second)
        throw Error("duplicate record id " + std::to_string(r.id));
      dirty_.insert(r.id);
    }
  }

  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  std::size_t d() const { return d_; }
  std::size_t l() const { return l_; }

  const std::vector<Record>& records() const { return records_; }
  std::vector<Record>& mutable_records() { return records_; }

  bool contains(std::int64_t id) const { return index_.count(id) > 0; }

  const Record& record(std::int64_t id) const { return records_[position(id)]; }
  Record& mutable_record(std::int64_t id) { return records_[position(id)]; }

  std::size_t position(std::int64_t id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw Error("unknown record id " + std::to_string(id));
    return it->second;
  }

  const std::set<std::int64_t>& dirty_ids() const { return dirty_; }
  const std::set<std::int64_t>& clean_ids() const { return clean_; }

  void mark_clean(std::int64_t id) {
    if (!contains(id)) throw Error("unknown record id " + std::to_string(id));
    dirty_.erase(id);
    clean_.insert(id);
  }

  void mark_dirty(std::int64_t id) {
    if (!contains(id)) throw Error("unknown record id " + std::to_string(id));
    clean_.erase(id);
    dirty_.insert(id);
  }

  // Replaces the partition; `dirty` must be a subset of the ids, the rest is clean.
  void set_partition(const std::set<std::int64_t>& dirty) {
    std::set<std::int64_t> clean;
    for (std::int64_t id : dirty)
      if (!contains(id)) throw Error("unknown record id " + std::to_string(id));
    for (const Record& r : records_)
      if (!dirty.count(r.id)) clean.insert(r.id);
    dirty_ = dirty;
    clean_ = std::move(clean);
  }

  bool partition_valid() const {
    if (dirty_.size() + clean_.size() != records_.size()) return false;
    for (std::int64_t id : dirty_)
      if (clean_.count(id) || !contains(id)) return false;
    for (std::int64_t id : clean_)
      if (!contains(id)) return false;
    return true;
  }

 private:
  std::vector<Record> records_;
  std::unordered_map<std::int64_t, std::size_t> index_;
  std::set<std::int64_t> dirty_;
  std::set<std::int64_t> clean_;
  std::size_t d_ = 0;
  std::size_t l_ = 0;
};

// ---------------------------------------------------------------------------
// CSV

/// Column naming for CSV ingestion. The defaults match the interchange format:
/// id, f0..f{d-1}, label (or label0..), clean_f*, clean_label*, error_class, status.
struct CsvSchema {
  std::string id_column = "id";
  std::string feature_prefix = "f";
  std::string label_name = "label";
  std::string clean_prefix = "clean_";
  std::string error_class_column = "error_class";
  std::string status_column = "status";
};

namespace detail {

inline std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline bool parse_number(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

// Returns k if `name` is prefix followed by a decimal index, else -1.
inline long indexed_column(const std::string& name, const std::string& prefix) {
  if (name.size() <= prefix.size() || name.compare(0, prefix.size(), prefix) != 0) return -1;
  const std::string rest = name.substr(prefix.size());
  if (!std::all_of(rest.begin(), rest.end(), [](unsigned char c) { return std::isdigit(c); }))
    return -1;
  return std::stol(rest);
}

}  // namespace detail

/// Parses a dataset from CSV text. Errors name the offending (1-based) line.
inline DatasetView parse_csv(std::istream& in, const CsvSchema& schema = {}) {
  std::string line;
  if (!std::getline(in, line)) throw Error("csv: missing header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = detail::split_csv_line(line);

  long id_col = -1, err_col = -1, status_col = -1;
  std::map<long, long> feat_cols, label_cols, clean_feat_cols, clean_label_cols;
  long plain_label = -1, plain_clean_label = -1;
  const std::string clean_label = schema.clean_prefix + schema.label_name;
  for (long c = 0; c < static_cast<long>(header.size()); ++c) {
    const std::string& h = header[c];
    long k;
    if (h == schema.id_column) id_col = c;
    else if (h == schema.error_class_column) err_col = c;
    else if (h == schema.status_column) status_col = c;
    else if (h == schema.label_name) plain_label = c;
    else if (h == clean_label) plain_clean_label = c;
    else if ((k = detail::indexed_column(h, schema.clean_prefix + schema.feature_prefix)) >= 0)
      clean_feat_cols[k] = c;
    else if ((k = detail::indexed_column(h, clean_label)) >= 0) clean_label_cols[k] = c;
    else if ((k = detail::indexed_column(h, schema.feature_prefix)) >= 0) feat_cols[k] = c;
    else if ((k = detail::indexed_column(h, schema.label_name)) >= 0) label_cols[k] = c;
    else throw Error("csv: unrecognized column '" + h + "' in header");
  }
  if (id_col < 0) throw Error("csv: missing column '" + schema.id_column + "'");
  if (plain_label >= 0) {
    if (!label_cols.empty()) throw Error("csv: both '" + schema.label_name + "' and indexed labels");
    label_cols[0] = plain_label;
  }
  if (plain_clean_label >= 0) clean_label_cols[0] = plain_clean_label;
  if (label_cols.empty()) throw Error("csv: missing column '" + schema.label_name + "'");
  auto check_contiguous = [](const std::map<long, long>& cols, const std::string& what) {
    long expect = 0;
    for (const auto& [k, c] : cols) {
      if (k != expect) throw Error("csv: " + what + " columns are not contiguous from 0");
      ++expect;
    }
  };
  check_contiguous(feat_cols, "feature");
  check_contiguous(label_cols, "label");
  const std::size_t d = feat_cols.size();
  const std::size_t l = label_cols.size();
  if (!clean_feat_cols.empty() && clean_feat_cols.size() != d)
    throw Error("csv: clean feature columns do not match feature dimension " + std::to_string(d));
  if (!clean_label_cols.empty() && clean_label_cols.size() != l)
    throw Error("csv: clean label columns do not match label dimension " + std::to_string(l));
  if (!clean_feat_cols.empty()) check_contiguous(clean_feat_cols, "clean feature");

  std::vector<Record> records;
  std::vector<std::int64_t> clean_status;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    const std::vector<std::string> cells = detail::split_csv_line(line);
    const std::string where = "csv line " + std::to_string(line_no);
    if (cells.size() != header.size())
      throw Error(where + ": expected " + std::to_string(header.size()) + " cells, got " +
                  std::to_string(cells.size()));
    auto num = [&](long c) {
      double v;
      if (!detail::parse_number(cells[c], v))
        throw Error(where + ", column '" + header[c] + "': not a number: '" + cells[c] + "'");
      return v;
    };
    Record r;
    const double idv = num(id_col);
    if (idv != std::floor(idv)) throw Error(where + ": id is not an integer");
    r.id = static_cast<std::int64_t>(idv);
    for (const auto& [k, c] : feat_cols) r.x.push_back(num(c));
    for (const auto& [k, c] : label_cols) r.y.push_back(num(c));
    if (!clean_feat_cols.empty() || !clean_label_cols.empty()) {
      r.clean_x = r.x;
      r.clean_y = r.y;
      for (const auto& [k, c] : clean_feat_cols) (*r.clean_x)[k] = num(c);
      for (const auto& [k, c] : clean_label_cols) (*r.clean_y)[k] = num(c);
    }
    if (err_col >= 0 && !cells[err_col].empty()) {
      const double e = num(err_col);
      if (e < 0 || e != std::floor(e)) throw Error(where + ": error_class must be a non-negative integer");
      r.error_class = static_cast<int>(e);
    }
    if (status_col >= 0) {
      const std::string& s = cells[status_col];
      if (s == "clean") clean_status.push_back(r.id);
      else if (s != "dirty" && !s.empty())
        throw Error(where + ": status must be 'dirty' or 'clean', got '" + s + "'");
    }
    records.push_back(std::move(r));
  }
  DatasetView view(std::move(records), d, l);
  for (std::int64_t id : clean_status) view.mark_clean(id);
  return view;
}

inline DatasetView load_csv(const std::string& path, const CsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  return parse_csv(in, schema);
}

/// Writes the interchange CSV. Ground-truth and status columns are emitted when
/// any record carries them. Values use round-trip precision.
inline void write_csv(std::ostream& out, const DatasetView& data) {
  bool truth = false, classes = false;
  for (const Record& r : data.records()) {
    truth = truth || r.has_ground_truth();
    classes = classes || r.error_class.has_value();
  }
  const std::size_t d = data.d(), l = data.l();
  auto label_name = [&](std::size_t k) { return l == 1 ? std::string("label") : "label" + std::to_string(k); };
  out << "id";
  for (std::size_t i = 0; i < d; ++i) out << ",f" << i;
  for (std::size_t k = 0; k < l; ++k) out << ',' << label_name(k);
  if (truth) {
    for (std::size_t i = 0; i < d; ++i) out << ",clean_f" << i;
    for (std::size_t k = 0; k < l; ++k) out << ",clean_" << label_name(k);
  }
  if (classes) out << ",error_class";
  out << ",status\n";
  for (const Record& r : data.records()) {
    out << r.id;
    for (double v : r.x) out << ',' << format_double(v);
    for (double v : r.y) out << ',' << format_double(v);
    if (truth) {
      const Vector& cx = r.clean_x ? *r.clean_x : r.x;
      const Vector& cy = r.clean_y ? *r.clean_y : r.y;
      for (double v : cx) out << ',' << format_double(v);
      for (double v : cy) out << ',' << format_double(v);
    }
    if (classes) {
      out << ',';
      if (r.error_class) out << *r.error_class;
    }
    out << ',' << (data.clean_ids().count(r.id) ? "clean" : "dirty") << '\n';
  }
}

inline void save_csv(const std::string& path, const DatasetView& data) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  write_csv(out, data);
}

// ---------------------------------------------------------------------------
// Corruption

enum class CorruptionKind { random_outlier, systematic };

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::systematic;
  double rate = 0.05;
  std::size_t num_features = 3;
  double outlier_scale = 3.0;
  std::uint64_t seed = 0;
};

/// Ranks of the `count` largest |w| entries, ties broken by first occurrence.
/// For a multi-column parameter (length d*c) a feature's weight is its largest
/// magnitude across columns.
inline std::vector<std::size_t> top_weighted_features(std::span<const double> theta, std::size_t d,
                                                      std::size_t count) {
  if (d == 0 || theta.size() % d != 0) throw Error("top_weighted_features: theta length not a multiple of d");
  Vector mag(d, 0.0);
  for (std::size_t j = 0; j < theta.size(); ++j) mag[j % d] = std::max(mag[j % d], std::abs(theta[j]));
  std::vector<std::size_t> order(d);
  for (std::size_t i = 0; i < d; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return mag[a] > mag[b]; });
  order.resize(std::min(count, d));
  return order;
}

/// Corrupts a clean dataset in place of a copy. The original values become the
/// ground truth; error classes enumerate the observed corrupted-feature subsets.
inline DatasetView corrupt(const DatasetView& dataset, const CorruptionSpec& spec,
                           std::span<const double> reference_theta = {}) {
  if (!(spec.rate > 0.0 && spec.rate <= 1.0)) throw Error("corrupt: rate must be in (0, 1]");
  const std::size_t n = dataset.size();
  const std::size_t d = dataset.d();
  if (spec.rate * static_cast<double>(n) < 1.0) throw Error("corrupt: rate * N < 1, nothing to corrupt");
  for (const Record& r : dataset.records())
    if (r.is_corrupted()) throw Error("corrupt: record " + std::to_string(r.id) + " is already corrupted");

  std::vector<Record> records = dataset.records();
  for (Record& r : records) {
    r.clean_x = r.x;
    r.clean_y = r.y;
  }
  std::vector<std::set<std::size_t>> masks(n);

  if (spec.kind == CorruptionKind::random_outlier) {
    if (d == 0) throw Error("corrupt: no features");
    Vector col_max(d, -std::numeric_limits<double>::infinity());
    for (const Record& r : records)
      for (std::size_t i = 0; i < d; ++i) col_max[i] = std::max(col_max[i], r.x[i]);
    const std::size_t count = static_cast<std::size_t>(std::ceil(spec.rate * n - 1e-9));
    Rng rng(spec.seed);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t j = i + rng.index(n - i);
      std::swap(order[i], order[j]);
      const std::size_t f = rng.index(d);
      records[order[i]].x[f] = spec.outlier_scale * col_max[f];
      masks[order[i]].insert(f);
    }
  } else {
    if (spec.num_features == 0 || spec.num_features > d)
      throw Error("corrupt: num_features must be in [1, d]");
    if (reference_theta.empty()) throw Error("corrupt: systematic corruption needs a reference model");
    const auto features = top_weighted_features(reference_theta, d, spec.num_features);
    const std::size_t per_feature =
        static_cast<std::size_t>(std::ceil(spec.rate * n / static_cast<double>(spec.num_features) - 1e-9));
    for (std::size_t f : features) {
      double mean = 0.0;
      for (const Record& r : dataset.records()) mean += r.x[f];
      mean /= static_cast<double>(n);
      std::vector<std::size_t> order(n);
      for (std::size_t i = 0; i < n; ++i) order[i] = i;
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return dataset.records()[a].x[f] > dataset.records()[b].x[f];
      });
      for (std::size_t i = 0; i < std::min(per_feature, n); ++i) {
        records[order[i]].x[f] = mean;
        masks[order[i]].insert(f);
      }
    }
  }

  std::set<std::set<std::size_t>> observed(masks.begin(), masks.end());
  observed.erase(std::set<std::size_t>{});
  std::map<std::set<std::size_t>, int> class_of;
  int next = 1;
  for (const auto& m : observed) class_of[m] = next++;
  for (std::size_t i = 0; i < n; ++i) records[i].error_class = masks[i].empty() ? 0 : class_of[masks[i]];

  DatasetView out(std::move(records), d, dataset.l());
  std::set<std::int64_t> dirty = dataset.dirty_ids();
  out.set_partition(dirty);
  return out;
}

// ---------------------------------------------------------------------------
// Cleaning

/// Record-by-record cleaning C(r). Implementations must be idempotent and
/// deterministic per record; `calls_made` counts distinct records cleaned.
class CleaningFunction {
 public:
  virtual ~CleaningFunction() = default;
  virtual Record clean(const Record& r) = 0;
  virtual std::size_t calls_made() const = 0;
};

/// Cleans by looking up the ground truth carried in the dataset.
class OracleCleaner final : public CleaningFunction {
 public:
  explicit OracleCleaner(const DatasetView& dataset) {
    for (const Record& r : dataset.records()) {
      if (!r.has_ground_truth())
        throw Error("oracle cleaner: record " + std::to_string(r.id) + " has no ground truth");
      Record c;
      c.id = r.id;
      c.x = *r.clean_x;
      c.y = *r.clean_y;
      c.clean_x = c.x;
      c.clean_y = c.y;
      c.error_class = r.error_class.value_or(r.is_corrupted() ? 1 : 0);
      truth_.emplace(r.id, std::move(c));
    }
  }

  Record clean(const Record& r) override {
    auto it = truth_.find(r.id);
    if (it == truth_.end()) throw Error("oracle cleaner: record " + std::to_string(r.id) + " has no ground truth");
    seen_.insert(r.id);
    return it->second;
  }

  std::size_t calls_made() const override { return seen_.size(); }

 private:
  std::unordered_map<std::int64_t, Record> truth_;
  std::unordered_set<std::int64_t> seen_;
};

/// Find-and-replace on one feature: every occurrence of `from` becomes `to`.
struct ValueRule {
  std::size_t feature = 0;
  double from = 0.0;
  double to = 0.0;
};

/// Set-of-records cleaning: every sampled record is fully cleaned by `cleaner`,
/// the value rules are applied to every other dirty record, and `is_dirty` is
/// re-run to move records that no longer violate anything into the clean set.
/// Rules must not touch records already in the clean set.
inline DatasetView set_of_records_clean(const DatasetView& dataset, const std::vector<std::int64_t>& sample,
                                        const std::vector<ValueRule>& rules, CleaningFunction& cleaner,
                                        const std::function<bool(const Record&)>& is_dirty = {}) {
  for (const ValueRule& rule : rules) {
    if (rule.feature >= dataset.d()) throw Error("set_of_records_clean: rule feature out of range");
    for (std::int64_t id : dataset.clean_ids())
      if (dataset.record(id).x[rule.feature] == rule.from)
        throw Error("set_of_records_clean: rule would modify record " + std::to_string(id) +
                    " which is already clean");
  }
  DatasetView out = dataset;
  for (std::int64_t id : sample) {
    if (!dataset.dirty_ids().count(id))
      throw Error("set_of_records_clean: sampled record " + std::to_string(id) + " is not dirty");
    Record cleaned = cleaner.clean(dataset.record(id));
    Record& target = out.mutable_record(id);
    target.x = cleaned.x;
    target.y = cleaned.y;
    out.mark_clean(id);
  }
  for (std::int64_t id : dataset.dirty_ids()) {
    if (!out.dirty_ids().count(id)) continue;
    Record& r = out.mutable_record(id);
    for (const ValueRule& rule : rules)
      if (r.x[rule.feature] == rule.from) r.x[rule.feature] = rule.to;
  }
  if (is_dirty) {
    const std::set<std::int64_t> still = out.dirty_ids();
    for (std::int64_t id : still)
      if (!is_dirty(out.record(id))) out.mark_clean(id);
  }
  return out;
}

}  // namespace progclean
