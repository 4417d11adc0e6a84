#include <gtest/gtest.h>

#include "progclean/detector.hpp"
#include "progclean/harness.hpp"

using namespace progclean;

TEST(Detector, RulesFlagViolatedColumns) {
  RuleSet rules;
  rules.push_back({0, false, 0.0, 10.0, {}, {}, "f0 range"});
  rules.push_back({0, true, {}, {}, {0.0, 1.0}, {}, "label domain"});
  const Record ok{1, {5.0}, {1.0}, {}, {}, {}};
  const Record bad{2, {-1.0}, {2.0}, {}, {}, {}};
  EXPECT_FALSE(apriori_detect(ok, rules).is_dirty);
  const DetectorOutput out = apriori_detect(bad, rules);
  EXPECT_TRUE(out.is_dirty);
  EXPECT_EQ(out.features, (std::set<std::size_t>{0}));
  EXPECT_EQ(out.labels, (std::set<std::size_t>{0}));
  const Record nan{3, {std::nan("")}, {0.0}, {}, {}, {}};
  EXPECT_TRUE(apriori_detect(nan, rules).is_dirty);
  RuleSet oob{{5, false, 0.0, 1.0, {}, {}, "missing"}};
  EXPECT_THROW(apriori_detect(ok, oob), Error);
}

TEST(Detector, KnownDetectReportsDifferingColumns) {
  const Record r{1, {1, 2, 3}, {0}, Vector{1, 5, 3}, Vector{1}, 4};
  const DetectorOutput out = known_detect(r);
  EXPECT_TRUE(out.is_dirty);
  EXPECT_EQ(out.features, (std::set<std::size_t>{1}));
  EXPECT_EQ(out.labels, (std::set<std::size_t>{0}));
  EXPECT_EQ(out.error_class, 4);
  EXPECT_FALSE(known_detect(Record{2, {1}, {0}, {}, {}, {}}).is_dirty);
}

TEST(Detector, ColdStartPredictsCleanAndFallsBack) {
  Detector d;
  d.mode = DetectorMode::adaptive;
  EXPECT_TRUE(d.falls_back_to_all());
  EXPECT_FALSE(d.detect(Record{1, {1}, {0}, {}, {}, {}}).is_dirty);
  d.classifier.train({{Record{1, {0}, {0}, {}, {}, {}}, 0}}, 0);
  EXPECT_TRUE(d.falls_back_to_all());
}

TEST(Detector, AdaptiveSeparatesImputedConstants) {
  Rng rng(4);
  std::vector<std::pair<Record, int>> labeled;
  for (int i = 0; i < 200; ++i) {
    Record r{i, {rng.normal(), rng.normal()}, {rng.normal()}, {}, {}, {}};
    int c = 0;
    if (i % 5 == 0) {
      r.x[0] = 0.0;
      c = 1;
    }
    labeled.emplace_back(r, c);
  }
  std::vector<const Record*> observed;
  for (const auto& [r, c] : labeled) observed.push_back(&r);
  ErrorClassifier clf;
  clf.set_context(std::make_shared<ColumnCounts>(ColumnCounts::of(observed, 2)));
  clf.train(labeled, 1);
  EXPECT_TRUE(clf.any_dirty_class());
  std::size_t hit = 0;
  for (const auto& [r, c] : labeled) hit += clf.predict(r) == c;
  EXPECT_GE(hit, 190u);
  EXPECT_THROW(adaptive_train({{labeled[0].first, 3}}, 1), Error);
}

TEST(Detector, MarginThresholdOnlyRemovesDirtyPredictions) {
  Rng rng(6);
  std::vector<std::pair<Record, int>> labeled;
  for (int i = 0; i < 100; ++i) {
    const int c = i % 4 == 0 ? 1 : 0;
    labeled.emplace_back(Record{i, {rng.normal() + 2.0 * c}, {0.0}, {}, {}, {}}, c);
  }
  ClassifierOptions opt;
  opt.duplicate_counts = false;
  const ErrorClassifier clf = adaptive_train(labeled, 1, opt);
  for (const auto& [r, c] : labeled)
    if (clf.predict(r, 5.0) != 0) EXPECT_NE(clf.predict(r, 0.0), 0);
}

TEST(Detector, PartitionExcludesCleanedRecords) {
  std::vector<Record> recs;
  for (int i = 0; i < 5; ++i) recs.push_back({i, {double(i)}, {0.0}, Vector{0.0}, Vector{0.0}, {}});
  const DatasetView v(recs, 1, 1);
  Detector d;
  d.mode = DetectorMode::known;
  EXPECT_EQ(partition(v, d, {}), (std::set<std::int64_t>{1, 2, 3, 4}));
  EXPECT_EQ(partition(v, d, {2}), (std::set<std::int64_t>{1, 3, 4}));
  Detector none;
  EXPECT_EQ(partition(v, none, {0}), (std::set<std::int64_t>{1, 2, 3, 4}));
}
