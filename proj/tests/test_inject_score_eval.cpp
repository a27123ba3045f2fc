#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "graphstad/errors.hpp"
#include "graphstad/eval.hpp"
#include "graphstad/inject.hpp"
#include "graphstad/score.hpp"
#include "test_util.hpp"

using namespace graphstad;

namespace {

double auc_oracle(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] && !y[j]) {
        pairs += 1;
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return wins / pairs;
}

}  // namespace

TEST(Inject, AnomalousValueExamples) {
  bool of = false;
  EXPECT_EQ(anomalous_value(50, 1000, AnomalyKind::Dead, 0), 0.0);
  EXPECT_EQ(anomalous_value(50, 1000, AnomalyKind::FullyHot, 0), 1000.0);
  EXPECT_DOUBLE_EQ(anomalous_value(50, 1000, AnomalyKind::Degraded, 0.2), 10.0);
  EXPECT_DOUBLE_EQ(anomalous_value(50, 1000, AnomalyKind::NoisyHot, 2.0, &of), 100.0);
  EXPECT_FALSE(of);
  EXPECT_DOUBLE_EQ(anomalous_value(600, 1000, AnomalyKind::NoisyHot, 2.0, &of), 1000.0);
  EXPECT_TRUE(of);
}

TEST(Inject, SpecValidation) {
  EXPECT_THROW((AnomalySpec{AnomalyKind::Degraded, 1.0}.validate()), ConfigError);
  EXPECT_THROW((AnomalySpec{AnomalyKind::Degraded, 1.5}.validate()), ConfigError);
  EXPECT_THROW((AnomalySpec{AnomalyKind::NoisyHot, 0.5}.validate()), ConfigError);
  EXPECT_THROW((AnomalySpec{AnomalyKind::Dead, 0.3}.validate()), ConfigError);
  EXPECT_NO_THROW((AnomalySpec{AnomalyKind::NoisyHot, 2.0}.validate()));
}

TEST(Inject, LabelsMatchModifiedCells) {
  const auto seq = gtest_util::synthetic_run(gtest_util::custom_geometry(4, 6, 2), 20, 4);
  AnomalySpec spec{AnomalyKind::Degraded, 0.4, 2, 3, true, 5, false, 17};
  const auto out = inject(seq, spec);
  EXPECT_EQ(out.labels.size(), 2u * 3u * 5u);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < seq.size(); ++i)
    for (std::size_t c = 0; c < seq.maps[i].values.size(); ++c) {
      const bool lab = out.is_anomalous(seq.maps[i].run_id, seq.maps[i].ls, c);
      if (lab) EXPECT_DOUBLE_EQ(out.maps.maps[i].values[c], 0.4 * seq.maps[i].values[c]);
      else EXPECT_EQ(out.maps.maps[i].values[c], seq.maps[i].values[c]);
      changed += lab;
    }
  EXPECT_EQ(changed, out.labels.size());
  const auto back = LabeledSet::labels_from_json(out.labels_json(), *seq.geometry);
  EXPECT_EQ(back, out.labels);
}

TEST(Inject, LocationsSharedAcrossKinds) {
  const auto seq = gtest_util::synthetic_run(gtest_util::custom_geometry(4, 6, 2), 20, 4);
  auto a = inject(seq, {AnomalyKind::Dead, 0.0, 3, 2, false, 5, false, 8});
  auto b = inject(seq, {AnomalyKind::FullyHot, 0.0, 3, 2, false, 5, false, 8});
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.labels.size(), 3u * 2u);
  EXPECT_THROW(inject(seq, {AnomalyKind::Dead, 0.0, 5, 2, false, 5, false, 8}), ConfigError);
  EXPECT_THROW(inject(seq, {AnomalyKind::Dead, 0.0, 1, 1000, false, 5, false, 8}), ConfigError);
}

TEST(Inject, SkipOverflowDropsLabels) {
  auto seq = gtest_util::synthetic_run(gtest_util::custom_geometry(4, 6, 2), 5, 4);
  for (auto& m : seq.maps)
    for (auto& v : m.values) v = 0.9 * static_cast<double>(m.num_events);
  const auto out = inject(seq, {AnomalyKind::NoisyHot, 2.0, 1, 4, true, 5, true, 3});
  EXPECT_TRUE(out.labels.empty());
  EXPECT_EQ(out.maps.maps[0].values, seq.maps[0].values);
}

TEST(Suite, SharedCellsAndFraction) {
  const auto seq = gtest_util::synthetic_run(gtest_util::custom_geometry(8, 24, 2), 40, 4);
  const auto suite = build_eval_suite(seq, default_suite_cases(), 12, 0.0117, 5, 42);
  EXPECT_EQ(suite.channels_per_map, 4u);
  EXPECT_NEAR(suite.anomalous_fraction, 4.0 / 384.0, 1e-15);
  EXPECT_EQ(suite.total_maps(), 7u * 12u);
  for (std::size_t s = 0; s < suite.samples.size(); ++s) EXPECT_EQ(suite.samples[s].tile, s % 8);
  const auto back = EvalSuite::from_json(suite.to_json());
  EXPECT_EQ(back.samples.size(), suite.samples.size());
  EXPECT_EQ(back.samples[3].cells, suite.samples[3].cells);
  const auto tiles = make_windows(seq, 5, 5);
  const auto dead = materialize_sample(seq, tiles, suite, 3, {AnomalyKind::Dead, 0});
  const auto hot = materialize_sample(seq, tiles, suite, 3, {AnomalyKind::FullyHot, 0});
  EXPECT_EQ(dead.cells, hot.cells);
  for (auto c : dead.cells) EXPECT_EQ(dead.maps.maps.back().values[c], 0.0);
}

TEST(Score, MaeWindowMatchesLoop) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  const std::size_t T = 4, cells = 30;
  std::vector<double> x(T * cells), xb(T * cells), mask(cells);
  for (auto& v : x) v = u(rng);
  for (auto& v : xb) v = u(rng);
  for (std::size_t c = 0; c < cells; ++c) mask[c] = c % 7 == 3 ? 0.0 : 1.0;
  const auto e = mae_window(x, xb, T, mask);
  for (std::size_t c = 0; c < cells; ++c) {
    double acc = 0;
    for (std::size_t t = 0; t < T; ++t) acc += std::abs(x[t * cells + c] - xb[t * cells + c]);
    EXPECT_NEAR(e[c], mask[c] ? acc / T : 0.0, 1e-12);
  }
}

TEST(Score, SigmaAndScores) {
  const auto g = gtest_util::custom_geometry(2, 2, 1, 2);
  const std::vector<std::vector<double>> errs{{1, 2, 0, 5}, {3, 2, 0, 7}};
  const auto cal = calibrate_sigma(errs, *g, StateMode::Reset);
  EXPECT_DOUBLE_EQ(cal.sigma[0], 1.0);
  EXPECT_DOUBLE_EQ(cal.sigma[1], kSigmaFloor);
  EXPECT_DOUBLE_EQ(cal.sigma[3], 1.0);
  const auto a = anomaly_score({2, 1, 0, 4}, cal);
  EXPECT_DOUBLE_EQ(a[0], 2.0);
  EXPECT_DOUBLE_EQ(a[2], 0.0);
  const auto back = SigmaCalib::from_json(cal.to_json());
  EXPECT_EQ(back.sigma, cal.sigma);
}

// Property: the threshold captures at least the requested share.
TEST(Score, ThresholdCapturesRate) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 10);
  for (std::size_t n : {1u, 7u, 100u, 1001u}) {
    std::vector<double> s(n);
    for (auto& v : s) v = std::round(u(rng));
    for (double r : {0.90, 0.95, 0.99, 1.0}) {
      const double a = threshold_for_capture(s, r);
      const auto above = std::count_if(s.begin(), s.end(), [&](double v) { return v > a; });
      EXPECT_GE(static_cast<double>(above), std::ceil(r * n - 1e-9)) << n << " " << r;
    }
  }
  EXPECT_THROW(threshold_for_capture({}, 0.9), ValidationError);
}

TEST(Eval, AucMatchesPairwiseOracle) {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> q(0, 9);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t n = 2 + rep % 99;
    std::vector<double> s(n);
    std::vector<std::uint8_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = q(rng);
      y[i] = q(rng) < 3;
    }
    y[0] = 1;
    y[1] = 0;
    EXPECT_EQ(auc(s, y), auc_oracle(s, y));
  }
  EXPECT_THROW(auc({1, 2}, {1, 1}), ValidationError);
}

TEST(Eval, ConfusionRatesMatchCounts) {
  const std::vector<std::uint8_t> flags{1, 1, 0, 0, 1, 0}, labels{1, 0, 1, 0, 1, 0};
  const auto r = confusion_rates(flags, labels);
  EXPECT_EQ(r.tp, 2u);
  EXPECT_EQ(r.fp, 1u);
  EXPECT_EQ(r.fn, 1u);
  EXPECT_EQ(r.tn, 2u);
  EXPECT_DOUBLE_EQ(*r.fpr, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(*r.precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(*r.recall, 2.0 / 3.0);
  const auto none = confusion_rates({0, 0}, {0, 0});
  EXPECT_FALSE(none.precision.has_value());
  EXPECT_FALSE(none.recall.has_value());
}

TEST(Eval, GridCsvRoundTripAndDistance) {
  gtest_util::TempDir tmp("grid");
  const std::vector<double> v{0.5, 1.25, -3, 4, 5, 6};
  write_grid_csv(tmp.path() / "g.csv", v, 3, 2);
  EXPECT_EQ(read_grid_csv(tmp.path() / "g.csv"), v);
  write_heatmap_png(tmp.path() / "g.png", v, 3, 2);
  EXPECT_GT(std::filesystem::file_size(tmp.path() / "g.png"), 0u);
  const auto g = make_geometry(Subdetector::Custom, 4, Dims{4, 6, 2});
  EXPECT_DOUBLE_EQ(cell_distance(g, g.flat_index(0, 0, 0), g.flat_index(0, 5, 0)), 1.0);
  EXPECT_DOUBLE_EQ(cell_distance(g, g.flat_index(0, 0, 0), g.flat_index(3, 0, 1)), std::sqrt(10.0));
}

TEST(Eval, ContaminationReportCounts) {
  const auto g = make_geometry(Subdetector::Custom, 2, Dims{2, 2, 1});
  std::vector<double> train_err{0.1, 0.5, 0.6, 0.7};
  CaseScores dead{{AnomalyKind::Dead, 0.0}, {}, {{0, 9, 9, 9}, {9, 9, 9, 9}}, {{0, 1}, {1}}};
  dead.errors = dead.scores;
  const auto rep = contamination_report(g, {g.coord_of(0)}, train_err, dead, 0.5);
  EXPECT_DOUBLE_EQ(rep.healthy_median, 0.6);
  ASSERT_EQ(rep.rows.size(), 1u);
  EXPECT_TRUE(rep.all_below_median());
  EXPECT_EQ(rep.rows[0].dead_injections, 1u);
  EXPECT_EQ(rep.rows[0].dead_below_threshold, 1u);
  EXPECT_TRUE(rep.injections_below_threshold());
}
