#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "graphstad/errors.hpp"
#include "graphstad/preprocess.hpp"
#include "test_util.hpp"

using namespace graphstad;

namespace {

DigiOccupancyMap map_with(const SegmentationMap& g, std::vector<double> values, std::int64_t xi, int ls = 1) {
  DigiOccupancyMap m;
  m.values = std::move(values);
  m.values.resize(g.dims().cells(), 0.0);
  m.num_events = xi;
  m.ls = ls;
  m.run_id = 1;
  return m;
}

}  // namespace

TEST(Preprocess, EventNormalization) {
  const auto g = gtest_util::custom_geometry(2, 2, 1, 2);
  const auto m = map_with(*g, {10, 20, 30, 40}, 10);
  const auto r = renormalize_events(m);
  EXPECT_DOUBLE_EQ(r.values[0], 1.0);
  EXPECT_DOUBLE_EQ(r.values[3], 4.0);
  auto bad = m;
  bad.num_events = 0;
  EXPECT_THROW(renormalize_events(bad), ValidationError);
}

TEST(Preprocess, RingMedianOddAndEven) {
  // ring (iη bin 0, depth 0) holds iφ values {1, 5, 3}; ring 1 holds {2, 4, 8}
  const auto g = gtest_util::custom_geometry(2, 3, 1, 2);
  const auto m = map_with(*g, {1, 5, 3, 2, 4, 8}, 1);
  const auto r = median_renorm(m, *g);
  EXPECT_DOUBLE_EQ(r.table.at(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(r.table.at(1, 0), 4.0);
  EXPECT_DOUBLE_EQ(r.map.values[1], 5.0 / 3.0);

  const auto g4 = gtest_util::custom_geometry(2, 4, 1, 2);
  const auto m4 = map_with(*g4, {1, 2, 3, 10, 0, 0, 0, 0}, 1);
  const auto r4 = median_renorm(m4, *g4);
  EXPECT_DOUBLE_EQ(r4.table.at(0, 0), 2.5);
  EXPECT_DOUBLE_EQ(r4.table.at(1, 0), kMedianFloor);
  EXPECT_DOUBLE_EQ(r4.map.values[4], 0.0);
}

TEST(Preprocess, MedianInverseChecksLs) {
  const auto g = gtest_util::custom_geometry(2, 3, 1, 2);
  const auto r = median_renorm(map_with(*g, {1, 5, 3, 2, 4, 8}, 1, 7), *g);
  auto other = r.map;
  other.ls = 8;
  EXPECT_THROW(median_renorm_invert(other, r.table, *g), ValidationError);
  const auto back = median_renorm_invert(r.map, r.table, *g);
  const std::vector<double> orig{1, 5, 3, 2, 4, 8};
  for (std::size_t c = 0; c < 6; ++c) EXPECT_NEAR(back.values[c], orig[c], 1e-15);
}

TEST(Preprocess, MinMaxConstantChannels) {
  const auto g = gtest_util::custom_geometry(2, 1, 1, 2);
  MapSequence seq{g, {map_with(*g, {1, 7}, 1, 1), map_with(*g, {3, 7}, 1, 2)}};
  const auto calib = minmax_fit(seq);
  EXPECT_EQ(calib.constant[0], 0);
  EXPECT_EQ(calib.constant[1], 1);
  const auto a = minmax_apply(map_with(*g, {2, 9}, 1), calib, *g);
  EXPECT_DOUBLE_EQ(a.values[0], 0.5);
  EXPECT_DOUBLE_EQ(a.values[1], 0.0);
  const auto inv = minmax_invert(a, calib, *g);
  EXPECT_DOUBLE_EQ(inv.values[0], 2.0);
  EXPECT_DOUBLE_EQ(inv.values[1], 7.0);
}

TEST(Preprocess, MinMaxJsonRoundTrip) {
  const auto seq = gtest_util::synthetic_run(gtest_util::custom_geometry(4, 6, 2), 8, 11);
  const auto calib = minmax_fit(renormalize_sequence(seq).maps);
  const auto back = MinMaxCalib::from_json(nlohmann::json::parse(calib.to_json().dump()));
  EXPECT_EQ(back.min, calib.min);
  EXPECT_EQ(back.max, calib.max);
  EXPECT_EQ(back.constant, calib.constant);
}

TEST(Preprocess, TrainingMapsLandInUnitInterval) {
  const auto seq = gtest_util::synthetic_run(gtest_util::custom_geometry(4, 6, 2), 30, 5);
  const auto calib = minmax_fit(renormalize_sequence(seq).maps);
  const auto pp = preprocess_sequence(seq, calib);
  for (const auto& m : pp.maps.maps)
    for (double v : m.values) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
}

// Property: the full chain inverts for arbitrary seeds and geometries.
TEST(Preprocess, RoundTripProperty) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    for (auto geo : {gtest_util::custom_geometry(4, 6, 2), gtest_util::standard_geometry(Subdetector::HE)}) {
      const auto seq = gtest_util::synthetic_run(geo, 6, seed);
      const auto calib = minmax_fit(renormalize_sequence(seq).maps);
      const auto pp = preprocess_sequence(seq, calib);
      for (std::size_t i = 0; i < seq.size(); ++i) {
        const auto back = postprocess_map(pp.maps.maps[i], pp.medians[i], calib, *geo);
        const double xi = static_cast<double>(seq.maps[i].num_events);
        for (auto c : geo->valid_cells()) ASSERT_NEAR(back.values[c] * xi, seq.maps[i].values[c], 1e-6);
      }
    }
  }
}

TEST(Adjacency, MatchesDenseOracle) {
  const auto g = gtest_util::custom_geometry(4, 6, 2, 4);
  const auto topo = build_adjacency(*g);
  ASSERT_EQ(topo.node_count(), g->channel_count());
  const auto a = topo.dense_adjacency();
  const auto m = topo.node_count();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const bool oracle = g->rbx_of_cell(topo.node_cells()[i]) == g->rbx_of_cell(topo.node_cells()[j]);
      ASSERT_EQ(a[i * m + j] != 0, oracle);
      ASSERT_EQ(topo.adjacent(i, j), oracle);
    }
  EXPECT_TRUE(std::is_sorted(topo.nodes().begin(), topo.nodes().end()));
}

TEST(Windows, ContiguousOnlyAndStride) {
  const auto seq = gtest_util::synthetic_run(gtest_util::custom_geometry(4, 6, 2), 12, 2);
  EXPECT_EQ(make_windows(seq, 5, 5).size(), 2u);
  EXPECT_EQ(make_windows(seq, 5, 1).size(), 8u);
  auto gap = seq;
  for (std::size_t i = 6; i < gap.size(); ++i) gap.maps[i].ls += 100;
  const auto w = make_windows(gap, 5, 1);
  EXPECT_EQ(w.size(), 2u + 2u);
  for (const auto& win : w)
    for (std::size_t t = 1; t < win.ls.size(); ++t) EXPECT_EQ(win.ls[t], win.ls[t - 1] + 1);
  EXPECT_THROW(make_windows(seq, 0, 1), ValidationError);
}
