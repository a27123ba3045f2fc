#include "graphstad/inject.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include "graphstad/errors.hpp"
#include "graphstad/random.hpp"

namespace graphstad {

using nlohmann::json;

std::string to_string(AnomalyKind k) {
  switch (k) {
    case AnomalyKind::Dead: return "dead";
    case AnomalyKind::Degraded: return "degraded";
    case AnomalyKind::NoisyHot: return "noisy_hot";
    case AnomalyKind::FullyHot: return "fully_hot";
  }
  return "?";
}

AnomalyKind anomaly_kind_from_string(const std::string& s) {
  std::string k;
  for (char c : s) k += c == '-' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (k == "dead") return AnomalyKind::Dead;
  if (k == "degraded") return AnomalyKind::Degraded;
  if (k == "noisy_hot" || k == "noisy") return AnomalyKind::NoisyHot;
  if (k == "fully_hot" || k == "hot") return AnomalyKind::FullyHot;
  throw ConfigError("unknown anomaly kind '" + s + "'");
}

void AnomalySpec::validate() const {
  if (rd == 1.0) throw ConfigError("degradation factor R_D must differ from 1");
  switch (kind) {
    case AnomalyKind::Dead:
      if (rd != 0.0) throw ConfigError("dead channels use R_D = 0");
      break;
    case AnomalyKind::Degraded:
      if (!(rd > 0.0 && rd < 1.0)) throw ConfigError("degraded channels need 0 < R_D < 1");
      break;
    case AnomalyKind::NoisyHot:
      if (!(rd > 1.0)) throw ConfigError("noisy-hot channels need R_D > 1");
      break;
    case AnomalyKind::FullyHot:
      break;
  }
  if (T <= 0) throw ConfigError("T must be positive");
  if (n_channels == 0) throw ConfigError("n_channels must be positive");
}

json AnomalySpec::to_json() const {
  return {{"kind", to_string(kind)}, {"rd", rd},       {"n_ls", n_ls},
          {"n_channels", n_channels}, {"persist_T", persist_T}, {"T", T},
          {"skip_overflow", skip_overflow}, {"seed", seed}};
}

AnomalySpec AnomalySpec::from_json(const json& j) {
  AnomalySpec s;
  s.kind = anomaly_kind_from_string(j.at("kind").get<std::string>());
  if (s.kind == AnomalyKind::NoisyHot) s.rd = 2.0;
  s.rd = j.value("rd", s.rd);
  s.n_ls = j.value("n_ls", s.n_ls);
  s.n_channels = j.value("n_channels", s.n_channels);
  s.persist_T = j.value("persist_T", s.persist_T);
  s.T = j.value("T", s.T);
  s.skip_overflow = j.value("skip_overflow", s.skip_overflow);
  s.seed = j.value("seed", s.seed);
  s.validate();
  return s;
}

double anomalous_value(double gamma_h, double xi, AnomalyKind kind, double rd, bool* overflow) {
  if (overflow) *overflow = false;
  switch (kind) {
    case AnomalyKind::Dead: return 0.0;
    case AnomalyKind::FullyHot: return xi;
    case AnomalyKind::Degraded:
    case AnomalyKind::NoisyHot: {
      const double v = rd * gamma_h;
      if (v > xi) {
        if (overflow) *overflow = true;
        return xi;
      }
      return std::max(v, 0.0);
    }
  }
  return gamma_h;
}

bool LabeledSet::is_anomalous(std::int64_t run_id, int ls, std::size_t cell) const {
  return std::binary_search(labels.begin(), labels.end(), Label{run_id, ls, cell});
}

json LabeledSet::labels_json() const {
  json arr = json::array();
  for (const auto& l : labels) {
    const auto c = maps.geometry->coord_of(l.cell);
    arr.push_back({{"run_id", l.run_id}, {"ls", l.ls}, {"ieta", c.ieta}, {"iphi", c.iphi}, {"depth", c.depth}});
  }
  return {{"labels", arr}};
}

std::vector<Label> LabeledSet::labels_from_json(const json& j, const SegmentationMap& geometry) {
  std::vector<Label> out;
  for (const auto& r : j.at("labels")) {
    const ChannelCoord c{r.at("ieta").get<int>(), r.at("iphi").get<int>(), r.at("depth").get<int>()};
    const auto cell = geometry.cell_of(c);
    if (!cell || !geometry.is_valid(*cell)) throw ValidationError("label at invalid channel " + to_string(c));
    out.push_back({r.at("run_id").get<std::int64_t>(), r.at("ls").get<int>(), *cell});
  }
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

std::vector<std::size_t> draw_cells(const std::vector<std::size_t>& valid, std::size_t n, std::uint64_t seed,
                                    std::uint64_t index) {
  if (n > valid.size())
    throw ConfigError("asked for " + std::to_string(n) + " anomalous channels but only " +
                      std::to_string(valid.size()) + " exist");
  auto rng = substream(seed, "cells", index);
  std::vector<std::size_t> pool = valid;
  // Partial Fisher-Yates: the first n entries become the sample.
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(n);
  std::sort(pool.begin(), pool.end());
  return pool;
}

/// Applies one kind to `cells` of `map`; returns the cells that stay labeled.
std::vector<std::size_t> apply_to_map(DigiOccupancyMap& map, const std::vector<std::size_t>& cells, AnomalyKind kind,
                                      double rd, bool skip_overflow, const std::vector<std::uint8_t>* keep) {
  std::vector<std::size_t> labeled;
  const double xi = static_cast<double>(map.num_events);
  for (std::size_t k = 0; k < cells.size(); ++k) {
    if (keep && !(*keep)[k]) continue;
    bool overflow = false;
    const double v = anomalous_value(map.values[cells[k]], xi, kind, rd, &overflow);
    if (overflow && skip_overflow) continue;
    map.values[cells[k]] = v;
    labeled.push_back(cells[k]);
  }
  return labeled;
}

/// Cells of a window that survive the overflow filter in every modified map.
std::vector<std::uint8_t> overflow_filter(const std::vector<const DigiOccupancyMap*>& maps,
                                          const std::vector<std::size_t>& cells, AnomalyKind kind, double rd) {
  std::vector<std::uint8_t> keep(cells.size(), 1);
  for (const auto* m : maps)
    for (std::size_t k = 0; k < cells.size(); ++k) {
      bool overflow = false;
      anomalous_value(m->values[cells[k]], static_cast<double>(m->num_events), kind, rd, &overflow);
      if (overflow) keep[k] = 0;
    }
  return keep;
}

}  // namespace

LabeledSet inject(const MapSequence& test, const AnomalySpec& spec) {
  spec.validate();
  const auto tiles = make_windows(test, spec.T, spec.T);
  if (spec.n_ls > tiles.size())
    throw ConfigError("asked for " + std::to_string(spec.n_ls) + " anomalous windows but only " +
                      std::to_string(tiles.size()) + " exist");
  const auto valid = test.geometry->valid_cells();
  if (spec.n_channels > valid.size())
    throw ConfigError("asked for " + std::to_string(spec.n_channels) + " anomalous channels but only " +
                      std::to_string(valid.size()) + " exist");

  std::vector<std::size_t> order(tiles.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = substream(spec.seed, "windows");
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(spec.n_ls);
  std::sort(order.begin(), order.end());

  LabeledSet out{test, {}};
  for (auto tile : order) {
    const auto cells = draw_cells(valid, spec.n_channels, spec.seed, tile);
    const auto& idx = tiles[tile].map_index;
    const auto first = spec.persist_T ? std::size_t{0} : idx.size() - 1;
    std::vector<const DigiOccupancyMap*> touched;
    for (auto k = first; k < idx.size(); ++k) touched.push_back(&test.maps[idx[k]]);
    std::vector<std::uint8_t> keep;
    if (spec.skip_overflow) keep = overflow_filter(touched, cells, spec.kind, spec.rd);
    for (auto k = first; k < idx.size(); ++k) {
      auto& m = out.maps.maps[idx[k]];
      for (auto cell : apply_to_map(m, cells, spec.kind, spec.rd, spec.skip_overflow, spec.skip_overflow ? &keep : nullptr))
        out.labels.push_back({m.run_id, m.ls, cell});
    }
  }
  std::sort(out.labels.begin(), out.labels.end());
  return out;
}

std::string SuiteCase::name() const {
  if (kind == AnomalyKind::FullyHot || kind == AnomalyKind::Dead) return to_string(kind);
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s_%.2f", to_string(kind).c_str(), rd);
  return buf;
}

std::vector<SuiteCase> default_suite_cases() {
  return {{AnomalyKind::Dead, 0.0},     {AnomalyKind::Degraded, 0.2}, {AnomalyKind::Degraded, 0.4},
          {AnomalyKind::Degraded, 0.6}, {AnomalyKind::Degraded, 0.8}, {AnomalyKind::NoisyHot, 2.0},
          {AnomalyKind::FullyHot, 0.0}};
}

json EvalSuite::to_json() const {
  json cs = json::array();
  for (const auto& c : cases) cs.push_back({{"kind", to_string(c.kind)}, {"rd", c.rd}});
  json ss = json::array();
  for (const auto& s : samples) ss.push_back({{"tile", s.tile}, {"cells", s.cells}});
  return {{"T", T},
          {"cases", cs},
          {"samples", ss},
          {"channels_per_map", channels_per_map},
          {"anomalous_fraction", anomalous_fraction},
          {"skip_overflow", skip_overflow},
          {"seed", seed}};
}

EvalSuite EvalSuite::from_json(const json& j) {
  EvalSuite s;
  s.T = j.at("T").get<int>();
  for (const auto& c : j.at("cases"))
    s.cases.push_back({anomaly_kind_from_string(c.at("kind").get<std::string>()), c.at("rd").get<double>()});
  for (const auto& x : j.at("samples"))
    s.samples.push_back({x.at("tile").get<std::size_t>(), x.at("cells").get<std::vector<std::size_t>>()});
  s.channels_per_map = j.at("channels_per_map").get<std::size_t>();
  s.anomalous_fraction = j.at("anomalous_fraction").get<double>();
  s.skip_overflow = j.value("skip_overflow", false);
  s.seed = j.value("seed", std::uint64_t{0});
  return s;
}

EvalSuite build_eval_suite(const MapSequence& test, const std::vector<SuiteCase>& cases, std::size_t samples_per_case,
                           double target_fraction, int T, std::uint64_t seed, bool skip_overflow) {
  for (const auto& c : cases) AnomalySpec{c.kind, c.rd, 1, 1, true, T, skip_overflow, seed}.validate();
  if (!(target_fraction > 0 && target_fraction < 1)) throw ConfigError("anomalous fraction must be in (0, 1)");
  const auto tiles = make_windows(test, T, T);
  if (tiles.empty()) throw ValidationError("test sequence is shorter than one window");
  const auto valid = test.geometry->valid_cells();
  EvalSuite suite;
  suite.T = T;
  suite.cases = cases;
  suite.seed = seed;
  suite.skip_overflow = skip_overflow;
  suite.channels_per_map =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(target_fraction * static_cast<double>(valid.size()))));
  suite.anomalous_fraction = static_cast<double>(suite.channels_per_map) / static_cast<double>(valid.size());
  for (std::size_t s = 0; s < samples_per_case; ++s)
    suite.samples.push_back({s % tiles.size(), draw_cells(valid, suite.channels_per_map, seed, s)});
  return suite;
}

InjectedWindow materialize_sample(const MapSequence& test, const std::vector<Window>& tiles, const EvalSuite& suite,
                                  std::size_t sample, const SuiteCase& c) {
  const auto& s = suite.samples.at(sample);
  const auto& idx = tiles.at(s.tile).map_index;
  InjectedWindow out;
  out.maps.geometry = test.geometry;
  std::vector<const DigiOccupancyMap*> src;
  for (auto i : idx) src.push_back(&test.maps[i]);
  std::vector<std::uint8_t> keep;
  if (suite.skip_overflow) keep = overflow_filter(src, s.cells, c.kind, c.rd);
  for (auto i : idx) {
    auto m = test.maps[i];
    out.cells = apply_to_map(m, s.cells, c.kind, c.rd, suite.skip_overflow, suite.skip_overflow ? &keep : nullptr);
    out.maps.maps.push_back(std::move(m));
  }
  return out;
}

}  // namespace graphstad
