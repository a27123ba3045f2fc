#include "graphstad/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "graphstad/errors.hpp"
#include "graphstad/train.hpp"

namespace graphstad {

namespace fs = std::filesystem;

double auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
  if (scores.size() != labels.size()) throw ValidationError("auc: scores and labels differ in length");
  const auto n = scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (auto k = i; k < j; ++k)
      if (labels[idx[k]]) {
        rank_sum += avg_rank;
        ++n_pos;
      }
    i = j;
  }
  const auto n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ValidationError("auc needs both positive and negative labels");
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1) / 2) / (np * static_cast<double>(n_neg));
}

ConfusionRates confusion_rates(const std::vector<std::uint8_t>& flags, const std::vector<std::uint8_t>& labels) {
  if (flags.size() != labels.size()) throw ValidationError("confusion_rates: masks differ in length");
  ConfusionRates r;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (flags[i] && labels[i]) ++r.tp;
    else if (flags[i]) ++r.fp;
    else if (labels[i]) ++r.fn;
    else ++r.tn;
  }
  auto ratio = [](std::size_t a, std::size_t b) -> std::optional<double> {
    if (b == 0) return std::nullopt;
    return static_cast<double>(a) / static_cast<double>(b);
  };
  r.fpr = ratio(r.fp, r.fp + r.tn);
  r.precision = ratio(r.tp, r.tp + r.fp);
  r.recall = ratio(r.tp, r.tp + r.fn);
  return r;
}

void CaseScores::flatten(const SegmentationMap& geometry, std::vector<double>& scores_out,
                         std::vector<std::uint8_t>& labels_out, std::vector<double>* errors_out) const {
  const auto valid = geometry.valid_cells();
  scores_out.clear();
  labels_out.clear();
  if (errors_out) errors_out->clear();
  std::vector<std::uint8_t> mark(geometry.dims().cells(), 0);
  for (std::size_t s = 0; s < scores.size(); ++s) {
    for (auto c : injected[s]) mark[c] = 1;
    for (auto c : valid) {
      scores_out.push_back(scores[s][c]);
      labels_out.push_back(mark[c]);
      if (errors_out) errors_out->push_back(errors[s][c]);
    }
    for (auto c : injected[s]) mark[c] = 0;
  }
}

std::vector<CaseScores> score_suite(const SuiteScoringInputs& in) {
  const auto& model = *in.model;
  const auto& suite = *in.suite;
  const auto& test = *in.test;
  const auto mode = in.sigma->mode;
  const auto T = suite.T;
  if (T != model.spec().T) throw ConfigError("suite window length does not match the model");
  const auto raw_tiles = make_windows(test, T, T);

  // Recurrent state each tile starts from when the clean series runs through.
  std::vector<RnnState> tile_state(raw_tiles.size());
  if (mode == StateMode::Preserve) {
    const auto clean = preprocess_sequence(test, *in.minmax);
    const auto tiles = make_windows(clean.maps, T, T);
    std::vector<std::size_t> run_start;
    // Chains restart at run changes or gaps, matching the contiguity rule.
    std::size_t begin = 0;
    for (std::size_t k = 1; k <= tiles.size(); ++k) {
      const bool cut = k == tiles.size() || tiles[k].run_id != tiles[k - 1].run_id ||
                       tiles[k].ls.front() != tiles[k - 1].ls.back() + 1;
      if (!cut) continue;
      std::vector<Window> chain(tiles.begin() + static_cast<std::ptrdiff_t>(begin),
                                tiles.begin() + static_cast<std::ptrdiff_t>(k));
      const auto r = reconstruct_series(model, *in.store, chain, StateMode::Preserve);
      for (std::size_t i = 0; i < chain.size(); ++i) tile_state[begin + i] = r.state_in[i];
      begin = k;
    }
  }

  std::vector<CaseScores> out;
  const std::size_t batch = 32;
  for (const auto& c : suite.cases) {
    CaseScores cs{c, {}, {}, {}};
    for (std::size_t b = 0; b < suite.samples.size(); b += batch) {
      const auto e = std::min(suite.samples.size(), b + batch);
      std::vector<PreprocessedSequence> pps;
      std::vector<Window> wins;
      std::vector<RnnState> states;
      bool any_state = false;
      for (std::size_t s = b; s < e; ++s) {
        auto inj = materialize_sample(test, raw_tiles, suite, s, c);
        cs.injected.push_back(std::move(inj.cells));
        pps.push_back(preprocess_sequence(inj.maps, *in.minmax));
        wins.push_back(make_windows(pps.back().maps, T, T).at(0));
        const auto& st = tile_state[suite.samples[s].tile];
        any_state = any_state || !st.empty();
        states.push_back(st);
      }
      std::vector<const Window*> ptrs;
      for (const auto& w : wins) ptrs.push_back(&w);
      ForwardOptions opts;
      RnnState stacked;
      if (any_state) {
        // Tiles at a chain start have empty state: use zeros of the right shape.
        const auto H = model.spec().rnn_hidden;
        for (auto& st : states)
          if (st.empty()) st = {{Tensor({1, H}), Tensor({1, H})}, {Tensor({1, H}), Tensor({1, H})}};
        stacked = RnnState::stack(states);
        opts.state_in = &stacked;
      }
      const auto r = model.forward(*in.store, stack_windows(ptrs, model.spec().dims), opts);
      const auto per = r.recon.size() / wins.size();
      for (std::size_t i = 0; i < wins.size(); ++i) {
        Tensor rec(Shape(r.recon.shape.begin() + 1, r.recon.shape.end()),
                   std::vector<double>(r.recon.data.begin() + static_cast<std::ptrdiff_t>(i * per),
                                       r.recon.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * per)));
        auto err = window_error(*model.geometry(), *in.minmax, wins[i], rec, pps[i].medians);
        cs.scores.push_back(anomaly_score(err, *in.sigma));
        cs.errors.push_back(std::move(err));
      }
    }
    out.push_back(std::move(cs));
  }
  return out;
}

std::vector<MetricRow> case_metrics(const CaseScores& cs, const SegmentationMap& geometry,
                                    const std::vector<double>& captures) {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  cs.flatten(geometry, scores, labels);
  std::vector<double> positives;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (labels[i]) positives.push_back(scores[i]);
  const double a = auc(scores, labels);
  std::vector<MetricRow> rows;
  for (double cap : captures) {
    MetricRow row;
    row.kind = to_string(cs.c.kind);
    row.rd = cs.c.kind == AnomalyKind::NoisyHot || cs.c.kind == AnomalyKind::Degraded ? cs.c.rd : 0.0;
    row.capture = cap;
    row.threshold = threshold_for_capture(positives, cap);
    std::vector<std::uint8_t> flags(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) flags[i] = scores[i] > row.threshold;
    const auto r = confusion_rates(flags, labels);
    row.fpr = r.fpr;
    row.precision = r.precision;
    row.recall = r.recall;
    row.auc = a;
    rows.push_back(row);
  }
  return rows;
}

void write_metrics_csv(const std::vector<MetricRow>& rows, const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os.precision(10);
  auto opt = [&](const std::optional<double>& v) {
    if (v) os << *v;
  };
  os << "kind,rd,capture,fpr,precision,recall,auc\n";
  for (const auto& r : rows) {
    os << r.kind << ',' << r.rd << ',' << r.capture << ',';
    opt(r.fpr);
    os << ',';
    opt(r.precision);
    os << ',';
    opt(r.recall);
    os << ',' << r.auc << '\n';
  }
}

std::vector<double> depth_slice(const std::vector<double>& cells, const SegmentationMap& geometry,
                                std::size_t depth_bin) {
  const auto& d = geometry.dims();
  if (cells.size() != d.cells() || depth_bin >= d.n_depth) throw ValidationError("depth_slice out of range");
  std::vector<double> out(d.n_ieta * d.n_iphi);
  for (std::size_t e = 0; e < d.n_ieta; ++e)
    for (std::size_t p = 0; p < d.n_iphi; ++p) out[e * d.n_iphi + p] = cells[geometry.flat_index(e, p, depth_bin)];
  return out;
}

void write_grid_csv(const fs::path& path, const std::vector<double>& values, std::size_t width, std::size_t height) {
  if (values.size() != width * height) throw ValidationError("grid size mismatch");
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os.precision(17);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) os << (c ? "," : "") << values[r * width + c];
    os << '\n';
  }
}

std::vector<double> read_grid_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  std::vector<double> out;
  std::string line, field;
  while (std::getline(is, line)) {
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(std::stod(field));
  }
  return out;
}

double cell_distance(const SegmentationMap& geometry, std::size_t a, std::size_t b) {
  const auto& d = geometry.dims();
  auto split = [&](std::size_t c) {
    return std::array<double, 3>{static_cast<double>(c / (d.n_iphi * d.n_depth)),
                                 static_cast<double>((c / d.n_depth) % d.n_iphi), static_cast<double>(c % d.n_depth)};
  };
  const auto x = split(a), y = split(b);
  const double de = x[0] - y[0];
  double dp = std::abs(x[1] - y[1]);
  dp = std::min(dp, static_cast<double>(d.n_iphi) - dp);
  const double dd = x[2] - y[2];
  return std::sqrt(de * de + dp * dp + dd * dd);
}

ReportBundle error_reports(const ReportInputs& in, const fs::path& dir) {
  const auto& geo = *in.geometry;
  const auto& d = geo.dims();
  fs::create_directories(dir / "plots");
  fs::create_directories(dir / "grids");
  ReportBundle bundle;

  auto emit_grid = [&](const std::string& stem, const std::vector<double>& cells) {
    for (std::size_t depth = 0; depth < d.n_depth; ++depth) {
      const auto grid = depth_slice(cells, geo, depth);
      const auto name = stem + "_depth" + std::to_string(depth + 1);
      write_grid_csv(dir / "grids" / (name + ".csv"), grid, d.n_iphi, d.n_ieta);
      write_heatmap_png(dir / "plots" / (name + ".png"), grid, d.n_iphi, d.n_ieta);
      bundle.heatmaps.push_back(dir / "grids" / (name + ".csv"));
    }
  };

  // (a) spatial error maps of the first samples of every case
  for (const auto& cs : *in.cases)
    for (std::size_t s = 0; s < std::min(in.heatmap_samples, cs.errors.size()); ++s)
      emit_grid("error_" + cs.c.name() + "_sample" + std::to_string(s), cs.errors[s]);

  // (b) healthy vs anomalous error histograms
  bundle.histograms = dir / "histograms.csv";
  {
    std::ofstream os(bundle.histograms);
    if (!os) throw IoError("cannot write " + bundle.histograms.string());
    os.precision(10);
    os << "case,class,bin_lo,bin_hi,count\n";
    for (const auto& cs : *in.cases) {
      std::vector<double> scores, errors;
      std::vector<std::uint8_t> labels;
      cs.flatten(geo, scores, labels, &errors);
      double hi = 0.0;
      for (double e : errors) hi = std::max(hi, e);
      if (hi <= 0) hi = 1.0;
      const auto bins = std::max<std::size_t>(1, in.histogram_bins);
      std::vector<std::size_t> healthy(bins, 0), anomalous(bins, 0);
      for (std::size_t i = 0; i < errors.size(); ++i) {
        auto b = static_cast<std::size_t>(errors[i] / hi * static_cast<double>(bins));
        b = std::min(b, bins - 1);
        (labels[i] ? anomalous : healthy)[b]++;
      }
      for (int cls = 0; cls < 2; ++cls)
        for (std::size_t b = 0; b < bins; ++b)
          os << cs.c.name() << ',' << (cls ? "anomalous" : "healthy") << ',' << hi * static_cast<double>(b) / bins
             << ',' << hi * static_cast<double>(b + 1) / bins << ',' << (cls ? anomalous : healthy)[b] << '\n';
    }
  }

  // (c) training mean-error map
  bundle.train_mean_error = dir / "train_mean_error.csv";
  {
    if (in.train_mean_error.size() != d.cells()) throw ValidationError("train mean error has the wrong size");
    std::ofstream os(bundle.train_mean_error);
    if (!os) throw IoError("cannot write " + bundle.train_mean_error.string());
    os.precision(17);
    os << "ieta,iphi,depth,mean_error\n";
    for (auto c : geo.valid_cells()) {
      const auto cc = geo.coord_of(c);
      os << cc.ieta << ',' << cc.iphi << ',' << cc.depth << ',' << in.train_mean_error[c] << '\n';
    }
    const auto stem = std::string("train_mean_error");
    for (std::size_t depth = 0; depth < d.n_depth; ++depth) {
      const auto grid = depth_slice(in.train_mean_error, geo, depth);
      write_heatmap_png(dir / "plots" / (stem + "_depth" + std::to_string(depth + 1) + ".png"), grid, d.n_iphi,
                        d.n_ieta);
    }
  }

  // (d) high-scoring healthy channels and their distance to the nearest injection
  bundle.proximity = dir / "proximity.csv";
  {
    std::ofstream os(bundle.proximity);
    if (!os) throw IoError("cannot write " + bundle.proximity.string());
    os.precision(10);
    os << "case,sample,ieta,iphi,depth,score,threshold,nearest_injected_distance\n";
    const auto valid = geo.valid_cells();
    for (const auto& cs : *in.cases) {
      std::vector<double> pos;
      for (std::size_t s = 0; s < cs.scores.size(); ++s)
        for (auto c : cs.injected[s]) pos.push_back(cs.scores[s][c]);
      if (pos.empty()) continue;
      const double alpha = threshold_for_capture(pos, in.proximity_capture);
      for (std::size_t s = 0; s < cs.scores.size(); ++s) {
        for (auto c : valid) {
          if (std::find(cs.injected[s].begin(), cs.injected[s].end(), c) != cs.injected[s].end()) continue;
          if (!(cs.scores[s][c] > alpha)) continue;
          double nearest = std::numeric_limits<double>::infinity();
          for (auto a : cs.injected[s]) nearest = std::min(nearest, cell_distance(geo, c, a));
          const auto cc = geo.coord_of(c);
          os << cs.c.name() << ',' << s << ',' << cc.ieta << ',' << cc.iphi << ',' << cc.depth << ','
             << cs.scores[s][c] << ',' << alpha << ',' << nearest << '\n';
        }
      }
    }
  }
  return bundle;
}

bool ContaminationReport::all_below_median() const {
  return std::all_of(rows.begin(), rows.end(), [&](const auto& r) { return r.train_mean_error < healthy_median; });
}

std::size_t ContaminationReport::injections() const {
  std::size_t n = 0;
  for (const auto& r : rows) n += r.dead_injections;
  return n;
}

bool ContaminationReport::injections_below_threshold() const {
  return std::all_of(rows.begin(), rows.end(),
                     [](const auto& r) { return r.dead_below_threshold == r.dead_injections; });
}

nlohmann::json ContaminationReport::to_json() const {
  nlohmann::json rs = nlohmann::json::array();
  for (const auto& r : rows)
    rs.push_back({{"ieta", r.coord.ieta},
                  {"iphi", r.coord.iphi},
                  {"depth", r.coord.depth},
                  {"train_mean_error", r.train_mean_error},
                  {"dead_injections", r.dead_injections},
                  {"dead_below_threshold", r.dead_below_threshold}});
  return {{"healthy_median", healthy_median},
          {"capture", capture},
          {"threshold", threshold},
          {"all_below_median", all_below_median()},
          {"injections", injections()},
          {"injections_below_threshold", injections_below_threshold()},
          {"channels", rs}};
}

ContaminationReport contamination_report(const SegmentationMap& geometry, const std::vector<ChannelCoord>& contaminated,
                                         const std::vector<double>& train_mean_error, const CaseScores& dead_case,
                                         double capture) {
  if (dead_case.c.kind != AnomalyKind::Dead) throw ValidationError("contamination report needs the dead-channel case");
  if (train_mean_error.size() != geometry.dims().cells()) throw ValidationError("train mean error has the wrong size");
  std::vector<std::size_t> cells;
  for (const auto& c : contaminated) {
    const auto cell = geometry.cell_of(c);
    if (!cell || !geometry.is_valid(*cell)) throw ValidationError("contaminated coordinate " + to_string(c) + " is not a channel");
    cells.push_back(*cell);
  }
  ContaminationReport rep;
  std::vector<double> healthy;
  for (auto c : geometry.valid_cells())
    if (std::find(cells.begin(), cells.end(), c) == cells.end()) healthy.push_back(train_mean_error[c]);
  if (healthy.empty()) throw ValidationError("no healthy channels left");
  std::sort(healthy.begin(), healthy.end());
  const auto n = healthy.size();
  rep.healthy_median = n % 2 ? healthy[n / 2] : 0.5 * (healthy[n / 2 - 1] + healthy[n / 2]);

  std::vector<double> positives;
  for (std::size_t s = 0; s < dead_case.scores.size(); ++s)
    for (auto c : dead_case.injected[s]) positives.push_back(dead_case.scores[s][c]);
  rep.capture = capture;
  rep.threshold = threshold_for_capture(positives, capture);

  for (std::size_t k = 0; k < cells.size(); ++k) {
    ContaminationRow row{contaminated[k], train_mean_error[cells[k]], 0, 0};
    for (std::size_t s = 0; s < dead_case.scores.size(); ++s) {
      const auto& inj = dead_case.injected[s];
      if (std::find(inj.begin(), inj.end(), cells[k]) == inj.end()) continue;
      ++row.dead_injections;
      if (dead_case.scores[s][cells[k]] <= rep.threshold) ++row.dead_below_threshold;
    }
    rep.rows.push_back(row);
  }
  return rep;
}

void write_contamination_csv(const ContaminationReport& report, const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os.precision(10);
  os << "ieta,iphi,depth,train_mean_error,healthy_median,dead_injections,dead_below_threshold,threshold\n";
  for (const auto& r : report.rows)
    os << r.coord.ieta << ',' << r.coord.iphi << ',' << r.coord.depth << ',' << r.train_mean_error << ','
       << report.healthy_median << ',' << r.dead_injections << ',' << r.dead_below_threshold << ','
       << report.threshold << '\n';
}

}  // namespace graphstad
