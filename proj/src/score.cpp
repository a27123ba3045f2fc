#include "graphstad/score.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "graphstad/errors.hpp"
#include "graphstad/train.hpp"

namespace graphstad {

using nlohmann::json;

std::string to_string(StateMode m) { return m == StateMode::Reset ? "reset" : "preserve"; }

StateMode state_mode_from_string(const std::string& s) {
  if (s == "reset") return StateMode::Reset;
  if (s == "preserve") return StateMode::Preserve;
  throw ConfigError("unknown state mode '" + s + "'");
}

namespace {

Tensor window_slice(const Tensor& batch, std::size_t i) {
  const Shape shape(batch.shape.begin() + 1, batch.shape.end());
  const auto per = numel(shape);
  return Tensor(shape, std::vector<double>(batch.data.begin() + static_cast<std::ptrdiff_t>(i * per),
                                           batch.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * per)));
}

}  // namespace

SeriesReconstruction reconstruct_series(const GraphStadModel& model, const ParameterStore& store,
                                        const std::vector<Window>& windows, StateMode mode, std::size_t batch_size) {
  SeriesReconstruction out;
  const auto& dims = model.spec().dims;
  if (mode == StateMode::Reset) {
    for (std::size_t b = 0; b < windows.size(); b += batch_size) {
      std::vector<const Window*> part;
      for (std::size_t i = b; i < std::min(windows.size(), b + batch_size); ++i) part.push_back(&windows[i]);
      const auto r = model.forward(store, stack_windows(part, dims));
      for (std::size_t i = 0; i < part.size(); ++i) {
        out.recon.push_back(window_slice(r.recon, i));
        out.state_in.emplace_back();
        out.state_out.push_back(r.state_out.rows(i, 1));
      }
    }
    return out;
  }
  for (std::size_t k = 1; k < windows.size(); ++k) {
    const auto& prev = windows[k - 1];
    const auto& cur = windows[k];
    if (cur.run_id != prev.run_id || cur.ls.front() != prev.ls.back() + 1)
      throw ValidationError("preserve mode needs contiguous windows; window " + std::to_string(k) + " starts at ls " +
                            std::to_string(cur.ls.front()) + " after ls " + std::to_string(prev.ls.back()));
  }
  RnnState state;
  for (const auto& w : windows) {
    ForwardOptions opts;
    opts.state_in = state.empty() ? nullptr : &state;
    const auto r = model.forward(store, stack_windows({&w}, dims), opts);
    out.recon.push_back(window_slice(r.recon, 0));
    out.state_in.push_back(state);
    state = r.state_out;
    out.state_out.push_back(state);
  }
  return out;
}

std::vector<double> mae_window(std::span<const double> x, std::span<const double> xbar, std::size_t T,
                               const std::vector<double>& mask) {
  const auto cells = mask.size();
  if (x.size() != xbar.size() || x.size() != T * cells) throw ValidationError("mae_window shape mismatch");
  std::vector<double> e(cells, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < cells; ++c)
      if (mask[c] != 0.0) e[c] += std::abs(x[t * cells + c] - xbar[t * cells + c]);
  for (double& v : e) v /= static_cast<double>(T);
  return e;
}

std::vector<double> window_error(const SegmentationMap& geometry, const MinMaxCalib& calib, const Window& window,
                                 const Tensor& recon, const std::vector<MedianTable>& medians) {
  const auto cells = geometry.dims().cells();
  const auto T = window.ls.size();
  if (recon.size() != T * cells || window.data.size() != T * cells)
    throw ValidationError("reconstruction does not match the window");
  std::vector<double> x(T * cells), xbar(T * cells);
  for (std::size_t t = 0; t < T; ++t) {
    const auto& table = medians.at(window.map_index[t]);
    DigiOccupancyMap in, out;
    in.ls = out.ls = window.ls[t];
    in.run_id = out.run_id = window.run_id;
    in.values.assign(window.data.data.begin() + static_cast<std::ptrdiff_t>(t * cells),
                     window.data.data.begin() + static_cast<std::ptrdiff_t>((t + 1) * cells));
    out.values.assign(recon.data.begin() + static_cast<std::ptrdiff_t>(t * cells),
                      recon.data.begin() + static_cast<std::ptrdiff_t>((t + 1) * cells));
    const auto a = postprocess_map(in, table, calib, geometry);
    const auto b = postprocess_map(out, table, calib, geometry);
    std::copy(a.values.begin(), a.values.end(), x.begin() + static_cast<std::ptrdiff_t>(t * cells));
    std::copy(b.values.begin(), b.values.end(), xbar.begin() + static_cast<std::ptrdiff_t>(t * cells));
  }
  std::vector<double> mask(cells);
  for (std::size_t c = 0; c < cells; ++c) mask[c] = geometry.is_valid(c) ? 1.0 : 0.0;
  return mae_window(x, xbar, T, mask);
}

json SigmaCalib::to_json() const { return {{"sigma", sigma}, {"state_mode", to_string(mode)}, {"windows", windows}}; }

SigmaCalib SigmaCalib::from_json(const json& j) {
  SigmaCalib c;
  c.sigma = j.at("sigma").get<std::vector<double>>();
  c.mode = state_mode_from_string(j.at("state_mode").get<std::string>());
  c.windows = j.value("windows", std::size_t{0});
  return c;
}

SigmaCalib calibrate_sigma(const std::vector<std::vector<double>>& train_errors, const SegmentationMap& geometry,
                           StateMode mode) {
  if (train_errors.empty()) throw ValidationError("sigma calibration needs at least one window");
  const auto cells = geometry.dims().cells();
  SigmaCalib c;
  c.mode = mode;
  c.windows = train_errors.size();
  c.sigma.assign(cells, 1.0);
  const double n = static_cast<double>(train_errors.size());
  for (std::size_t i = 0; i < cells; ++i) {
    if (!geometry.is_valid(i)) continue;
    double mean = 0.0;
    for (const auto& e : train_errors) mean += e.at(i);
    mean /= n;
    double var = 0.0;
    for (const auto& e : train_errors) var += (e[i] - mean) * (e[i] - mean);
    c.sigma[i] = std::max(std::sqrt(var / n), kSigmaFloor);
  }
  return c;
}

std::vector<double> anomaly_score(const std::vector<double>& errors, const SigmaCalib& calib) {
  if (errors.size() != calib.sigma.size()) throw ValidationError("error vector does not match the calibration");
  std::vector<double> a(errors.size());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = errors[i] / std::max(calib.sigma[i], kSigmaFloor);
  return a;
}

double threshold_for_capture(std::vector<double> scores, double capture_rate) {
  if (scores.empty()) throw ValidationError("threshold needs at least one anomalous score");
  if (!(capture_rate > 0 && capture_rate <= 1)) throw ValidationError("capture rate must be in (0, 1]");
  std::sort(scores.begin(), scores.end());
  const auto n = scores.size();
  const auto k = static_cast<std::size_t>(std::ceil(capture_rate * static_cast<double>(n) - 1e-9));
  const double pivot = scores[n - std::max<std::size_t>(k, 1)];
  return std::nextafter(pivot, -std::numeric_limits<double>::infinity());
}

SeriesErrors series_errors(const GraphStadModel& model, const ParameterStore& store, const MinMaxCalib& calib,
                           const PreprocessedSequence& seq, const std::vector<Window>& windows, StateMode mode) {
  SeriesErrors out;
  out.recon = reconstruct_series(model, store, windows, mode);
  for (std::size_t k = 0; k < windows.size(); ++k)
    out.errors.push_back(window_error(*model.geometry(), calib, windows[k], out.recon.recon[k], seq.medians));
  return out;
}

}  // namespace graphstad
