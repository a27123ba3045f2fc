#include "graphstad/synthgen.hpp"

#include <algorithm>
#include <cmath>

#include "graphstad/errors.hpp"
#include "graphstad/random.hpp"

namespace graphstad {

void GenProfile::validate() const {
  if (!geometry) throw ConfigError("generator profile without geometry");
  const auto cells = geometry->dims().cells();
  if (n_ls <= 0) throw ConfigError("n_ls must be positive");
  if (xi_min <= 0 || xi_max < xi_min) throw ConfigError("invalid xi range");
  if (gain_field.size() != cells) throw ConfigError("gain field size does not match geometry");
  if (coupling.size() != geometry->dims().n_ieta) throw ConfigError("coupling size does not match ieta bins");
  for (std::size_t c = 0; c < cells; ++c) {
    const double g = gain_field[c];
    if (!std::isfinite(g) || g < 0.0) throw ConfigError("gain field must be finite and non-negative");
    if (!geometry->is_valid(c) && g != 0.0) throw ConfigError("gain field non-zero outside the valid mask");
  }
  if (spike_prob < 0.0 || spike_prob > 1.0) throw ConfigError("spike_prob outside [0,1]");
  if (rbx_autocorr < 0.0 || rbx_autocorr >= 1.0) throw ConfigError("rbx_autocorr outside [0,1)");
}

GenProfile make_profile(GeometryPtr geometry, int n_ls, std::uint64_t seed) {
  GenProfile p;
  p.geometry = std::move(geometry);
  p.n_ls = n_ls;
  p.seed = seed;
  const auto& dims = p.geometry->dims();

  auto rng = substream(seed, "gain");
  std::uniform_real_distribution<double> ring_level(0.2, 0.5);
  std::uniform_real_distribution<double> rbx_level(0.85, 1.15);
  std::uniform_real_distribution<double> channel_level(0.9, 1.1);
  std::uniform_real_distribution<double> kappa(0.1, 0.3);

  std::vector<double> ring(dims.n_ieta * dims.n_depth);
  for (double& r : ring) r = ring_level(rng);
  std::vector<double> rbx(p.geometry->rbx_count());
  for (double& r : rbx) r = rbx_level(rng);
  p.coupling.resize(dims.n_ieta);
  for (double& k : p.coupling) k = kappa(rng);

  p.gain_field.assign(dims.cells(), 0.0);
  for (std::size_t c = 0; c < dims.cells(); ++c) {
    const double ch = channel_level(rng);
    if (!p.geometry->is_valid(c)) continue;
    const auto depth_bin = c % dims.n_depth;
    const auto ieta_bin = c / (dims.n_depth * dims.n_iphi);
    p.gain_field[c] = ring[ieta_bin * dims.n_depth + depth_bin] *
                      rbx[static_cast<std::size_t>(p.geometry->rbx_of_cell(c))] * ch;
  }
  return p;
}

MapSequence generate_run(const GenProfile& profile) {
  profile.validate();
  const auto& geo = *profile.geometry;
  const auto& dims = geo.dims();
  const auto n_rbx = geo.rbx_count();
  const auto n = static_cast<std::size_t>(profile.n_ls);

  // RBX factors follow an AR(1) process in log space; innovations come from
  // per-LS substreams, the recursion itself is a cheap serial pass.
  std::vector<std::vector<double>> log_rbx(n, std::vector<double>(n_rbx, 0.0));
  const double innovation_scale = profile.rbx_jitter * std::sqrt(1.0 - profile.rbx_autocorr * profile.rbx_autocorr);
  for (std::size_t k = 0; k < n; ++k) {
    auto rng = substream(profile.seed, "rbx", static_cast<std::uint64_t>(profile.first_ls) + k);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t r = 0; r < n_rbx; ++r) {
      const double eps = normal(rng);
      log_rbx[k][r] = k == 0 ? profile.rbx_jitter * eps : profile.rbx_autocorr * log_rbx[k - 1][r] + innovation_scale * eps;
    }
  }

  MapSequence seq;
  seq.geometry = profile.geometry;
  seq.maps.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const int ls = profile.first_ls + static_cast<int>(k);
    auto rng = substream(profile.seed, "ls", static_cast<std::uint64_t>(ls));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);

    const double t = static_cast<double>(k);
    const double decay = std::exp(-profile.lumi_decay * t);
    const double beta_nominal = profile.beta0 * decay;
    double beta = beta_nominal * std::max(0.05, 1.0 + profile.lumi_jitter * normal(rng));
    const bool spike = uniform(rng) < profile.spike_prob;
    if (spike) beta *= profile.spike_beta_factor;
    const double xi_real = static_cast<double>(profile.xi_min) +
                           static_cast<double>(profile.xi_max - profile.xi_min) * decay *
                               std::max(0.0, 1.0 + profile.xi_jitter * normal(rng));
    const auto xi = std::clamp<std::int64_t>(std::llround(xi_real), profile.xi_min, profile.xi_max);
    const double beta_ratio = beta / beta_nominal;

    auto& map = seq.maps[k];
    map.run_id = profile.run_id;
    map.ls = ls;
    map.num_events = xi;
    map.received_luminosity = beta;
    map.values.assign(dims.cells(), 0.0);
    for (std::size_t c = 0; c < dims.cells(); ++c) {
      if (!geo.is_valid(c) || profile.gain_field[c] == 0.0) continue;
      const auto ieta_bin = c / (dims.n_depth * dims.n_iphi);
      const double coupling = std::pow(beta_ratio, profile.coupling[ieta_bin]);
      const double rbx = std::exp(log_rbx[k][static_cast<std::size_t>(geo.rbx_of_cell(c))]);
      const double mean = static_cast<double>(xi) * profile.gain_field[c] * coupling * rbx;
      std::poisson_distribution<long long> poisson(mean);
      map.values[c] = static_cast<double>(std::min<long long>(poisson(rng), xi));
    }
  }
  return seq;
}

MapSequence contaminate(MapSequence seq, const std::vector<ChannelCoord>& dead_coords) {
  std::vector<std::size_t> cells;
  for (const auto& c : dead_coords) {
    auto cell = seq.geometry->cell_of(c);
    if (!cell || !seq.geometry->is_valid(*cell))
      throw ValidationError("contamination coordinate " + to_string(c) + " is not a valid channel");
    cells.push_back(*cell);
  }
  for (auto& m : seq.maps)
    for (auto cell : cells) m.values[cell] = 0.0;
  return seq;
}

}  // namespace graphstad
