#pragma once

#include <cstdint>
#include <vector>

#include "graphstad/geometry.hpp"

namespace graphstad {

/// Parameters of one synthetic run.
///
/// Per lumisection s the generator draws
///   β_s = β₀·exp(-decay·s)·(1 + jitter·N)   (× spike factor on spike LSs)
///   ξ_s = ξ_min + (ξ_max - ξ_min)·exp(-decay·s)      (does not follow spikes)
///   γ_s(i) ~ Poisson(ξ_s · gain_i · (β_s/β̄_s)^κ(iη) · r_s(RBX(i))), clipped to [0, ξ_s]
/// where r_s is an AR(1) log-normal RBX factor shared by all channels of one RBX.
struct GenProfile {
  GeometryPtr geometry;
  int n_ls = 500;
  int first_ls = 1;
  std::int64_t run_id = 1;
  std::int64_t xi_min = 500;
  std::int64_t xi_max = 2250;
  double beta0 = 0.4;
  double lumi_decay = 0.002;
  double lumi_jitter = 0.03;
  double xi_jitter = 0.02;
  std::vector<double> gain_field;  ///< per cell; > 0 on valid channels, 0 elsewhere
  std::vector<double> coupling;    ///< per iη bin exponent κ of the β non-linearity
  double spike_prob = 0.02;
  double spike_beta_factor = 0.5;
  double rbx_jitter = 0.04;
  double rbx_autocorr = 0.8;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Default profile with a seeded gain field: iη/depth ring level × RBX factor ×
/// per-channel factor.
GenProfile make_profile(GeometryPtr geometry, int n_ls, std::uint64_t seed);

/// Deterministic in (profile, seed); per-LS draws come from substreams keyed by
/// (seed, ls) so the result does not depend on generation order.
MapSequence generate_run(const GenProfile& profile);

/// Forces the listed channels to zero in every map (persistent dead channels).
MapSequence contaminate(MapSequence seq, const std::vector<ChannelCoord>& dead_coords);

}  // namespace graphstad
