#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "graphstad/autodiff.hpp"
#include "graphstad/geometry.hpp"
#include "graphstad/parameter_store.hpp"
#include "graphstad/preprocess.hpp"

namespace graphstad {

/// Layer widths of the autoencoder. Only the input dims depend on geometry.
struct ModelSpec {
  int T = 5;
  Dims dims;
  std::vector<std::size_t> cnn_channels{16, 32};
  std::size_t gnn_hidden = 32;
  std::size_t gnn_layers = 2;
  std::size_t embed_dim = 128;
  std::size_t rnn_hidden = 128;
  std::size_t latent_dim = 32;
  /// Channels of the coarse grid the decoder fc emits before deconvolution.
  std::size_t decoder_seed_channels = 4;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  /// Depth extent of every conv kernel: min(2, n_depth).
  std::size_t kernel_depth() const { return std::min<std::size_t>(2, dims.n_depth); }
  /// Spatial size after each encoder conv layer.
  std::vector<std::array<std::size_t, 3>> conv_grids() const;
  void validate() const;

  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);
  static ModelSpec for_geometry(const SegmentationMap& geometry, int T = 5);
};

struct LstmState {
  Tensor h;  ///< [B, H]; empty means zeros
  Tensor c;
};

/// Recurrent state of the encoder and decoder LSTMs (one layer each).
struct RnnState {
  LstmState encoder;
  LstmState decoder;

  bool empty() const { return encoder.h.empty() && encoder.c.empty() && decoder.h.empty() && decoder.c.empty(); }
  bool operator==(const RnnState& o) const {
    return encoder.h == o.encoder.h && encoder.c == o.encoder.c && decoder.h == o.decoder.h &&
           decoder.c == o.decoder.c;
  }
  /// Rows [begin, begin + n) of every tensor.
  RnnState rows(std::size_t begin, std::size_t n) const;
  /// Row-wise concatenation of single-sample states.
  static RnnState stack(const std::vector<RnnState>& parts);
};

struct ForwardOptions {
  /// Batch-statistics BN (where the layer is trainable) and latent sampling.
  bool training = false;
  /// Sampling source for z in training mode; z = μ when null.
  std::mt19937_64* rng = nullptr;
  /// Explicit ε for z = μ + exp(½ log σ²)·ε, shape [B·T, latent]. Wins over rng.
  const Tensor* noise = nullptr;
  const RnnState* state_in = nullptr;
  bool check_finite = true;
};

/// Moments observed by a batch-statistics BN layer during a forward pass.
struct BnUpdate {
  std::string layer;  ///< `<component>.<block>.<idx>`
  ad::BatchStats stats;
};

/// Differentiable forward pass recorded on its own graph.
struct ForwardTrace {
  std::unique_ptr<ad::Graph> graph;
  std::map<std::string, ad::Var, std::less<>> params;
  ad::Var recon;   ///< [B·T, cells]
  ad::Var mu;      ///< [B·T, latent]
  ad::Var logvar;  ///< [B·T, latent]
  ad::Var z;
  RnnState state_out;
  std::vector<BnUpdate> bn_updates;
  std::size_t batch = 0;
};

struct EncodeResult {
  Tensor mu, logvar, z;  ///< [B·T, latent]
  LstmState state;
  std::vector<BnUpdate> bn_updates;
};

struct DecodeResult {
  Tensor recon;  ///< [B, T, n_ieta, n_iphi, n_depth]
  LstmState state;
  std::vector<BnUpdate> bn_updates;
};

struct ForwardResult {
  Tensor recon;  ///< [B, T, n_ieta, n_iphi, n_depth]
  Tensor mu, logvar, z;
  RnnState state_out;
  std::vector<BnUpdate> bn_updates;
};

struct LossWeights {
  double lambda = 0.003;
  double rho = 1e-7;
};

struct LossValue {
  ad::Var total;
  double mse = 0, kl = 0, l2 = 0;
};

/// The CNN+GNN → LSTM → VAE encoder and LSTM → deconvolution decoder.
class GraphStadModel {
 public:
  GraphStadModel(ModelSpec spec, GeometryPtr geometry);

  const ModelSpec& spec() const noexcept { return spec_; }
  const GeometryPtr& geometry() const noexcept { return geometry_; }
  const GraphTopology& topology() const noexcept { return topology_; }
  /// 1 on valid cells, 0 elsewhere.
  const std::vector<double>& loss_mask() const noexcept { return mask_; }

  /// Freshly initialised parameters: U(±1/√fan_in) weights, zero biases,
  /// unit BN scale, zero BN shift; values rounded to float32.
  ParameterStore init_parameters(std::uint64_t seed) const;
  /// Expected name → shape table.
  std::map<std::string, Shape> parameter_shapes() const;
  /// Throws ConfigError if the store lacks a parameter or has a wrong shape.
  void check_store(const ParameterStore& store) const;

  /// `batch` is [B, T, n_ieta, n_iphi, n_depth].
  ForwardTrace trace(const ParameterStore& store, const Tensor& batch, const ForwardOptions& opts,
                     bool requires_grad) const;
  ForwardResult forward(const ParameterStore& store, const Tensor& batch, const ForwardOptions& opts = {}) const;
  EncodeResult encode(const ParameterStore& store, const Tensor& batch, const ForwardOptions& opts = {}) const;
  /// `z` is [B·T, latent]; `state_in` seeds the decoder LSTM.
  DecodeResult decode(const ParameterStore& store, const Tensor& z, std::size_t batch,
                      const ForwardOptions& opts = {}, const LstmState* state_in = nullptr) const;

  /// ℒ = masked MSE + λ·KL + ρ·Σ‖W‖² over trainable weight tensors.
  LossValue loss(ForwardTrace& trace, const ParameterStore& store, const Tensor& target,
                 const LossWeights& w = {}) const;

  /// Folds batch moments into the running statistics (momentum update,
  /// unbiased variance).
  void apply_bn_updates(ParameterStore& store, const std::vector<BnUpdate>& updates) const;

 private:
  struct Binder;
  struct EncodeVars {
    ad::Var mu, logvar, z;
    LstmState state;
  };
  struct DecodeVars {
    ad::Var recon;
    LstmState state;
  };
  EncodeVars encode_vars(Binder& b, ad::Var input, std::size_t batch, const ForwardOptions& opts) const;
  DecodeVars decode_vars(Binder& b, ad::Var z, std::size_t batch, const ForwardOptions& opts,
                         const LstmState* state_in) const;

  ModelSpec spec_;
  GeometryPtr geometry_;
  GraphTopology topology_;
  std::vector<double> mask_;
};

/// Model spec + geometry stored in checkpoint metadata.
nlohmann::json model_metadata(const GraphStadModel& model);
GraphStadModel model_from_metadata(const nlohmann::json& metadata);

}  // namespace graphstad
