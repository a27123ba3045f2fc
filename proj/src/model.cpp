#include "graphstad/model.hpp"

#include <cmath>

#include "graphstad/errors.hpp"
#include "graphstad/random.hpp"

namespace graphstad {

using nlohmann::json;

namespace {

ad::ConvGeometry conv_geometry(std::size_t kd) { return {{3, 3, kd}, {2, 2, 1}, {1, 1, 0}}; }
std::array<std::size_t, 3> conv_pad_hi(std::size_t kd) { return {1, 1, kd - 1}; }

std::string layer(const char* component, const char* block, std::size_t idx) {
  return std::string(component) + "." + block + "." + std::to_string(idx);
}

}  // namespace

std::vector<std::array<std::size_t, 3>> ModelSpec::conv_grids() const {
  std::vector<std::array<std::size_t, 3>> grids{{dims.n_ieta, dims.n_iphi, dims.n_depth}};
  const auto kd = kernel_depth();
  for (std::size_t l = 0; l < cnn_channels.size(); ++l)
    grids.push_back(ad::conv_output_size(grids.back(), conv_geometry(kd), conv_pad_hi(kd)));
  return grids;
}

void ModelSpec::validate() const {
  if (T <= 0) throw ConfigError("model T must be positive");
  if (dims.cells() == 0) throw ConfigError("model dims must be non-empty");
  if (cnn_channels.empty()) throw ConfigError("model needs at least one conv layer");
  for (auto c : cnn_channels)
    if (c == 0) throw ConfigError("conv channel count must be positive");
  if (gnn_layers == 0 || gnn_hidden == 0) throw ConfigError("gnn must have at least one layer and width");
  if (embed_dim == 0 || rnn_hidden == 0 || latent_dim == 0 || decoder_seed_channels == 0)
    throw ConfigError("model widths must be positive");
  if (!(bn_eps > 0) || !(bn_momentum > 0 && bn_momentum <= 1)) throw ConfigError("invalid batch-norm settings");
}

json ModelSpec::to_json() const {
  return {{"T", T},
          {"dims", {dims.n_ieta, dims.n_iphi, dims.n_depth}},
          {"cnn_channels", cnn_channels},
          {"gnn_hidden", gnn_hidden},
          {"gnn_layers", gnn_layers},
          {"embed_dim", embed_dim},
          {"rnn_hidden", rnn_hidden},
          {"latent_dim", latent_dim},
          {"decoder_seed_channels", decoder_seed_channels},
          {"bn_eps", bn_eps},
          {"bn_momentum", bn_momentum}};
}

ModelSpec ModelSpec::from_json(const json& j) {
  ModelSpec s;
  s.T = j.value("T", s.T);
  if (j.contains("dims")) {
    const auto d = j.at("dims").get<std::vector<std::size_t>>();
    if (d.size() != 3) throw ConfigError("model dims must have three entries");
    s.dims = {d[0], d[1], d[2]};
  }
  s.cnn_channels = j.value("cnn_channels", s.cnn_channels);
  s.gnn_hidden = j.value("gnn_hidden", s.gnn_hidden);
  s.gnn_layers = j.value("gnn_layers", s.gnn_layers);
  s.embed_dim = j.value("embed_dim", s.embed_dim);
  s.rnn_hidden = j.value("rnn_hidden", s.rnn_hidden);
  s.latent_dim = j.value("latent_dim", s.latent_dim);
  s.decoder_seed_channels = j.value("decoder_seed_channels", s.decoder_seed_channels);
  s.bn_eps = j.value("bn_eps", s.bn_eps);
  s.bn_momentum = j.value("bn_momentum", s.bn_momentum);
  return s;
}

ModelSpec ModelSpec::for_geometry(const SegmentationMap& geometry, int T) {
  ModelSpec s;
  s.T = T;
  s.dims = geometry.dims();
  return s;
}

RnnState RnnState::rows(std::size_t begin, std::size_t n) const {
  auto slice = [&](const Tensor& t) {
    if (t.empty()) return Tensor();
    const auto w = t.shape.at(1);
    Tensor out({n, w});
    std::copy_n(t.data.begin() + static_cast<std::ptrdiff_t>(begin * w), n * w, out.data.begin());
    return out;
  };
  return {{slice(encoder.h), slice(encoder.c)}, {slice(decoder.h), slice(decoder.c)}};
}

RnnState RnnState::stack(const std::vector<RnnState>& parts) {
  auto cat = [&](auto get) {
    Tensor out;
    std::size_t rows = 0, width = 0;
    for (const auto& p : parts) {
      const Tensor& t = get(p);
      if (t.empty()) throw ValidationError("cannot stack empty recurrent states");
      rows += t.shape[0];
      width = t.shape[1];
    }
    out = Tensor({rows, width});
    std::size_t off = 0;
    for (const auto& p : parts) {
      const Tensor& t = get(p);
      std::copy(t.data.begin(), t.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off));
      off += t.size();
    }
    return out;
  };
  if (parts.empty()) return {};
  return {{cat([](const RnnState& s) -> const Tensor& { return s.encoder.h; }),
           cat([](const RnnState& s) -> const Tensor& { return s.encoder.c; })},
          {cat([](const RnnState& s) -> const Tensor& { return s.decoder.h; }),
           cat([](const RnnState& s) -> const Tensor& { return s.decoder.c; })}};
}

GraphStadModel::GraphStadModel(ModelSpec spec, GeometryPtr geometry)
    : spec_(std::move(spec)), geometry_(std::move(geometry)) {
  if (!geometry_) throw ConfigError("model without geometry");
  spec_.validate();
  if (!(spec_.dims == geometry_->dims())) throw ConfigError("model dims do not match the geometry");
  topology_ = GraphTopology(*geometry_);
  mask_.resize(geometry_->dims().cells());
  for (std::size_t c = 0; c < mask_.size(); ++c) mask_[c] = geometry_->is_valid(c) ? 1.0 : 0.0;
}

std::map<std::string, Shape> GraphStadModel::parameter_shapes() const {
  std::map<std::string, Shape> s;
  const auto kd = spec_.kernel_depth();
  const auto grids = spec_.conv_grids();
  const auto L = spec_.cnn_channels.size();
  auto add_bn = [&](const std::string& p, std::size_t c) {
    for (const char* k : {"bn_scale", "bn_shift", "bn_running_mean", "bn_running_var"}) s[p + "." + k] = {c};
  };
  std::size_t c_in = 1;
  for (std::size_t l = 0; l < L; ++l) {
    const auto p = layer("encoder", "cnn", l);
    const auto c_out = spec_.cnn_channels[l];
    s[p + ".weight"] = {c_out, c_in, 3, 3, kd};
    s[p + ".bias"] = {c_out};
    add_bn(p, c_out);
    c_in = c_out;
  }
  const auto& g_last = grids.back();
  const auto flat = spec_.cnn_channels.back() * g_last[0] * g_last[1] * g_last[2];
  std::size_t f_in = 1;
  for (std::size_t l = 0; l < spec_.gnn_layers; ++l) {
    const auto p = layer("encoder", "gnn", l);
    s[p + ".weight"] = {spec_.gnn_hidden, f_in};
    s[p + ".bias"] = {spec_.gnn_hidden};
    f_in = spec_.gnn_hidden;
  }
  const auto H = spec_.rnn_hidden;
  s["encoder.fc.0.weight"] = {spec_.embed_dim, flat + spec_.gnn_hidden};
  s["encoder.fc.0.bias"] = {spec_.embed_dim};
  s["encoder.rnn.0.weight"] = {4 * H, spec_.embed_dim + H};
  s["encoder.rnn.0.bias"] = {4 * H};
  for (std::size_t v = 0; v < 2; ++v) {
    s[layer("encoder", "vae", v) + ".weight"] = {spec_.latent_dim, H};
    s[layer("encoder", "vae", v) + ".bias"] = {spec_.latent_dim};
  }
  s["decoder.fc.0.weight"] = {spec_.embed_dim, spec_.latent_dim};
  s["decoder.fc.0.bias"] = {spec_.embed_dim};
  s["decoder.rnn.0.weight"] = {4 * H, spec_.embed_dim + H};
  s["decoder.rnn.0.bias"] = {4 * H};
  const auto G = g_last[0] * g_last[1] * g_last[2];
  s["decoder.fc.1.weight"] = {spec_.decoder_seed_channels * G, H};
  s["decoder.fc.1.bias"] = {spec_.decoder_seed_channels};
  for (std::size_t k = 0; k < L; ++k) {
    const auto p = layer("decoder", "cnn", k);
    const auto in = k == 0 ? spec_.decoder_seed_channels : spec_.cnn_channels[L - k - 1];
    const auto out = L - k - 1 == 0 ? std::size_t{1} : spec_.cnn_channels[L - k - 2];
    s[p + ".weight"] = {in, out, 3, 3, kd};
    s[p + ".bias"] = {out};
    add_bn(p, out);
  }
  return s;
}

ParameterStore GraphStadModel::init_parameters(std::uint64_t seed) const {
  ParameterStore store;
  for (const auto& [name, shape] : parameter_shapes()) {
    const auto pn = ParamName::parse(name);
    Tensor t(shape, 0.0);
    switch (pn.kind) {
      case ParamKind::Weight: {
        // Fan-in: every axis except the output one. Deconv weights are stored
        // input-first, so their fan-in is the input axis times the kernel.
        std::size_t fan_in = numel(shape) / shape[0];
        if (pn.block == "cnn" && pn.component == "decoder") fan_in = numel(shape) / shape[1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        auto rng = substream(seed, name);
        std::uniform_real_distribution<double> u(-bound, bound);
        for (double& v : t.data) v = u(rng);
        break;
      }
      case ParamKind::BnScale:
      case ParamKind::BnRunningVar:
        std::fill(t.data.begin(), t.data.end(), 1.0);
        break;
      default:
        break;
    }
    store.insert(name, std::move(t));
  }
  store.round_to_float32();
  return store;
}

void GraphStadModel::check_store(const ParameterStore& store) const {
  for (const auto& [name, shape] : parameter_shapes()) {
    if (!store.contains(name)) throw ConfigError("parameter store lacks " + name);
    if (store.tensor(name).shape != shape)
      throw ConfigError("parameter " + name + " has shape " + shape_str(store.tensor(name).shape) + ", expected " +
                        shape_str(shape));
  }
}

/// Binds store entries to graph leaves on first use.
struct GraphStadModel::Binder {
  ad::Graph& graph;
  const ParameterStore& store;
  bool requires_grad;
  bool training;
  std::map<std::string, ad::Var, std::less<>>& vars;
  std::vector<BnUpdate>& bn_updates;
  bool check;

  ad::Var get(const std::string& name) {
    auto it = vars.find(name);
    if (it != vars.end()) return it->second;
    const auto& e = store.at(name);
    auto v = graph.leaf(e.tensor, requires_grad && e.trainable);
    vars.emplace(name, v);
    return v;
  }

  void checked(ad::Var v, const std::string& where) const {
    if (check) ad::check_finite(v, where);
  }
};

namespace {

struct LstmVars {
  ad::Var seq;  ///< [B·T, H]
  LstmState state;
};

ad::Var state_or_zeros(ad::Graph& g, const Tensor* t, std::size_t batch, std::size_t H, const char* what) {
  if (!t || t->empty()) return g.constant(Tensor({batch, H}, 0.0));
  if (t->shape != Shape{batch, H})
    throw ValidationError(std::string("recurrent ") + what + " state has shape " + shape_str(t->shape) +
                          ", expected " + shape_str({batch, H}));
  return g.constant(*t);
}

}  // namespace

namespace {

template <typename B>
LstmVars run_lstm(B& b, const std::string& prefix, ad::Var x_seq, std::size_t batch, std::size_t T, std::size_t H,
                  const LstmState* init) {
  auto& g = b.graph;
  auto w = b.get(prefix + ".weight");
  auto bias = b.get(prefix + ".bias");
  auto h = state_or_zeros(g, init ? &init->h : nullptr, batch, H, "hidden");
  auto c = state_or_zeros(g, init ? &init->c : nullptr, batch, H, "cell");
  std::vector<ad::Var> outs;
  outs.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    auto xt = ad::time_slice(x_seq, T, t);
    auto gates = ad::linear(ad::concat_cols({xt, h}), w, bias);
    auto i = ad::sigmoid(ad::slice_cols(gates, 0, H));
    auto f = ad::sigmoid(ad::slice_cols(gates, H, H));
    auto gg = ad::tanh(ad::slice_cols(gates, 2 * H, H));
    auto o = ad::sigmoid(ad::slice_cols(gates, 3 * H, H));
    c = ad::add(ad::mul(f, c), ad::mul(i, gg));
    h = ad::mul(o, ad::tanh(c));
    outs.push_back(h);
  }
  auto seq = ad::interleave_time(outs);
  b.checked(seq, prefix);
  return {seq, {h.value(), c.value()}};
}

template <typename B>
ad::Var batch_norm(B& b, const std::string& prefix, ad::Var x, double eps) {
  auto scale = b.get(prefix + ".bn_scale");
  auto shift = b.get(prefix + ".bn_shift");
  if (b.training && b.store.at(prefix + ".bn_scale").trainable) {
    BnUpdate u{prefix, {}};
    auto y = ad::batch_norm_train(x, scale, shift, eps, &u.stats);
    b.bn_updates.push_back(std::move(u));
    return y;
  }
  return ad::batch_norm_eval(x, scale, shift, b.store.tensor(prefix + ".bn_running_mean"),
                             b.store.tensor(prefix + ".bn_running_var"), eps);
}

}  // namespace

GraphStadModel::EncodeVars GraphStadModel::encode_vars(Binder& b, ad::Var input, std::size_t batch,
                                                       const ForwardOptions& opts) const {
  const auto T = static_cast<std::size_t>(spec_.T);
  const auto frames = batch * T;
  const auto& d = spec_.dims;
  const auto kd = spec_.kernel_depth();
  const auto grids = spec_.conv_grids();

  auto x = ad::reshape(input, {frames, 1, d.n_ieta, d.n_iphi, d.n_depth});
  for (std::size_t l = 0; l < spec_.cnn_channels.size(); ++l) {
    const auto p = layer("encoder", "cnn", l);
    x = ad::conv3d(x, b.get(p + ".weight"), conv_geometry(kd), grids[l + 1]);
    x = ad::channel_bias(x, b.get(p + ".bias"));
    x = ad::elu(batch_norm(b, p, x, spec_.bn_eps));
    b.checked(x, p);
  }
  auto flat = ad::reshape(x, {frames, x.value().size() / frames});

  auto nodes = ad::gather_nodes(ad::reshape(input, {frames, d.cells()}), topology_.node_cells());
  const auto M = topology_.node_count();
  for (std::size_t l = 0; l < spec_.gnn_layers; ++l) {
    const auto p = layer("encoder", "gnn", l);
    nodes = ad::elu(ad::linear(ad::block_mean(nodes, M, topology_.blocks()), b.get(p + ".weight"), b.get(p + ".bias")));
    b.checked(nodes, p);
  }
  auto pooled = ad::mean_nodes(nodes, M);

  auto emb = ad::elu(ad::linear(ad::concat_cols({flat, pooled}), b.get("encoder.fc.0.weight"),
                                b.get("encoder.fc.0.bias")));
  b.checked(emb, "encoder.fc.0");
  const LstmState* init = opts.state_in ? &opts.state_in->encoder : nullptr;
  auto rnn = run_lstm(b, "encoder.rnn.0", emb, batch, T, spec_.rnn_hidden, init);

  auto mu = ad::linear(rnn.seq, b.get("encoder.vae.0.weight"), b.get("encoder.vae.0.bias"));
  auto logvar = ad::linear(rnn.seq, b.get("encoder.vae.1.weight"), b.get("encoder.vae.1.bias"));
  b.checked(mu, "encoder.vae.0");
  b.checked(logvar, "encoder.vae.1");

  ad::Var z = mu;
  if (opts.training && (opts.noise || opts.rng)) {
    Tensor eps;
    if (opts.noise) {
      if (opts.noise->shape != mu.shape()) throw ValidationError("latent noise has the wrong shape");
      eps = *opts.noise;
    } else {
      eps = Tensor(mu.shape());
      std::normal_distribution<double> normal(0.0, 1.0);
      for (double& v : eps.data) v = normal(*opts.rng);
    }
    z = ad::add(mu, ad::mul(ad::exp(ad::scale(logvar, 0.5)), b.graph.constant(std::move(eps))));
  }
  return {mu, logvar, z, rnn.state};
}

GraphStadModel::DecodeVars GraphStadModel::decode_vars(Binder& b, ad::Var z, std::size_t batch,
                                                       const ForwardOptions& /*opts*/,
                                                       const LstmState* state_in) const {
  const auto T = static_cast<std::size_t>(spec_.T);
  const auto frames = batch * T;
  const auto kd = spec_.kernel_depth();
  const auto grids = spec_.conv_grids();
  const auto L = spec_.cnn_channels.size();

  auto h = ad::elu(ad::linear(z, b.get("decoder.fc.0.weight"), b.get("decoder.fc.0.bias")));
  b.checked(h, "decoder.fc.0");
  auto rnn = run_lstm(b, "decoder.rnn.0", h, batch, T, spec_.rnn_hidden, state_in);

  const auto& g = grids.back();
  auto x = ad::linear(rnn.seq, b.get("decoder.fc.1.weight"), ad::Var());
  x = ad::reshape(x, {frames, spec_.decoder_seed_channels, g[0], g[1], g[2]});
  x = ad::elu(ad::channel_bias(x, b.get("decoder.fc.1.bias")));
  b.checked(x, "decoder.fc.1");
  for (std::size_t k = 0; k < L; ++k) {
    const auto p = layer("decoder", "cnn", k);
    x = ad::conv3d_transpose(x, b.get(p + ".weight"), conv_geometry(kd), grids[L - k - 1]);
    x = batch_norm(b, p, ad::channel_bias(x, b.get(p + ".bias")), spec_.bn_eps);
    x = k + 1 < L ? ad::elu(x) : ad::sigmoid(x);
    b.checked(x, p);
  }
  return {ad::reshape(x, {frames, spec_.dims.cells()}), rnn.state};
}

namespace {

std::size_t batch_of(const ModelSpec& spec, const Tensor& batch) {
  const auto& d = spec.dims;
  const Shape tail{static_cast<std::size_t>(spec.T), d.n_ieta, d.n_iphi, d.n_depth};
  if (batch.shape.size() != 5 || !std::equal(tail.begin(), tail.end(), batch.shape.begin() + 1) || batch.shape[0] == 0)
    throw ValidationError("input batch has shape " + shape_str(batch.shape) + ", expected [B," +
                          shape_str(tail).substr(1));
  return batch.shape[0];
}

Shape output_shape(const ModelSpec& spec, std::size_t batch) {
  return {batch, static_cast<std::size_t>(spec.T), spec.dims.n_ieta, spec.dims.n_iphi, spec.dims.n_depth};
}

}  // namespace

ForwardTrace GraphStadModel::trace(const ParameterStore& store, const Tensor& batch, const ForwardOptions& opts,
                                   bool requires_grad) const {
  const auto B = batch_of(spec_, batch);
  ForwardTrace tr;
  tr.graph = std::make_unique<ad::Graph>(requires_grad);
  tr.batch = B;
  Binder b{*tr.graph, store, requires_grad, opts.training, tr.params, tr.bn_updates, opts.check_finite};
  auto input = tr.graph->constant(batch);
  auto enc = encode_vars(b, input, B, opts);
  const LstmState* dec_init = opts.state_in ? &opts.state_in->decoder : nullptr;
  auto dec = decode_vars(b, enc.z, B, opts, dec_init);
  tr.recon = dec.recon;
  tr.mu = enc.mu;
  tr.logvar = enc.logvar;
  tr.z = enc.z;
  tr.state_out = {enc.state, dec.state};
  return tr;
}

ForwardResult GraphStadModel::forward(const ParameterStore& store, const Tensor& batch,
                                      const ForwardOptions& opts) const {
  auto tr = trace(store, batch, opts, false);
  ForwardResult r;
  r.recon = Tensor(output_shape(spec_, tr.batch), tr.recon.value().data);
  r.mu = tr.mu.value();
  r.logvar = tr.logvar.value();
  r.z = tr.z.value();
  r.state_out = std::move(tr.state_out);
  r.bn_updates = std::move(tr.bn_updates);
  return r;
}

EncodeResult GraphStadModel::encode(const ParameterStore& store, const Tensor& batch,
                                    const ForwardOptions& opts) const {
  const auto B = batch_of(spec_, batch);
  ad::Graph g(false);
  std::map<std::string, ad::Var, std::less<>> vars;
  EncodeResult r;
  Binder b{g, store, false, opts.training, vars, r.bn_updates, opts.check_finite};
  auto enc = encode_vars(b, g.constant(batch), B, opts);
  r.mu = enc.mu.value();
  r.logvar = enc.logvar.value();
  r.z = enc.z.value();
  r.state = std::move(enc.state);
  return r;
}

DecodeResult GraphStadModel::decode(const ParameterStore& store, const Tensor& z, std::size_t batch,
                                    const ForwardOptions& opts, const LstmState* state_in) const {
  const Shape expect{batch * static_cast<std::size_t>(spec_.T), spec_.latent_dim};
  if (z.shape != expect) throw ValidationError("latent has shape " + shape_str(z.shape) + ", expected " + shape_str(expect));
  ad::Graph g(false);
  std::map<std::string, ad::Var, std::less<>> vars;
  DecodeResult r;
  Binder b{g, store, false, opts.training, vars, r.bn_updates, opts.check_finite};
  auto dec = decode_vars(b, g.constant(z), batch, opts, state_in);
  r.recon = Tensor(output_shape(spec_, batch), dec.recon.value().data);
  r.state = std::move(dec.state);
  return r;
}

LossValue GraphStadModel::loss(ForwardTrace& tr, const ParameterStore& store, const Tensor& target,
                               const LossWeights& w) const {
  if (target.size() != tr.recon.value().size()) throw ValidationError("loss target size does not match the output");
  const Tensor flat(tr.recon.shape(), target.data);
  auto mse = ad::masked_mse(tr.recon, flat, mask_);
  auto kl = ad::gaussian_kl(tr.mu, tr.logvar);
  std::vector<std::pair<ad::Var, double>> terms{{mse, 1.0}, {kl, w.lambda}};
  std::vector<ad::Var> weights;
  for (const auto& [name, var] : tr.params)
    if (ParamName::parse(name).kind == ParamKind::Weight && store.at(name).trainable) weights.push_back(var);
  LossValue out;
  if (!weights.empty()) {
    auto l2 = ad::sum_squares(weights);
    terms.emplace_back(l2, w.rho);
    out.l2 = l2.item();
  }
  out.total = ad::weighted_sum(terms);
  out.mse = mse.item();
  out.kl = kl.item();
  return out;
}

void GraphStadModel::apply_bn_updates(ParameterStore& store, const std::vector<BnUpdate>& updates) const {
  const double m = spec_.bn_momentum;
  for (const auto& u : updates) {
    auto& rm = store.at(u.layer + ".bn_running_mean").tensor.data;
    auto& rv = store.at(u.layer + ".bn_running_var").tensor.data;
    const double n = static_cast<double>(u.stats.count);
    const double unbias = n > 1 ? n / (n - 1) : 1.0;
    for (std::size_t c = 0; c < rm.size(); ++c) {
      rm[c] = (1 - m) * rm[c] + m * u.stats.mean[c];
      rv[c] = (1 - m) * rv[c] + m * u.stats.var[c] * unbias;
    }
  }
}

json model_metadata(const GraphStadModel& model) {
  return {{"model_spec", model.spec().to_json()}, {"geometry", model.geometry()->to_json()}};
}

GraphStadModel model_from_metadata(const json& metadata) {
  if (!metadata.contains("model_spec") || !metadata.contains("geometry"))
    throw ConfigError("checkpoint metadata lacks model_spec/geometry");
  auto geo = std::make_shared<const SegmentationMap>(SegmentationMap::from_json(metadata.at("geometry")));
  return GraphStadModel(ModelSpec::from_json(metadata.at("model_spec")), geo);
}

}  // namespace graphstad
