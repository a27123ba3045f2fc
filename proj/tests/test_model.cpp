#include <gtest/gtest.h>

#include <random>
#include <set>

#include "graphstad/errors.hpp"
#include "graphstad/model.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace graphstad;

namespace {

Tensor random_batch(const ModelSpec& s, std::size_t B, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  Tensor x({B, static_cast<std::size_t>(s.T), s.dims.n_ieta, s.dims.n_iphi, s.dims.n_depth});
  for (auto& v : x.data) v = u(rng);
  return x;
}

GraphStadModel tiny_model(int T = 2) {
  const auto geo = gtest_util::custom_geometry(4, 6, 2, 4);
  return GraphStadModel(ModelSpec::for_geometry(*geo, T), geo);
}

}  // namespace

TEST(Model, HbHeShapeAudit) {
  const auto hb = gtest_util::standard_geometry(Subdetector::HB);
  const auto he = gtest_util::standard_geometry(Subdetector::HE);
  const auto a = GraphStadModel(ModelSpec::for_geometry(*hb), hb).parameter_shapes();
  const auto b = GraphStadModel(ModelSpec::for_geometry(*he), he).parameter_shapes();
  std::set<std::string> differing;
  for (const auto& [name, shape] : a) {
    ASSERT_TRUE(b.count(name)) << name;
    if (b.at(name) != shape) differing.insert(name);
  }
  EXPECT_EQ(a.size(), b.size());
  EXPECT_EQ(differing, (std::set<std::string>{"decoder.fc.1.weight", "encoder.fc.0.weight"}));
}

TEST(Model, InitIsDeterministicAndFloat32) {
  const auto m = tiny_model();
  const auto a = m.init_parameters(5), b = m.init_parameters(5), c = m.init_parameters(6);
  EXPECT_EQ(a, b);
  EXPECT_FALSE(a == c);
  for (const auto& [name, e] : a)
    for (double v : e.tensor.data) ASSERT_EQ(v, static_cast<double>(static_cast<float>(v))) << name;
  EXPECT_NO_THROW(m.check_store(a));
  ParameterStore missing;
  EXPECT_THROW(m.check_store(missing), ConfigError);
}

TEST(Model, ForwardShapesAndRange) {
  const auto m = tiny_model(3);
  const auto s = m.init_parameters(1);
  const auto x = random_batch(m.spec(), 2, 1);
  const auto r = m.forward(s, x);
  EXPECT_EQ(r.recon.shape, x.shape);
  EXPECT_EQ(r.mu.shape, (Shape{6, m.spec().latent_dim}));
  for (double v : r.recon.data) {
    ASSERT_GT(v, 0.0);
    ASSERT_LT(v, 1.0);
  }
  EXPECT_EQ(r.z, r.mu);
  EXPECT_EQ(r.state_out.encoder.h.shape, (Shape{2, m.spec().rnn_hidden}));
  EXPECT_TRUE(r.bn_updates.empty());
}

TEST(Model, EncodeDecodeComposeToForward) {
  const auto m = tiny_model(3);
  const auto s = m.init_parameters(2);
  const auto x = random_batch(m.spec(), 2, 2);
  const auto full = m.forward(s, x);
  const auto enc = m.encode(s, x);
  const auto dec = m.decode(s, enc.z, 2);
  EXPECT_EQ(enc.mu, full.mu);
  EXPECT_EQ(dec.recon, full.recon);
}

TEST(Model, BatchIndependenceInInference) {
  const auto m = tiny_model(2);
  const auto s = m.init_parameters(3);
  const auto x = random_batch(m.spec(), 3, 3);
  const auto both = m.forward(s, x);
  const std::size_t per = x.size() / 3;
  Tensor one({1, 2, 4, 6, 2}, std::vector<double>(x.data.begin() + per, x.data.begin() + 2 * per));
  const auto single = m.forward(s, one);
  for (std::size_t i = 0; i < per; ++i) ASSERT_NEAR(single.recon.data[i], both.recon.data[per + i], 1e-12);
}

TEST(Model, StateInputChangesOutput) {
  const auto m = tiny_model(2);
  const auto s = m.init_parameters(4);
  const auto x = random_batch(m.spec(), 1, 4);
  const auto first = m.forward(s, x);
  ForwardOptions o;
  o.state_in = &first.state_out;
  const auto second = m.forward(s, x, o);
  EXPECT_NE(second.recon, first.recon);
  RnnState zeros{{Tensor({1, 128}), Tensor({1, 128})}, {Tensor({1, 128}), Tensor({1, 128})}};
  o.state_in = &zeros;
  EXPECT_EQ(m.forward(s, x, o).recon, first.recon);
}

TEST(Model, TrainingModeSamplesAndRecordsBn) {
  const auto m = tiny_model(2);
  const auto s = m.init_parameters(5);
  const auto x = random_batch(m.spec(), 2, 5);
  std::mt19937_64 rng(1);
  ForwardOptions o;
  o.training = true;
  o.rng = &rng;
  const auto r = m.forward(s, x, o);
  EXPECT_NE(r.z, r.mu);
  EXPECT_FALSE(r.bn_updates.empty());
  auto updated = s;
  m.apply_bn_updates(updated, r.bn_updates);
  const auto& layer = r.bn_updates.front().layer;
  EXPECT_NE(updated.tensor(layer + ".bn_running_mean"), s.tensor(layer + ".bn_running_mean"));
}

TEST(Model, LossIdentityAtZero) {
  const auto m = tiny_model(2);
  auto s = m.init_parameters(6);
  for (auto& [name, e] : s)
    if (ParamName::parse(name).kind == ParamKind::Weight) std::fill(e.tensor.data.begin(), e.tensor.data.end(), 0.0);
  const auto x = random_batch(m.spec(), 2, 6);
  auto tr = m.trace(s, x, {}, true);
  tr.recon = tr.graph->constant(Tensor(tr.recon.shape(), x.data));
  tr.mu = tr.graph->constant(Tensor(tr.mu.shape(), 0.0));
  tr.logvar = tr.graph->constant(Tensor(tr.logvar.shape(), 0.0));
  const auto L = m.loss(tr, s, x);
  EXPECT_EQ(L.total.item(), 0.0);
  EXPECT_EQ(L.kl, 0.0);
  EXPECT_EQ(L.mse, 0.0);
  EXPECT_EQ(L.l2, 0.0);
}

TEST(Model, LossCombinesTerms) {
  const auto m = tiny_model(2);
  const auto s = m.init_parameters(7);
  const auto x = random_batch(m.spec(), 2, 7);
  auto tr = m.trace(s, x, {}, true);
  const LossWeights w{0.5, 0.25};
  const auto L = m.loss(tr, s, x, w);
  double l2 = 0;
  for (const auto& [name, e] : s)
    if (ParamName::parse(name).kind == ParamKind::Weight)
      for (double v : e.tensor.data) l2 += v * v;
  EXPECT_NEAR(L.l2, l2, 1e-9 * l2);
  EXPECT_NEAR(L.total.item(), L.mse + 0.5 * L.kl + 0.25 * L.l2, 1e-12);
}

TEST(Model, GradientMatchesFiniteDifferences) {
  const auto m = tiny_model(2);
  const auto s = m.init_parameters(8);
  const auto x = random_batch(m.spec(), 3, 8);
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n;
  Tensor noise({6, m.spec().latent_dim});
  for (auto& v : noise.data) v = n(rng);
  ForwardOptions o;
  o.training = true;
  o.noise = &noise;
  std::size_t checked = 0;
  for (const auto& r : gtest_util::model_gradient_check(m, s, x, o, {0.003, 1e-3}, 1)) {
    if (r.vanishing) {
      // conv biases feeding batch-statistics BN cancel in the normalisation
      const auto p = ParamName::parse(r.name);
      EXPECT_TRUE(p.block == "cnn" && p.kind == ParamKind::Bias) << r.name;
      continue;
    }
    ++checked;
    EXPECT_LT(r.rel, 1e-4) << r.name << " analytic " << r.analytic << " numeric " << r.numeric;
  }
  EXPECT_GT(checked, 20u);
}

TEST(Model, SpecJsonRoundTripAndValidation) {
  const auto m = tiny_model(2);
  const auto back = ModelSpec::from_json(m.spec().to_json());
  EXPECT_EQ(back.to_json(), m.spec().to_json());
  auto bad = m.spec();
  bad.cnn_channels.clear();
  EXPECT_THROW(bad.validate(), ConfigError);
  const auto rebuilt = model_from_metadata(model_metadata(m));
  EXPECT_EQ(rebuilt.parameter_shapes(), m.parameter_shapes());
}
