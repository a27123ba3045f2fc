#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "graphstad/errors.hpp"
#include "graphstad/train.hpp"
#include "graphstad/transfer.hpp"
#include "test_util.hpp"

using namespace graphstad;

namespace {

struct TinySetup {
  GeometryPtr geo = gtest_util::custom_geometry(4, 6, 2, 4);
  GraphStadModel model{ModelSpec::for_geometry(*geo, 2), geo};
  std::vector<Window> windows;

  TinySetup() {
    const auto raw = gtest_util::synthetic_run(geo, 40, 21);
    const auto pp = preprocess_sequence(raw, minmax_fit(renormalize_sequence(raw).maps));
    windows = make_windows(pp.maps, 2, 2);
  }
};

bool starts_with_any(const std::string& name, const std::vector<std::string>& prefixes) {
  for (const auto& p : prefixes)
    if (name.rfind(p + ".", 0) == 0) return true;
  return false;
}

}  // namespace

TEST(Transfer, ModeStringsRoundTrip) {
  for (auto m : {InitMode::Random, InitMode::TL4, InitMode::TL7}) EXPECT_EQ(init_mode_from_string(to_string(m)), m);
  for (auto m : {TrainMode::NoTL, TrainMode::TL1, TrainMode::TL2, TrainMode::TL2d, TrainMode::TL3, TrainMode::TL4,
                 TrainMode::TL5, TrainMode::TL6})
    EXPECT_EQ(train_mode_from_string(to_string(m)), m);
  EXPECT_EQ(train_mode_from_string("tl2d"), TrainMode::TL2d);
  EXPECT_THROW(train_mode_from_string("TL-9"), ConfigError);
}

TEST(Transfer, ValidCombinations) {
  EXPECT_NO_THROW((TLConfig{InitMode::Random, TrainMode::NoTL}.validate()));
  EXPECT_NO_THROW((TLConfig{InitMode::TL4, TrainMode::TL3}.validate()));
  EXPECT_NO_THROW((TLConfig{InitMode::TL7, TrainMode::TL6, true, true}.validate()));
  EXPECT_THROW((TLConfig{InitMode::Random, TrainMode::TL3}.validate()), ConfigError);
  EXPECT_THROW((TLConfig{InitMode::TL4, TrainMode::TL6}.validate()), ConfigError);
  EXPECT_THROW((TLConfig{InitMode::TL7, TrainMode::TL6, false, true}.validate()), ConfigError);
  EXPECT_THROW((TLConfig{InitMode::TL4, TrainMode::NoTL, true, false}.validate()), ConfigError);
}

TEST(Transfer, InitCopiesOnlyItsBlocks) {
  TinySetup t;
  const auto src = t.model.init_parameters(1);
  auto dst = t.model.init_parameters(2);
  const auto before = dst;
  const auto rep = transfer_init(src, dst, InitMode::TL4);
  EXPECT_TRUE(rep.skipped_shape.empty());
  for (const auto& [name, e] : dst) {
    if (starts_with_any(name, init_blocks(InitMode::TL4)))
      EXPECT_EQ(e.tensor, src.tensor(name)) << name;
    else
      EXPECT_EQ(e.tensor, before.tensor(name)) << name;
  }
  auto fresh = t.model.init_parameters(2);
  EXPECT_TRUE(transfer_init(src, fresh, InitMode::Random).copied.empty());
  EXPECT_EQ(fresh, before);
}

TEST(Transfer, FreezeFlagsAndExceptions) {
  TinySetup t;
  auto s = t.model.init_parameters(1);
  apply_freeze(s, {InitMode::TL7, TrainMode::TL5, true, false});
  for (const auto& [name, e] : s) {
    const auto kind = ParamName::parse(name).kind;
    if (is_running_stat(kind)) continue;
    const bool frozen_block = starts_with_any(name, freeze_prefixes(TrainMode::TL5));
    const bool bn = kind == ParamKind::BnScale || kind == ParamKind::BnShift;
    EXPECT_EQ(e.trainable, !frozen_block || bn) << name;
  }
}

TEST(Transfer, CountsAreOrdered) {
  TinySetup t;
  const auto base = t.model.init_parameters(1);
  auto reduction = [&](TLConfig c) {
    auto s = base;
    apply_freeze(s, c);
    return count_trainable(s).reduction;
  };
  EXPECT_EQ(reduction({}), 0.0);
  EXPECT_GT(reduction({InitMode::TL7, TrainMode::TL6}), reduction({InitMode::TL7, TrainMode::TL5}));
  EXPECT_GT(reduction({InitMode::TL4, TrainMode::TL3}), reduction({InitMode::TL4, TrainMode::TL2}));
  EXPECT_GT(reduction({InitMode::TL7, TrainMode::TL6}),
            reduction({InitMode::TL7, TrainMode::TL6, true, true}));
}

TEST(OneCycle, EndpointsAndPeak) {
  const OneCycleParams p;
  const std::size_t total = 100;
  EXPECT_NEAR(one_cycle_lr(0, total, p), 4e-5, 1e-12);
  EXPECT_NEAR(one_cycle_lr(29, total, p), 1e-3, 1e-12);
  EXPECT_NEAR(one_cycle_lr(99, total, p), 4e-7, 1e-12);
  double prev = 0;
  for (std::size_t s = 0; s <= 29; ++s) {
    EXPECT_GE(one_cycle_lr(s, total, p), prev);
    prev = one_cycle_lr(s, total, p);
  }
  for (std::size_t s = 30; s < total; ++s) {
    EXPECT_LE(one_cycle_lr(s, total, p), prev);
    prev = one_cycle_lr(s, total, p);
  }
  EXPECT_THROW(one_cycle_lr(100, total, p), ValidationError);
}

TEST(Train, SplitIsChronological) {
  std::vector<Window> w(10);
  for (std::size_t i = 0; i < w.size(); ++i) w[i].map_index = {i};
  const auto s = split_windows(w, 0.2);
  ASSERT_EQ(s.val.size(), 2u);
  EXPECT_EQ(s.val.front().map_index[0], 8u);
  EXPECT_EQ(split_windows(std::vector<Window>(2), 0.01).val.size(), 1u);
}

TEST(Train, ZeroEpochsReturnsInitialParameters) {
  TinySetup t;
  const auto init = t.model.init_parameters(3);
  TrainConfig cfg;
  cfg.T = 2;
  cfg.epochs = 0;
  const auto r = train(t.model, init, t.windows, cfg);
  EXPECT_EQ(r.best, init);
  EXPECT_EQ(r.history.best_epoch, 0);
  EXPECT_TRUE(r.history.epochs.empty());
}

TEST(Train, FixedScheduleTraceAndDeterminism) {
  TinySetup t;
  const auto init = t.model.init_parameters(4);
  TrainConfig cfg;
  cfg.T = 2;
  cfg.epochs = 2;
  cfg.seed = 9;
  const auto a = train(t.model, init, t.windows, cfg);
  const auto b = train(t.model, init, t.windows, cfg);
  EXPECT_EQ(a.last, b.last);
  for (double lr : a.history.lr_trace) EXPECT_EQ(lr, 1e-3);
  for (const auto& [name, e] : a.last)
    for (double v : e.tensor.data) ASSERT_EQ(v, static_cast<double>(static_cast<float>(v))) << name;
  ASSERT_EQ(a.history.epochs.size(), 2u);
  const auto best = a.history.epochs[static_cast<std::size_t>(a.history.best_epoch - 1)].val_mse;
  for (const auto& e : a.history.epochs) EXPECT_GE(e.val_mse, best);
}

TEST(Train, FrozenEntriesUntouched) {
  TinySetup t;
  auto init = t.model.init_parameters(5);
  apply_freeze(init, {InitMode::TL7, TrainMode::TL6});
  TrainConfig cfg;
  cfg.T = 2;
  cfg.epochs = 1;
  const auto r = train(t.model, init, t.windows, cfg);
  bool changed = false;
  for (const auto& [name, e] : init) {
    if (!e.trainable && !is_running_stat(ParamName::parse(name).kind)) {
      EXPECT_EQ(r.last.tensor(name), e.tensor) << name;
    }
    if (e.trainable && r.last.tensor(name) != e.tensor) changed = true;
  }
  EXPECT_TRUE(changed);
}

TEST(Train, ReducesLossOnTinyData) {
  TinySetup t;
  TrainConfig cfg;
  cfg.T = 2;
  cfg.epochs = 8;
  cfg.lr = 3e-3;
  const auto r = train(t.model, t.model.init_parameters(6), t.windows, cfg);
  EXPECT_LT(r.history.epochs.back().train_mse, r.history.epochs.front().train_mse);
  EXPECT_LT(evaluate_mse(t.model, r.best, t.windows), evaluate_mse(t.model, t.model.init_parameters(6), t.windows));
}

TEST(Train, RejectsBadConfig) {
  TrainConfig cfg;
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.val_fraction = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Train, DispersionSummary) {
  const auto s = repeat_experiments([](std::uint64_t seed) { return static_cast<double>(seed) * 0.5; }, {4, 2, 6});
  EXPECT_DOUBLE_EQ(s.mean, 2.0);
  EXPECT_DOUBLE_EQ(s.min, 1.0);
  EXPECT_DOUBLE_EQ(s.max, 3.0);
  EXPECT_EQ(s.best_index, 1u);
  EXPECT_THROW(repeat_experiments([](std::uint64_t) { return 0.0; }, {1}), ConfigError);
}
