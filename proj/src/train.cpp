#include "graphstad/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "graphstad/errors.hpp"
#include "graphstad/random.hpp"

namespace graphstad {

using nlohmann::json;

void TrainConfig::validate() const {
  if (!(lr > 0)) throw ConfigError("lr must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (T <= 0) throw ConfigError("T must be positive");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (!(val_fraction >= 0 && val_fraction < 1)) throw ConfigError("val_fraction must be in [0, 1)");
  if (!(one_cycle.max_lr > 0 && one_cycle.div_factor > 0 && one_cycle.final_div_factor > 0))
    throw ConfigError("one-cycle factors must be positive");
  if (!(one_cycle.pct_start > 0 && one_cycle.pct_start < 1)) throw ConfigError("pct_start must be in (0, 1)");
}

json TrainConfig::to_json() const {
  return {{"lr", lr},
          {"batch_size", batch_size},
          {"T", T},
          {"epochs", epochs},
          {"schedule", schedule == Schedule::Fixed ? "fixed" : "one_cycle"},
          {"one_cycle",
           {{"max_lr", one_cycle.max_lr},
            {"div_factor", one_cycle.div_factor},
            {"final_div_factor", one_cycle.final_div_factor},
            {"pct_start", one_cycle.pct_start}}},
          {"val_fraction", val_fraction},
          {"lambda", loss.lambda},
          {"rho", loss.rho},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.T = j.value("T", c.T);
  c.epochs = j.value("epochs", c.epochs);
  const auto sched = j.value("schedule", std::string("fixed"));
  if (sched == "fixed")
    c.schedule = Schedule::Fixed;
  else if (sched == "one_cycle")
    c.schedule = Schedule::OneCycle;
  else
    throw ConfigError("unknown schedule '" + sched + "'");
  if (j.contains("one_cycle")) {
    const auto& o = j.at("one_cycle");
    c.one_cycle.max_lr = o.value("max_lr", c.one_cycle.max_lr);
    c.one_cycle.div_factor = o.value("div_factor", c.one_cycle.div_factor);
    c.one_cycle.final_div_factor = o.value("final_div_factor", c.one_cycle.final_div_factor);
    c.one_cycle.pct_start = o.value("pct_start", c.one_cycle.pct_start);
  }
  c.val_fraction = j.value("val_fraction", c.val_fraction);
  c.loss.lambda = j.value("lambda", c.loss.lambda);
  c.loss.rho = j.value("rho", c.loss.rho);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

double one_cycle_lr(std::size_t step, std::size_t total_steps, const OneCycleParams& p) {
  if (total_steps < 2) throw ValidationError("one-cycle schedule needs at least two steps");
  if (step >= total_steps)
    throw ValidationError("step " + std::to_string(step) + " outside schedule of " + std::to_string(total_steps));
  const double initial = p.max_lr / p.div_factor;
  const double min_lr = initial / p.final_div_factor;
  const double peak_step = p.pct_start * static_cast<double>(total_steps) - 1.0;
  const double last_step = static_cast<double>(total_steps) - 1.0;
  auto anneal = [](double start, double end, double pct) { return end + (start - end) / 2.0 * (std::cos(M_PI * pct) + 1.0); };
  const double s = static_cast<double>(step);
  if (s <= peak_step) return peak_step <= 0 ? p.max_lr : anneal(initial, p.max_lr, s / peak_step);
  const double lo = std::max(peak_step, 0.0);
  return anneal(p.max_lr, min_lr, (s - lo) / (last_step - lo));
}

void TrainHistory::write_csv(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os.precision(10);
  os << "epoch,train_mse,train_kl,train_l2,val_mse,lr\n";
  for (const auto& e : epochs)
    os << e.epoch << ',' << e.train_mse << ',' << e.train_kl << ',' << e.train_l2 << ',' << e.val_mse << ',' << e.lr
       << '\n';
}

WindowSplit split_windows(std::vector<Window> windows, double val_fraction) {
  const auto n = windows.size();
  std::size_t n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
  if (val_fraction > 0 && n >= 2) n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
  if (n_val > n) n_val = n;
  WindowSplit s;
  s.val.assign(std::make_move_iterator(windows.end() - static_cast<std::ptrdiff_t>(n_val)),
               std::make_move_iterator(windows.end()));
  windows.resize(n - n_val);
  s.train = std::move(windows);
  return s;
}

Tensor stack_windows(const std::vector<const Window*>& windows, const Dims& dims) {
  if (windows.empty()) throw ValidationError("cannot stack zero windows");
  const auto T = windows.front()->data.shape.at(0);
  Tensor out({windows.size(), T, dims.n_ieta, dims.n_iphi, dims.n_depth});
  const auto per = T * dims.cells();
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (windows[i]->data.size() != per) throw ValidationError("window shape does not match the model");
    std::copy(windows[i]->data.data.begin(), windows[i]->data.data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

double evaluate_mse(const GraphStadModel& model, const ParameterStore& store, const std::vector<Window>& windows,
                    std::size_t batch_size) {
  if (windows.empty()) throw ValidationError("no windows to evaluate");
  const auto& mask = model.loss_mask();
  const double mask_total = std::accumulate(mask.begin(), mask.end(), 0.0);
  const auto cells = mask.size();
  double total = 0.0;
  std::size_t rows = 0;
  for (std::size_t b = 0; b < windows.size(); b += batch_size) {
    std::vector<const Window*> part;
    for (std::size_t i = b; i < std::min(windows.size(), b + batch_size); ++i) part.push_back(&windows[i]);
    const auto x = stack_windows(part, model.spec().dims);
    const auto r = model.forward(store, x);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = r.recon.data[i] - x.data[i];
      total += mask[i % cells] * d * d;
    }
    rows += x.size() / cells;
  }
  return total / (static_cast<double>(rows) * mask_total);
}

TrainResult train(const GraphStadModel& model, const ParameterStore& init, const std::vector<Window>& windows,
                  const TrainConfig& cfg, const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  if (cfg.T != model.spec().T) throw ConfigError("train T does not match the model");
  model.check_store(init);
  TrainResult result{init, init, {}};
  if (windows.empty()) throw ValidationError("no training windows");
  auto split = split_windows(windows, cfg.val_fraction);
  if (split.train.empty()) throw ValidationError("validation split leaves no training windows");
  const auto& val = split.val.empty() ? split.train : split.val;
  result.history.initial_val_mse = evaluate_mse(model, init, val);
  if (cfg.epochs == 0) return result;

  ParameterStore params = init;
  params.round_to_float32();
  std::vector<std::string> trainable;
  for (const auto& [name, e] : params)
    if (e.trainable) trainable.push_back(name);
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments;
  for (const auto& n : trainable)
    moments[n] = {std::vector<double>(params.tensor(n).size(), 0.0), std::vector<double>(params.tensor(n).size(), 0.0)};

  auto shuffle_rng = substream(cfg.seed, "shuffle");
  auto sample_rng = substream(cfg.seed, "sampling");
  const auto n_train = split.train.size();
  const auto steps_per_epoch = (n_train + cfg.batch_size - 1) / cfg.batch_size;
  const auto total_steps = steps_per_epoch * static_cast<std::size_t>(cfg.epochs);
  std::vector<std::size_t> order(n_train);
  std::size_t step = 0;
  double best_val = result.history.initial_val_mse;
  bool have_best = false;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
      std::vector<const Window*> part;
      for (std::size_t i = s * cfg.batch_size; i < std::min(n_train, (s + 1) * cfg.batch_size); ++i)
        part.push_back(&split.train[order[i]]);
      const auto x = stack_windows(part, model.spec().dims);
      ForwardOptions opts;
      opts.training = true;
      opts.rng = &sample_rng;
      auto tr = model.trace(params, x, opts, true);
      auto loss = model.loss(tr, params, x, cfg.loss);
      const double total = loss.total.item();
      if (!std::isfinite(total))
        throw NumericFault("non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(s));
      tr.graph->backward(loss.total);

      const double lr = cfg.schedule == Schedule::Fixed ? cfg.lr : one_cycle_lr(step, total_steps, cfg.one_cycle);
      result.history.lr_trace.push_back(lr);
      const double t = static_cast<double>(step + 1);
      const double c1 = 1.0 - std::pow(cfg.adam_beta1, t);
      const double c2 = 1.0 - std::pow(cfg.adam_beta2, t);
      for (const auto& name : trainable) {
        auto it = tr.params.find(name);
        if (it == tr.params.end()) continue;
        const auto g = tr.graph->grad(it->second);
        auto& p = params.at(name).tensor.data;
        auto& [m, v] = moments[name];
        for (std::size_t i = 0; i < p.size(); ++i) {
          m[i] = cfg.adam_beta1 * m[i] + (1 - cfg.adam_beta1) * g.data[i];
          v[i] = cfg.adam_beta2 * v[i] + (1 - cfg.adam_beta2) * g.data[i] * g.data[i];
          p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.adam_eps);
          p[i] = static_cast<double>(static_cast<float>(p[i]));
        }
      }
      model.apply_bn_updates(params, tr.bn_updates);
      for (const auto& u : tr.bn_updates)
        for (const char* k : {".bn_running_mean", ".bn_running_var"})
          for (double& v : params.at(u.layer + k).tensor.data) v = static_cast<double>(static_cast<float>(v));

      rec.train_mse += loss.mse;
      rec.train_kl += loss.kl;
      rec.train_l2 += loss.l2;
      rec.lr = lr;
    }
    const double n = static_cast<double>(steps_per_epoch);
    rec.train_mse /= n;
    rec.train_kl /= n;
    rec.train_l2 /= n;
    rec.val_mse = evaluate_mse(model, params, val);
    if (!have_best || rec.val_mse < best_val) {
      best_val = rec.val_mse;
      result.best = params;
      result.history.best_epoch = epoch;
      have_best = true;
    }
    result.history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  result.last = std::move(params);
  return result;
}

DispersionSummary repeat_experiments(const std::function<double(std::uint64_t)>& run_once,
                                     const std::vector<std::uint64_t>& seeds) {
  if (seeds.size() < 2) throw ConfigError("repeat_experiments needs at least two repetitions");
  DispersionSummary s;
  for (auto seed : seeds) s.test_mse.push_back(run_once(seed));
  s.min = *std::min_element(s.test_mse.begin(), s.test_mse.end());
  s.max = *std::max_element(s.test_mse.begin(), s.test_mse.end());
  s.mean = std::accumulate(s.test_mse.begin(), s.test_mse.end(), 0.0) / static_cast<double>(s.test_mse.size());
  s.best_index = static_cast<std::size_t>(std::min_element(s.test_mse.begin(), s.test_mse.end()) - s.test_mse.begin());
  return s;
}

}  // namespace graphstad
