#include "graphstad/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "graphstad/checkpoint.hpp"
#include "graphstad/errors.hpp"
#include "graphstad/map_io.hpp"
#include "graphstad/random.hpp"
#include "graphstad/synthgen.hpp"

namespace graphstad {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw IoError("cannot read " + p.string());
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream os(p);
  if (!os) throw IoError("cannot write " + p.string());
  os << j.dump(2) << '\n';
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json coords_json(const std::vector<ChannelCoord>& cs) {
  json a = json::array();
  for (const auto& c : cs) a.push_back({c.ieta, c.iphi, c.depth});
  return a;
}

std::vector<ChannelCoord> coords_from_json(const json& j) {
  std::vector<ChannelCoord> out;
  for (const auto& c : j) {
    if (c.is_array())
      out.push_back({c.at(0).get<int>(), c.at(1).get<int>(), c.at(2).get<int>()});
    else
      out.push_back({c.at("ieta").get<int>(), c.at("iphi").get<int>(), c.at("depth").get<int>()});
  }
  return out;
}

}  // namespace

std::string file_hash(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return hex64(fnv1a(ss.str()));
}

GeometryPtr DataConfig::geometry() const {
  if (subdetector == Subdetector::Custom) {
    if (!dims) throw ConfigError("custom geometry needs dims");
    return std::make_shared<const SegmentationMap>(make_geometry(subdetector, rbx_count, dims));
  }
  return std::make_shared<const SegmentationMap>(make_geometry(subdetector, rbx_count));
}

void DataConfig::validate() const {
  if (n_ls <= 0) throw ConfigError("data.n_ls must be positive");
  const int tr = train_count();
  if (tr <= 0 || tr >= n_ls) throw ConfigError("data.train_ls must leave both a training and a test part");
  if (spike_prob < 0 || spike_prob > 1) throw ConfigError("data.spike_prob outside [0,1]");
  const auto geo = geometry();
  for (const auto& c : contaminate) {
    const auto cell = geo->cell_of(c);
    if (!cell || !geo->is_valid(*cell)) throw ConfigError("contamination coordinate " + to_string(c) + " is not a channel");
  }
}

json DataConfig::to_json() const {
  json j{{"subdetector", to_string(subdetector)},
         {"rbx_count", rbx_count},
         {"n_ls", n_ls},
         {"train_ls", train_ls},
         {"run_id", run_id},
         {"spike_prob", spike_prob},
         {"contaminate", coords_json(contaminate)},
         {"contaminate_test", contaminate_test}};
  if (dims) j["dims"] = {dims->n_ieta, dims->n_iphi, dims->n_depth};
  return j;
}

DataConfig DataConfig::from_json(const json& j) {
  DataConfig c;
  c.subdetector = subdetector_from_string(j.value("subdetector", std::string("custom")));
  if (j.contains("dims")) {
    const auto d = j.at("dims").get<std::vector<std::size_t>>();
    if (d.size() != 3) throw ConfigError("data.dims needs three entries");
    c.dims = Dims{d[0], d[1], d[2]};
  }
  c.rbx_count = j.value("rbx_count", c.rbx_count);
  c.n_ls = j.value("n_ls", c.n_ls);
  c.train_ls = j.value("train_ls", c.train_ls);
  c.run_id = j.value("run_id", c.run_id);
  c.spike_prob = j.value("spike_prob", c.spike_prob);
  if (j.contains("contaminate")) c.contaminate = coords_from_json(j.at("contaminate"));
  c.contaminate_test = j.value("contaminate_test", c.contaminate_test);
  return c;
}

json EvalConfig::to_json() const {
  json cs = json::array();
  for (const auto& c : cases) cs.push_back({{"kind", to_string(c.kind)}, {"rd", c.rd}});
  return {{"cases", cs},
          {"samples_per_case", samples_per_case},
          {"anomalous_fraction", anomalous_fraction},
          {"state_mode", to_string(state_mode)},
          {"captures", captures},
          {"skip_overflow", skip_overflow}};
}

EvalConfig EvalConfig::from_json(const json& j) {
  EvalConfig c;
  if (j.contains("cases")) {
    c.cases.clear();
    for (const auto& x : j.at("cases"))
      c.cases.push_back({anomaly_kind_from_string(x.at("kind").get<std::string>()), x.value("rd", 0.0)});
  }
  c.samples_per_case = j.value("samples_per_case", c.samples_per_case);
  c.anomalous_fraction = j.value("anomalous_fraction", c.anomalous_fraction);
  c.state_mode = state_mode_from_string(j.value("state_mode", std::string("reset")));
  c.captures = j.value("captures", c.captures);
  c.skip_overflow = j.value("skip_overflow", c.skip_overflow);
  return c;
}

std::uint64_t ExperimentConfig::resolved_data_seed() const {
  return data_seed ? *data_seed : substream_seed(seed, "data");
}

void ExperimentConfig::validate() const {
  if (experiment_id.empty() || experiment_id.find('/') != std::string::npos)
    throw ConfigError("experiment_id must be a plain name");
  tl.validate();
  data.validate();
  train.validate();
  if (tl.init_mode != InitMode::Random) {
    if (!source_data) throw ConfigError("transfer init mode " + to_string(tl.init_mode) + " needs a source_data section");
    source_data->validate();
    source_train.validate();
    if (source_train.T != train.T) throw ConfigError("source and target T differ");
  }
  for (const auto& c : eval.cases) AnomalySpec{c.kind, c.rd, 1, 1, true, train.T, false, 0}.validate();
  for (double r : eval.captures)
    if (!(r > 0 && r <= 1)) throw ConfigError("capture rates must be in (0, 1]");
  model_spec_for(*this, *data.geometry()).validate();
}

json ExperimentConfig::to_json() const {
  json j{{"experiment_id", experiment_id},
         {"seed", seed},
         {"output_root", output_root.string()},
         {"data", data.to_json()},
         {"model", model},
         {"train", train.to_json()},
         {"transfer", tl.to_json()},
         {"source_train", source_train.to_json()},
         {"eval", eval.to_json()},
         {"run_eval", run_eval},
         {"repeat_seeds", repeat_seeds}};
  if (data_seed) j["data_seed"] = *data_seed;
  if (source_data) j["source_data"] = source_data->to_json();
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  try {
    c.experiment_id = j.value("experiment_id", c.experiment_id);
    c.seed = j.value("seed", c.seed);
    if (j.contains("data_seed")) c.data_seed = j.at("data_seed").get<std::uint64_t>();
    c.output_root = j.value("output_root", std::string("runs"));
    if (j.contains("data")) c.data = DataConfig::from_json(j.at("data"));
    c.model = j.value("model", json::object());
    if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
    if (j.contains("transfer")) c.tl = TLConfig::from_json(j.at("transfer"));
    if (j.contains("source_data")) c.source_data = DataConfig::from_json(j.at("source_data"));
    c.source_train = j.contains("source_train") ? TrainConfig::from_json(j.at("source_train")) : c.train;
    if (j.contains("eval")) c.eval = EvalConfig::from_json(j.at("eval"));
    c.run_eval = j.value("run_eval", c.run_eval);
    c.repeat_seeds = j.value("repeat_seeds", c.repeat_seeds);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed experiment config: ") + e.what());
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  auto c = from_json(read_json(path));
  c.validate();
  return c;
}

DataSplit generate_dataset(const DataConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  auto profile = make_profile(cfg.geometry(), cfg.n_ls, seed);
  profile.run_id = cfg.run_id;
  profile.spike_prob = cfg.spike_prob;
  const auto seq = generate_run(profile);
  const auto n_train = static_cast<std::size_t>(cfg.train_count());
  DataSplit s{seq.slice(0, n_train), seq.slice(n_train, seq.size())};
  if (!cfg.contaminate.empty()) {
    s.train = contaminate(std::move(s.train), cfg.contaminate);
    if (cfg.contaminate_test) s.test = contaminate(std::move(s.test), cfg.contaminate);
  }
  return s;
}

ModelSpec model_spec_for(const ExperimentConfig& cfg, const SegmentationMap& geometry) {
  json j = ModelSpec::for_geometry(geometry, cfg.train.T).to_json();
  for (const auto& [k, v] : cfg.model.items()) {
    if (k == "dims" || k == "T") throw ConfigError("model." + k + " follows the data and train sections");
    j[k] = v;
  }
  return ModelSpec::from_json(j);
}

namespace {

class Manifest {
 public:
  Manifest(fs::path dir, const std::string& config_hash) : dir_(std::move(dir)) {
    const auto p = dir_ / "manifest.json";
    if (fs::exists(p)) {
      doc_ = read_json(p);
      if (doc_.value("config_hash", std::string()) != config_hash) doc_ = json::object();
    }
    doc_["config_hash"] = config_hash;
    if (!doc_.contains("stages")) doc_["stages"] = json::object();
  }

  bool done(const std::string& stage) const {
    const auto& st = doc_.at("stages");
    if (!st.contains(stage) || st.at(stage).value("status", "") != "done") return false;
    for (const auto& [path, hash] : st.at(stage).at("outputs").items()) {
      const auto p = dir_ / path;
      if (!fs::exists(p) || file_hash(p) != hash.get<std::string>()) return false;
    }
    return true;
  }

  void begin(const std::string& stage) {
    doc_["stages"][stage] = {{"status", "running"}, {"outputs", json::object()}};
    start_ = std::chrono::steady_clock::now();
    save();
  }

  void finish(const std::string& stage, const std::vector<fs::path>& outputs, const json& extra = json::object()) {
    auto& st = doc_["stages"][stage];
    for (const auto& o : outputs) st["outputs"][fs::relative(o, dir_).generic_string()] = file_hash(o);
    st["status"] = "done";
    st["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    for (const auto& [k, v] : extra.items()) st[k] = v;
    save();
  }

  void fail(const std::string& stage, const std::string& what) {
    doc_["stages"][stage]["status"] = "failed";
    doc_["stages"][stage]["error"] = what;
    save();
  }

  json& doc() { return doc_; }
  void save() const { write_json(dir_ / "manifest.json", doc_); }

 private:
  fs::path dir_;
  json doc_ = json::object();
  std::chrono::steady_clock::time_point start_;
};

std::vector<fs::path> dir_files(const fs::path& d) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(d))
    if (e.is_regular_file()) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

void log(bool quiet, const std::string& msg) {
  if (!quiet) std::cerr << "[pipeline] " << msg << std::endl;
}

std::vector<Window> model_windows(const PreprocessedSequence& pp, int T) { return make_windows(pp.maps, T, T); }

struct TrainedModel {
  ParameterStore best;
  TrainHistory history;
};

TrainHistory read_history(const fs::path& csv, const json& summary) {
  TrainHistory h;
  std::ifstream is(csv);
  if (!is) throw IoError("cannot read " + csv.string());
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    std::stringstream ss(line);
    EpochRecord r;
    char comma;
    ss >> r.epoch >> comma >> r.train_mse >> comma >> r.train_kl >> comma >> r.train_l2 >> comma >> r.val_mse >>
        comma >> r.lr;
    h.epochs.push_back(r);
  }
  h.best_epoch = summary.value("best_epoch", 0);
  h.initial_val_mse = summary.value("initial_val_mse", 0.0);
  return h;
}

}  // namespace

PipelineSummary run_pipeline(const ExperimentConfig& cfg, bool quiet) {
  cfg.validate();
  const fs::path dir = cfg.output_root / cfg.experiment_id;
  fs::create_directories(dir);
  const auto cfg_json = cfg.to_json();
  const auto cfg_hash = hex64(fnv1a(cfg_json.dump()));
  write_json(dir / "config.json", cfg_json);
  Manifest manifest(dir, cfg_hash);
  const auto data_seed = cfg.resolved_data_seed();
  manifest.doc()["seeds"] = {{"root", cfg.seed},
                             {"data", data_seed},
                             {"source_data", substream_seed(cfg.seed, "source-data")},
                             {"init", substream_seed(cfg.seed, "init")},
                             {"source_init", substream_seed(cfg.seed, "source-init")},
                             {"train", substream_seed(cfg.seed, "train")},
                             {"source_train", substream_seed(cfg.seed, "source-train")},
                             {"injection", substream_seed(cfg.seed, "injection")}};
  manifest.save();

  auto stage = [&](const std::string& name, auto&& fn) {
    try {
      return fn();
    } catch (const std::exception& e) {
      manifest.fail(name, e.what());
      throw;
    }
  };

  const bool transfer = cfg.tl.init_mode != InitMode::Random;
  const int T = cfg.train.T;

  // --- data
  DataSplit target, source;
  stage("data", [&] {
    const auto tdir = dir / "data" / "target";
    const auto sdir = dir / "data" / "source";
    if (manifest.done("data")) {
      log(quiet, "data: reusing");
      const auto all_t = load_runs(tdir / "train");
      target = {all_t, load_runs(tdir / "test")};
      if (transfer) source = {load_runs(sdir / "train"), load_runs(sdir / "test")};
      return 0;
    }
    manifest.begin("data");
    log(quiet, "data: generating");
    target = generate_dataset(cfg.data, data_seed);
    fs::remove_all(dir / "data");
    save_runs(target.train, tdir / "train");
    save_runs(target.test, tdir / "test");
    if (transfer) {
      source = generate_dataset(*cfg.source_data, substream_seed(cfg.seed, "source-data"));
      save_runs(source.train, sdir / "train");
      save_runs(source.test, sdir / "test");
    }
    manifest.finish("data", dir_files(dir / "data"));
    return 0;
  });
  const auto geometry = target.train.geometry;

  // --- preprocess
  MinMaxCalib target_calib, source_calib;
  stage("preprocess", [&] {
    const auto p = dir / "preprocess";
    if (manifest.done("preprocess")) {
      target_calib = MinMaxCalib::from_json(read_json(p / "minmax.json"));
      if (transfer) source_calib = MinMaxCalib::from_json(read_json(p / "source_minmax.json"));
      return 0;
    }
    manifest.begin("preprocess");
    fs::create_directories(p);
    target_calib = minmax_fit(renormalize_sequence(target.train).maps);
    write_json(p / "minmax.json", target_calib.to_json());
    std::vector<fs::path> outs{p / "minmax.json"};
    if (transfer) {
      source_calib = minmax_fit(renormalize_sequence(source.train).maps);
      write_json(p / "source_minmax.json", source_calib.to_json());
      outs.push_back(p / "source_minmax.json");
    }
    manifest.finish("preprocess", outs);
    return 0;
  });
  const auto train_pp = preprocess_sequence(target.train, target_calib);
  const auto test_pp = preprocess_sequence(target.test, target_calib);
  const auto train_windows = model_windows(train_pp, T);
  const auto test_windows = model_windows(test_pp, T);

  const GraphStadModel model(model_spec_for(cfg, *geometry), geometry);
  auto meta = model_metadata(model);
  meta["minmax"] = target_calib.to_json();

  // --- source training
  ParameterStore source_params;
  if (transfer) {
    stage("source_train", [&] {
      const auto p = dir / "source";
      if (manifest.done("source_train")) {
        source_params = load_checkpoint(p / "ckpt").store;
        return 0;
      }
      manifest.begin("source_train");
      log(quiet, "source_train: training");
      const GraphStadModel smodel(model_spec_for(cfg, *source.train.geometry), source.train.geometry);
      const auto spp = preprocess_sequence(source.train, source_calib);
      auto tc = cfg.source_train;
      tc.seed = substream_seed(cfg.seed, "source-train");
      auto r = train(smodel, smodel.init_parameters(substream_seed(cfg.seed, "source-init")), model_windows(spp, T), tc,
                     [&](const EpochRecord& e) {
                       log(quiet, "source epoch " + std::to_string(e.epoch) + " val_mse " + std::to_string(e.val_mse));
                     });
      fs::create_directories(p);
      save_checkpoint(r.best, p / "ckpt", model_metadata(smodel));
      r.history.write_csv(p / "history.csv");
      source_params = load_checkpoint(p / "ckpt").store;
      manifest.finish("source_train", {p / "ckpt" / "manifest.json", p / "ckpt" / "params.bin", p / "history.csv"});
      return 0;
    });
  }

  // --- transfer (initial target parameters + freeze flags)
  ParameterStore init_params;
  stage("transfer", [&] {
    const auto p = dir / "transfer";
    if (manifest.done("transfer")) {
      init_params = load_checkpoint(p / "init_ckpt").store;
      return 0;
    }
    manifest.begin("transfer");
    init_params = model.init_parameters(substream_seed(cfg.seed, "init"));
    const auto report = transfer_init(source_params, init_params, cfg.tl.init_mode);
    apply_freeze(init_params, cfg.tl);
    const auto count = count_trainable(init_params);
    fs::create_directories(p);
    save_checkpoint(init_params, p / "init_ckpt", meta);
    json rep = report.to_json();
    rep["trainable"] = count.trainable;
    rep["total"] = count.total;
    rep["reduction"] = count.reduction;
    rep["config"] = cfg.tl.to_json();
    write_json(p / "report.json", rep);
    manifest.finish("transfer", {p / "init_ckpt" / "manifest.json", p / "init_ckpt" / "params.bin", p / "report.json"});
    return 0;
  });

  // --- target training
  TrainedModel trained;
  double test_mse = 0;
  json train_summary;
  stage("train", [&] {
    const auto p = dir / "train";
    if (manifest.done("train")) {
      trained.best = load_checkpoint(p / "ckpt").store;
      train_summary = read_json(p / "summary.json");
      trained.history = read_history(p / "history.csv", train_summary);
      test_mse = train_summary.at("test_mse").get<double>();
      return 0;
    }
    manifest.begin("train");
    log(quiet, "train: training target");
    auto tc = cfg.train;
    tc.seed = substream_seed(cfg.seed, "train");
    auto r = train(model, init_params, train_windows, tc, [&](const EpochRecord& e) {
      log(quiet, "epoch " + std::to_string(e.epoch) + " train_mse " + std::to_string(e.train_mse) + " val_mse " +
                     std::to_string(e.val_mse));
    });
    fs::create_directories(p);
    save_checkpoint(r.best, p / "ckpt", meta);
    r.history.write_csv(p / "history.csv");
    trained.best = load_checkpoint(p / "ckpt").store;
    trained.history = r.history;
    test_mse = evaluate_mse(model, trained.best, test_windows);
    train_summary = {{"best_epoch", r.history.best_epoch},
                     {"initial_val_mse", r.history.initial_val_mse},
                     {"final_val_mse", r.history.epochs.empty() ? r.history.initial_val_mse
                                                                : r.history.epochs.back().val_mse},
                     {"test_mse", test_mse}};
    write_json(p / "summary.json", train_summary);
    manifest.finish("train", {p / "ckpt" / "manifest.json", p / "ckpt" / "params.bin", p / "history.csv",
                              p / "summary.json"});
    return 0;
  });

  PipelineSummary out;
  out.dir = dir;
  out.test_mse = test_mse;
  out.best_epoch = trained.history.best_epoch;
  out.final_val_mse = train_summary.value("final_val_mse", 0.0);

  // --- repeated experiments (dispersion rows)
  std::vector<double> repeat_mse;
  if (!cfg.repeat_seeds.empty()) {
    stage("repeats", [&] {
      const auto p = dir / "repeats.csv";
      if (manifest.done("repeats")) {
        std::ifstream is(p);
        std::string line;
        std::getline(is, line);
        while (std::getline(is, line)) {
          const auto comma = line.find(',');
          if (line.rfind("seed", 0) == 0 || comma == std::string::npos) continue;
          if (line.rfind("avg", 0) == 0 || line.rfind("best", 0) == 0) continue;
          repeat_mse.push_back(std::stod(line.substr(comma + 1)));
        }
        return 0;
      }
      manifest.begin("repeats");
      std::vector<std::uint64_t> seeds = cfg.repeat_seeds;
      if (seeds.size() < 2) throw ConfigError("repeat_seeds needs at least two seeds");
      const auto summary = repeat_experiments(
          [&](std::uint64_t s) {
            log(quiet, "repeat seed " + std::to_string(s));
            auto init = model.init_parameters(substream_seed(s, "init"));
            transfer_init(source_params, init, cfg.tl.init_mode);
            apply_freeze(init, cfg.tl);
            auto tc = cfg.train;
            tc.seed = substream_seed(s, "train");
            auto r = train(model, init, train_windows, tc);
            return evaluate_mse(model, r.best, test_windows);
          },
          seeds);
      std::ofstream os(p);
      os.precision(10);
      os << "seed,test_mse\n";
      for (std::size_t i = 0; i < seeds.size(); ++i) os << seeds[i] << ',' << summary.test_mse[i] << '\n';
      os << "avg," << summary.mean << "\nbest," << summary.min << "\nworst," << summary.max << '\n';
      os.close();
      repeat_mse = summary.test_mse;
      manifest.finish("repeats", {p});
      return 0;
    });
  }

  // --- calibration, injection, scoring, evaluation
  if (cfg.run_eval) {
    SigmaCalib sigma;
    std::vector<double> train_mean(geometry->dims().cells(), 0.0);
    stage("calibrate", [&] {
      const auto p = dir / "score";
      if (manifest.done("calibrate")) {
        sigma = SigmaCalib::from_json(read_json(p / "sigma.json"));
        train_mean = read_json(p / "train_mean_error.json").get<std::vector<double>>();
        return 0;
      }
      manifest.begin("calibrate");
      const auto errs = series_errors(model, trained.best, target_calib, train_pp, train_windows, cfg.eval.state_mode);
      sigma = calibrate_sigma(errs.errors, *geometry, cfg.eval.state_mode);
      for (const auto& e : errs.errors)
        for (std::size_t c = 0; c < e.size(); ++c) train_mean[c] += e[c] / static_cast<double>(errs.errors.size());
      fs::create_directories(p);
      write_json(p / "sigma.json", sigma.to_json());
      write_json(p / "train_mean_error.json", train_mean);
      manifest.finish("calibrate", {p / "sigma.json", p / "train_mean_error.json"});
      return 0;
    });

    EvalSuite suite;
    stage("inject", [&] {
      const auto p = dir / "inject" / "suite.json";
      if (manifest.done("inject")) {
        suite = EvalSuite::from_json(read_json(p));
        return 0;
      }
      manifest.begin("inject");
      suite = build_eval_suite(target.test, cfg.eval.cases, cfg.eval.samples_per_case, cfg.eval.anomalous_fraction, T,
                               substream_seed(cfg.seed, "injection"), cfg.eval.skip_overflow);
      fs::create_directories(p.parent_path());
      write_json(p, suite.to_json());
      manifest.finish("inject", {p}, {{"maps", suite.total_maps()}, {"anomalous_fraction", suite.anomalous_fraction}});
      return 0;
    });

    stage("evaluate", [&] {
      manifest.begin("evaluate");
      log(quiet, "evaluate: scoring " + std::to_string(suite.total_maps()) + " maps");
      SuiteScoringInputs in{&model, &trained.best, &target_calib, &sigma, &target.test, &suite};
      const auto cases = score_suite(in);
      const auto p = dir / "eval";
      fs::create_directories(p);
      for (const auto& cs : cases) {
        auto rows = case_metrics(cs, *geometry, cfg.eval.captures);
        out.metrics.insert(out.metrics.end(), rows.begin(), rows.end());
      }
      write_metrics_csv(out.metrics, p / "metrics.csv");
      ReportInputs ri;
      ri.geometry = geometry.get();
      ri.cases = &cases;
      ri.train_mean_error = train_mean;
      const auto bundle = error_reports(ri, p / "report");
      std::vector<fs::path> outs{p / "metrics.csv", bundle.histograms, bundle.train_mean_error, bundle.proximity};
      if (!cfg.data.contaminate.empty()) {
        const auto dead = std::find_if(cases.begin(), cases.end(),
                                       [](const CaseScores& c) { return c.c.kind == AnomalyKind::Dead; });
        if (dead == cases.end()) throw ConfigError("a contaminated dataset needs the dead case in the eval suite");
        const auto rep = contamination_report(*geometry, cfg.data.contaminate, train_mean, *dead);
        write_contamination_csv(rep, p / "report" / "contamination.csv");
        write_json(p / "report" / "contamination.json", rep.to_json());
        outs.push_back(p / "report" / "contamination.csv");
        outs.push_back(p / "report" / "contamination.json");
      }
      manifest.finish("evaluate", outs);
      return 0;
    });
  }

  json summary{{"experiment_id", cfg.experiment_id},
               {"data_seed", data_seed},
               {"geometry_hash", hex64(fnv1a(geometry->to_json().dump()))},
               {"transfer", cfg.tl.to_json()},
               {"test_mse", test_mse},
               {"best_epoch", out.best_epoch},
               {"final_val_mse", out.final_val_mse},
               {"repeat_test_mse", repeat_mse}};
  write_json(dir / "summary.json", summary);
  out.summary = summary;
  return out;
}

PipelineSummary run_pipeline(const fs::path& config_path, bool quiet) {
  return run_pipeline(ExperimentConfig::load(config_path), quiet);
}

std::vector<ComparisonRow> compare_runs(const std::vector<fs::path>& dirs) {
  if (dirs.empty()) throw ConfigError("compare_runs needs at least one run");
  std::vector<json> sums;
  for (const auto& d : dirs) sums.push_back(read_json(d / "summary.json"));
  for (std::size_t i = 1; i < sums.size(); ++i) {
    if (sums[i].at("data_seed") != sums[0].at("data_seed"))
      throw ConfigError("runs " + dirs[0].string() + " and " + dirs[i].string() + " use different data seeds");
    if (sums[i].at("geometry_hash") != sums[0].at("geometry_hash"))
      throw ConfigError("runs " + dirs[0].string() + " and " + dirs[i].string() + " use different geometries");
  }
  auto values = [](const json& s) {
    auto v = s.value("repeat_test_mse", std::vector<double>{});
    if (v.empty()) v.push_back(s.at("test_mse").get<double>());
    return v;
  };
  std::optional<std::size_t> base;
  for (std::size_t i = 0; i < sums.size(); ++i) {
    const auto tl = TLConfig::from_json(sums[i].at("transfer"));
    if (tl.init_mode == InitMode::Random && tl.train_mode == TrainMode::NoTL) {
      base = i;
      break;
    }
  }
  if (!base) throw ConfigError("no RANDOM/No-TL baseline among the compared runs");
  const auto bv = values(sums[*base]);
  const double base_avg = std::accumulate(bv.begin(), bv.end(), 0.0) / static_cast<double>(bv.size());
  const double base_best = *std::min_element(bv.begin(), bv.end());
  std::vector<ComparisonRow> rows;
  for (std::size_t i = 0; i < sums.size(); ++i) {
    const auto v = values(sums[i]);
    const auto tl = TLConfig::from_json(sums[i].at("transfer"));
    const double avg = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    const double best = *std::min_element(v.begin(), v.end());
    const auto name = sums[i].value("experiment_id", dirs[i].filename().string());
    rows.push_back({name, to_string(tl.init_mode), to_string(tl.train_mode), "avg", avg, (avg - base_avg) / base_avg});
    rows.push_back({name, to_string(tl.init_mode), to_string(tl.train_mode), "best", best, (best - base_best) / base_best});
  }
  return rows;
}

void write_comparison_csv(const std::vector<ComparisonRow>& rows, std::ostream& os) {
  os.precision(10);
  os << "run,init_mode,train_mode,row,test_mse,delta_mse_pct\n";
  for (const auto& r : rows)
    os << r.run << ',' << r.init_mode << ',' << r.train_mode << ',' << r.row << ',' << r.test_mse << ','
       << 100.0 * r.delta << '\n';
}

void write_comparison_csv(const std::vector<ComparisonRow>& rows, const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  write_comparison_csv(rows, os);
}

}  // namespace graphstad
