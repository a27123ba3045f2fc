// graphstad command-line front end. Every subcommand exits 0 only on success.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "graphstad/checkpoint.hpp"
#include "graphstad/errors.hpp"
#include "graphstad/map_io.hpp"
#include "graphstad/pipeline.hpp"
#include "graphstad/random.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace graphstad;

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
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p);
  if (!os) throw IoError("cannot write " + p.string());
  os << j.dump(2) << '\n';
}

// A checkpoint written by `train` or `transfer` carries the model description
// and the min-max calibration of its training data.
struct LoadedModel {
  Checkpoint ckpt;
  GraphStadModel model;
  MinMaxCalib minmax;
};

LoadedModel load_model(const fs::path& dir) {
  auto ckpt = load_checkpoint(dir);
  auto model = model_from_metadata(ckpt.metadata);
  model.check_store(ckpt.store);
  if (!ckpt.metadata.contains("minmax")) throw ConfigError(dir.string() + " has no min-max calibration");
  auto mm = MinMaxCalib::from_json(ckpt.metadata.at("minmax"));
  return {std::move(ckpt), std::move(model), std::move(mm)};
}

struct Common {
  std::uint64_t seed = 0;
  fs::path out;
  fs::path config;
};

void add_common(CLI::App* app, Common& c, bool out_required = true) {
  app->add_option("--seed", c.seed, "root seed");
  auto* o = app->add_option("--out", c.out, "output location");
  if (out_required) o->required();
  app->add_option("--config", c.config, "JSON configuration file")->check(CLI::ExistingFile);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"graphstad: spatio-temporal anomaly detection on occupancy maps"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "progress on stderr");

  // gen-data
  Common gen;
  DataConfig gen_cfg;
  std::string gen_sub = "custom";
  std::vector<std::size_t> gen_dims;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic run split into train/ and test/");
  add_common(gen_cmd, gen);
  gen_cmd->add_option("--subdetector", gen_sub, "hb, he or custom");
  gen_cmd->add_option("--dims", gen_dims, "n_ieta n_iphi n_depth (custom only)")->expected(3);
  gen_cmd->add_option("--rbx", gen_cfg.rbx_count, "RBX count");
  gen_cmd->add_option("--n-ls", gen_cfg.n_ls, "lumisections");
  gen_cmd->add_option("--train-ls", gen_cfg.train_ls, "lumisections in train/ (0: two thirds)");

  // preprocess
  Common pre;
  fs::path pre_data;
  auto* pre_cmd = app.add_subcommand("preprocess", "fit min-max on a training run and write model-scale maps");
  add_common(pre_cmd, pre);
  pre_cmd->add_option("--data", pre_data, "run directory")->required()->check(CLI::ExistingDirectory);

  // train
  Common tr;
  fs::path tr_data, tr_init;
  auto* tr_cmd = app.add_subcommand("train", "train a model on a run directory");
  add_common(tr_cmd, tr);
  tr_cmd->add_option("--data", tr_data, "training run directory")->required()->check(CLI::ExistingDirectory);
  tr_cmd->add_option("--init", tr_init, "initial checkpoint (e.g. from transfer)")->check(CLI::ExistingDirectory);
  int tr_epochs = -1;
  tr_cmd->add_option("--epochs", tr_epochs, "override the epoch count");

  // transfer
  Common tf;
  fs::path tf_source, tf_target;
  std::string tf_init = "TL-7", tf_train = "TL-6";
  bool tf_bn = false, tf_bias = false;
  auto* tf_cmd = app.add_subcommand("transfer", "initialise a target model from a source checkpoint");
  add_common(tf_cmd, tf);
  tf_cmd->add_option("--source", tf_source, "source checkpoint")->required()->check(CLI::ExistingDirectory);
  tf_cmd->add_option("--target", tf_target, "target checkpoint or target run directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  tf_cmd->add_option("--init-mode", tf_init, "RANDOM, TL-4 or TL-7");
  tf_cmd->add_option("--train-mode", tf_train, "No-TL, TL-1..TL-6, TL-2d");
  tf_cmd->add_flag("--unfreeze-bn", tf_bn, "keep batch-norm parameters trainable");
  tf_cmd->add_flag("--unfreeze-bias", tf_bias, "keep biases trainable (needs --unfreeze-bn)");

  // inject
  Common inj;
  fs::path inj_data;
  AnomalySpec inj_spec;
  std::string inj_kind = "dead";
  auto* inj_cmd = app.add_subcommand("inject", "inject synthetic channel faults into a run");
  add_common(inj_cmd, inj);
  inj_cmd->add_option("--data", inj_data, "run directory")->required()->check(CLI::ExistingDirectory);
  inj_cmd->add_option("--kind", inj_kind, "dead, degraded, noisy_hot or fully_hot");
  inj_cmd->add_option("--rd", inj_spec.rd, "degradation factor R_D");
  inj_cmd->add_option("--windows", inj_spec.n_ls, "affected windows");
  inj_cmd->add_option("--channels", inj_spec.n_channels, "cells per affected window");
  inj_cmd->add_option("-T,--window", inj_spec.T, "window length");
  bool inj_last_only = false;
  inj_cmd->add_flag("--last-only", inj_last_only, "only modify the last map of each window");
  inj_cmd->add_flag("--skip-overflow", inj_spec.skip_overflow, "drop cells that would exceed the event count");

  // score
  Common sc;
  fs::path sc_ckpt, sc_data, sc_sigma, sc_train;
  std::string sc_mode = "reset";
  auto* sc_cmd = app.add_subcommand("score", "per-channel anomaly scores of every window of a run");
  add_common(sc_cmd, sc);
  sc_cmd->add_option("--ckpt", sc_ckpt, "trained checkpoint")->required()->check(CLI::ExistingDirectory);
  sc_cmd->add_option("--data", sc_data, "run directory to score")->required()->check(CLI::ExistingDirectory);
  sc_cmd->add_option("--sigma", sc_sigma, "sigma calibration JSON")->check(CLI::ExistingFile);
  sc_cmd->add_option("--train-data", sc_train, "calibrate sigma on this run directory")
      ->check(CLI::ExistingDirectory);
  sc_cmd->add_option("--state-mode", sc_mode, "reset or preserve");

  // evaluate
  Common ev;
  fs::path ev_ckpt, ev_test, ev_sigma;
  EvalConfig ev_cfg;
  auto* ev_cmd = app.add_subcommand("evaluate", "benchmark suite metrics and error reports");
  add_common(ev_cmd, ev);
  ev_cmd->add_option("--ckpt", ev_ckpt, "trained checkpoint")->required()->check(CLI::ExistingDirectory);
  ev_cmd->add_option("--test", ev_test, "clean test run directory")->required()->check(CLI::ExistingDirectory);
  ev_cmd->add_option("--sigma", ev_sigma, "sigma calibration JSON")->required()->check(CLI::ExistingFile);
  ev_cmd->add_option("--samples", ev_cfg.samples_per_case, "samples per case");

  // run-pipeline
  fs::path rp_config, rp_out;
  std::optional<std::uint64_t> rp_seed;
  auto* rp_cmd = app.add_subcommand("run-pipeline", "run every stage of an experiment config");
  rp_cmd->add_option("--config", rp_config, "experiment config")->required()->check(CLI::ExistingFile);
  rp_cmd->add_option("--out", rp_out, "override output_root");
  rp_cmd->add_option("--seed", rp_seed, "override the root seed");

  // compare-runs
  std::vector<fs::path> cr_runs;
  fs::path cr_out;
  auto* cr_cmd = app.add_subcommand("compare-runs", "ΔMSE table against the RANDOM/No-TL run");
  cr_cmd->add_option("runs", cr_runs, "experiment directories")->required()->check(CLI::ExistingDirectory);
  cr_cmd->add_option("--out", cr_out, "CSV output (stdout when omitted)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen_cmd) {
      if (!gen.config.empty()) gen_cfg = DataConfig::from_json(read_json(gen.config));
      else {
        gen_cfg.subdetector = subdetector_from_string(gen_sub);
        if (!gen_dims.empty()) gen_cfg.dims = Dims{gen_dims[0], gen_dims[1], gen_dims[2]};
      }
      const auto split = generate_dataset(gen_cfg, gen.seed);
      fs::remove_all(gen.out / "train");
      fs::remove_all(gen.out / "test");
      save_runs(split.train, gen.out / "train");
      save_runs(split.test, gen.out / "test");
      auto j = gen_cfg.to_json();
      j["seed"] = gen.seed;
      write_json(gen.out / "data.json", j);
      std::cout << "wrote " << split.train.size() << " train and " << split.test.size() << " test maps to "
                << gen.out.string() << '\n';
    } else if (*pre_cmd) {
      const auto raw = load_runs(pre_data);
      const auto calib = minmax_fit(renormalize_sequence(raw).maps);
      const auto pp = preprocess_sequence(raw, calib);
      write_json(pre.out / "minmax.json", calib.to_json());
      save_runs(pp.maps, pre.out / "maps");
      json med = json::array();
      for (const auto& m : pp.medians) med.push_back(m.to_json());
      write_json(pre.out / "medians.json", med);
      std::cout << "preprocessed " << raw.size() << " maps into " << pre.out.string() << '\n';
    } else if (*tr_cmd) {
      ExperimentConfig cfg;
      if (!tr.config.empty()) cfg = ExperimentConfig::from_json(read_json(tr.config));
      cfg.seed = tr.seed;
      if (tr_epochs >= 0) cfg.train.epochs = tr_epochs;
      cfg.train.seed = substream_seed(tr.seed, "train");
      const auto raw = load_runs(tr_data);
      const auto calib = minmax_fit(renormalize_sequence(raw).maps);
      const auto pp = preprocess_sequence(raw, calib);
      const auto windows = make_windows(pp.maps, cfg.train.T, cfg.train.T);
      std::optional<GraphStadModel> model;
      ParameterStore init;
      if (!tr_init.empty()) {
        auto ck = load_checkpoint(tr_init);
        model.emplace(model_from_metadata(ck.metadata));
        if (model->spec().T != cfg.train.T) throw ConfigError("--init checkpoint was built for a different T");
        model->check_store(ck.store);
        init = std::move(ck.store);
      } else {
        model.emplace(model_spec_for(cfg, *raw.geometry), raw.geometry);
        init = model->init_parameters(substream_seed(tr.seed, "init"));
      }
      auto r = train(*model, init, windows, cfg.train, [&](const EpochRecord& e) {
        if (verbose) std::cerr << "epoch " << e.epoch << " val_mse " << e.val_mse << '\n';
      });
      auto meta = model_metadata(*model);
      meta["minmax"] = calib.to_json();
      save_checkpoint(r.best, tr.out / "ckpt", meta);
      r.history.write_csv(tr.out / "history.csv");
      std::cout << "best epoch " << r.history.best_epoch << ", checkpoint in " << (tr.out / "ckpt").string() << '\n';
    } else if (*tf_cmd) {
      TLConfig tl{init_mode_from_string(tf_init), train_mode_from_string(tf_train), tf_bn, tf_bias};
      if (!tf.config.empty()) tl = TLConfig::from_json(read_json(tf.config));
      tl.validate();
      const auto src = load_checkpoint(tf_source);
      std::optional<GraphStadModel> model;
      ParameterStore target;
      json meta;
      if (fs::exists(tf_target / "manifest.json") && fs::exists(tf_target / "params.bin")) {
        auto ck = load_checkpoint(tf_target);
        model.emplace(model_from_metadata(ck.metadata));
        target = std::move(ck.store);
        meta = ck.metadata;
      } else {
        const auto raw = load_runs(tf_target);
        const auto src_model = model_from_metadata(src.metadata);
        model.emplace(ModelSpec::for_geometry(*raw.geometry, src_model.spec().T), raw.geometry);
        target = model->init_parameters(substream_seed(tf.seed, "init"));
        meta = model_metadata(*model);
        meta["minmax"] = minmax_fit(renormalize_sequence(raw).maps).to_json();
      }
      const auto report = transfer_init(src.store, target, tl.init_mode);
      apply_freeze(target, tl);
      const auto count = count_trainable(target);
      save_checkpoint(target, tf.out / "ckpt", meta);
      auto rep = report.to_json();
      rep["trainable"] = count.trainable;
      rep["total"] = count.total;
      rep["reduction"] = count.reduction;
      rep["config"] = tl.to_json();
      write_json(tf.out / "report.json", rep);
      std::cout << report.copied.size() << " tensors copied, " << report.skipped_shape.size()
                << " skipped (shape), trainable " << count.trainable << "/" << count.total << '\n';
    } else if (*inj_cmd) {
      if (!inj.config.empty()) inj_spec = AnomalySpec::from_json(read_json(inj.config));
      else {
        inj_spec.kind = anomaly_kind_from_string(inj_kind);
        inj_spec.persist_T = !inj_last_only;
      }
      inj_spec.seed = inj.seed;
      const auto test = load_runs(inj_data);
      const auto labeled = inject(test, inj_spec);
      fs::remove_all(inj.out / "maps");
      save_runs(labeled.maps, inj.out / "maps");
      write_json(inj.out / "labels.json", labeled.labels_json());
      write_json(inj.out / "spec.json", inj_spec.to_json());
      std::cout << labeled.labels.size() << " labeled channel-maps in " << inj.out.string() << '\n';
    } else if (*sc_cmd) {
      const auto lm = load_model(sc_ckpt);
      const int T = lm.model.spec().T;
      SigmaCalib sigma;
      if (!sc_sigma.empty()) {
        sigma = SigmaCalib::from_json(read_json(sc_sigma));
      } else if (!sc_train.empty()) {
        const auto pp = preprocess_sequence(load_runs(sc_train), lm.minmax);
        const auto errs = series_errors(lm.model, lm.ckpt.store, lm.minmax, pp, make_windows(pp.maps, T, T),
                                        state_mode_from_string(sc_mode));
        sigma = calibrate_sigma(errs.errors, *lm.model.geometry(), state_mode_from_string(sc_mode));
        write_json(sc.out / "sigma.json", sigma.to_json());
      } else {
        throw ConfigError("score needs --sigma or --train-data");
      }
      const auto pp = preprocess_sequence(load_runs(sc_data), lm.minmax);
      const auto windows = make_windows(pp.maps, T, T);
      const auto errs = series_errors(lm.model, lm.ckpt.store, lm.minmax, pp, windows, sigma.mode);
      const auto& geo = *lm.model.geometry();
      fs::create_directories(sc.out);
      std::ofstream os(sc.out / "scores.csv");
      if (!os) throw IoError("cannot write scores.csv");
      os.precision(8);
      os << "run,ls,ieta,iphi,depth,error,score\n";
      for (std::size_t w = 0; w < windows.size(); ++w) {
        const auto a = anomaly_score(errs.errors[w], sigma);
        const auto& last = pp.maps.maps[windows[w].map_index.back()];
        for (std::size_t c = 0; c < a.size(); ++c) {
          if (!geo.is_valid(c)) continue;
          const auto co = geo.coord_of(c);
          os << last.run_id << ',' << last.ls << ',' << co.ieta << ',' << co.iphi << ',' << co.depth << ','
             << errs.errors[w][c] << ',' << a[c] << '\n';
        }
      }
      std::cout << "scored " << windows.size() << " windows into " << (sc.out / "scores.csv").string() << '\n';
    } else if (*ev_cmd) {
      if (!ev.config.empty()) ev_cfg = EvalConfig::from_json(read_json(ev.config));
      const auto lm = load_model(ev_ckpt);
      const auto sigma = SigmaCalib::from_json(read_json(ev_sigma));
      const auto test = load_runs(ev_test);
      const auto suite = build_eval_suite(test, ev_cfg.cases, ev_cfg.samples_per_case, ev_cfg.anomalous_fraction,
                                          lm.model.spec().T, substream_seed(ev.seed, "injection"),
                                          ev_cfg.skip_overflow);
      const auto cases = score_suite({&lm.model, &lm.ckpt.store, &lm.minmax, &sigma, &test, &suite});
      std::vector<MetricRow> rows;
      for (const auto& cs : cases) {
        auto r = case_metrics(cs, *lm.model.geometry(), ev_cfg.captures);
        rows.insert(rows.end(), r.begin(), r.end());
      }
      fs::create_directories(ev.out);
      write_metrics_csv(rows, ev.out / "metrics.csv");
      write_json(ev.out / "suite.json", suite.to_json());
      ReportInputs ri;
      ri.geometry = lm.model.geometry().get();
      ri.cases = &cases;
      ri.train_mean_error.assign(lm.model.geometry()->dims().cells(), 0.0);
      error_reports(ri, ev.out / "report");
      std::cout << "metrics for " << suite.total_maps() << " maps in " << (ev.out / "metrics.csv").string() << '\n';
    } else if (*rp_cmd) {
      auto cfg = ExperimentConfig::from_json(read_json(rp_config));
      if (!rp_out.empty()) cfg.output_root = rp_out;
      if (rp_seed) cfg.seed = *rp_seed;
      const auto s = run_pipeline(cfg, !verbose);
      std::cout << "test_mse " << s.test_mse << ", best epoch " << s.best_epoch << ", outputs in " << s.dir.string()
                << '\n';
    } else if (*cr_cmd) {
      const auto rows = compare_runs(cr_runs);
      if (!cr_out.empty())
        write_comparison_csv(rows, cr_out);
      else
        write_comparison_csv(rows, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
