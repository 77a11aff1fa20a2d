// Copyright 2026 dcfnet authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Command-line surface: dataset synthesis, training, evaluation, gradient
// checking, ablation sweeps and config inspection. Every command is
// deterministic given its flags and seed. Exit codes: 0 success, 1 usage,
// 2 runtime failure.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "dcfnet/config.hpp"
#include "dcfnet/gradcheck.hpp"
#include "dcfnet/train.hpp"

namespace fs = std::filesystem;
using namespace dcfnet;

namespace {

struct CommonModelFlags {
  std::string preset = "desk";
  std::string config_file;
  std::vector<std::string> overrides;  // key=value

  RunConfig resolve() const {
    RunConfig cfg = preset_config(preset);
    if (!config_file.empty()) load_config_file(cfg, config_file);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ValueError("--set expects key=value, got: " + kv);
      apply_config_entry(cfg, strip_ws(kv.substr(0, eq)), strip_ws(kv.substr(eq + 1)));
    }
    return cfg;
  }
};

void add_model_flags(CLI::App* cmd, CommonModelFlags& flags) {
  cmd->add_option("--preset", flags.preset, "Compiled-in preset: paper or desk")
      ->default_val("desk");
  cmd->add_option("--config", flags.config_file, "Config file (key = value lines)");
  cmd->add_option("--set", flags.overrides, "Override a config key, e.g. --set model.O=0");
}

Manifest load_split(const std::string& path, const std::string& split) {
  Manifest all = Manifest::load(path);
  if (split == "all") return all;
  Manifest out;
  for (auto& r : all.records)
    if (r.id.rfind(split, 0) == 0) out.records.push_back(std::move(r));
  if (out.records.empty())
    throw Error("manifest " + path + " has no records for split '" + split + "'");
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << text;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  DatasetOptions opt;
  uint64_t seed = 7;
  std::string out_dir = "data";
  std::string condition = "clean";
};

int cmd_synth(const SynthArgs& args) {
  DatasetOptions opt = args.opt;
  if (args.condition == "clean" || args.condition == "noisy" || args.condition == "reverberant")
    opt.condition = args.condition;
  else if (args.condition == "reverb")
    opt.condition = "reverberant";
  else
    throw ValueError("--condition must be clean, noisy or reverb(erant)");
  auto manifest = build_dataset(opt, args.seed, args.out_dir);
  std::cout << (fs::path(args.out_dir) / "manifest.jsonl").string() << "\n";
  std::cerr << "wrote " << manifest.records.size() << " records (" << opt.n_train << " train / "
            << opt.n_test << " test), condition " << opt.condition << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  CommonModelFlags model;
  std::string manifest;
  std::string out_dir = "run";
  std::string resume;
  size_t threads = 0;
  bool quiet = false;
};

template <typename T>
int run_train(RunConfig cfg, const TrainArgs& args) {
  Manifest manifest = load_split(args.manifest, "train");
  DcfNet<T> net(cfg.model, cfg.seed);
  TrainOptions opt;
  opt.epochs = cfg.epochs;
  opt.batch = cfg.batch;
  opt.seed = cfg.seed;
  opt.clip_norm = cfg.clip_norm;
  opt.weight_decay = cfg.weight_decay;
  opt.val_fraction = cfg.val_fraction;
  opt.threads = args.threads ? args.threads : cfg.threads;
  opt.schedule = cfg.schedule();
  opt.out_dir = args.out_dir;
  opt.resume_from = args.resume;
  opt.quiet = args.quiet;
  auto result = train_loop(net, manifest, opt, config_to_json(cfg));
  std::cout << result.best_checkpoint << "\n";
  std::cerr << "best val SI-SDRi " << result.best_val_si_sdri << " dB, log at "
            << (fs::path(args.out_dir) / "train_log.csv").string() << "\n";
  return 0;
}

int cmd_train(const TrainArgs& args) {
  RunConfig cfg = args.model.resolve();
  fs::create_directories(args.out_dir);
  write_text((fs::path(args.out_dir) / "config.txt").string(), dump_config(cfg));
  if (cfg.precision == "double") return run_train<double>(cfg, args);
  return run_train<float>(cfg, args);
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::string out_dir = "eval";
  std::string mode = "model";  // model | oracle | identity
  std::string split = "all";
  std::string precision = "float";
};

template <typename T>
EvalReport eval_with_model(const std::string& checkpoint_path, const Manifest& manifest,
                           std::vector<ScatterPoint>& scatter) {
  auto ckpt = load_checkpoint(checkpoint_path);
  ModelConfig mc = model_config_from_json(ckpt.config_json);
  DcfNet<T> net(mc, 1);
  apply_checkpoint(net.params, ckpt);
  NoGradGuard no_grad;

  EvalReport report;
  for (const auto& r : manifest.records) {
    auto mix = read_wav(r.mix);
    auto enroll = read_wav(r.enroll);
    auto target = read_wav(r.target);
    auto est_t = net.forward(detail::to_tensor_vec<T>(mix.samples),
                             detail::to_tensor_vec<T>(enroll.samples));
    Waveform est;
    est.sample_rate = mix.sample_rate;
    est.samples.assign(est_t.data().begin(), est_t.data().end());
    report.items.push_back(improvements(mix, est, target, r.id));

    // The residual mix - target is exactly the sum of interference sources,
    // so it stands in for the competing source in the scatter data.
    Waveform other;
    other.sample_rate = mix.sample_rate;
    other.samples.resize(mix.size());
    for (size_t i = 0; i < mix.size(); ++i)
      other.samples[i] = mix.samples[i] - target.samples[i];
    auto vs_other = improvements(mix, est, other, r.id);
    scatter.push_back({report.items.back().si_sdri, vs_other.si_sdri});
  }
  return report;
}

int cmd_eval(const EvalArgs& args) {
  Manifest manifest = load_split(args.manifest, args.split);
  EvalReport report;
  std::vector<ScatterPoint> scatter;

  if (args.mode == "model") {
    if (args.checkpoint.empty()) throw ValueError("eval --mode model requires --checkpoint");
    report = args.precision == "double"
                 ? eval_with_model<double>(args.checkpoint, manifest, scatter)
                 : eval_with_model<float>(args.checkpoint, manifest, scatter);
  } else if (args.mode == "oracle" || args.mode == "identity") {
    for (const auto& r : manifest.records) {
      auto mix = read_wav(r.mix);
      auto target = read_wav(r.target);
      const Waveform& est = args.mode == "oracle" ? target : mix;
      report.items.push_back(improvements(mix, est, target, r.id));
      Waveform other;
      other.sample_rate = mix.sample_rate;
      other.samples.resize(mix.size());
      for (size_t i = 0; i < mix.size(); ++i)
        other.samples[i] = mix.samples[i] - target.samples[i];
      scatter.push_back({report.items.back().si_sdri, improvements(mix, est, other).si_sdri});
    }
  } else {
    throw ValueError("--mode must be model, oracle or identity");
  }

  fs::create_directories(args.out_dir);
  write_report_csv((fs::path(args.out_dir) / "report.csv").string(), report);
  write_scatter_csv((fs::path(args.out_dir) / "scatter.csv").string(), scatter);
  std::cout << "mean_si_sdri " << report.mean_si_sdri() << " dB, mean_sdri " << report.mean_sdri()
            << " dB, tcp_rate " << report.tcp() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

int cmd_gradcheck(uint64_t seed, bool inject_broken) {
  auto registry = standard_gradcheck_registry(inject_broken);
  auto reports = registry.run_all(seed);
  bool all_pass = true;
  std::printf("%-26s %14s %10s  %s\n", "layer", "max_rel_err", "tolerance", "status");
  for (const auto& r : reports) {
    std::printf("%-26s %14.3e %10.0e  %s\n", r.layer.c_str(), r.max_rel_err, r.tolerance,
                r.pass ? "PASS" : "FAIL");
    all_pass = all_pass && r.pass;
  }
  if (!all_pass) {
    for (const auto& r : reports)
      if (!r.pass) std::cerr << "gradient check failed for layer: " << r.layer << "\n";
    return 2;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// ablate

struct AblateArgs {
  CommonModelFlags model;
  std::string manifest;
  std::string out_dir = "ablation";
  std::string o_list;          // e.g. "0,1,2"
  std::string extractor_list;  // e.g. "rnn,base,improved"
  size_t epochs = 0;           // 0 = keep config value
  size_t threads = 0;
};

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!strip_ws(cur).empty()) out.push_back(strip_ws(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!strip_ws(cur).empty()) out.push_back(strip_ws(cur));
  return out;
}

template <typename T>
void ablate_variant(RunConfig cfg, const std::string& label, const AblateArgs& args,
                    std::ofstream& csv) {
  const std::string run_dir = (fs::path(args.out_dir) / label).string();
  fs::create_directories(run_dir);
  write_text((fs::path(run_dir) / "config.txt").string(), dump_config(cfg));

  Manifest train_m = load_split(args.manifest, "train");
  Manifest test_m = load_split(args.manifest, "test");

  DcfNet<T> net(cfg.model, cfg.seed);
  const size_t params_count = net.param_count();
  TrainOptions opt;
  opt.epochs = cfg.epochs;
  opt.batch = cfg.batch;
  opt.seed = cfg.seed;
  opt.clip_norm = cfg.clip_norm;
  opt.weight_decay = cfg.weight_decay;
  opt.val_fraction = cfg.val_fraction;
  opt.threads = args.threads ? args.threads : cfg.threads;
  opt.schedule = cfg.schedule();
  opt.out_dir = run_dir;
  opt.quiet = true;
  train_loop(net, train_m, opt, config_to_json(cfg));

  NoGradGuard no_grad;
  EvalReport report;
  for (const auto& r : test_m.records) {
    auto mix = read_wav(r.mix);
    auto enroll = read_wav(r.enroll);
    auto target = read_wav(r.target);
    auto est_t = net.forward(detail::to_tensor_vec<T>(mix.samples),
                             detail::to_tensor_vec<T>(enroll.samples));
    Waveform est;
    est.sample_rate = mix.sample_rate;
    est.samples.assign(est_t.data().begin(), est_t.data().end());
    report.items.push_back(improvements(mix, est, target, r.id));
  }
  csv << label << ',' << params_count << ',' << report.mean_si_sdri() << ','
      << report.mean_sdri() << '\n';
  csv.flush();
  std::cerr << "variant " << label << ": params " << params_count << ", mean SI-SDRi "
            << report.mean_si_sdri() << " dB\n";
}

int cmd_ablate(const AblateArgs& args) {
  RunConfig base = args.model.resolve();
  if (args.epochs) base.epochs = args.epochs;
  fs::create_directories(args.out_dir);
  std::ofstream csv((fs::path(args.out_dir) / "sweep.csv").string(), std::ios::trunc);
  if (!csv) throw IoError("cannot open sweep.csv for writing");
  csv << "variant,params,mean_si_sdri,mean_sdri\n";

  bool ran = false;
  if (!args.o_list.empty()) {
    for (const auto& o : split_csv(args.o_list)) {
      RunConfig cfg = base;
      cfg.model.dsfb_blocks = static_cast<size_t>(std::stoull(o));
      // O = 0 carries the concatenation-connection label
      const std::string label = cfg.model.dsfb_blocks == 0 ? "CC" : "O" + o;
      if (base.precision == "double")
        ablate_variant<double>(cfg, label, args, csv);
      else
        ablate_variant<float>(cfg, label, args, csv);
      ran = true;
    }
  }
  if (!args.extractor_list.empty()) {
    for (const auto& kind : split_csv(args.extractor_list)) {
      RunConfig cfg = base;
      cfg.model.extractor = extractor_kind_from(kind);
      const std::string label =
          "extractor_" + std::string(extractor_kind_name(cfg.model.extractor));
      if (base.precision == "double")
        ablate_variant<double>(cfg, label, args, csv);
      else
        ablate_variant<float>(cfg, label, args, csv);
      ran = true;
    }
  }
  if (!ran) throw ValueError("ablate: pass --O and/or --extractor");
  std::cout << (fs::path(args.out_dir) / "sweep.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dcfnet: desk-scale target speaker extraction"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic two-speaker dataset");
  synth->add_option("--train", synth_args.opt.n_train, "Training mixtures")->default_val(200);
  synth->add_option("--test", synth_args.opt.n_test, "Test mixtures")->default_val(50);
  synth->add_option("--speakers", synth_args.opt.n_speakers, "Speaker pool size (>= 4)")
      ->default_val(8);
  synth->add_option("--condition", synth_args.condition, "clean | noisy | reverb")
      ->default_val("clean");
  synth->add_option("--noise-snr", synth_args.opt.noise_snr_db, "Noise SNR dB (noisy)")
      ->default_val(10.0);
  synth->add_option("--rt60", synth_args.opt.rt60_s, "Reverberation time s (reverb)")
      ->default_val(0.3);
  synth->add_flag("--reverberant-target", synth_args.opt.reverberant_target,
                  "Keep the reverberant source as the training target");
  synth->add_option("--duration", synth_args.opt.duration_s, "Mixture duration s")
      ->default_val(1.0);
  synth->add_option("--enroll-duration", synth_args.opt.enroll_duration_s,
                    "Enrollment duration s")
      ->default_val(1.5);
  synth->add_option("--snr-lo", synth_args.opt.snr_lo, "Mixing SNR lower bound dB")
      ->default_val(0.0);
  synth->add_option("--snr-hi", synth_args.opt.snr_hi, "Mixing SNR upper bound dB")
      ->default_val(5.0);
  synth->add_flag("--disjoint-speakers", synth_args.opt.disjoint_speakers,
                  "Use disjoint train/test speaker pools");
  synth->add_option("--seed", synth_args.seed, "Dataset seed")->default_val(7);
  synth->add_option("--out", synth_args.out_dir, "Output directory")->required();

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train the extraction network");
  add_model_flags(train, train_args.model);
  train->add_option("--manifest", train_args.manifest, "Dataset manifest (JSONL)")->required();
  train->add_option("--out", train_args.out_dir, "Run directory")->default_val("run");
  train->add_option("--resume", train_args.resume, "Resume from checkpoint");
  train->add_option("--threads", train_args.threads, "Batch worker threads (0 = config)");
  train->add_flag("--quiet", train_args.quiet, "Suppress per-epoch progress");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint or reference mode");
  eval->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint path (model mode)");
  eval->add_option("--manifest", eval_args.manifest, "Dataset manifest (JSONL)")->required();
  eval->add_option("--out", eval_args.out_dir, "Output directory")->default_val("eval");
  eval->add_option("--mode", eval_args.mode, "model | oracle | identity")->default_val("model");
  eval->add_option("--split", eval_args.split, "Record id prefix filter: all | train | test")
      ->default_val("all");
  eval->add_option("--precision", eval_args.precision, "float | double")->default_val("float");

  uint64_t gradcheck_seed = 1;
  bool inject_broken = false;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference checks for every layer");
  gradcheck->add_option("--seed", gradcheck_seed, "Base seed")->default_val(1);
  gradcheck->add_flag("--inject-broken", inject_broken,
                      "Register a deliberately broken layer (harness self-test)");

  AblateArgs ablate_args;
  auto* ablate = app.add_subcommand("ablate", "Train/evaluate a sweep of variants");
  add_model_flags(ablate, ablate_args.model);
  ablate->add_option("--manifest", ablate_args.manifest, "Dataset manifest (JSONL)")->required();
  ablate->add_option("--out", ablate_args.out_dir, "Sweep directory")->default_val("ablation");
  ablate->add_option("--O", ablate_args.o_list, "Comma list of fusion block counts, e.g. 0,1,2");
  ablate->add_option("--extractor", ablate_args.extractor_list,
                     "Comma list of extractor kinds: rnn,base,improved");
  ablate->add_option("--epochs", ablate_args.epochs, "Override epochs for the sweep");
  ablate->add_option("--threads", ablate_args.threads, "Batch worker threads");

  CommonModelFlags config_flags;
  auto* config = app.add_subcommand("config", "Inspect configuration");
  auto* config_show = config->add_subcommand("show", "Print the effective configuration");
  add_model_flags(config_show, config_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (app.got_subcommand(synth)) return cmd_synth(synth_args);
    if (app.got_subcommand(train)) return cmd_train(train_args);
    if (app.got_subcommand(eval)) return cmd_eval(eval_args);
    if (app.got_subcommand(gradcheck)) return cmd_gradcheck(gradcheck_seed, inject_broken);
    if (app.got_subcommand(ablate)) return cmd_ablate(ablate_args);
    if (app.got_subcommand(config)) {
      if (config->got_subcommand(config_show)) {
        std::cout << dump_config(config_flags.resolve());
        return 0;
      }
      std::cerr << "config: expected a subcommand (show)\n";
      return 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
