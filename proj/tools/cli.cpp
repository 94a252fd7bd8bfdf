#include "cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <iomanip>
#include <optional>

#include "spd/config.hpp"
#include "spd/gradcheck.hpp"
#include "spd/parallel.hpp"

namespace spd::cli {
namespace fs = std::filesystem;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool deterministic = false;
  std::optional<std::string> train_dir, test_dir, out_dir;
  std::optional<double> density, salt_fraction;
  std::optional<int> salt, pepper, salt_max, pepper_min;
  // training
  std::optional<std::size_t> epochs, batch_size, patch_size, patches, lr_period, checkpoint_every;
  std::optional<double> lr, alpha, beta;
  std::optional<std::string> optimizer;
  bool no_flips = false;
  std::optional<std::size_t> depth, width, base_channels, scales, blocks;
  std::optional<double> tau;
  std::optional<std::size_t> median_window;
};

void add_common(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config, "YAML run config");
  app->add_option("--seed", o.seed, "Run seed");
  app->add_option("--threads", o.threads, "Worker threads (default 1)");
  app->add_flag("--deterministic", o.deterministic, "Single-threaded mode");
  app->add_option("--out-dir", o.out_dir, "Output directory");
}

void add_noise(CLI::App* app, Overrides& o) {
  app->add_option("--density", o.density, "Fraction of corrupted pixels");
  app->add_option("--salt", o.salt, "Salt value");
  app->add_option("--pepper", o.pepper, "Pepper value");
  app->add_option("--salt-fraction", o.salt_fraction, "Share of corrupted pixels that become salt");
  app->add_option("--salt-max", o.salt_max, "Upper end of the salt value range");
  app->add_option("--pepper-min", o.pepper_min, "Lower end of the pepper value range");
}

void add_training(CLI::App* app, Overrides& o, Stage stage) {
  app->add_option("--train-dir", o.train_dir, "Directory of clean training images");
  app->add_option("--epochs", o.epochs);
  app->add_option("--batch-size", o.batch_size);
  app->add_option("--patch-size", o.patch_size);
  app->add_option("--patches", o.patches, "Number of training patches");
  app->add_option("--lr", o.lr, "Base learning rate");
  app->add_option("--lr-period", o.lr_period, "Epochs per 10x learning-rate decay");
  app->add_option("--optimizer", o.optimizer)->check(CLI::IsMember({"adam", "sgd"}));
  app->add_option("--checkpoint-every", o.checkpoint_every, "Epochs between intermediate checkpoints");
  app->add_flag("--no-flips", o.no_flips, "Disable flip augmentation");
  if (stage == Stage::detector) {
    app->add_option("--alpha", o.alpha, "Clean-pixel loss weight");
    app->add_option("--beta", o.beta, "Noise-pixel weight offset (noise weight is alpha + beta)");
    app->add_option("--depth", o.depth);
    app->add_option("--width", o.width);
  } else {
    app->add_option("--base-channels", o.base_channels);
    app->add_option("--scales", o.scales);
    app->add_option("--blocks", o.blocks);
  }
}

template <typename T, typename U>
void set(const std::optional<T>& v, U& dst) {
  if (v) dst = static_cast<U>(*v);
}

std::uint8_t to_byte(int v, const char* flag) {
  if (v < 0 || v > 255) throw ConfigError(std::string(flag) + " must lie in [0,255]");
  return static_cast<std::uint8_t>(v);
}

RunConfig resolve(const Overrides& o) {
  RunConfig rc = o.config.empty() ? RunConfig{} : RunConfig::load(o.config);
  set(o.seed, rc.seed);
  set(o.threads, rc.threads);
  if (o.deterministic) rc.threads = 1;
  if (o.train_dir) rc.train_dir = *o.train_dir;
  if (o.test_dir) rc.test_dir = *o.test_dir;
  if (o.out_dir) rc.out_dir = *o.out_dir;
  set(o.density, rc.noise.density);
  set(o.salt_fraction, rc.noise.salt_fraction);
  if (o.salt) rc.noise.salt_value = rc.noise.salt_value_max = to_byte(*o.salt, "--salt");
  if (o.pepper) rc.noise.pepper_value = rc.noise.pepper_value_min = to_byte(*o.pepper, "--pepper");
  if (o.salt_max) rc.noise.salt_value_max = to_byte(*o.salt_max, "--salt-max");
  if (o.pepper_min) rc.noise.pepper_value_min = to_byte(*o.pepper_min, "--pepper-min");
  set(o.lr, rc.lr);
  set(o.lr_period, rc.lr_period);
  set(o.optimizer, rc.optimizer.kind);
  set(o.checkpoint_every, rc.checkpoint_every);
  if (o.no_flips) rc.flips = false;
  set(o.alpha, rc.penalty.alpha);
  set(o.beta, rc.penalty.beta);
  set(o.depth, rc.detector_net.depth);
  set(o.width, rc.detector_net.width);
  set(o.base_channels, rc.drunet_net.base_channels);
  set(o.scales, rc.drunet_net.scales);
  set(o.blocks, rc.drunet_net.blocks);
  set(o.tau, rc.tau);
  set(o.median_window, rc.median_window);
  return rc;
}

void apply_budget(const Overrides& o, StageBudget& b) {
  set(o.epochs, b.epochs);
  set(o.batch_size, b.batch_size);
  set(o.patch_size, b.patch_size);
  set(o.patches, b.patches);
}

void print_config(std::ostream& out, const RunConfig& rc) {
  out << "# resolved config (hash " << rc.hash() << ")\n" << rc.to_yaml() << std::flush;
}

NetworkState load_network(const fs::path& path, NetworkKind kind, const char* role) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.network.spec.kind != kind) {
    throw CheckpointError(std::string(role) + " checkpoint " + path.string() + " holds a " +
                          to_string(ckpt.network.spec.kind) + " network");
  }
  return std::move(ckpt.network);
}

std::string format_psnr(const std::optional<double>& v) {
  if (!v) return "identical";
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << *v << " dB";
  return s.str();
}

int cmd_synthesize(const RunConfig& rc, const fs::path& in, const fs::path& out_dir, std::ostream& out) {
  std::vector<fs::path> inputs = fs::is_directory(in) ? list_images(in) : std::vector<fs::path>{in};
  if (inputs.empty()) throw std::runtime_error("no images found in " + in.string());
  fs::create_directories(out_dir / "noisy");
  fs::create_directories(out_dir / "maps");
  NoiseConfig base = rc.noise;
  base.seed = rc.seed;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Image clean = read_image(inputs[i]);
    const auto [noisy, map] = synthesize(clean, eval_noise(base, i));
    const fs::path name = inputs[i].filename();
    write_image(noisy, out_dir / "noisy" / name);
    write_image(render_map(map), out_dir / "maps" / name);
    out << name.string() << ": " << map.count() << " of " << map.bits.size() << " pixels corrupted\n";
  }
  return 0;
}

int cmd_train(const RunConfig& rc, Stage stage, const std::optional<std::string>& resume, std::ostream& out) {
  TrainConfig cfg = rc.train_config(stage);
  cfg.validate();
  const auto patches = extract_patches(load_dataset(rc.train_dir), cfg.patches, cfg.patch_size, cfg.seed);
  std::optional<Checkpoint> ckpt;
  if (resume) ckpt = load_checkpoint(*resume);
  cfg.on_epoch = [&](std::size_t epoch, double loss) {
    out << "epoch " << epoch << "/" << cfg.epochs << " loss " << format_double(loss) << "\n" << std::flush;
  };
  const TrainResult<float> result = train<float>(cfg, patches, std::nullopt, ckpt);
  const std::string name = to_string(stage);
  out << "wrote " << (cfg.out_dir / (name + ".ckpt")).string() << " and " << (cfg.out_dir / (name + "_loss.txt")).string()
      << "\n";
  out << "final loss " << format_double(result.loss_history.back()) << "\n";
  return 0;
}

struct DenoiseArgs {
  std::string detector, denoiser, in, out;
  std::optional<std::string> reference, map_out;
  bool one_stage = false;
};

int cmd_denoise(const RunConfig& rc, const DenoiseArgs& a, std::ostream& out) {
  const NetworkState denoiser = load_network(a.denoiser, NetworkKind::drunet, "denoiser");
  std::optional<NetworkState> detector;
  if (!a.one_stage) {
    if (a.detector.empty()) throw ConfigError("--detector is required unless --one-stage is given");
    detector = load_network(a.detector, NetworkKind::detector, "detector");
  }
  const bool dir_mode = fs::is_directory(a.in);
  const std::vector<fs::path> inputs = dir_mode ? list_images(a.in) : std::vector<fs::path>{a.in};
  if (dir_mode) fs::create_directories(a.out);
  for (const auto& path : inputs) {
    const Image noisy = read_image(path);
    Image restored;
    if (a.one_stage) {
      restored = denoise_one_stage(denoiser, noisy);
    } else {
      TwoStageResult r = denoise_two_stage(*detector, denoiser, noisy, rc.tau);
      restored = std::move(r.restored);
      if (a.map_out) {
        const fs::path map_path = dir_mode ? fs::path(*a.map_out) / path.filename() : fs::path(*a.map_out);
        if (dir_mode) fs::create_directories(*a.map_out);
        write_image(render_map(r.map), map_path);
      }
    }
    const fs::path target = dir_mode ? fs::path(a.out) / path.filename() : fs::path(a.out);
    write_image(restored, target);
    out << path.filename().string() << " -> " << target.string();
    if (a.reference) {
      const fs::path ref = dir_mode ? fs::path(*a.reference) / path.filename() : fs::path(*a.reference);
      out << "  PSNR " << format_psnr(psnr(restored, read_image(ref)));
    }
    out << "\n";
  }
  return 0;
}

int cmd_evaluate(const RunConfig& rc, const std::string& det, const std::string& den,
                 const std::optional<std::string>& one, std::ostream& out) {
  const NetworkState detector = load_network(det, NetworkKind::detector, "detector");
  const NetworkState denoiser = load_network(den, NetworkKind::drunet, "denoiser");
  std::optional<NetworkState> one_stage;
  if (one) one_stage = load_network(*one, NetworkKind::drunet, "one-stage");
  const EvalReport report = evaluate(detector, denoiser, one_stage, load_dataset(rc.test_dir), rc.eval_options());
  write_report(report, rc.out_dir);
  out << report_table(report) << "wrote " << (rc.out_dir / "report.json").string() << "\n";
  return 0;
}

int cmd_gradcheck(std::ostream& out) {
  bool ok = true;
  for (const auto& c : run_gradcheck_suite()) {
    out << (c.passed() ? "PASS " : "FAIL ") << c.name << "  max rel err " << std::scientific << std::setprecision(3)
        << c.max_rel_error << " (tol " << c.tolerance << ")\n"
        << std::defaultfloat;
    ok = ok && c.passed();
  }
  return ok ? 0 : 1;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-stage non-extreme salt-and-pepper denoiser", "spdenoise"};
  app.require_subcommand(1);
  Overrides o;

  auto* syn = app.add_subcommand("synthesize", "Corrupt clean images; writes <out>/noisy and <out>/maps");
  std::string syn_in;
  add_common(syn, o);
  add_noise(syn, o);
  syn->add_option("--in", syn_in, "Clean image or directory")->required();

  std::optional<std::string> resume;
  CLI::App* train_cmds[3];
  const Stage stages[3] = {Stage::detector, Stage::denoiser, Stage::one_stage};
  const char* train_names[3] = {"train-detector", "train-denoiser", "train-one-stage"};
  const char* train_help[3] = {"Train the noise-position detector", "Train the DRUnet on zero-dot inputs",
                               "Train the DRUnet directly on noisy inputs"};
  for (int i = 0; i < 3; ++i) {
    train_cmds[i] = app.add_subcommand(train_names[i], train_help[i]);
    add_common(train_cmds[i], o);
    add_noise(train_cmds[i], o);
    add_training(train_cmds[i], o, stages[i]);
    train_cmds[i]->add_option("--resume", resume, "Continue from a checkpoint of the same config");
  }

  auto* den = app.add_subcommand("denoise", "Restore noisy images (two-stage unless --one-stage)");
  DenoiseArgs da;
  add_common(den, o);
  den->add_option("--detector", da.detector, "Detector checkpoint");
  den->add_option("--denoiser", da.denoiser, "DRUnet checkpoint")->required();
  den->add_option("--in", da.in, "Noisy image or directory")->required();
  den->add_option("--out", da.out, "Output image or directory")->required();
  den->add_option("--reference", da.reference, "Clean reference; prints PSNR");
  den->add_option("--map-out", da.map_out, "Also write the detected noise map");
  den->add_flag("--one-stage", da.one_stage, "Apply the denoiser directly to the noisy input");
  den->add_option("--tau", o.tau, "Detector threshold");

  auto* ev = app.add_subcommand("evaluate", "Score all methods on the test set and write a report");
  std::string ev_det, ev_den;
  std::optional<std::string> ev_one;
  add_common(ev, o);
  add_noise(ev, o);
  ev->add_option("--detector", ev_det, "Detector checkpoint")->required();
  ev->add_option("--denoiser", ev_den, "DRUnet checkpoint")->required();
  ev->add_option("--one-stage-model", ev_one, "One-stage DRUnet checkpoint");
  ev->add_option("--test-dir", o.test_dir, "Directory of clean test images");
  ev->add_option("--tau", o.tau, "Detector threshold");
  ev->add_option("--median-window", o.median_window, "Median filter window");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every gradient");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return 2;
  }

  RunConfig rc;
  try {
    if (!gc->parsed()) {
      rc = resolve(o);
      for (int i = 0; i < 3; ++i) {
        if (train_cmds[i]->parsed()) apply_budget(o, stages[i] == Stage::detector ? rc.detector : rc.denoiser);
      }
      rc.validate();
      set_num_threads(rc.threads);
      print_config(out, rc);
    }
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (syn->parsed()) return cmd_synthesize(rc, syn_in, rc.out_dir, out);
    for (int i = 0; i < 3; ++i) {
      if (train_cmds[i]->parsed()) return cmd_train(rc, stages[i], resume, out);
    }
    if (den->parsed()) return cmd_denoise(rc, da, out);
    if (ev->parsed()) return cmd_evaluate(rc, ev_det, ev_den, ev_one, out);
    return cmd_gradcheck(out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace spd::cli
