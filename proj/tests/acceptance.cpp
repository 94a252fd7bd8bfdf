// End-to-end acceptance run: one PASS/FAIL line per criterion.
//
//   spd_acceptance [--config desk.yaml] [--out DIR] [--only N]...
//
// Criteria 5 and 6 train the desk-scale models (tens of minutes on one core).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <set>
#include <sstream>

#include "cli.hpp"
#include "spd/config.hpp"
#include "spd/gradcheck.hpp"
#include "spd/parallel.hpp"
#include "spd/rng.hpp"

using namespace spd;
namespace fs = std::filesystem;

namespace {

// Tolerances and thresholds.
constexpr double kOptimTol = 1e-12;
constexpr double kLossTol = 1e-12;
constexpr double kGradcheckSeconds = 120.0;
constexpr double kMinF1 = 0.95;
constexpr double kDensityLo = 0.19, kDensityHi = 0.21;
constexpr double kPsnrPlusOne = 48.1308, kPsnrTol = 1e-3;
constexpr std::size_t kHeldOutPatches = 400;
constexpr double kLargeAlpha = 2.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// ---------------------------------------------------------------------------

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cases = run_gradcheck_suite();
  const double secs = seconds_since(t0);
  std::string failed;
  double worst_primitive = 0.0, worst_network = 0.0;
  for (const auto& c : cases) {
    if (!c.passed()) failed += " " + c.name;
    (c.tolerance > 1e-4 ? worst_network : worst_primitive) =
        std::max(c.tolerance > 1e-4 ? worst_network : worst_primitive, c.max_rel_error);
  }
  const bool tolerances_ok = std::all_of(cases.begin(), cases.end(), [](const auto& c) { return c.tolerance <= 1e-3; });
  std::ostringstream d;
  d << cases.size() << " checks, worst primitive/loss " << fmt("%.2e", worst_primitive) << ", worst network "
    << fmt("%.2e", worst_network) << ", " << fmt("%.1f", secs) << " s";
  if (!failed.empty()) d << "; failed:" << failed;
  return {failed.empty() && tolerances_ok && !cases.empty() && secs < kGradcheckSeconds, d.str()};
}

Outcome optimizers() {
  std::vector<std::string> bad;
  const auto expect = [&](const char* what, double got, double want) {
    if (!(std::abs(got - want) <= kOptimTol)) bad.push_back(std::string(what) + "=" + fmt("%.17g", got));
  };
  const auto one = [](double v) { return std::vector<Tensor<double>>{Tensor<double>(Shape{1}, v)}; };
  {
    auto p = one(1.0);
    SgdState<double> s{0.1};
    sgd_step<double>(p, one(2.0), s);
    expect("sgd", p[0][0], 0.8);
  }
  {
    auto p = one(0.0);
    SgdState<double> s{1.0, 0.9};
    sgd_step<double>(p, one(1.0), s);
    expect("momentum step 1", p[0][0], -1.0);
    sgd_step<double>(p, one(1.0), s);
    expect("momentum v", s.velocity[0][0], 1.9);
    expect("momentum step 2", p[0][0], -2.9);
  }
  {
    auto p = one(1.0);
    SgdState<double> s{1.0, 0.0, 0.0, 0.1};
    sgd_step<double>(p, one(0.0), s);
    expect("weight decay", p[0][0], 0.9);
  }
  {
    auto p = one(0.0);
    AdamState<double> a{0.001, 0.9, 0.999, 1e-8};
    adam_step<double>(p, one(1.0), a);
    expect("adam step 1", p[0][0], -0.001 / (1.0 + 1e-8));
  }
  {
    // eps is validated positive; 1e-300 vanishes next to sqrt(v_hat) = 2.
    auto p = one(0.0);
    AdamState<double> a{1.0, 0.9, 0.999, 1e-300};
    adam_step<double>(p, one(2.0), a);
    expect("adam const g step 1", p[0][0], -1.0);
    adam_step<double>(p, one(2.0), a);
    expect("adam const g step 2", p[0][0], -2.0);
  }
  const bool sched = lr_schedule(0, 1e-4) == 1e-4 && lr_schedule(100, 1e-4) == 1e-5 && lr_schedule(250, 1e-4) == 1e-6;
  if (!sched) bad.push_back("lr_schedule");
  std::string d = "sgd/momentum/weight-decay/adam closed forms, lr_schedule 1e-4/1e-5/1e-6 exact";
  for (const auto& b : bad) d += "; mismatch " + b;
  return {bad.empty(), d};
}

Outcome losses() {
  const PenaltyParams p;  // 1.1, -0.1
  const double clean = asymmetric_loss(Tensor<double>(Shape{1}, 1.0), Tensor<double>(Shape{1}, 0.0), p);
  const double noise = asymmetric_loss(Tensor<double>(Shape{1}, 0.0), Tensor<double>(Shape{1}, 1.0), p);
  const double ratio = clean / noise;
  double worst = 0.0;
  CounterRng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor<double> out(Shape{2, 1, 6, 5}), map(Shape{2, 1, 6, 5});
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = rng.uniform();
      map[i] = rng.uniform() < 0.2 ? 1.0 : 0.0;
    }
    const double alpha = rng.uniform(0.1, 5.0);
    worst = std::max(worst, std::abs(asymmetric_loss(out, map, PenaltyParams{alpha, 0.0}) - alpha * fnorm_loss(out, map)));
  }
  const bool ok = std::abs(ratio - 1.1) <= kLossTol && worst <= kLossTol;
  return {ok, "clean/noise weight ratio " + fmt("%.15f", ratio) + ", beta=0 max |diff| " + fmt("%.1e", worst)};
}

Outcome noise_model() {
  NoiseConfig cfg;  // 0.2, (239, 16)
  Image clean(256, 256);
  for (std::size_t i = 0; i < clean.size(); ++i) clean.pixels[i] = static_cast<std::uint8_t>((i * 37) % 256);
  bool ok = true;
  std::string fractions;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    cfg.seed = seed;
    const double f = static_cast<double>(synthesize(clean, cfg).map.count()) / static_cast<double>(clean.size());
    ok = ok && f >= kDensityLo && f <= kDensityHi;
    fractions += fmt(" %.4f", f);
  }
  // Exhaustive zero_noise check on every pixel of a 16x16 image under 4 maps.
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Image img(16, 16);
    CounterRng rng(seed);
    for (auto& px : img.pixels) px = static_cast<std::uint8_t>(rng.below(256));
    NoiseMap map(16, 16);
    for (auto& b : map.bits) b = rng.uniform() < 0.3 ? 1 : 0;
    const Image z = zero_noise(img, map);
    for (std::size_t i = 0; i < img.size(); ++i, ++checked) ok = ok && z.pixels[i] == (map.bits[i] ? 0 : img.pixels[i]);
  }
  return {ok, "corrupted fractions" + fractions + "; zero_noise exact on " + std::to_string(checked) + " pixels"};
}

Outcome psnr_oracle() {
  Image a(32, 32, 100), b(32, 32, 101);
  const auto v = psnr(a, b);
  const auto z = psnr(Image(8, 8, 0), Image(8, 8, 255));
  const bool ok = v && std::abs(*v - kPsnrPlusOne) < kPsnrTol && z && *z == 0.0;
  return {ok, "uniform +1: " + (v ? fmt("%.7f", *v) : std::string("none")) +
                  " dB, 0 vs 255: " + (z ? fmt("%.17g", *z) : std::string("none")) + " dB"};
}

// ---------------------------------------------------------------------------

struct Desk {
  RunConfig rc;
  fs::path out;
  std::vector<NamedImage> train_set, test_set;
  std::optional<NetworkState> detector;  // alpha = 1.1
};

TrainResult<float> train_logged(const TrainConfig& base, const std::vector<NamedImage>& images, const fs::path& dir) {
  TrainConfig cfg = base;
  cfg.out_dir = dir;
  const auto t0 = std::chrono::steady_clock::now();
  cfg.on_epoch = [&](std::size_t e, double loss) {
    std::cerr << "  [" << to_string(cfg.stage) << " " << dir.filename().string() << "] epoch " << e << "/"
              << cfg.epochs << " loss " << fmt("%.6g", loss) << " (" << fmt("%.0f", seconds_since(t0)) << " s)\n";
  };
  const auto patches = extract_patches(images, cfg.patches, cfg.patch_size, cfg.seed);
  return train<float>(cfg, patches);
}

AlarmRates held_out_rates(const NetworkState& det, const std::vector<Image>& patches, const NoiseConfig& base,
                          double tau) {
  AlarmRates total;
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const Corrupted c = synthesize(patches[i], eval_noise(base, i));
    total += alarm_rates(threshold_map(detect_probabilities(det, c.noisy), tau), c.map);
  }
  total.finalize();
  return total;
}

Outcome detection(Desk& desk) {
  const auto t0 = std::chrono::steady_clock::now();
  const TrainConfig cfg = desk.rc.train_config(Stage::detector);
  const auto held = extract_patches(desk.test_set, kHeldOutPatches, cfg.patch_size, hash_key(desk.rc.seed, 0x4e1d));
  NoiseConfig held_noise = desk.rc.noise;
  held_noise.seed = hash_key(desk.rc.seed, 0x4e1e);

  const auto base = train_logged(cfg, desk.train_set, desk.out / "detector");
  desk.detector = base.state;
  TrainConfig heavy = cfg;
  heavy.penalty.alpha = kLargeAlpha;
  heavy.penalty.beta = cfg.penalty.alpha + cfg.penalty.beta - kLargeAlpha;
  const auto heavier = train_logged(heavy, desk.train_set, desk.out / "detector_alpha2");
  const double secs = seconds_since(t0);

  const AlarmRates r = held_out_rates(base.state, held, held_noise, desk.rc.tau);
  const AlarmRates h = held_out_rates(heavier.state, held, held_noise, desk.rc.tau);
  const double f1 = r.f1().value_or(0.0);
  const double far = r.false_alarm_rate.value_or(1.0), far_h = h.false_alarm_rate.value_or(1.0);
  std::ostringstream d;
  d << "held-out F1 " << fmt("%.4f", f1) << " (need >= " << kMinF1 << "), FAR alpha=" << cfg.penalty.alpha << ": "
    << fmt("%.5f", far) << ", alpha=" << kLargeAlpha << ": " << fmt("%.5f", far_h) << " (MAR "
    << fmt("%.4f", r.missing_alarm_rate.value_or(1.0)) << " -> " << fmt("%.4f", h.missing_alarm_rate.value_or(1.0))
    << "), " << cfg.epochs << " epochs x " << cfg.patches << " patches, both runs " << fmt("%.0f", secs) << " s";
  return {f1 >= kMinF1 && far_h <= far, d.str()};
}

Outcome ordering(Desk& desk) {
  if (!desk.detector) return {false, "no detector (criterion 5 did not run)"};
  const auto den = train_logged(desk.rc.train_config(Stage::denoiser), desk.train_set, desk.out / "denoiser");
  const auto one = train_logged(desk.rc.train_config(Stage::one_stage), desk.train_set, desk.out / "one_stage");
  const EvalReport report = evaluate(*desk.detector, den.state, one.state, desk.test_set, desk.rc.eval_options());
  write_report(report, desk.out / "report");
  std::cerr << report_table(report);

  bool oracle_ok = true;
  std::string per_image;
  for (const auto& e : report.images) {
    const double learned = e.two_stage.value_or(INFINITY), oracle = e.two_stage_oracle.value_or(INFINITY);
    oracle_ok = oracle_ok && oracle >= learned;
    per_image += "; " + e.name + " oracle " + fmt("%.2f", oracle) + (oracle >= learned ? " >= " : " < ") +
                 fmt("%.2f", learned);
  }
  const double two = report.mean_two_stage.value_or(0), one_s = report.mean_one_stage.value_or(0),
               med = report.mean_median.value_or(0);
  const bool ok = report.images.size() >= 2 && two > one_s && one_s > med && two > med && oracle_ok;
  const auto gt = [](double a, double b) { return a > b ? " > " : " <= "; };
  return {ok, "mean PSNR two-stage " + fmt("%.2f", two) + gt(two, one_s) + "one-stage " + fmt("%.2f", one_s) +
                  gt(one_s, med) + "median " +
                  fmt("%.2f", med) + " dB over " + std::to_string(report.images.size()) + " images" + per_image};
}

Outcome reproducibility(const Desk& desk) {
  const fs::path root = desk.out / "repro";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path cfg = root / "tiny.yaml";
  std::ofstream(cfg) << "seed: 3\n"
                     << "data: {train_dir: " << desk.rc.train_dir.string() << "}\n"
                     << "detector: {depth: 3, width: 8, epochs: 2, batch_size: 4, patch_size: 16, patches: 16}\n"
                     << "denoiser: {base_channels: 4, scales: 2, blocks: 1, epochs: 2, batch_size: 4, "
                        "patch_size: 16, patches: 16}\n";
  std::ostringstream sink;
  bool ok = true;
  std::string detail;
  for (const std::string verb : {"train-detector", "train-denoiser", "train-one-stage"}) {
    const std::string stage = verb == "train-detector" ? "detector" : verb == "train-denoiser" ? "denoiser" : "one_stage";
    for (const char* run : {"a", "b"}) {
      const int code = cli::run({verb, "--config", cfg.string(), "--out-dir", (root / run).string(), "--deterministic"},
                                sink, sink);
      ok = ok && code == 0;
    }
    const bool same = slurp(root / "a" / (stage + ".ckpt")) == slurp(root / "b" / (stage + ".ckpt")) &&
                      slurp(root / "a" / (stage + "_loss.txt")) == slurp(root / "b" / (stage + "_loss.txt")) &&
                      !slurp(root / "a" / (stage + ".ckpt")).empty();
    ok = ok && same;
    detail += verb + (same ? " identical; " : " DIFFERS; ");
  }
  // Round trip of a trained checkpoint: load, compare, re-save byte-identically, same outputs.
  const fs::path ckpt = desk.detector ? desk.out / "detector" / "detector.ckpt" : root / "a" / "detector.ckpt";
  const Checkpoint loaded = load_checkpoint(ckpt);
  save_checkpoint(loaded, root / "resaved.ckpt");
  const bool bytes = slurp(ckpt) == slurp(root / "resaved.ckpt");
  bool outputs = true;
  if (desk.detector) {
    outputs = loaded.network == *desk.detector &&
              detect_probabilities(loaded.network, desk.test_set.front().image) ==
                  detect_probabilities(*desk.detector, desk.test_set.front().image);
  }
  ok = ok && bytes && outputs && load_checkpoint(root / "resaved.ckpt") == loaded;
  detail += std::string("checkpoint round trip ") + (bytes && outputs ? "lossless" : "LOSSY") + " (" +
            ckpt.filename().string() + ")";
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path config = fs::path(SPD_SOURCE_DIR) / "configs" / "desk.yaml";
  fs::path out = "acceptance";
  std::set<int> only;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag == "--config") config = argv[i + 1];
    else if (flag == "--out") out = argv[i + 1];
    else if (flag == "--only") only.insert(std::stoi(argv[i + 1]));
    else {
      std::cerr << "unknown flag " << flag << "\n";
      return 2;
    }
  }

  Desk desk;
  desk.rc = RunConfig::load(config);
  const fs::path base = config.parent_path().parent_path();
  if (desk.rc.train_dir.is_relative()) desk.rc.train_dir = base / desk.rc.train_dir;
  if (desk.rc.test_dir.is_relative()) desk.rc.test_dir = base / desk.rc.test_dir;
  desk.rc.threads = 1;
  desk.rc.validate();
  set_num_threads(1);
  desk.out = out;
  fs::create_directories(out);
  desk.train_set = load_dataset(desk.rc.train_dir);
  desk.test_set = load_dataset(desk.rc.test_dir);
  std::cerr << "config " << config.string() << " (hash " << desk.rc.hash() << "), " << desk.train_set.size()
            << " train / " << desk.test_set.size() << " test images\n";

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient suite", gradients},
      {"optimizer exactness", optimizers},
      {"loss semantics", losses},
      {"noise model", noise_model},
      {"desk-scale detection", [&] { return detection(desk); }},
      {"desk-scale end-to-end ordering", [&] { return ordering(desk); }},
      {"psnr oracle", psnr_oracle},
      {"reproducibility", [&] { return reproducibility(desk); }},
  };
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(n)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << n << " (" << criteria[i].first << "): " << o.detail
              << std::endl;
  }
  return all ? 0 : 1;
}
