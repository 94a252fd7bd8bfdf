// Training loops, two-stage / one-stage inference, baselines and evaluation.
#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "spd/checkpoint.hpp"
#include "spd/image.hpp"
#include "spd/loss.hpp"
#include "spd/models.hpp"
#include "spd/noise.hpp"

namespace spd {

enum class Stage { detector, denoiser, one_stage };

const char* to_string(Stage s);
Stage parse_stage(const std::string& s);

struct OptimizerConfig {
  std::string kind = "adam";  // adam | sgd
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.0;
  double dampening = 0.0;
  double weight_decay = 0.0;
  bool nesterov = false;
};

struct TrainConfig {
  Stage stage = Stage::detector;
  std::size_t batch_size = 4;
  std::size_t epochs = 30;
  double base_lr = 1e-3;
  std::size_t lr_period = 100;  // epochs per 10x decay
  OptimizerConfig optimizer;
  PenaltyParams penalty;
  NoiseConfig noise;
  std::size_t patch_size = 32;
  std::size_t patches = 2000;
  bool flips = true;
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 0;  // epochs; 0 = final checkpoint only
  std::filesystem::path out_dir;     // empty = no files written
  NetworkSpec network;
  /// Called after every epoch with (epochs completed, mean loss). Not part of
  /// the trajectory.
  std::function<void(std::size_t, double)> on_epoch;

  /// Throws ConfigError on violated invariants.
  void validate() const;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedImage {
  std::string name;
  Image image;
};

/// Every image under `dir`, sorted by file name.
std::vector<NamedImage> load_dataset(const std::filesystem::path& dir);

/// `count` random crops (with replacement across images). Deterministic in seed.
std::vector<Image> extract_patches(const std::vector<NamedImage>& images, std::size_t count, std::size_t size,
                                   std::uint64_t seed);

/// One (input, target) training pair for the configured stage, normalized.
struct Sample {
  Image clean;
  Image noisy;
  NoiseMap map;
};

/// Corruption and augmentation of patch `index` in `epoch`.
Sample make_sample(const TrainConfig& cfg, const Image& patch, std::size_t epoch, std::size_t index);

/// Network input for a sample: noisy (detector, one-stage) or noisy with the
/// true noise positions zeroed (denoiser).
Image stage_input(Stage stage, const Sample& s);

template <typename T>
struct TrainResult {
  BasicNetworkState<T> state;
  std::vector<double> loss_history;  // per-epoch mean loss (linear scale)
  std::optional<AdamState<T>> adam;
  std::optional<SgdState<T>> sgd;
};

/// Runs epochs [start, cfg.epochs) on the patch set. `init` defaults to
/// init_params(cfg.network); `resume` continues from a checkpoint written by a
/// previous run with the same config. Writes checkpoints and loss history to
/// cfg.out_dir when set (float only).
template <typename T>
TrainResult<T> train(const TrainConfig& cfg, const std::vector<Image>& patches,
                     const std::optional<BasicNetworkState<T>>& init = std::nullopt,
                     const std::optional<Checkpoint>& resume = std::nullopt);

TrainResult<float> train_detector(const TrainConfig& cfg, const std::vector<Image>& patches);
TrainResult<float> train_denoiser(const TrainConfig& cfg, const std::vector<Image>& patches);
TrainResult<float> train_one_stage(const TrainConfig& cfg, const std::vector<Image>& patches);

Checkpoint make_checkpoint(const TrainConfig& cfg, const TrainResult<float>& result);

/// "epoch log10(loss)" lines, epochs counted from 1.
void write_loss_history(const std::vector<double>& history, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Inference

/// [1,1,H,W] with intensities divided by 255.
Tensor<float> to_tensor(const Image& img);
/// Batch of equally sized images as [N,1,H,W].
Tensor<float> to_batch(const std::vector<Image>& imgs);
/// De-normalize a [1,1,H,W] tensor: clamp to [0,255], round half up.
Image to_image(const Tensor<float>& t);

/// Mirror padding that excludes the edge pixel (dcb|abcd|cba).
Image reflect_pad(const Image& img, std::size_t right, std::size_t bottom);
Image crop(const Image& img, std::size_t width, std::size_t height);

/// Noise probabilities of the detector for one image, [1,1,H,W].
Tensor<float> detect_probabilities(const NetworkState& detector, const Image& noisy);

/// Runs a DRUnet on one image, reflect-padding to its divisor and cropping.
Image restore(const NetworkState& drunet, const Image& input);

struct TwoStageResult {
  Image restored;
  NoiseMap map;
};

TwoStageResult denoise_two_stage(const NetworkState& detector, const NetworkState& denoiser, const Image& noisy,
                                 double tau = 0.5);
/// Stage two alone, given any map (e.g. the ground truth).
Image denoise_with_map(const NetworkState& denoiser, const Image& noisy, const NoiseMap& map);
Image denoise_one_stage(const NetworkState& denoiser, const Image& noisy);

/// Median over a window x window neighbourhood, mirror-reflected at edges.
Image median_filter(const Image& noisy, std::size_t window = 3);

/// 10 log10(255^2 / MSE) in dB; nullopt marks identical images.
std::optional<double> psnr(const Image& a, const Image& b);

// ---------------------------------------------------------------------------
// Evaluation

struct EvalOptions {
  NoiseConfig noise;
  double tau = 0.5;
  std::size_t median_window = 3;
  std::string config_hash;
};

struct ImageEval {
  std::string name;
  std::optional<double> noisy, two_stage, two_stage_oracle, one_stage, median;
  AlarmRates detection;
};

struct EvalReport {
  std::vector<ImageEval> images;  // sorted by name
  std::optional<double> mean_noisy, mean_two_stage, mean_two_stage_oracle, mean_one_stage, mean_median;
  AlarmRates detection;  // pooled over all images
  std::string config_hash;
  std::uint64_t seed = 0;
};

/// Corrupts each test image (seeded per image), then scores every method.
/// `one_stage` may be absent. Throws std::invalid_argument on an empty set.
EvalReport evaluate(const NetworkState& detector, const NetworkState& denoiser,
                    const std::optional<NetworkState>& one_stage, const std::vector<NamedImage>& test_set,
                    const EvalOptions& opts);

/// Noise config used for test image `index` during evaluation.
NoiseConfig eval_noise(const NoiseConfig& base, std::size_t index);

/// Writes report.json (machine-readable) and report.txt (table) under dir.
void write_report(const EvalReport& report, const std::filesystem::path& dir);
std::string report_json(const EvalReport& report);
std::string report_table(const EvalReport& report);

}  // namespace spd
