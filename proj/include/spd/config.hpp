// Run configuration: one YAML file with nested sections. Every CLI flag
// overrides the key of the same meaning; see configs/desk.yaml for the full
// key set.
#pragma once

#include <filesystem>
#include <string>

#include "spd/pipeline.hpp"

namespace spd {

struct StageBudget {
  std::size_t epochs = 30;
  std::size_t batch_size = 4;
  std::size_t patch_size = 32;
  std::size_t patches = 2000;
};

struct RunConfig {
  std::uint64_t seed = 1;
  int threads = 1;

  std::filesystem::path train_dir = "data/images/train";
  std::filesystem::path test_dir = "data/images/test";
  std::filesystem::path out_dir = "runs/desk";

  NoiseConfig noise;  // noise.seed is ignored; the run seed is used
  OptimizerConfig optimizer;
  double lr = 1e-3;
  std::size_t lr_period = 100;
  PenaltyParams penalty;
  bool flips = true;
  std::size_t checkpoint_every = 0;

  NetworkSpec detector_net{NetworkKind::detector, 7, 32};
  StageBudget detector{30, 4, 32, 2000};
  NetworkSpec drunet_net{NetworkKind::drunet, 7, 32, 16, 4, 4};
  StageBudget denoiser{50, 4, 64, 1000};

  double tau = 0.5;
  std::size_t median_window = 3;

  /// Training config for a stage. The one-stage baseline shares the
  /// denoiser's network and budget.
  TrainConfig train_config(Stage stage) const;
  EvalOptions eval_options() const;

  void validate() const;
  std::string to_yaml() const;
  /// FNV-1a of to_yaml().
  std::string hash() const;

  static RunConfig from_yaml(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
};

}  // namespace spd
