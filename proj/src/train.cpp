#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "spd/pipeline.hpp"
#include "spd/rng.hpp"

namespace spd {
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kPatchStream = 0x9a7c'0001;
constexpr std::uint64_t kOrderStream = 0x0d3e'0002;

Image flip_horizontal(const Image& img) {
  Image out = img;
  for (std::size_t y = 0; y < img.height; ++y) {
    std::reverse(out.pixels.begin() + static_cast<std::ptrdiff_t>(y * img.width),
                 out.pixels.begin() + static_cast<std::ptrdiff_t>((y + 1) * img.width));
  }
  return out;
}

Image flip_vertical(const Image& img) {
  Image out = img;
  for (std::size_t y = 0; y < img.height; ++y) {
    std::copy_n(img.pixels.begin() + static_cast<std::ptrdiff_t>((img.height - 1 - y) * img.width), img.width,
                out.pixels.begin() + static_cast<std::ptrdiff_t>(y * img.width));
  }
  return out;
}

Tensor<float> map_tensor(const std::vector<NoiseMap>& maps) {
  const std::size_t h = maps.front().height, w = maps.front().width;
  Tensor<float> t(Shape{maps.size(), 1, h, w});
  for (std::size_t n = 0; n < maps.size(); ++n) {
    for (std::size_t i = 0; i < h * w; ++i) t[n * h * w + i] = static_cast<float>(maps[n].bits[i]);
  }
  return t;
}

std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  CounterRng rng(hash_key(seed, epoch, kOrderStream));
  for (std::size_t i = count; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

std::string join_history(const std::vector<double>& h) {
  std::string out;
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (i) out += ',';
    out += format_double(h[i]);
  }
  return out;
}

std::vector<double> split_history(const std::string& s) {
  std::vector<double> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(parse_double(item));
  }
  return out;
}

// Hash of everything that determines the trajectory, excluding the epoch
// budget and output locations so that resumed runs match.
std::string trajectory_hash(const TrainConfig& cfg) {
  std::ostringstream d;
  d << to_string(cfg.stage) << '|' << cfg.batch_size << '|' << format_double(cfg.base_lr) << '|' << cfg.lr_period
    << '|' << cfg.optimizer.kind << '|' << format_double(cfg.optimizer.beta1) << '|'
    << format_double(cfg.optimizer.beta2) << '|' << format_double(cfg.optimizer.eps) << '|'
    << format_double(cfg.optimizer.momentum) << '|' << format_double(cfg.optimizer.dampening) << '|'
    << format_double(cfg.optimizer.weight_decay) << '|' << cfg.optimizer.nesterov << '|'
    << format_double(cfg.penalty.alpha) << '|' << format_double(cfg.penalty.beta) << '|'
    << format_double(cfg.noise.density) << '|' << int{cfg.noise.salt_value} << '|' << int{cfg.noise.pepper_value}
    << '|' << format_double(cfg.noise.salt_fraction) << '|' << cfg.noise.seed << '|'
    << int{cfg.noise.salt_value_max} << '|' << int{cfg.noise.pepper_value_min} << '|' << cfg.patch_size << '|'
    << cfg.patches << '|' << cfg.flips << '|' << cfg.seed << '|' << to_string(cfg.network.kind) << '|'
    << cfg.network.depth << '|' << cfg.network.width << '|' << cfg.network.base_channels << '|'
    << cfg.network.scales << '|' << cfg.network.blocks << '|' << cfg.network.seed;
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : d.str()) h = (h ^ c) * 0x100000001b3ULL;
  std::ostringstream hex;
  hex << std::hex << h;
  return hex.str();
}

}  // namespace

const char* to_string(Stage s) {
  switch (s) {
    case Stage::detector: return "detector";
    case Stage::denoiser: return "denoiser";
    case Stage::one_stage: return "one_stage";
  }
  return "?";
}

Stage parse_stage(const std::string& s) {
  if (s == "detector") return Stage::detector;
  if (s == "denoiser") return Stage::denoiser;
  if (s == "one_stage" || s == "one-stage") return Stage::one_stage;
  throw ConfigError("unknown stage: " + s);
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (patch_size < 3) throw ConfigError("patch_size must be >= 3");
  if (patches < 1) throw ConfigError("patch count must be >= 1");
  if (!(base_lr >= 0.0)) throw ConfigError("base_lr must be nonnegative");
  if (lr_period < 1) throw ConfigError("lr_period must be >= 1");
  if (optimizer.kind == "adam") {
    AdamState<float>{base_lr, optimizer.beta1, optimizer.beta2, optimizer.eps, 0, {}, {}}.validate();
  } else if (optimizer.kind == "sgd") {
    SgdState<float>{base_lr, optimizer.momentum, optimizer.dampening, optimizer.weight_decay, optimizer.nesterov, {}}
        .validate();
  } else {
    throw ConfigError("optimizer must be adam or sgd");
  }
  network.validate();
  noise.validate();
  penalty.validate();
  const bool wants_detector = stage == Stage::detector;
  if (wants_detector != (network.kind == NetworkKind::detector)) {
    throw ConfigError(std::string("stage ") + to_string(stage) + " cannot train a " + to_string(network.kind));
  }
  if (patch_size % network.divisor() != 0) {
    throw ConfigError("patch_size " + std::to_string(patch_size) + " must be divisible by " +
                      std::to_string(network.divisor()) + " for this network");
  }
}

std::vector<NamedImage> load_dataset(const fs::path& dir) {
  std::vector<NamedImage> out;
  for (const auto& path : list_images(dir)) out.push_back({path.filename().string(), read_image(path)});
  return out;
}

std::vector<Image> extract_patches(const std::vector<NamedImage>& images, std::size_t count, std::size_t size,
                                   std::uint64_t seed) {
  if (images.empty()) throw TrainingError("empty dataset: no images to extract patches from");
  for (const auto& img : images) {
    if (img.image.width < size || img.image.height < size) {
      throw TrainingError("image " + img.name + " is smaller than the " + std::to_string(size) + "px patch size");
    }
  }
  CounterRng rng(seed, kPatchStream);
  std::vector<Image> patches;
  patches.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const Image& src = images[rng.below(images.size())].image;
    const std::size_t x0 = rng.below(src.width - size + 1);
    const std::size_t y0 = rng.below(src.height - size + 1);
    Image p(size, size);
    for (std::size_t y = 0; y < size; ++y) {
      std::copy_n(src.pixels.begin() + static_cast<std::ptrdiff_t>((y0 + y) * src.width + x0), size,
                  p.pixels.begin() + static_cast<std::ptrdiff_t>(y * size));
    }
    patches.push_back(std::move(p));
  }
  return patches;
}

Sample make_sample(const TrainConfig& cfg, const Image& patch, std::size_t epoch, std::size_t index) {
  const std::uint64_t key = hash_key(cfg.seed, epoch, index);
  CounterRng rng(key);
  Image clean = patch;
  if (cfg.flips) {
    if (rng.uniform() < 0.5) clean = flip_horizontal(clean);
    if (rng.uniform() < 0.5) clean = flip_vertical(clean);
  }
  auto [noisy, map] = synthesize(clean, draw_sample(cfg.noise, key));
  return Sample{std::move(clean), std::move(noisy), std::move(map)};
}

Image stage_input(Stage stage, const Sample& s) {
  return stage == Stage::denoiser ? zero_noise(s.noisy, s.map) : s.noisy;
}

template <typename T>
TrainResult<T> train(const TrainConfig& cfg, const std::vector<Image>& patches,
                     const std::optional<BasicNetworkState<T>>& init, const std::optional<Checkpoint>& resume) {
  cfg.validate();
  if (patches.empty()) throw TrainingError("empty dataset: no training patches");
  for (const auto& p : patches) {
    if (p.width != cfg.patch_size || p.height != cfg.patch_size) {
      throw TrainingError("training patch size does not match patch_size " + std::to_string(cfg.patch_size));
    }
  }

  TrainResult<T> result;
  std::size_t start_epoch = 0;
  const std::string hash = trajectory_hash(cfg);
  if (resume) {
    if (resume->meta.count("config_hash") == 0 || resume->meta.at("config_hash") != hash) {
      throw TrainingError("checkpoint was produced by a different training configuration");
    }
    result.state = resume->network.template cast<T>();
    start_epoch = std::stoull(resume->meta.at("epochs_completed"));
    result.loss_history = split_history(resume->meta.at("loss_history"));
    const auto convert = [](const std::vector<Tensor<float>>& v) {
      std::vector<Tensor<T>> out;
      for (const auto& t : v) out.push_back(t.template cast<T>());
      return out;
    };
    if (resume->adam) {
      const auto& a = *resume->adam;
      result.adam = AdamState<T>{a.lr, a.beta1, a.beta2, a.eps, a.step, convert(a.m), convert(a.v)};
    }
    if (resume->sgd) {
      const auto& s = *resume->sgd;
      result.sgd = SgdState<T>{s.lr, s.momentum, s.dampening, s.weight_decay, s.nesterov, convert(s.velocity)};
    }
  } else {
    result.state = init ? *init : init_params(cfg.network).template cast<T>();
    if (!(result.state.spec == cfg.network)) throw TrainingError("initial state does not match the network spec");
  }
  if (cfg.optimizer.kind == "adam" && !result.adam) {
    result.adam = AdamState<T>{cfg.base_lr, cfg.optimizer.beta1, cfg.optimizer.beta2, cfg.optimizer.eps, 0, {}, {}};
  } else if (cfg.optimizer.kind == "sgd" && !result.sgd) {
    result.sgd = SgdState<T>{cfg.base_lr,          cfg.optimizer.momentum, cfg.optimizer.dampening,
                             cfg.optimizer.weight_decay, cfg.optimizer.nesterov, {}};
  }

  const auto save = [&](std::size_t epochs_done, const fs::path& path) {
    if constexpr (std::is_same_v<T, float>) {
      Checkpoint ckpt = make_checkpoint(cfg, result);
      ckpt.meta["epochs_completed"] = std::to_string(epochs_done);
      save_checkpoint(ckpt, path);
    }
  };
  if (!cfg.out_dir.empty()) fs::create_directories(cfg.out_dir);

  for (std::size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, cfg.base_lr, cfg.lr_period);
    if (result.adam) result.adam->lr = lr;
    if (result.sgd) result.sgd->lr = lr;
    const auto order = epoch_order(patches.size(), cfg.seed, epoch);
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      std::vector<Image> inputs, clean;
      std::vector<NoiseMap> maps;
      for (std::size_t j = begin; j < end; ++j) {
        Sample s = make_sample(cfg, patches[order[j]], epoch, order[j]);
        inputs.push_back(stage_input(cfg.stage, s));
        clean.push_back(std::move(s.clean));
        maps.push_back(std::move(s.map));
      }
      Tape<T> tape;
      const std::vector<Var<T>> params = as_variables(tape, result.state);
      const Var<T> input = tape.constant(to_batch(inputs).template cast<T>());
      const Var<T> output = network_forward<T>(cfg.network, params, input);
      Var<T> loss;
      if (cfg.stage == Stage::detector) {
        loss = asymmetric_loss(output, tape.constant(map_tensor(maps).template cast<T>()), cfg.penalty);
      } else {
        loss = fnorm_loss(output, tape.constant(to_batch(clean).template cast<T>()));
      }
      const double value = static_cast<double>(loss.value().item());
      if (!std::isfinite(value)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " +
                            std::to_string(steps + 1) + "; lower the learning rate");
      }
      const std::vector<Tensor<T>> grads = tape.backward(loss, params);
      if (result.adam) adam_step<T>(result.state.params, grads, *result.adam);
      else sgd_step<T>(result.state.params, grads, *result.sgd);
      loss_sum += value;
      ++steps;
    }
    result.loss_history.push_back(loss_sum / static_cast<double>(steps));
    if (cfg.on_epoch) cfg.on_epoch(epoch + 1, result.loss_history.back());
    if (!cfg.out_dir.empty() && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
      save(epoch + 1, cfg.out_dir / (std::string(to_string(cfg.stage)) + "_epoch" + std::to_string(epoch + 1) + ".ckpt"));
    }
  }
  if (!cfg.out_dir.empty()) {
    save(cfg.epochs, cfg.out_dir / (std::string(to_string(cfg.stage)) + ".ckpt"));
    write_loss_history(result.loss_history, cfg.out_dir / (std::string(to_string(cfg.stage)) + "_loss.txt"));
  }
  return result;
}

template TrainResult<float> train(const TrainConfig&, const std::vector<Image>&,
                                  const std::optional<BasicNetworkState<float>>&, const std::optional<Checkpoint>&);
template TrainResult<double> train(const TrainConfig&, const std::vector<Image>&,
                                   const std::optional<BasicNetworkState<double>>&, const std::optional<Checkpoint>&);

namespace {
TrainResult<float> train_stage(Stage stage, const TrainConfig& cfg, const std::vector<Image>& patches) {
  if (cfg.stage != stage) {
    throw ConfigError(std::string("expected a ") + to_string(stage) + " config, got " + to_string(cfg.stage));
  }
  return train<float>(cfg, patches);
}
}  // namespace

TrainResult<float> train_detector(const TrainConfig& cfg, const std::vector<Image>& patches) {
  return train_stage(Stage::detector, cfg, patches);
}
TrainResult<float> train_denoiser(const TrainConfig& cfg, const std::vector<Image>& patches) {
  return train_stage(Stage::denoiser, cfg, patches);
}
TrainResult<float> train_one_stage(const TrainConfig& cfg, const std::vector<Image>& patches) {
  return train_stage(Stage::one_stage, cfg, patches);
}

Checkpoint make_checkpoint(const TrainConfig& cfg, const TrainResult<float>& result) {
  Checkpoint ckpt;
  ckpt.network = result.state;
  ckpt.adam = result.adam;
  ckpt.sgd = result.sgd;
  ckpt.meta["stage"] = to_string(cfg.stage);
  ckpt.meta["seed"] = std::to_string(cfg.seed);
  ckpt.meta["config_hash"] = trajectory_hash(cfg);
  ckpt.meta["epochs_completed"] = std::to_string(result.loss_history.size());
  ckpt.meta["loss_history"] = join_history(result.loss_history);
  return ckpt;
}

void write_loss_history(const std::vector<double>& history, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw TrainingError("cannot write loss history " + path.string());
  out << "# epoch log10_mean_loss\n";
  for (std::size_t i = 0; i < history.size(); ++i) {
    out << (i + 1) << ' ' << format_double(std::log10(history[i])) << '\n';
  }
}

}  // namespace spd
