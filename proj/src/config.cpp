#include "spd/config.hpp"

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <set>
#include <sstream>

#include "spd/rng.hpp"

namespace spd {
namespace {

constexpr std::uint64_t kDetectorInitStream = 0xde7e'c701;
constexpr std::uint64_t kDrunetInitStream = 0xd12e'0e71;

class Section {
 public:
  Section(const YAML::Node& node, std::string name, std::set<std::string> allowed)
      : node_(node), name_(std::move(name)) {
    if (!node_) return;
    if (!node_.IsMap()) throw ConfigError("config section '" + name_ + "' must be a mapping");
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!allowed.contains(key)) throw ConfigError("unknown config key '" + qualified(key) + "'");
    }
  }

  template <typename T>
  void read(const std::string& key, T& out) const {
    if (!node_ || !node_[key]) return;
    try {
      out = node_[key].as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError("config key '" + qualified(key) + "' has an invalid value");
    }
  }

  void read_byte(const std::string& key, std::uint8_t& out) const {
    int v = out;
    read(key, v);
    if (v < 0 || v > 255) throw ConfigError("config key '" + qualified(key) + "' must lie in [0,255]");
    out = static_cast<std::uint8_t>(v);
  }

  void read_path(const std::string& key, std::filesystem::path& out) const {
    std::string s = out.string();
    read(key, s);
    out = s;
  }

 private:
  std::string qualified(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

  YAML::Node node_;
  std::string name_;
};

void read_budget(const Section& s, StageBudget& b) {
  s.read("epochs", b.epochs);
  s.read("batch_size", b.batch_size);
  s.read("patch_size", b.patch_size);
  s.read("patches", b.patches);
}

void emit_budget(YAML::Emitter& out, const StageBudget& b) {
  out << YAML::Key << "epochs" << YAML::Value << b.epochs;
  out << YAML::Key << "batch_size" << YAML::Value << b.batch_size;
  out << YAML::Key << "patch_size" << YAML::Value << b.patch_size;
  out << YAML::Key << "patches" << YAML::Value << b.patches;
}

}  // namespace

TrainConfig RunConfig::train_config(Stage stage) const {
  TrainConfig cfg;
  cfg.stage = stage;
  const StageBudget& budget = stage == Stage::detector ? detector : denoiser;
  cfg.batch_size = budget.batch_size;
  cfg.epochs = budget.epochs;
  cfg.patch_size = budget.patch_size;
  cfg.patches = budget.patches;
  cfg.base_lr = lr;
  cfg.lr_period = lr_period;
  cfg.optimizer = optimizer;
  cfg.penalty = penalty;
  cfg.noise = noise;
  cfg.noise.seed = seed;
  cfg.flips = flips;
  cfg.seed = hash_key(seed, static_cast<std::uint64_t>(stage));
  cfg.checkpoint_every = checkpoint_every;
  cfg.out_dir = out_dir;
  cfg.network = stage == Stage::detector ? detector_net : drunet_net;
  cfg.network.seed = hash_key(seed, stage == Stage::detector ? kDetectorInitStream : kDrunetInitStream);
  return cfg;
}

EvalOptions RunConfig::eval_options() const {
  EvalOptions opts;
  opts.noise = noise;
  opts.noise.seed = seed;
  opts.tau = tau;
  opts.median_window = median_window;
  opts.config_hash = hash();
  return opts;
}

void RunConfig::validate() const {
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("eval.tau must lie in (0,1)");
  if (median_window < 3 || median_window % 2 == 0) throw ConfigError("eval.median_window must be odd and >= 3");
  train_config(Stage::detector).validate();
  train_config(Stage::denoiser).validate();
}

std::string RunConfig::to_yaml() const {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "seed" << YAML::Value << seed;
  out << YAML::Key << "threads" << YAML::Value << threads;
  out << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "train_dir" << YAML::Value << train_dir.string();
  out << YAML::Key << "test_dir" << YAML::Value << test_dir.string();
  out << YAML::Key << "out_dir" << YAML::Value << out_dir.string();
  out << YAML::EndMap;
  out << YAML::Key << "noise" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "density" << YAML::Value << noise.density;
  out << YAML::Key << "salt" << YAML::Value << int{noise.salt_value};
  out << YAML::Key << "pepper" << YAML::Value << int{noise.pepper_value};
  out << YAML::Key << "salt_fraction" << YAML::Value << noise.salt_fraction;
  out << YAML::Key << "salt_max" << YAML::Value << int{noise.salt_value_max};
  out << YAML::Key << "pepper_min" << YAML::Value << int{noise.pepper_value_min};
  out << YAML::EndMap;
  out << YAML::Key << "optimizer" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "kind" << YAML::Value << optimizer.kind;
  out << YAML::Key << "lr" << YAML::Value << lr;
  out << YAML::Key << "lr_period" << YAML::Value << lr_period;
  out << YAML::Key << "beta1" << YAML::Value << optimizer.beta1;
  out << YAML::Key << "beta2" << YAML::Value << optimizer.beta2;
  out << YAML::Key << "eps" << YAML::Value << optimizer.eps;
  out << YAML::Key << "momentum" << YAML::Value << optimizer.momentum;
  out << YAML::Key << "dampening" << YAML::Value << optimizer.dampening;
  out << YAML::Key << "weight_decay" << YAML::Value << optimizer.weight_decay;
  out << YAML::Key << "nesterov" << YAML::Value << optimizer.nesterov;
  out << YAML::EndMap;
  out << YAML::Key << "penalty" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "alpha" << YAML::Value << penalty.alpha;
  out << YAML::Key << "beta" << YAML::Value << penalty.beta;
  out << YAML::EndMap;
  out << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "flips" << YAML::Value << flips;
  out << YAML::Key << "checkpoint_every" << YAML::Value << checkpoint_every;
  out << YAML::EndMap;
  out << YAML::Key << "detector" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "depth" << YAML::Value << detector_net.depth;
  out << YAML::Key << "width" << YAML::Value << detector_net.width;
  emit_budget(out, detector);
  out << YAML::EndMap;
  out << YAML::Key << "denoiser" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "base_channels" << YAML::Value << drunet_net.base_channels;
  out << YAML::Key << "scales" << YAML::Value << drunet_net.scales;
  out << YAML::Key << "blocks" << YAML::Value << drunet_net.blocks;
  emit_budget(out, denoiser);
  out << YAML::EndMap;
  out << YAML::Key << "eval" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "tau" << YAML::Value << tau;
  out << YAML::Key << "median_window" << YAML::Value << median_window;
  out << YAML::EndMap;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

std::string RunConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : to_yaml()) h = (h ^ c) * 0x100000001b3ULL;
  std::ostringstream hex;
  hex << std::hex << h;
  return hex.str();
}

RunConfig RunConfig::from_yaml(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config is not valid YAML: ") + e.what());
  }
  RunConfig cfg;
  if (!root || root.IsNull()) return cfg;
  const Section top(root, "", {"seed", "threads", "data", "noise", "optimizer", "penalty", "train", "detector",
                               "denoiser", "eval"});
  top.read("seed", cfg.seed);
  top.read("threads", cfg.threads);

  const Section data(root["data"], "data", {"train_dir", "test_dir", "out_dir"});
  data.read_path("train_dir", cfg.train_dir);
  data.read_path("test_dir", cfg.test_dir);
  data.read_path("out_dir", cfg.out_dir);

  const Section noise(root["noise"], "noise", {"density", "salt", "pepper", "salt_fraction", "salt_max", "pepper_min"});
  noise.read("density", cfg.noise.density);
  noise.read_byte("salt", cfg.noise.salt_value);
  noise.read_byte("pepper", cfg.noise.pepper_value);
  noise.read("salt_fraction", cfg.noise.salt_fraction);
  cfg.noise.salt_value_max = cfg.noise.salt_value;
  cfg.noise.pepper_value_min = cfg.noise.pepper_value;
  noise.read_byte("salt_max", cfg.noise.salt_value_max);
  noise.read_byte("pepper_min", cfg.noise.pepper_value_min);

  const Section opt(root["optimizer"], "optimizer", {"kind", "lr", "lr_period", "beta1", "beta2", "eps", "momentum",
                                                     "dampening", "weight_decay", "nesterov"});
  opt.read("kind", cfg.optimizer.kind);
  opt.read("lr", cfg.lr);
  opt.read("lr_period", cfg.lr_period);
  opt.read("beta1", cfg.optimizer.beta1);
  opt.read("beta2", cfg.optimizer.beta2);
  opt.read("eps", cfg.optimizer.eps);
  opt.read("momentum", cfg.optimizer.momentum);
  opt.read("dampening", cfg.optimizer.dampening);
  opt.read("weight_decay", cfg.optimizer.weight_decay);
  opt.read("nesterov", cfg.optimizer.nesterov);

  const Section pen(root["penalty"], "penalty", {"alpha", "beta"});
  pen.read("alpha", cfg.penalty.alpha);
  pen.read("beta", cfg.penalty.beta);

  const Section train(root["train"], "train", {"flips", "checkpoint_every"});
  train.read("flips", cfg.flips);
  train.read("checkpoint_every", cfg.checkpoint_every);

  const Section det(root["detector"], "detector", {"depth", "width", "epochs", "batch_size", "patch_size", "patches"});
  det.read("depth", cfg.detector_net.depth);
  det.read("width", cfg.detector_net.width);
  read_budget(det, cfg.detector);

  const Section den(root["denoiser"], "denoiser",
                    {"base_channels", "scales", "blocks", "epochs", "batch_size", "patch_size", "patches"});
  den.read("base_channels", cfg.drunet_net.base_channels);
  den.read("scales", cfg.drunet_net.scales);
  den.read("blocks", cfg.drunet_net.blocks);
  read_budget(den, cfg.denoiser);

  const Section ev(root["eval"], "eval", {"tau", "median_window"});
  ev.read("tau", cfg.tau);
  ev.read("median_window", cfg.median_window);
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return from_yaml(buf.str());
}

}  // namespace spd
