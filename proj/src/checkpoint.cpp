#include "spd/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace spd {
namespace fs = std::filesystem;

namespace {

constexpr const char* kMagic = "spdenoise-checkpoint 1";

std::string shape_text(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(s[i]);
  }
  return out.empty() ? "scalar" : out;
}

Shape parse_shape(const std::string& text) {
  if (text == "scalar") return {};
  Shape s;
  std::stringstream in(text);
  std::string part;
  while (std::getline(in, part, 'x')) s.push_back(std::stoull(part));
  return s;
}

std::uint64_t parse_u64(const std::string& s) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) throw CheckpointError("bad integer in manifest: " + s);
  return v;
}

void append_le(std::string& out, float v) {
  auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<char>(bits & 0xffu));
    bits >>= 8;
  }
}

float read_le(const char* p) {
  std::uint32_t bits = 0;
  for (int i = 3; i >= 0; --i) bits = (bits << 8) | static_cast<std::uint8_t>(p[i]);
  return std::bit_cast<float>(bits);
}

struct NamedTensor {
  std::string name;
  const Tensor<float>* tensor;
};

class Manifest {
 public:
  void set(const std::string& key, const std::string& value) {
    if (!values_.emplace(key, value).second) throw CheckpointError("duplicate manifest key: " + key);
    order_.push_back(key);
  }
  void set(const std::string& key, double v) { set(key, format_double(v)); }
  void set(const std::string& key, std::uint64_t v) { set(key, std::to_string(v)); }

  const std::string& get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw CheckpointError("checkpoint manifest missing key: " + key);
    return it->second;
  }
  bool has(const std::string& key) const { return values_.contains(key); }
  double get_double(const std::string& key) const { return parse_double(get(key)); }
  std::uint64_t get_u64(const std::string& key) const { return parse_u64(get(key)); }

  std::string text() const {
    std::string out = std::string(kMagic) + "\n";
    for (const auto& key : order_) out += key + " = " + values_.at(key) + "\n";
    return out + "end\n";
  }

  const std::map<std::string, std::string>& values() const { return values_; }

  static Manifest parse(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != kMagic) throw CheckpointError("not a spdenoise checkpoint");
    Manifest m;
    while (std::getline(in, line)) {
      if (line == "end") return m;
      const auto eq = line.find(" = ");
      if (eq == std::string::npos) throw CheckpointError("malformed manifest line: " + line);
      m.set(line.substr(0, eq), line.substr(eq + 3));
    }
    throw CheckpointError("checkpoint manifest is not terminated");
  }

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

void write_spec(Manifest& m, const NetworkSpec& spec) {
  m.set("network.kind", to_string(spec.kind));
  m.set("network.depth", std::uint64_t{spec.depth});
  m.set("network.width", std::uint64_t{spec.width});
  m.set("network.base_channels", std::uint64_t{spec.base_channels});
  m.set("network.scales", std::uint64_t{spec.scales});
  m.set("network.blocks", std::uint64_t{spec.blocks});
  m.set("network.kernel", std::uint64_t{spec.kernel});
  m.set("network.seed", spec.seed);
}

NetworkSpec read_spec(const Manifest& m) {
  NetworkSpec spec;
  spec.kind = parse_network_kind(m.get("network.kind"));
  spec.depth = m.get_u64("network.depth");
  spec.width = m.get_u64("network.width");
  spec.base_channels = m.get_u64("network.base_channels");
  spec.scales = m.get_u64("network.scales");
  spec.blocks = m.get_u64("network.blocks");
  spec.kernel = m.get_u64("network.kernel");
  spec.seed = m.get_u64("network.seed");
  return spec;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

double parse_double(const std::string& s) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) throw CheckpointError("bad number: " + s);
  return v;
}

bool Checkpoint::operator==(const Checkpoint& o) const {
  const auto same_adam = [](const AdamState<float>& a, const AdamState<float>& b) {
    return a.lr == b.lr && a.beta1 == b.beta1 && a.beta2 == b.beta2 && a.eps == b.eps && a.step == b.step &&
           a.m == b.m && a.v == b.v;
  };
  const auto same_sgd = [](const SgdState<float>& a, const SgdState<float>& b) {
    return a.lr == b.lr && a.momentum == b.momentum && a.dampening == b.dampening &&
           a.weight_decay == b.weight_decay && a.nesterov == b.nesterov && a.velocity == b.velocity;
  };
  if (!(network == o.network) || meta != o.meta) return false;
  if (adam.has_value() != o.adam.has_value() || sgd.has_value() != o.sgd.has_value()) return false;
  if (adam && !same_adam(*adam, *o.adam)) return false;
  if (sgd && !same_sgd(*sgd, *o.sgd)) return false;
  return true;
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  const NetworkState& net = ckpt.network;
  if (net.names.size() != net.params.size()) throw CheckpointError("network state names/params mismatch");
  Manifest m;
  write_spec(m, net.spec);
  for (const auto& [k, v] : ckpt.meta) m.set("meta." + k, v);

  std::vector<NamedTensor> tensors;
  for (std::size_t i = 0; i < net.params.size(); ++i) tensors.push_back({"param/" + net.names[i], &net.params[i]});
  if (ckpt.adam) {
    const auto& a = *ckpt.adam;
    m.set("optimizer.kind", std::string("adam"));
    m.set("optimizer.lr", a.lr);
    m.set("optimizer.beta1", a.beta1);
    m.set("optimizer.beta2", a.beta2);
    m.set("optimizer.eps", a.eps);
    m.set("optimizer.step", a.step);
    for (std::size_t i = 0; i < a.m.size(); ++i) tensors.push_back({"adam.m/" + net.names.at(i), &a.m[i]});
    for (std::size_t i = 0; i < a.v.size(); ++i) tensors.push_back({"adam.v/" + net.names.at(i), &a.v[i]});
  } else if (ckpt.sgd) {
    const auto& s = *ckpt.sgd;
    m.set("optimizer.kind", std::string("sgd"));
    m.set("optimizer.lr", s.lr);
    m.set("optimizer.momentum", s.momentum);
    m.set("optimizer.dampening", s.dampening);
    m.set("optimizer.weight_decay", s.weight_decay);
    m.set("optimizer.nesterov", std::string(s.nesterov ? "true" : "false"));
    for (std::size_t i = 0; i < s.velocity.size(); ++i) {
      tensors.push_back({"sgd.velocity/" + net.names.at(i), &s.velocity[i]});
    }
  } else {
    m.set("optimizer.kind", std::string("none"));
  }

  std::string payload;
  m.set("tensor.count", std::uint64_t{tensors.size()});
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const std::string key = "tensor." + std::to_string(i);
    m.set(key + ".name", tensors[i].name);
    m.set(key + ".shape", shape_text(tensors[i].tensor->shape()));
    m.set(key + ".offset", std::uint64_t{payload.size()});
    for (float v : tensors[i].tensor->data()) append_le(payload, v);
  }
  m.set("payload.bytes", std::uint64_t{payload.size()});

  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out << m.text();
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const Manifest m = Manifest::parse(in);
  const std::string payload(std::istreambuf_iterator<char>(in), {});
  if (payload.size() != m.get_u64("payload.bytes")) {
    throw CheckpointError("checkpoint payload truncated: " + path.string());
  }

  std::map<std::string, Tensor<float>> tensors;
  const std::uint64_t count = m.get_u64("tensor.count");
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string key = "tensor." + std::to_string(i);
    const Shape shape = parse_shape(m.get(key + ".shape"));
    const std::uint64_t offset = m.get_u64(key + ".offset");
    const std::size_t n = numel(shape);
    if (offset + 4 * n > payload.size()) throw CheckpointError("tensor " + m.get(key + ".name") + " out of bounds");
    Tensor<float> t(shape);
    for (std::size_t j = 0; j < n; ++j) t[j] = read_le(payload.data() + offset + 4 * j);
    tensors.emplace(m.get(key + ".name"), std::move(t));
  }
  const auto take = [&](const std::string& name) {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw CheckpointError("checkpoint missing tensor " + name);
    return it->second;
  };

  Checkpoint ckpt;
  ckpt.network.spec = read_spec(m);
  for (const auto& info : param_layout(ckpt.network.spec)) {
    Tensor<float> t = take("param/" + info.name);
    require_same_shape(t.shape(), info.shape, info.name.c_str());
    ckpt.network.names.push_back(info.name);
    ckpt.network.params.push_back(std::move(t));
  }
  for (const auto& [k, v] : m.values()) {
    if (k.starts_with("meta.")) ckpt.meta.emplace(k.substr(5), v);
  }
  const std::string kind = m.get("optimizer.kind");
  if (kind == "adam") {
    AdamState<float> a;
    a.lr = m.get_double("optimizer.lr");
    a.beta1 = m.get_double("optimizer.beta1");
    a.beta2 = m.get_double("optimizer.beta2");
    a.eps = m.get_double("optimizer.eps");
    a.step = m.get_u64("optimizer.step");
    if (tensors.contains("adam.m/" + ckpt.network.names.front())) {
      for (const auto& name : ckpt.network.names) {
        a.m.push_back(take("adam.m/" + name));
        a.v.push_back(take("adam.v/" + name));
      }
    }
    ckpt.adam = std::move(a);
  } else if (kind == "sgd") {
    SgdState<float> s;
    s.lr = m.get_double("optimizer.lr");
    s.momentum = m.get_double("optimizer.momentum");
    s.dampening = m.get_double("optimizer.dampening");
    s.weight_decay = m.get_double("optimizer.weight_decay");
    s.nesterov = m.get("optimizer.nesterov") == "true";
    if (tensors.contains("sgd.velocity/" + ckpt.network.names.front())) {
      for (const auto& name : ckpt.network.names) s.velocity.push_back(take("sgd.velocity/" + name));
    }
    ckpt.sgd = std::move(s);
  } else if (kind != "none") {
    throw CheckpointError("unknown optimizer kind in checkpoint: " + kind);
  }
  return ckpt;
}

}  // namespace spd
