#include "spd/models.hpp"

#include <cmath>
#include <stdexcept>

#include "spd/noise.hpp"
#include "spd/rng.hpp"

namespace spd {
namespace {

constexpr ConvGeometry kSame{1, 1};
constexpr ConvGeometry kDown{2, 1};
constexpr ConvGeometry kUp{2, 0};
constexpr std::size_t kUpKernel = 2;
const double kLinearGain = std::sqrt(0.5);

class LayoutBuilder {
 public:
  void conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k, double gain = 1.0) {
    out_.push_back({name + ".weight", Shape{cout, cin, k, k}, cin * k * k, gain});
    out_.push_back({name + ".bias", Shape{cout}, 0});
  }
  void transpose(const std::string& name, std::size_t cin, std::size_t cout) {
    // A 2x2 stride-2 transposed conv feeds each output from exactly cin inputs.
    out_.push_back({name + ".weight", Shape{cin, cout, kUpKernel, kUpKernel}, cin, kLinearGain});
    out_.push_back({name + ".bias", Shape{cout}, 0});
  }
  void resblocks(const std::string& prefix, std::size_t channels, std::size_t count, std::size_t k,
                 double branch_gain) {
    for (std::size_t r = 0; r < count; ++r) {
      const std::string base = prefix + ".res" + std::to_string(r);
      conv(base + ".conv1", channels, channels, k);
      conv(base + ".conv2", channels, channels, k, branch_gain);
    }
  }
  std::vector<ParamInfo> take() { return std::move(out_); }

 private:
  std::vector<ParamInfo> out_;
};

template <typename T>
class ParamCursor {
 public:
  explicit ParamCursor(std::span<const Var<T>> params) : params_(params) {}
  Var<T> next() {
    if (pos_ >= params_.size()) throw std::invalid_argument("network forward: too few parameters supplied");
    return params_[pos_++];
  }
  void finish() const {
    if (pos_ != params_.size()) throw std::invalid_argument("network forward: too many parameters supplied");
  }

 private:
  std::span<const Var<T>> params_;
  std::size_t pos_ = 0;
};

template <typename T>
Var<T> conv_layer(ParamCursor<T>& cur, Var<T> x, ConvGeometry g) {
  Var<T> w = cur.next();
  Var<T> b = cur.next();
  return conv2d(x, w, b, g);
}

template <typename T>
Var<T> resblocks(ParamCursor<T>& cur, Var<T> x, std::size_t count) {
  for (std::size_t r = 0; r < count; ++r) {
    Var<T> w1 = cur.next(), b1 = cur.next(), w2 = cur.next(), b2 = cur.next();
    x = residual_block(x, w1, b1, w2, b2);
  }
  return x;
}

void check_single_channel(const Shape& s, const char* what) {
  require_rank4(s, what);
  if (s[1] != 1) throw ShapeError(std::string(what) + ": expected 1 input channel, got " + to_string(s));
}

}  // namespace

const char* to_string(NetworkKind kind) { return kind == NetworkKind::detector ? "detector" : "drunet"; }

NetworkKind parse_network_kind(const std::string& s) {
  if (s == "detector") return NetworkKind::detector;
  if (s == "drunet") return NetworkKind::drunet;
  throw ConfigError("unknown network kind: " + s);
}

void NetworkSpec::validate() const {
  if (kernel != 3) throw ConfigError("network kernel size is fixed at 3");
  if (kind == NetworkKind::detector) {
    if (depth < 2) throw ConfigError("detector depth must be >= 2");
    if (width < 1) throw ConfigError("detector width must be >= 1");
  } else {
    if (scales < 2) throw ConfigError("drunet scales must be >= 2");
    if (blocks < 1) throw ConfigError("drunet blocks per scale must be >= 1");
    if (base_channels < 1) throw ConfigError("drunet base channels must be >= 1");
  }
}

std::size_t NetworkSpec::divisor() const {
  return kind == NetworkKind::drunet ? (std::size_t{1} << (scales - 1)) : 1;
}

std::vector<ParamInfo> param_layout(const NetworkSpec& spec) {
  spec.validate();
  LayoutBuilder b;
  const std::size_t k = spec.kernel;
  if (spec.kind == NetworkKind::detector) {
    b.conv("conv0", 1, spec.width, k);
    for (std::size_t i = 1; i + 1 < spec.depth; ++i) b.conv("conv" + std::to_string(i), spec.width, spec.width, k);
    b.conv("conv" + std::to_string(spec.depth - 1), spec.width, 1, k);
    return b.take();
  }
  const auto width = [&](std::size_t s) { return spec.base_channels << s; };
  const double branch = 1.0 / std::sqrt(static_cast<double>((2 * spec.scales - 1) * spec.blocks));
  b.conv("head", 1, width(0), k, kLinearGain);
  for (std::size_t s = 0; s + 1 < spec.scales; ++s) {
    const std::string prefix = "down" + std::to_string(s);
    b.resblocks(prefix, width(s), spec.blocks, k, branch);
    b.conv(prefix + ".stride", width(s), width(s + 1), k, kLinearGain);
  }
  b.resblocks("body", width(spec.scales - 1), spec.blocks, k, branch);
  for (std::size_t s = spec.scales - 1; s-- > 0;) {
    const std::string prefix = "up" + std::to_string(s);
    b.transpose(prefix + ".transpose", width(s + 1), width(s));
    b.resblocks(prefix, width(s), spec.blocks, k, branch);
  }
  b.conv("tail", width(0), 1, k, kLinearGain);
  return b.take();
}

std::size_t param_count(const NetworkSpec& spec) {
  std::size_t n = 0;
  for (const auto& p : param_layout(spec)) n += numel(p.shape);
  return n;
}

template <typename T>
std::size_t BasicNetworkState<T>::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return i;
  }
  throw std::out_of_range("no parameter named " + name);
}

template struct BasicNetworkState<float>;
template struct BasicNetworkState<double>;

NetworkState init_params(const NetworkSpec& spec) {
  NetworkState state{spec, {}, {}};
  const auto layout = param_layout(spec);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const ParamInfo& info = layout[i];
    Tensor<float> t(info.shape);
    if (info.fan_in > 0) {
      const double bound = info.gain * std::sqrt(6.0 / static_cast<double>(info.fan_in));
      CounterRng rng(spec.seed, i);
      for (std::size_t j = 0; j < t.size(); ++j) t[j] = static_cast<float>(rng.uniform(-bound, bound));
    }
    state.names.push_back(info.name);
    state.params.push_back(std::move(t));
  }
  return state;
}

template <typename T>
Var<T> residual_block(Var<T> input, Var<T> w1, Var<T> b1, Var<T> w2, Var<T> b2) {
  return add(input, conv2d(relu(conv2d(input, w1, b1, kSame)), w2, b2, kSame));
}

template <typename T>
Var<T> detector_forward(const NetworkSpec& spec, std::span<const Var<T>> params, Var<T> input) {
  check_single_channel(input.shape(), "detector_forward");
  if (input.shape()[2] < spec.kernel || input.shape()[3] < spec.kernel) {
    throw ShapeError("detector_forward: input " + to_string(input.shape()) + " is smaller than the " +
                     std::to_string(spec.kernel) + "x" + std::to_string(spec.kernel) + " receptive field");
  }
  ParamCursor<T> cur(params);
  Var<T> x = input;
  for (std::size_t i = 0; i + 1 < spec.depth; ++i) x = relu(conv_layer(cur, x, kSame));
  x = conv_layer(cur, x, kSame);
  cur.finish();
  return sigmoid(x);
}

template <typename T>
Var<T> drunet_forward(const NetworkSpec& spec, std::span<const Var<T>> params, Var<T> input) {
  check_single_channel(input.shape(), "drunet_forward");
  const std::size_t div = spec.divisor();
  if (input.shape()[2] % div != 0 || input.shape()[3] % div != 0) {
    throw ShapeError("drunet_forward: height and width must be divisible by 2^(scales-1) = " + std::to_string(div) +
                     ", got " + to_string(input.shape()));
  }
  ParamCursor<T> cur(params);
  Var<T> head = conv_layer(cur, input, kSame);
  std::vector<Var<T>> skips;
  Var<T> x = head;
  for (std::size_t s = 0; s + 1 < spec.scales; ++s) {
    x = resblocks(cur, x, spec.blocks);
    x = conv_layer(cur, x, kDown);
    skips.push_back(x);
  }
  x = resblocks(cur, x, spec.blocks);
  for (std::size_t s = spec.scales - 1; s-- > 0;) {
    x = add(x, skips[s]);
    Var<T> w = cur.next();
    Var<T> b = cur.next();
    x = conv_transpose2d(x, w, b, kUp);
    x = resblocks(cur, x, spec.blocks);
  }
  x = conv_layer(cur, add(x, head), kSame);
  cur.finish();
  return x;
}

template <typename T>
Var<T> network_forward(const NetworkSpec& spec, std::span<const Var<T>> params, Var<T> input) {
  return spec.kind == NetworkKind::detector ? detector_forward(spec, params, input)
                                            : drunet_forward(spec, params, input);
}

template <typename T>
std::vector<Var<T>> as_variables(Tape<T>& tape, const BasicNetworkState<T>& state) {
  std::vector<Var<T>> vars;
  vars.reserve(state.params.size());
  for (const auto& p : state.params) vars.push_back(tape.variable(p));
  return vars;
}

template <typename T>
Tensor<T> run_network(const BasicNetworkState<T>& state, const Tensor<T>& input) {
  Tape<T> tape;
  std::vector<Var<T>> vars;
  vars.reserve(state.params.size());
  for (const auto& p : state.params) vars.push_back(tape.constant(p));
  return network_forward<T>(state.spec, vars, tape.constant(input)).value();
}

#define SPD_INSTANTIATE_MODELS(T)                                                                        \
  template Var<T> residual_block(Var<T>, Var<T>, Var<T>, Var<T>, Var<T>);                                \
  template Var<T> detector_forward(const NetworkSpec&, std::span<const Var<T>>, Var<T>);                 \
  template Var<T> drunet_forward(const NetworkSpec&, std::span<const Var<T>>, Var<T>);                   \
  template Var<T> network_forward(const NetworkSpec&, std::span<const Var<T>>, Var<T>);                  \
  template std::vector<Var<T>> as_variables(Tape<T>&, const BasicNetworkState<T>&);                      \
  template Tensor<T> run_network(const BasicNetworkState<T>&, const Tensor<T>&);

SPD_INSTANTIATE_MODELS(float)
SPD_INSTANTIATE_MODELS(double)

#undef SPD_INSTANTIATE_MODELS

}  // namespace spd
