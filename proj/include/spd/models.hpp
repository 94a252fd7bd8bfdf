// Stage-one noise detector and stage-two single-channel DRUnet.
//
// Detector: plain conv stack, conv(1->C)+relu, (D-2) x [conv(C->C)+relu],
// conv(C->1), sigmoid. Every conv is 3x3 with padding 1.
//
// DRUnet with S scales and R residual blocks per scale, channel width
// C_s = C0 * 2^s:
//   head      conv 3x3, 1 -> C0
//   down s    R x resblock(C_s), strided conv 3x3/2, C_s -> C_{s+1}   (s < S-1)
//   body      R x resblock(C_{S-1})
//   up s      transposed conv 2x2/2, C_{s+1} -> C_s, R x resblock(C_s)
//   tail      conv 3x3, C0 -> 1
// Each strided conv output is added to the input of its paired transposed
// conv, and the head output is added to the tail input.
//
// Parameter count, with k = 3:
//   detector: (9C + C) + (D-2)(9C^2 + C) + (9C + 1)
//   drunet:   (9C0 + C0) + 2R (9C_{S-1}^2 + C_{S-1})
//             + sum_{s<S-1} [4R (9C_s^2 + C_s) + (9 C_s C_{s+1} + C_{s+1}) + (4 C_{s+1} C_s + C_s)]
//             + (9C0 + 1)
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spd/autograd.hpp"
#include "spd/noise.hpp"  // ConfigError

namespace spd {

enum class NetworkKind { detector, drunet };

const char* to_string(NetworkKind kind);
NetworkKind parse_network_kind(const std::string& s);

struct NetworkSpec {
  NetworkKind kind = NetworkKind::detector;
  // detector
  std::size_t depth = 7;
  std::size_t width = 32;
  // drunet
  std::size_t base_channels = 16;
  std::size_t scales = 4;
  std::size_t blocks = 4;

  std::size_t kernel = 3;
  std::uint64_t seed = 0;

  void validate() const;
  /// Spatial dims must be a multiple of this for drunet (1 for the detector).
  std::size_t divisor() const;
  bool operator==(const NetworkSpec&) const = default;
};

struct ParamInfo {
  std::string name;
  Shape shape;
  std::size_t fan_in = 0;  // 0 for biases
  double gain = 1.0;       // init bound is gain * sqrt(6 / fan_in)
};

/// Names and shapes in forward-consumption order.
std::vector<ParamInfo> param_layout(const NetworkSpec& spec);
std::size_t param_count(const NetworkSpec& spec);

template <typename T>
struct BasicNetworkState {
  NetworkSpec spec;
  std::vector<std::string> names;
  std::vector<Tensor<T>> params;

  template <typename U>
  BasicNetworkState<U> cast() const {
    BasicNetworkState<U> out{spec, names, {}};
    for (const auto& p : params) out.params.push_back(p.template cast<U>());
    return out;
  }
  /// Index of the named parameter; throws std::out_of_range if absent.
  std::size_t index_of(const std::string& name) const;
  bool operator==(const BasicNetworkState&) const = default;
};

using NetworkState = BasicNetworkState<float>;

/// Kernels ~ U(-b, +b) with b = gain * sqrt(6/fan_in), biases zero.
/// Deterministic in spec.seed. In DRUnet, convs not followed by a ReLU use
/// gain sqrt(1/2) and each residual branch's second conv uses gain
/// 1/sqrt(L) for L residual blocks in total, which keeps activations bounded
/// without normalization layers. Every gain is <= 1.
NetworkState init_params(const NetworkSpec& spec);

/// output = input + conv(relu(conv(input))), 3x3 convs with padding 1.
template <typename T>
Var<T> residual_block(Var<T> input, Var<T> w1, Var<T> b1, Var<T> w2, Var<T> b2);

/// Per-pixel noise probabilities, same shape as input [N,1,H,W].
template <typename T>
Var<T> detector_forward(const NetworkSpec& spec, std::span<const Var<T>> params, Var<T> input);

/// Restored image in normalized intensity, same shape as input [N,1,H,W].
template <typename T>
Var<T> drunet_forward(const NetworkSpec& spec, std::span<const Var<T>> params, Var<T> input);

/// Dispatches on spec.kind.
template <typename T>
Var<T> network_forward(const NetworkSpec& spec, std::span<const Var<T>> params, Var<T> input);

/// Inference without gradient tracking.
template <typename T>
Tensor<T> run_network(const BasicNetworkState<T>& state, const Tensor<T>& input);

/// Records every parameter of `state` as a tape variable, in layout order.
template <typename T>
std::vector<Var<T>> as_variables(Tape<T>& tape, const BasicNetworkState<T>& state);

}  // namespace spd
