// Non-extreme salt-and-pepper corruption.
//
// A pixel is noise because a corruption event hit it, not because of its value:
// a clean pixel that happens to equal the salt or pepper value stays marked
// clean in the ground-truth map.
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>

#include "spd/image.hpp"
#include "spd/tensor.hpp"

namespace spd {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct NoiseConfig {
  double density = 0.2;
  std::uint8_t salt_value = 239;
  std::uint8_t pepper_value = 16;
  double salt_fraction = 0.5;
  std::uint64_t seed = 0;
  // Per-sample value ranges used by draw_sample(): salt in [salt_value,
  // salt_value_max], pepper in [pepper_value_min, pepper_value]. Equal bounds
  // give the fixed-value model.
  std::uint8_t salt_value_max = 239;
  std::uint8_t pepper_value_min = 16;

  /// Throws ConfigError on violated invariants.
  void validate() const;
};

/// Binary map, 1 = noise pixel, 0 = clean pixel.
struct NoiseMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> bits;

  NoiseMap() = default;
  NoiseMap(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), bits(w * h, fill) {}

  std::size_t count() const;
  bool operator==(const NoiseMap&) const = default;
};

struct Corrupted {
  Image noisy;
  NoiseMap map;
};

Corrupted synthesize(const Image& clean, const NoiseConfig& cfg);

/// Fixed-value config for one training sample. Salt/pepper values are drawn
/// uniformly from the configured ranges and the seed is re-keyed by `sample`.
NoiseConfig draw_sample(const NoiseConfig& cfg, std::uint64_t sample);

/// Zeroes every map-positive pixel and leaves the rest untouched.
Image zero_noise(const Image& noisy, const NoiseMap& map);

/// 1 where probability > tau. Accepts [N=1,C=1,H,W] or [H,W] tensors.
NoiseMap threshold_map(const Tensor<float>& probabilities, double tau = 0.5);

/// {0,1} -> {0,255} for export.
Image render_map(const NoiseMap& map);
/// Inverse of render_map: nonzero -> 1.
NoiseMap binarize(const Image& img);

/// Rates with a zero denominator are nullopt.
struct AlarmRates {
  std::size_t true_positive = 0, false_positive = 0, false_negative = 0, true_negative = 0;
  std::optional<double> false_alarm_rate;    // FP / clean pixels
  std::optional<double> missing_alarm_rate;  // FN / noise pixels
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1() const;

  AlarmRates& operator+=(const AlarmRates& other);
  /// Recomputes the rates from the counts.
  void finalize();
};

AlarmRates alarm_rates(const NoiseMap& predicted, const NoiseMap& truth);

}  // namespace spd
