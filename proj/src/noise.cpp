#include "spd/noise.hpp"

#include <algorithm>
#include <numeric>

#include "spd/rng.hpp"

namespace spd {

void NoiseConfig::validate() const {
  if (!(density >= 0.0 && density <= 1.0)) throw ConfigError("noise density must lie in [0,1]");
  if (!(salt_fraction >= 0.0 && salt_fraction <= 1.0)) throw ConfigError("salt_fraction must lie in [0,1]");
  if (pepper_value >= salt_value) throw ConfigError("pepper value must be below the salt value");
  if (salt_value_max < salt_value) throw ConfigError("salt_value_max must be >= salt_value");
  if (pepper_value_min > pepper_value) throw ConfigError("pepper_value_min must be <= pepper_value");
}

std::size_t NoiseMap::count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }

Corrupted synthesize(const Image& clean, const NoiseConfig& cfg) {
  cfg.validate();
  Corrupted out{clean, NoiseMap(clean.width, clean.height)};
  for (std::size_t i = 0; i < clean.size(); ++i) {
    if (to_unit(hash_key(cfg.seed, i, 0)) >= cfg.density) continue;
    const bool salt = to_unit(hash_key(cfg.seed, i, 1)) < cfg.salt_fraction;
    out.noisy.pixels[i] = salt ? cfg.salt_value : cfg.pepper_value;
    out.map.bits[i] = 1;
  }
  return out;
}

NoiseConfig draw_sample(const NoiseConfig& cfg, std::uint64_t sample) {
  cfg.validate();
  CounterRng rng(cfg.seed, sample + 1);
  NoiseConfig out = cfg;
  out.salt_value = static_cast<std::uint8_t>(cfg.salt_value + rng.below(cfg.salt_value_max - cfg.salt_value + 1u));
  out.pepper_value =
      static_cast<std::uint8_t>(cfg.pepper_value_min + rng.below(cfg.pepper_value - cfg.pepper_value_min + 1u));
  out.salt_value_max = out.salt_value;
  out.pepper_value_min = out.pepper_value;
  out.seed = rng.next_u64();
  return out;
}

Image zero_noise(const Image& noisy, const NoiseMap& map) {
  if (noisy.width != map.width || noisy.height != map.height) {
    throw ShapeError("zero_noise: image is " + std::to_string(noisy.width) + "x" + std::to_string(noisy.height) +
                     " but map is " + std::to_string(map.width) + "x" + std::to_string(map.height));
  }
  Image out = noisy;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (map.bits[i]) out.pixels[i] = 0;
  }
  return out;
}

NoiseMap threshold_map(const Tensor<float>& probabilities, double tau) {
  const Shape& s = probabilities.shape();
  std::size_t h = 0, w = 0;
  if (s.size() == 4 && s[0] == 1 && s[1] == 1) {
    h = s[2];
    w = s[3];
  } else if (s.size() == 2) {
    h = s[0];
    w = s[1];
  } else {
    throw ShapeError("threshold_map: expected [1,1,H,W] or [H,W], got " + to_string(s));
  }
  NoiseMap map(w, h);
  for (std::size_t i = 0; i < map.bits.size(); ++i) map.bits[i] = probabilities[i] > tau ? 1 : 0;
  return map;
}

Image render_map(const NoiseMap& map) {
  Image img(map.width, map.height);
  for (std::size_t i = 0; i < map.bits.size(); ++i) img.pixels[i] = map.bits[i] ? 255 : 0;
  return img;
}

NoiseMap binarize(const Image& img) {
  NoiseMap map(img.width, img.height);
  for (std::size_t i = 0; i < img.size(); ++i) map.bits[i] = img.pixels[i] ? 1 : 0;
  return map;
}

std::optional<double> AlarmRates::f1() const {
  if (!precision || !recall || *precision + *recall == 0.0) return std::nullopt;
  return 2.0 * *precision * *recall / (*precision + *recall);
}

AlarmRates& AlarmRates::operator+=(const AlarmRates& other) {
  true_positive += other.true_positive;
  false_positive += other.false_positive;
  false_negative += other.false_negative;
  true_negative += other.true_negative;
  finalize();
  return *this;
}

void AlarmRates::finalize() {
  const auto ratio = [](std::size_t num, std::size_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  false_alarm_rate = ratio(false_positive, false_positive + true_negative);
  missing_alarm_rate = ratio(false_negative, false_negative + true_positive);
  precision = ratio(true_positive, true_positive + false_positive);
  recall = ratio(true_positive, true_positive + false_negative);
}

AlarmRates alarm_rates(const NoiseMap& predicted, const NoiseMap& truth) {
  if (predicted.width != truth.width || predicted.height != truth.height) {
    throw ShapeError("alarm_rates: map size mismatch");
  }
  AlarmRates r;
  for (std::size_t i = 0; i < truth.bits.size(); ++i) {
    const bool p = predicted.bits[i] != 0;
    const bool t = truth.bits[i] != 0;
    if (p && t) ++r.true_positive;
    else if (p) ++r.false_positive;
    else if (t) ++r.false_negative;
    else ++r.true_negative;
  }
  r.finalize();
  return r;
}

}  // namespace spd
