#include <algorithm>
#include <cmath>

#include "spd/pipeline.hpp"

namespace spd {

namespace {

std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < static_cast<std::ptrdiff_t>(n) ? i : period - i);
}

}  // namespace

Tensor<float> to_tensor(const Image& img) {
  Tensor<float> t(Shape{1, 1, img.height, img.width});
  for (std::size_t i = 0; i < img.size(); ++i) t[i] = static_cast<float>(img.pixels[i]) / 255.0f;
  return t;
}

Tensor<float> to_batch(const std::vector<Image>& imgs) {
  if (imgs.empty()) throw ShapeError("to_batch: no images");
  const std::size_t w = imgs.front().width, h = imgs.front().height;
  Tensor<float> t(Shape{imgs.size(), 1, h, w});
  for (std::size_t n = 0; n < imgs.size(); ++n) {
    if (imgs[n].width != w || imgs[n].height != h) throw ShapeError("to_batch: images differ in size");
    for (std::size_t i = 0; i < w * h; ++i) t[n * w * h + i] = static_cast<float>(imgs[n].pixels[i]) / 255.0f;
  }
  return t;
}

Image to_image(const Tensor<float>& t) {
  const Shape& s = t.shape();
  if (s.size() != 4 || s[0] != 1 || s[1] != 1) throw ShapeError("to_image: expected [1,1,H,W], got " + to_string(s));
  Image img(s[3], s[2]);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double v = std::clamp(static_cast<double>(t[i]) * 255.0, 0.0, 255.0);
    img.pixels[i] = static_cast<std::uint8_t>(std::floor(v + 0.5));
  }
  return img;
}

Image reflect_pad(const Image& img, std::size_t right, std::size_t bottom) {
  Image out(img.width + right, img.height + bottom);
  for (std::size_t y = 0; y < out.height; ++y) {
    const std::size_t sy = reflect_index(static_cast<std::ptrdiff_t>(y), img.height);
    for (std::size_t x = 0; x < out.width; ++x) {
      out.at(x, y) = img.at(reflect_index(static_cast<std::ptrdiff_t>(x), img.width), sy);
    }
  }
  return out;
}

Image crop(const Image& img, std::size_t width, std::size_t height) {
  if (width > img.width || height > img.height) throw ShapeError("crop: region exceeds image");
  Image out(width, height);
  for (std::size_t y = 0; y < height; ++y) {
    std::copy_n(img.pixels.begin() + static_cast<std::ptrdiff_t>(y * img.width), width,
                out.pixels.begin() + static_cast<std::ptrdiff_t>(y * width));
  }
  return out;
}

Tensor<float> detect_probabilities(const NetworkState& detector, const Image& noisy) {
  if (detector.spec.kind != NetworkKind::detector) throw ConfigError("stage one requires a detector network");
  return run_network(detector, to_tensor(noisy));
}

Image restore(const NetworkState& drunet, const Image& input) {
  if (drunet.spec.kind != NetworkKind::drunet) throw ConfigError("restoration requires a drunet network");
  const std::size_t div = drunet.spec.divisor();
  const std::size_t right = (div - input.width % div) % div;
  const std::size_t bottom = (div - input.height % div) % div;
  const Image padded = (right || bottom) ? reflect_pad(input, right, bottom) : input;
  const Image out = to_image(run_network(drunet, to_tensor(padded)));
  return (right || bottom) ? crop(out, input.width, input.height) : out;
}

TwoStageResult denoise_two_stage(const NetworkState& detector, const NetworkState& denoiser, const Image& noisy,
                                 double tau) {
  NoiseMap map = threshold_map(detect_probabilities(detector, noisy), tau);
  Image restored = restore(denoiser, zero_noise(noisy, map));
  return {std::move(restored), std::move(map)};
}

Image denoise_with_map(const NetworkState& denoiser, const Image& noisy, const NoiseMap& map) {
  return restore(denoiser, zero_noise(noisy, map));
}

Image denoise_one_stage(const NetworkState& denoiser, const Image& noisy) { return restore(denoiser, noisy); }

Image median_filter(const Image& noisy, std::size_t window) {
  if (window < 3 || window % 2 == 0) {
    throw std::invalid_argument("median_filter: window must be odd and >= 3, got " + std::to_string(window));
  }
  const auto r = static_cast<std::ptrdiff_t>(window / 2);
  Image out(noisy.width, noisy.height);
  std::vector<std::uint8_t> buf(window * window);
  for (std::size_t y = 0; y < noisy.height; ++y) {
    for (std::size_t x = 0; x < noisy.width; ++x) {
      std::size_t k = 0;
      for (std::ptrdiff_t dy = -r; dy <= r; ++dy) {
        const std::size_t sy = reflect_index(static_cast<std::ptrdiff_t>(y) + dy, noisy.height);
        for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
          buf[k++] = noisy.at(reflect_index(static_cast<std::ptrdiff_t>(x) + dx, noisy.width), sy);
        }
      }
      const auto mid = buf.begin() + static_cast<std::ptrdiff_t>(buf.size() / 2);
      std::nth_element(buf.begin(), mid, buf.end());
      out.at(x, y) = *mid;
    }
  }
  return out;
}

std::optional<double> psnr(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height) throw ShapeError("psnr: image sizes differ");
  if (a.size() == 0) throw ShapeError("psnr: empty images");
  double sse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
    sse += d * d;
  }
  if (sse == 0.0) return std::nullopt;
  const double mse = sse / static_cast<double>(a.size());
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

}  // namespace spd
