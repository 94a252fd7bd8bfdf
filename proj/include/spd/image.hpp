#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace spd {

/// Single-channel 8-bit image, row-major.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), pixels(w * h, fill) {}
  Image(std::size_t w, std::size_t h, std::vector<std::uint8_t> px);

  std::uint8_t& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
  std::uint8_t at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
  std::size_t size() const noexcept { return pixels.size(); }

  bool operator==(const Image&) const = default;
};

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ImageFormat { pgm, png };

/// Reads a binary PGM (P5, maxval 255) or 8-bit grayscale PNG. The format is
/// detected from the file signature. Color, alpha, 16-bit and truncated files
/// are rejected.
Image read_image(const std::filesystem::path& path);

void write_image(const Image& img, const std::filesystem::path& path, ImageFormat format);
/// Picks the format from the extension (".png" -> PNG, anything else -> PGM).
void write_image(const Image& img, const std::filesystem::path& path);

/// PGM encoding in memory: "P5 W H 255\n" followed by the raw bytes.
std::vector<std::uint8_t> encode_pgm(const Image& img);
Image decode_pgm(const std::vector<std::uint8_t>& bytes);

/// Sorted list of readable image files (.pgm, .png) directly under `dir`.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

}  // namespace spd
