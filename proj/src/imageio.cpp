#include <png.h>

#include <algorithm>
#include <array>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <memory>

#include "spd/image.hpp"

namespace spd {
namespace fs = std::filesystem;

Image::Image(std::size_t w, std::size_t h, std::vector<std::uint8_t> px) : width(w), height(h), pixels(std::move(px)) {
  if (pixels.size() != w * h) {
    throw std::invalid_argument("image " + std::to_string(w) + "x" + std::to_string(h) + " cannot hold " +
                                std::to_string(pixels.size()) + " pixels");
  }
}

namespace {

constexpr std::array<std::uint8_t, 8> kPngSignature = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const fs::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw ImageIoError("cannot open " + path.string());
  return f;
}

class PgmParser {
 public:
  explicit PgmParser(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  Image parse() {
    if (bytes_.size() < 2 || bytes_[0] != 'P' || bytes_[1] != '5') {
      throw ImageIoError("not a binary PGM (P5) file");
    }
    pos_ = 2;
    const std::size_t width = number("width");
    const std::size_t height = number("height");
    const std::size_t maxval = number("maxval");
    if (width == 0 || height == 0) throw ImageIoError("PGM has zero width or height");
    if (maxval != 255) throw ImageIoError("PGM maxval must be 255, got " + std::to_string(maxval));
    if (pos_ >= bytes_.size() || !is_space(bytes_[pos_])) throw ImageIoError("PGM header not terminated");
    ++pos_;
    const std::size_t count = width * height;
    if (bytes_.size() - pos_ < count) {
      throw ImageIoError("PGM truncated: expected " + std::to_string(count) + " pixel bytes, found " +
                         std::to_string(bytes_.size() - pos_));
    }
    return Image(width, height, std::vector<std::uint8_t>(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                                          bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + count)));
  }

 private:
  static bool is_space(std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (is_space(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* field) {
    skip_space_and_comments();
    std::size_t value = 0;
    std::size_t digits = 0;
    while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
      value = value * 10 + (bytes_[pos_++] - '0');
      if (++digits > 9) throw ImageIoError(std::string("PGM ") + field + " too large");
    }
    if (digits == 0) throw ImageIoError(std::string("PGM header: missing ") + field);
    return value;
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

// libpng reports errors through longjmp; nothing with a destructor may live
// between setjmp and the calls that can jump.
Image read_png(const fs::path& path) {
  FilePtr file = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw ImageIoError("libpng: out of memory");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw ImageIoError("libpng: out of memory");
  }
  Image img;
  std::vector<png_bytep> rows;
  const char* volatile failure = nullptr;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageIoError("corrupt or truncated PNG: " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const auto width = png_get_image_width(png, info);
  const auto height = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color != PNG_COLOR_TYPE_GRAY) {
    failure = "PNG is not single-channel grayscale (color or alpha input is rejected)";
  } else if (depth != 8) {
    failure = "PNG grayscale bit depth must be 8";
  }
  if (!failure) {
    png_set_interlace_handling(png);
    png_read_update_info(png, info);
    img = Image(width, height);
    rows.resize(height);
    for (std::size_t y = 0; y < height; ++y) rows[y] = img.pixels.data() + y * width;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (failure) throw ImageIoError(std::string(failure) + ": " + path.string());
  return img;
}

void write_png(const Image& img, const fs::path& path) {
  FilePtr file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw ImageIoError("libpng: out of memory");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw ImageIoError("libpng: out of memory");
  }
  std::vector<png_bytep> rows(img.height);
  for (std::size_t y = 0; y < img.height; ++y) {
    rows[y] = const_cast<png_bytep>(img.pixels.data() + y * img.width);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ImageIoError("failed writing PNG: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

std::vector<std::uint8_t> encode_pgm(const Image& img) {
  const std::string header = "P5 " + std::to_string(img.width) + " " + std::to_string(img.height) + " 255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

Image decode_pgm(const std::vector<std::uint8_t>& bytes) { return PgmParser(bytes).parse(); }

Image read_image(const fs::path& path) {
  std::vector<std::uint8_t> head(kPngSignature.size());
  {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageIoError("cannot open " + path.string());
    in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
    head.resize(static_cast<std::size_t>(in.gcount()));
  }
  if (std::equal(head.begin(), head.end(), kPngSignature.begin(), kPngSignature.end())) return read_png(path);
  if (head.size() >= 2 && head[0] == 'P' && head[1] == '5') {
    try {
      return decode_pgm(slurp(path));
    } catch (const ImageIoError& e) {
      throw ImageIoError(std::string(e.what()) + ": " + path.string());
    }
  }
  throw ImageIoError("unsupported image format (expected P5 PGM or 8-bit grayscale PNG): " + path.string());
}

void write_image(const Image& img, const fs::path& path, ImageFormat format) {
  if (img.width == 0 || img.height == 0 || img.pixels.size() != img.width * img.height) {
    throw std::invalid_argument("write_image: invalid image dimensions");
  }
  if (format == ImageFormat::png) {
    write_png(img, path);
    return;
  }
  const auto bytes = encode_pgm(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageIoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ImageIoError("cannot write " + path.string());
}

void write_image(const Image& img, const fs::path& path) {
  write_image(img, path, path.extension() == ".png" ? ImageFormat::png : ImageFormat::pgm);
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ImageIoError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto ext = entry.path().extension();
    if (entry.is_regular_file() && (ext == ".pgm" || ext == ".png")) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace spd
