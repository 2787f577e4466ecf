#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace halo {

/// Axis-aligned pixel rectangle; x0/y0 inclusive, x1/y1 exclusive.
struct Rect {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  bool empty() const { return width() <= 0 || height() <= 0; }
  bool contains(const Rect& other) const {
    return other.x0 >= x0 && other.y0 >= y0 && other.x1 <= x1 && other.y1 <= y1;
  }
  bool operator==(const Rect&) const = default;
};

/// 8-bit interleaved RGB image, row-major.
class RgbImage {
 public:
  RgbImage() = default;
  RgbImage(int width, int height);
  RgbImage(int width, int height, std::vector<std::uint8_t> rgb);

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return width_ == 0 || height_ == 0; }
  Rect bounds() const { return {0, 0, width_, height_}; }

  std::uint8_t* pixel(int x, int y) { return &rgb_[3 * (static_cast<std::size_t>(y) * width_ + x)]; }
  const std::uint8_t* pixel(int x, int y) const {
    return &rgb_[3 * (static_cast<std::size_t>(y) * width_ + x)];
  }
  std::span<const std::uint8_t> bytes() const { return rgb_; }
  std::span<std::uint8_t> bytes() { return rgb_; }

  /// Channel value in [0,1].
  double at(int x, int y, int c) const { return pixel(x, y)[c] / 255.0; }

  bool operator==(const RgbImage&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> rgb_;
};

RgbImage crop(const RgbImage& image, const Rect& rect);
RgbImage resize_bilinear(const RgbImage& image, int width, int height);

/// Decodes PNG or JPEG (by signature) into 8-bit RGB.
RgbImage load_image(const std::filesystem::path& path);
RgbImage decode_image(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_png_rgb(const RgbImage& image);
void save_png(const RgbImage& image, const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
/// Writes to a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace halo
