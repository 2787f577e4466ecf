#include "png_io.hpp"

#include <png.h>

#include <cstring>

#include "halo/error.hpp"

namespace halo::detail {

bool looks_like_png(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0;
}

bool looks_like_jpeg(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF;
}

DecodedPng decode_png(std::span<const std::uint8_t> bytes, int channels, bool require_gray8) {
  if (!looks_like_png(bytes)) throw IoError("not a PNG stream");
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw IoError(std::string("PNG header: ") + image.message);
  }
  if (require_gray8 && image.format != PNG_FORMAT_GRAY) {
    png_image_free(&image);
    throw IoError("expected a single-channel 8-bit PNG");
  }
  if (require_gray8) {
    // The simplified API hides bit depth; 16-bit gray sets the linear flag, so
    // a GRAY format here still needs an IHDR check.
    if (bytes.size() < 26 || bytes[24] != 8) {
      png_image_free(&image);
      throw IoError("expected a single-channel 8-bit PNG");
    }
  }
  image.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  DecodedPng out;
  out.width = static_cast<int>(image.width);
  out.height = static_cast<int>(image.height);
  out.channels = channels;
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    throw IoError(std::string("PNG decode: ") + image.message);
  }
  return out;
}

std::vector<std::uint8_t> encode_png(int width, int height, int channels,
                                     std::span<const std::uint8_t> pixels) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(image, size, 0, pixels.data(), 0, nullptr)) {
    throw IoError(std::string("PNG encode: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels.data(), 0, nullptr)) {
    throw IoError(std::string("PNG encode: ") + image.message);
  }
  out.resize(size);
  return out;
}

}  // namespace halo::detail
