#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace halo::detail {

struct DecodedPng {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;
};

/// Decodes to `channels` (1 or 3). If `require_gray8` is set the stream must
/// hold an 8-bit grayscale image without alpha or palette.
DecodedPng decode_png(std::span<const std::uint8_t> bytes, int channels, bool require_gray8);
std::vector<std::uint8_t> encode_png(int width, int height, int channels,
                                     std::span<const std::uint8_t> pixels);

bool looks_like_png(std::span<const std::uint8_t> bytes);
bool looks_like_jpeg(std::span<const std::uint8_t> bytes);

}  // namespace halo::detail
