#include "halo/image.hpp"

#include <jpeglib.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <fstream>
#include <iterator>

#include "halo/error.hpp"
#include "png_io.hpp"

namespace halo {

RgbImage::RgbImage(int width, int height)
    : width_(width), height_(height), rgb_(3 * static_cast<std::size_t>(width) * height, 0) {
  if (width < 0 || height < 0) throw InvalidArgument("negative image size");
}

RgbImage::RgbImage(int width, int height, std::vector<std::uint8_t> rgb)
    : width_(width), height_(height), rgb_(std::move(rgb)) {
  if (rgb_.size() != 3 * static_cast<std::size_t>(width) * height) {
    throw InvalidArgument("RGB buffer does not match image size");
  }
}

RgbImage crop(const RgbImage& image, const Rect& rect) {
  if (rect.empty() || !image.bounds().contains(rect)) {
    throw InvalidArgument("crop rectangle outside image");
  }
  RgbImage out(rect.width(), rect.height());
  for (int y = 0; y < rect.height(); ++y) {
    std::copy_n(image.pixel(rect.x0, rect.y0 + y), 3 * rect.width(), out.pixel(0, y));
  }
  return out;
}

RgbImage resize_bilinear(const RgbImage& image, int width, int height) {
  if (width <= 0 || height <= 0) throw InvalidArgument("resize target must be positive");
  if (width == image.width() && height == image.height()) return image;
  RgbImage out(width, height);
  const double sx = static_cast<double>(image.width()) / width;
  const double sy = static_cast<double>(image.height()) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height() - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height() - 1);
    const double ty = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width() - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width() - 1);
      const double tx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - ty) * ((1 - tx) * image.pixel(x0, y0)[c] + tx * image.pixel(x1, y0)[c]) +
                         ty * ((1 - tx) * image.pixel(x0, y1)[c] + tx * image.pixel(x1, y1)[c]);
        out.pixel(x, y)[c] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return out;
}

namespace {

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr info) {
  auto* err = reinterpret_cast<JpegErrorManager*>(info->err);
  std::longjmp(err->jump, 1);
}

RgbImage decode_jpeg(std::span<const std::uint8_t> bytes) {
  jpeg_decompress_struct info{};
  JpegErrorManager err{};
  info.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  std::vector<std::uint8_t> rgb;
  int width = 0;
  int height = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&info);
    throw IoError("JPEG decode failed");
  }
  jpeg_create_decompress(&info);
  jpeg_mem_src(&info, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&info, TRUE);
  info.out_color_space = JCS_RGB;
  jpeg_start_decompress(&info);
  width = static_cast<int>(info.output_width);
  height = static_cast<int>(info.output_height);
  rgb.resize(3 * static_cast<std::size_t>(width) * height);
  while (info.output_scanline < info.output_height) {
    JSAMPROW row = rgb.data() + 3 * static_cast<std::size_t>(info.output_scanline) * width;
    jpeg_read_scanlines(&info, &row, 1);
  }
  jpeg_finish_decompress(&info);
  jpeg_destroy_decompress(&info);
  return RgbImage(width, height, std::move(rgb));
}

}  // namespace

RgbImage decode_image(std::span<const std::uint8_t> bytes) {
  if (detail::looks_like_png(bytes)) {
    auto png = detail::decode_png(bytes, 3, false);
    return RgbImage(png.width, png.height, std::move(png.pixels));
  }
  if (detail::looks_like_jpeg(bytes)) return decode_jpeg(bytes);
  throw IoError("unsupported image format (expected PNG or JPEG)");
}

RgbImage load_image(const std::filesystem::path& path) {
  try {
    return decode_image(read_file_bytes(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_png_rgb(const RgbImage& image) {
  return detail::encode_png(image.width(), image.height(), 3, image.bytes());
}

void save_png(const RgbImage& image, const std::filesystem::path& path) {
  write_file_atomic(path, encode_png_rgb(image));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace halo
