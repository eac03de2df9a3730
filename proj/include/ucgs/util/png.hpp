#pragma once

#include <png.h>

#include <csetjmp>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ucgs/util/errors.hpp"

namespace ucgs::png {

/// 16-bit grayscale raster, row-major.
struct Gray16 {
  int height = 0;
  int width = 0;
  std::vector<std::uint16_t> samples;
};

namespace detail {

struct WriteBuffer {
  std::string bytes;
};

inline void write_cb(png_structp png, png_bytep data, png_size_t len) {
  auto* buf = static_cast<WriteBuffer*>(png_get_io_ptr(png));
  buf->bytes.append(reinterpret_cast<const char*>(data), len);
}
inline void flush_cb(png_structp) {}

struct ReadCursor {
  std::string_view bytes;
  std::size_t offset = 0;
};

inline void read_cb(png_structp png, png_bytep out, png_size_t len) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->offset + len > cur->bytes.size()) png_error(png, "truncated png stream");
  std::memcpy(out, cur->bytes.data() + cur->offset, len);
  cur->offset += len;
}

}  // namespace detail

/// Encodes a lossless 16-bit grayscale PNG. Output bytes depend only on the
/// raster (no timestamps or text chunks).
inline std::string encode(const Gray16& image) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png: cannot create write struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png: cannot create info struct");
  }
  detail::WriteBuffer buf;
  std::vector<png_byte> row(static_cast<std::size_t>(image.width) * 2);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png: encode failed");
  }
  png_set_write_fn(png, &buf, detail::write_cb, detail::flush_cb);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height),
               16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 9);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const std::uint16_t v = image.samples[static_cast<std::size_t>(y * image.width + x)];
      row[2 * x] = static_cast<png_byte>(v >> 8);
      row[2 * x + 1] = static_cast<png_byte>(v & 0xFF);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return std::move(buf.bytes);
}

/// Decodes a PNG produced by `encode`. Anything other than 16-bit grayscale is
/// rejected rather than converted.
inline Gray16 decode(std::string_view bytes, const std::string& name) {
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0) {
    throw LoadError(LoadErrorKind::kMalformed, name, "not a png stream");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png: cannot create read struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("png: cannot create info struct");
  }
  detail::ReadCursor cursor{bytes, 0};
  Gray16 out;
  std::vector<png_byte> row;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw LoadError(LoadErrorKind::kMalformed, name, "png decode failed");
  }
  png_set_read_fn(png, &cursor, detail::read_cb);
  png_read_info(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (bit_depth != 16 || color != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw LoadError(LoadErrorKind::kMalformed, name, "expected 16-bit grayscale");
  }
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.samples.resize(static_cast<std::size_t>(out.width) * static_cast<std::size_t>(out.height));
  row.resize(png_get_rowbytes(png, info));
  for (int y = 0; y < out.height; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < out.width; ++x) {
      out.samples[static_cast<std::size_t>(y * out.width + x)] =
          static_cast<std::uint16_t>((row[2 * x] << 8) | row[2 * x + 1]);
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace ucgs::png
