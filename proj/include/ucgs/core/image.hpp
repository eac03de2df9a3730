#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ucgs/util/errors.hpp"
#include "ucgs/util/png.hpp"

namespace ucgs {

/// Single-channel images; the channel count is fixed for the whole library.
inline constexpr int kChannels = 1;

/// Intensities are stored on the 16-bit grid used by the on-disk format, so a
/// PNG round trip reproduces every pixel bit for bit.
inline constexpr double kIntensityLevels = 65535.0;

inline float quantize_intensity(double v) {
  const double clamped = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return static_cast<float>(std::round(clamped * kIntensityLevels) / kIntensityLevels);
}

/// H x W grid of unit-interval intensities.
class Image {
 public:
  Image() = default;

  Image(int height, int width, std::vector<float> pixels)
      : height_(height), width_(width), pixels_(std::move(pixels)) {
    if (height <= 0 || width <= 0) throw ArgumentError("image dimensions must be positive");
    if (pixels_.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width)) {
      throw ArgumentError("image pixel count does not match " + std::to_string(height) + "x" +
                          std::to_string(width));
    }
    for (float v : pixels_) {
      if (!(v >= 0.0f && v <= 1.0f)) throw ArgumentError("image intensity outside [0, 1]");
    }
  }

  static Image blank(int height, int width) {
    return Image(height, width,
                 std::vector<float>(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), 0.0f));
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return pixels_.size(); }
  std::span<const float> pixels() const noexcept { return pixels_; }
  float at(int y, int x) const { return pixels_[static_cast<std::size_t>(y * width_ + x)]; }

  bool same_shape(const Image& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_;
  }

  friend bool operator==(const Image&, const Image&) = default;

  png::Gray16 to_gray16() const {
    png::Gray16 g{height_, width_, {}};
    g.samples.reserve(pixels_.size());
    for (float v : pixels_) {
      g.samples.push_back(static_cast<std::uint16_t>(std::lround(static_cast<double>(v) * kIntensityLevels)));
    }
    return g;
  }

  static Image from_gray16(const png::Gray16& g) {
    std::vector<float> px;
    px.reserve(g.samples.size());
    for (std::uint16_t s : g.samples) px.push_back(static_cast<float>(s / kIntensityLevels));
    return Image(g.height, g.width, std::move(px));
  }

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<float> pixels_;
};

/// Mean squared pixel distance. Shapes must match.
inline double mean_squared_distance(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw ArgumentError("image shape mismatch");
  double acc = 0.0;
  auto pa = a.pixels();
  auto pb = b.pixels();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const double d = static_cast<double>(pa[i]) - static_cast<double>(pb[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(pa.size());
}

}  // namespace ucgs
