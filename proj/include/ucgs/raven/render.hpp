#pragma once

#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "ucgs/core/image.hpp"
#include "ucgs/raven/scene.hpp"

namespace ucgs::raven {

struct RenderConfig {
  int height = 32;
  int width = 32;

  bool operator==(const RenderConfig&) const = default;
};

inline constexpr std::array<double, kLevels> kRadius{3.0, 5.0, 7.0};  // at height 32
inline constexpr std::array<double, kLevels> kShade{0.3, 0.6, 0.9};

namespace detail {

struct Point {
  double y;
  double x;
};

/// Entity centres in pixel coordinates, reading order.
inline std::vector<Point> positions(Layout layout, const RenderConfig& cfg) {
  const double h = cfg.height;
  const double w = cfg.width;
  if (layout == Layout::kCenter) return {{h / 2, w / 2}};
  return {{h / 4, w / 4}, {h / 4, 3 * w / 4}, {3 * h / 4, w / 4}, {3 * h / 4, 3 * w / 4}};
}

/// Regular polygon vertices on a circle of radius r. Triangles and
/// pentagons point up; squares are axis aligned.
inline std::vector<Point> polygon(Shape shape, Point c, double r) {
  const int n = shape == Shape::kTriangle ? 3 : shape == Shape::kSquare ? 4 : 5;
  const double offset = shape == Shape::kSquare ? -std::numbers::pi / 4 : -std::numbers::pi / 2;
  std::vector<Point> v;
  for (int k = 0; k < n; ++k) {
    const double a = offset + 2 * std::numbers::pi * k / n;
    v.push_back({c.y + r * std::sin(a), c.x + r * std::cos(a)});
  }
  return v;
}

/// Point inside a convex polygon given in clockwise screen order.
inline bool inside(const std::vector<Point>& poly, Point p) {
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point& a = poly[i];
    const Point& b = poly[(i + 1) % poly.size()];
    const double cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    if (cross < 0) return false;
  }
  return true;
}

}  // namespace detail

/// Rasterises a scene: filled shapes of one shade on a black background,
/// sampled at pixel centres without anti-aliasing.
inline Image render_scene(const Scene& scene, const RenderConfig& cfg = {}) {
  if (scene.count > capacity(scene.layout)) {
    throw ArgumentError("layout " + std::string(to_string(scene.layout)) + " holds " +
                        std::to_string(capacity(scene.layout)) + " entities, scene asks for " +
                        std::to_string(scene.count));
  }
  if (!is_valid(scene)) throw ArgumentError("invalid scene " + describe(scene));
  if (cfg.height <= 0 || cfg.width <= 0) throw ArgumentError("render size must be positive");
  const double r = kRadius[static_cast<std::size_t>(scene.size - 1)] * cfg.height / 32.0;
  const float shade = quantize_intensity(kShade[static_cast<std::size_t>(scene.shade - 1)]);
  std::vector<float> px(static_cast<std::size_t>(cfg.height) * static_cast<std::size_t>(cfg.width), 0.0f);
  const auto centres = detail::positions(scene.layout, cfg);
  for (int e = 0; e < scene.count; ++e) {
    const detail::Point c = centres[static_cast<std::size_t>(e)];
    const auto poly = scene.shape == Shape::kCircle ? std::vector<detail::Point>{} : detail::polygon(scene.shape, c, r);
    for (int y = 0; y < cfg.height; ++y) {
      for (int x = 0; x < cfg.width; ++x) {
        const detail::Point p{y + 0.5, x + 0.5};
        const bool hit = scene.shape == Shape::kCircle
                             ? (p.y - c.y) * (p.y - c.y) + (p.x - c.x) * (p.x - c.x) <= r * r
                             : detail::inside(poly, p);
        if (hit) px[static_cast<std::size_t>(y * cfg.width + x)] = shade;
      }
    }
  }
  return Image(cfg.height, cfg.width, std::move(px));
}

/// Renders of every scene at one size, with reverse lookup from pixels.
class SceneAtlas {
 public:
  explicit SceneAtlas(const RenderConfig& cfg = {}) : cfg_(cfg) {
    for (const Scene& s : all_scenes()) {
      images_.push_back(render_scene(s, cfg));
      const auto px = images_.back().pixels();
      lookup_.emplace(std::vector<float>(px.begin(), px.end()), images_.size() - 1);
    }
  }

  const RenderConfig& config() const noexcept { return cfg_; }
  const Image& image(const Scene& s) const { return images_[scene_index(s)]; }
  const Image& image(std::size_t index) const { return images_.at(index); }

  /// The scene whose render equals `img`, if any.
  std::optional<Scene> find(const Image& img) const {
    if (img.height() != cfg_.height || img.width() != cfg_.width) return std::nullopt;
    const auto it = lookup_.find(std::vector<float>(img.pixels().begin(), img.pixels().end()));
    if (it == lookup_.end()) return std::nullopt;
    return all_scenes()[it->second];
  }

  /// Number of distinct renders; equals scene_count() when rendering is injective.
  std::size_t distinct() const noexcept { return lookup_.size(); }

 private:
  RenderConfig cfg_;
  std::vector<Image> images_;
  std::map<std::vector<float>, std::size_t> lookup_;
};

}  // namespace ucgs::raven
