#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <string>
#include <vector>

#include "ucgs/util/errors.hpp"

namespace ucgs::raven {

enum class Shape { kTriangle = 0, kSquare = 1, kPentagon = 2, kCircle = 3 };
enum class Layout { kCenter = 0, kGrid = 1 };

inline constexpr int kMinCount = 1;
inline constexpr int kMaxCount = 4;
inline constexpr int kShapes = 4;
inline constexpr int kLevels = 3;  // size and shade levels are 1..3

inline const char* to_string(Shape s) {
  switch (s) {
    case Shape::kTriangle: return "triangle";
    case Shape::kSquare: return "square";
    case Shape::kPentagon: return "pentagon";
    case Shape::kCircle: return "circle";
  }
  return "?";
}

inline const char* to_string(Layout l) { return l == Layout::kCenter ? "center" : "grid"; }

inline Shape shape_from_string(const std::string& s) {
  for (int i = 0; i < kShapes; ++i)
    if (s == to_string(static_cast<Shape>(i))) return static_cast<Shape>(i);
  throw ArgumentError("unknown shape '" + s + "'");
}

inline Layout layout_from_string(const std::string& s) {
  if (s == "center") return Layout::kCenter;
  if (s == "grid") return Layout::kGrid;
  throw ArgumentError("unknown layout '" + s + "'");
}

inline int capacity(Layout l) { return l == Layout::kCenter ? 1 : 4; }

/// Every entity in a scene shares shape, size and shade; `count` entities
/// fill the layout's positions in reading order.
struct Scene {
  int count = 1;
  Shape shape = Shape::kTriangle;
  int size = 1;
  int shade = 1;
  Layout layout = Layout::kCenter;

  auto operator<=>(const Scene&) const = default;
};

inline bool is_valid(const Scene& s) {
  const int shape = static_cast<int>(s.shape);
  return s.count >= kMinCount && s.count <= kMaxCount && shape >= 0 && shape < kShapes && s.size >= 1 &&
         s.size <= kLevels && s.shade >= 1 && s.shade <= kLevels && s.count <= capacity(s.layout);
}

inline std::string describe(const Scene& s) {
  return std::string(to_string(s.layout)) + "-n" + std::to_string(s.count) + "-" + to_string(s.shape) + "-z" +
         std::to_string(s.size) + "-c" + std::to_string(s.shade);
}

enum class Attribute { kCount = 0, kShape = 1, kSize = 2, kShade = 3, kLayout = 4 };
inline constexpr int kAttributes = 5;
inline constexpr std::array<Attribute, kAttributes> kAllAttributes{Attribute::kCount, Attribute::kShape, Attribute::kSize,
                                                                   Attribute::kShade, Attribute::kLayout};

inline const char* to_string(Attribute a) {
  switch (a) {
    case Attribute::kCount: return "count";
    case Attribute::kShape: return "shape";
    case Attribute::kSize: return "size";
    case Attribute::kShade: return "shade";
    case Attribute::kLayout: return "layout";
  }
  return "?";
}

/// Attribute values as small integers: count 1..4, shape 0..3, size and
/// shade 1..3, layout 0..1.
inline int get(const Scene& s, Attribute a) {
  switch (a) {
    case Attribute::kCount: return s.count;
    case Attribute::kShape: return static_cast<int>(s.shape);
    case Attribute::kSize: return s.size;
    case Attribute::kShade: return s.shade;
    case Attribute::kLayout: return static_cast<int>(s.layout);
  }
  return 0;
}

inline void set(Scene& s, Attribute a, int v) {
  switch (a) {
    case Attribute::kCount: s.count = v; break;
    case Attribute::kShape: s.shape = static_cast<Shape>(v); break;
    case Attribute::kSize: s.size = v; break;
    case Attribute::kShade: s.shade = v; break;
    case Attribute::kLayout: s.layout = static_cast<Layout>(v); break;
  }
}

inline int min_value(Attribute a) {
  return a == Attribute::kShape || a == Attribute::kLayout ? 0 : 1;
}

inline int max_value(Attribute a) {
  switch (a) {
    case Attribute::kCount: return kMaxCount;
    case Attribute::kShape: return kShapes - 1;
    case Attribute::kSize:
    case Attribute::kShade: return kLevels;
    case Attribute::kLayout: return 1;
  }
  return 0;
}

/// Every valid scene in a fixed order: layout, count, shape, size, shade.
/// The center layout holds one entity, so there are 36 + 144 = 180 scenes.
inline const std::vector<Scene>& all_scenes() {
  static const std::vector<Scene> kScenes = [] {
    std::vector<Scene> out;
    for (int l = 0; l < 2; ++l)
      for (int n = kMinCount; n <= capacity(static_cast<Layout>(l)); ++n)
        for (int sh = 0; sh < kShapes; ++sh)
          for (int z = 1; z <= kLevels; ++z)
            for (int c = 1; c <= kLevels; ++c) out.push_back({n, static_cast<Shape>(sh), z, c, static_cast<Layout>(l)});
    return out;
  }();
  return kScenes;
}

inline std::size_t scene_count() { return all_scenes().size(); }

/// Position of `s` in all_scenes().
inline std::size_t scene_index(const Scene& s) {
  if (!is_valid(s)) throw ArgumentError("invalid scene " + describe(s));
  const std::size_t within = static_cast<std::size_t>(((s.count - 1) * kShapes + static_cast<int>(s.shape)) * kLevels *
                                                          kLevels +
                                                      (s.size - 1) * kLevels + (s.shade - 1));
  return s.layout == Layout::kCenter ? within : std::size_t{kShapes * kLevels * kLevels} + within;
}

}  // namespace ucgs::raven
