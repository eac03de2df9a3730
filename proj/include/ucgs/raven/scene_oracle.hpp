#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ucgs/core/panel.hpp"
#include "ucgs/raven/render.hpp"
#include "ucgs/raven/rules.hpp"

namespace ucgs::raven {

/// Exact predictability over scene grids: the joint is uniform over grids
/// that some rule specification explains, and the conditional of a slot is
/// the smoothed count of compliant completions, as in the symbolic oracle.
class SceneOracle {
 public:
  explicit SceneOracle(double epsilon = 1e-6) : epsilon_(epsilon) {
    if (!(epsilon > 0.0)) throw ArgumentError("smoothing epsilon must be positive");
  }

  /// Scenes that complete the context into a compliant grid.
  std::vector<bool> completions(const BasicContext<Scene>& c) const {
    if (c.origin_len() % kRowLen != 0) {
      throw ArgumentError("scene oracle needs whole rows (origin length " + std::to_string(c.origin_len()) + ")");
    }
    std::vector<Scene> grid(c.origin_len());
    for (std::size_t i = 0; i < c.size(); ++i) grid[c.slot_of(i)] = c[i];
    const auto& scenes = all_scenes();
    std::vector<bool> ok(scenes.size());
    for (std::size_t k = 0; k < scenes.size(); ++k) {
      grid[c.target_slot()] = scenes[k];
      ok[k] = compliant_any(grid);
    }
    return ok;
  }

  double conditional(const BasicContext<Scene>& c, const Scene& x) const {
    const auto ok = completions(c);
    double total = 0;
    for (bool b : ok) total += b ? 1.0 : 0.0;
    const double hit = ok[scene_index(x)] ? 1.0 : 0.0;
    return (hit + epsilon_) / (total + epsilon_ * static_cast<double>(ok.size()));
  }

  double score(const BasicContext<Scene>& c, const Scene& x) const { return std::log(conditional(c, x)); }

 private:
  double epsilon_;
};

/// The scene oracle behind the image estimator interface: images are mapped
/// back to scenes through the renderer, so it only accepts exact renders.
class ImageSceneOracle {
 public:
  explicit ImageSceneOracle(const RenderConfig& cfg = {}, double epsilon = 1e-6) : atlas_(cfg), oracle_(epsilon) {}

  double score(const BasicContext<Image>& c, const Image& x) const {
    std::vector<Scene> items;
    items.reserve(c.size());
    for (const Image& img : c.items()) items.push_back(lookup(img));
    return oracle_.score(BasicContext<Scene>(std::move(items), c.target_slot(), c.origin_len()), lookup(x));
  }

 private:
  Scene lookup(const Image& img) const {
    const auto s = atlas_.find(img);
    if (!s) throw ArgumentError("image is not a rendered scene");
    return *s;
  }

  SceneAtlas atlas_;
  SceneOracle oracle_;
};

}  // namespace ucgs::raven
