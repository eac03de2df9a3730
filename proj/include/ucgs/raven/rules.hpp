#pragma once

#include <algorithm>
#include <array>
#include <span>
#include <string>
#include <vector>

#include "ucgs/raven/scene.hpp"
#include "ucgs/util/rng.hpp"

namespace ucgs::raven {

inline constexpr std::size_t kRowLen = 3;

enum class RuleKind { kConstant, kProgression, kArithmetic, kDistributeThree };

/// Rule applied to one attribute along every row. `step` is +1 or -1 for
/// progressions and unused otherwise. Arithmetic (third = first + second) is
/// only defined for count.
struct AttrRule {
  RuleKind kind = RuleKind::kConstant;
  int step = 0;

  bool operator==(const AttrRule&) const = default;
};

inline std::string to_string(const AttrRule& r) {
  switch (r.kind) {
    case RuleKind::kConstant: return "constant";
    case RuleKind::kProgression: return r.step > 0 ? "progression+1" : "progression-1";
    case RuleKind::kArithmetic: return "arithmetic";
    case RuleKind::kDistributeThree: return "distribute_three";
  }
  return "?";
}

inline AttrRule rule_from_string(const std::string& s) {
  if (s == "constant") return {RuleKind::kConstant, 0};
  if (s == "progression+1") return {RuleKind::kProgression, 1};
  if (s == "progression-1") return {RuleKind::kProgression, -1};
  if (s == "arithmetic") return {RuleKind::kArithmetic, 0};
  if (s == "distribute_three") return {RuleKind::kDistributeThree, 0};
  throw ArgumentError("unknown rule '" + s + "'");
}

struct RuleSpec {
  std::array<AttrRule, kAttributes> rules{};

  AttrRule& operator[](Attribute a) { return rules[static_cast<std::size_t>(a)]; }
  const AttrRule& operator[](Attribute a) const { return rules[static_cast<std::size_t>(a)]; }
  bool operator==(const RuleSpec&) const = default;
};

/// Rules an attribute may carry. Layout never varies inside a problem.
inline std::vector<AttrRule> admissible_rules(Attribute a) {
  if (a == Attribute::kLayout) return {{RuleKind::kConstant, 0}};
  std::vector<AttrRule> out{{RuleKind::kConstant, 0}, {RuleKind::kProgression, 1}, {RuleKind::kProgression, -1}};
  if (a == Attribute::kCount) out.push_back({RuleKind::kArithmetic, 0});
  out.push_back({RuleKind::kDistributeThree, 0});
  return out;
}

namespace detail {

using Row = std::array<int, kRowLen>;

inline std::vector<Row> rows_of(std::span<const Scene> grid, Attribute a) {
  std::vector<Row> rows(grid.size() / kRowLen);
  for (std::size_t i = 0; i < rows.size() * kRowLen; ++i) rows[i / kRowLen][i % kRowLen] = get(grid[i], a);
  return rows;
}

inline bool row_follows(const AttrRule& r, const Row& v) {
  switch (r.kind) {
    case RuleKind::kConstant: return v[0] == v[1] && v[1] == v[2];
    case RuleKind::kProgression: return v[1] == v[0] + r.step && v[2] == v[1] + r.step;
    case RuleKind::kArithmetic: return v[2] == v[0] + v[1];
    case RuleKind::kDistributeThree: return v[0] != v[1] && v[1] != v[2] && v[0] != v[2];
  }
  return false;
}

}  // namespace detail

/// Whether every complete row of `grid` follows `rule` on attribute `a`.
/// Distribute-three additionally requires all rows to share one value set;
/// layout must be identical across the whole grid.
inline bool follows(const AttrRule& rule, Attribute a, std::span<const Scene> grid) {
  if (grid.empty() || grid.size() % kRowLen != 0) throw ArgumentError("follows: grid must hold whole rows");
  if (rule.kind == RuleKind::kArithmetic && a != Attribute::kCount) return false;
  if (a == Attribute::kLayout) {
    if (rule.kind != RuleKind::kConstant) return false;
    for (const Scene& s : grid)
      if (s.layout != grid[0].layout) return false;
    return true;
  }
  const auto rows = detail::rows_of(grid, a);
  for (const auto& row : rows)
    if (!detail::row_follows(rule, row)) return false;
  if (rule.kind == RuleKind::kDistributeThree) {
    auto first = rows[0];
    std::sort(first.begin(), first.end());
    for (auto row : rows) {
      std::sort(row.begin(), row.end());
      if (row != first) return false;
    }
  }
  return true;
}

inline bool satisfies(const RuleSpec& spec, std::span<const Scene> grid) {
  for (Attribute a : kAllAttributes)
    if (!follows(spec[a], a, grid)) return false;
  return true;
}

/// Whether some rule specification explains the grid. Attributes are
/// independent, so this is a per-attribute existence check.
inline bool compliant_any(std::span<const Scene> grid) {
  for (Attribute a : kAllAttributes) {
    bool any = false;
    for (const AttrRule& r : admissible_rules(a)) {
      if (follows(r, a, grid)) {
        any = true;
        break;
      }
    }
    if (!any) return false;
  }
  return true;
}

/// Whether the complete rows of `cells` satisfy `spec` and the trailing
/// partial row, if any, extends to a row that does.
inline bool consistent_prefix(const RuleSpec& spec, std::span<const Scene> cells) {
  const std::size_t whole = cells.size() / kRowLen * kRowLen;
  if (whole > 0 && !satisfies(spec, cells.first(whole))) return false;
  const std::size_t partial = cells.size() - whole;
  if (partial == 0) return whole > 0;
  std::vector<Scene> grid(cells.begin(), cells.end());
  grid.resize(whole + kRowLen);
  // At most two open cells, so a nested scan of the scene table suffices.
  const auto& scenes = all_scenes();
  if (partial == 2) {
    for (const Scene& s : scenes) {
      grid.back() = s;
      if (satisfies(spec, grid)) return true;
    }
    return false;
  }
  for (const Scene& s1 : scenes) {
    grid[whole + 1] = s1;
    for (const Scene& s2 : scenes) {
      grid[whole + 2] = s2;
      if (satisfies(spec, grid)) return true;
    }
  }
  return false;
}

/// Uniform over the admissible rules of each attribute. A center layout holds
/// a single entity, so its count rule is constant.
inline RuleSpec sample_rule_spec(Rng& rng, Layout layout) {
  RuleSpec spec;
  for (Attribute a : kAllAttributes) {
    if (a == Attribute::kCount && layout == Layout::kCenter) continue;
    const auto options = admissible_rules(a);
    spec[a] = options[rng.below(options.size())];
  }
  return spec;
}

/// Fills `rows` rows of scenes that follow `spec`, with `layout` everywhere.
inline std::vector<Scene> instantiate(const RuleSpec& spec, Layout layout, std::size_t rows, Rng& rng) {
  std::vector<Scene> grid(rows * kRowLen);
  for (Scene& s : grid) s.layout = layout;
  for (Attribute a : kAllAttributes) {
    if (a == Attribute::kLayout) continue;
    const int lo = min_value(a);
    const int hi = a == Attribute::kCount ? capacity(layout) : max_value(a);
    const AttrRule& r = spec[a];
    std::array<int, kRowLen> shared{};
    if (r.kind == RuleKind::kDistributeThree) {
      std::vector<int> pool;
      for (int v = lo; v <= hi; ++v) pool.push_back(v);
      if (pool.size() < kRowLen) throw GenerationError("distribute_three needs three values of " + std::string(to_string(a)));
      rng.shuffle(std::span<int>(pool));
      std::copy_n(pool.begin(), kRowLen, shared.begin());
    }
    for (std::size_t row = 0; row < rows; ++row) {
      std::array<int, kRowLen> v{};
      switch (r.kind) {
        case RuleKind::kConstant:
          v.fill(rng.uniform_int(lo, hi));
          break;
        case RuleKind::kProgression: {
          const int first_lo = r.step > 0 ? lo : lo + 2;
          const int first_hi = r.step > 0 ? hi - 2 : hi;
          if (first_lo > first_hi) throw GenerationError("progression does not fit the range of " + std::string(to_string(a)));
          const int start = rng.uniform_int(first_lo, first_hi);
          v = {start, start + r.step, start + 2 * r.step};
          break;
        }
        case RuleKind::kArithmetic: {
          if (hi < 2) throw GenerationError("arithmetic does not fit the count range");
          // (a, b) with a, b >= 1 and a + b <= hi, uniformly.
          std::vector<std::pair<int, int>> pairs;
          for (int x = 1; x < hi; ++x)
            for (int y = 1; x + y <= hi; ++y) pairs.emplace_back(x, y);
          const auto [x, y] = pairs[rng.below(pairs.size())];
          v = {x, y, x + y};
          break;
        }
        case RuleKind::kDistributeThree:
          for (std::size_t c = 0; c < kRowLen; ++c) v[c] = shared[(c + row) % kRowLen];
          break;
      }
      for (std::size_t c = 0; c < kRowLen; ++c) set(grid[row * kRowLen + c], a, v[c]);
    }
  }
  return grid;
}

}  // namespace ucgs::raven
