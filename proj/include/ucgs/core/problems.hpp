#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "ucgs/core/panel.hpp"

namespace ucgs {

/// Panel with its last position open, a candidate list, and the index of the
/// correct candidate. RPM uses N = 9, VAP uses N = 6.
template <class Item>
struct BasicSelectionProblem {
  BasicPanel<Item> panel;
  std::vector<Item> candidates;
  std::size_t answer_index = 0;

  friend bool operator==(const BasicSelectionProblem&, const BasicSelectionProblem&) = default;
};

template <class Item>
struct BasicO3Problem {
  BasicPanel<Item> panel;
  std::size_t odd_index = 0;

  friend bool operator==(const BasicO3Problem&, const BasicO3Problem&) = default;
};

enum class Side { kLeft, kRight };

inline const char* to_string(Side s) { return s == Side::kLeft ? "LEFT" : "RIGHT"; }

template <class Item>
struct BasicSvrtProblem {
  BasicPanel<Item> left;
  BasicPanel<Item> right;
  std::vector<std::pair<Item, Side>> queries;

  friend bool operator==(const BasicSvrtProblem&, const BasicSvrtProblem&) = default;
};

using RpmProblem = BasicSelectionProblem<Image>;
using VapProblem = BasicSelectionProblem<Image>;
using O3Problem = BasicO3Problem<Image>;
using SvrtProblem = BasicSvrtProblem<Image>;

}  // namespace ucgs
