#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ucgs/core/panel.hpp"
#include "ucgs/util/errors.hpp"

namespace ucgs::oracle {

using Symbol = int;
using SymbolPanel = BasicPanel<Symbol>;
using SymbolContext = BasicContext<Symbol>;
using Rule = std::function<bool(std::span<const Symbol>)>;

inline constexpr std::uint64_t kEnumerationBudget = 10'000'000;

/// Finite alphabet {0..A-1}, panels of length N, and a rule predicate. The
/// joint distribution is uniform over rule-compliant panels.
struct SymbolicUniverse {
  std::string name;
  int alphabet_size = 0;
  int panel_len = 0;
  Rule compliant;
  double epsilon = 1e-6;
};

namespace rules {

inline bool all_equal(std::span<const Symbol> s) {
  for (std::size_t i = 1; i < s.size(); ++i)
    if (s[i] != s[0]) return false;
  return true;
}

inline bool all_distinct(std::span<const Symbol> s) {
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = i + 1; j < s.size(); ++j)
      if (s[i] == s[j]) return false;
  return true;
}

/// Consecutive symbols step by exactly +1.
inline bool progression(std::span<const Symbol> s) {
  for (std::size_t i = 1; i < s.size(); ++i)
    if (s[i] != s[i - 1] + 1) return false;
  return true;
}

inline bool increasing(std::span<const Symbol> s) {
  for (std::size_t i = 1; i < s.size(); ++i)
    if (s[i] <= s[i - 1]) return false;
  return true;
}

inline const std::vector<std::string>& names() {
  static const std::vector<std::string> kNames{"all_equal", "all_distinct", "progression", "increasing"};
  return kNames;
}

/// Returns an empty function for unknown names.
inline Rule by_name(const std::string& name) {
  if (name == "all_equal") return all_equal;
  if (name == "all_distinct") return all_distinct;
  if (name == "progression") return progression;
  if (name == "increasing") return increasing;
  return {};
}

}  // namespace rules

inline SymbolicUniverse make_universe(const std::string& rule, int alphabet_size, int panel_len,
                                      double epsilon = 1e-6) {
  Rule r = rules::by_name(rule);
  if (!r) throw ArgumentError("unknown rule '" + rule + "'");
  if (alphabet_size < 1 || panel_len < 2) throw ArgumentError("universe needs A >= 1 and N >= 2");
  return SymbolicUniverse{rule, alphabet_size, panel_len, std::move(r), epsilon};
}

/// Universe whose compliant set is the union of two rules' compliant sets.
inline SymbolicUniverse union_universe(const SymbolicUniverse& a, const SymbolicUniverse& b) {
  if (a.alphabet_size != b.alphabet_size || a.panel_len != b.panel_len) {
    throw ArgumentError("union_universe: universes must share alphabet and panel length");
  }
  Rule ra = a.compliant;
  Rule rb = b.compliant;
  return SymbolicUniverse{a.name + "|" + b.name, a.alphabet_size, a.panel_len,
                          [ra, rb](std::span<const Symbol> s) { return ra(s) || rb(s); },
                          std::min(a.epsilon, b.epsilon)};
}

inline std::uint64_t sequence_count(const SymbolicUniverse& u) {
  std::uint64_t total = 1;
  for (int i = 0; i < u.panel_len; ++i) {
    total *= static_cast<std::uint64_t>(u.alphabet_size);
    if (total > kEnumerationBudget) {
      throw CapacityError("universe '" + u.name + "' has more than " + std::to_string(kEnumerationBudget) +
                          " sequences (A=" + std::to_string(u.alphabet_size) +
                          ", N=" + std::to_string(u.panel_len) + ")");
    }
  }
  return total;
}

/// Visits every sequence of length N in lexicographic order.
template <class Fn>
void for_each_sequence(const SymbolicUniverse& u, Fn&& fn) {
  sequence_count(u);
  std::vector<Symbol> seq(static_cast<std::size_t>(u.panel_len), 0);
  while (true) {
    fn(std::span<const Symbol>(seq));
    int pos = u.panel_len - 1;
    while (pos >= 0 && ++seq[static_cast<std::size_t>(pos)] == u.alphabet_size) {
      seq[static_cast<std::size_t>(pos)] = 0;
      --pos;
    }
    if (pos < 0) break;
  }
}

/// All rule-compliant panels in lexicographic order.
inline std::vector<std::vector<Symbol>> enumerate_compliant(const SymbolicUniverse& u) {
  std::vector<std::vector<Symbol>> out;
  for_each_sequence(u, [&](std::span<const Symbol> s) {
    if (u.compliant(s)) out.emplace_back(s.begin(), s.end());
  });
  return out;
}

/// Exact predictability over a universe, backed by a cached enumeration of
/// its compliant panels. Immutable after construction.
class ExactEstimator {
 public:
  explicit ExactEstimator(SymbolicUniverse universe)
      : universe_(std::move(universe)), compliant_(enumerate_compliant(universe_)) {
    if (compliant_.empty()) throw ArgumentError("universe '" + universe_.name + "' has no compliant panel");
    if (!(universe_.epsilon > 0.0)) throw ArgumentError("smoothing epsilon must be positive");
  }

  const SymbolicUniverse& universe() const noexcept { return universe_; }
  const std::vector<std::vector<Symbol>>& compliant() const noexcept { return compliant_; }

  /// Number of compliant panels agreeing with `context` off its target slot,
  /// broken down by the symbol in the target slot.
  std::vector<std::uint64_t> completion_counts(const SymbolContext& context) const {
    validate(context);
    std::vector<std::uint64_t> counts(static_cast<std::size_t>(universe_.alphabet_size), 0);
    const std::size_t t = context.target_slot();
    for (const auto& p : compliant_) {
      bool match = true;
      for (std::size_t i = 0; i < context.size() && match; ++i) match = p[context.slot_of(i)] == context[i];
      if (match) ++counts[static_cast<std::size_t>(p[t])];
    }
    return counts;
  }

  /// (#completions equal to x + eps) / (#completions + eps * A).
  double conditional(const SymbolContext& context, Symbol x) const {
    check_symbol(x);
    const auto counts = completion_counts(context);
    std::uint64_t total = 0;
    for (auto c : counts) total += c;
    const double eps = universe_.epsilon;
    return (static_cast<double>(counts[static_cast<std::size_t>(x)]) + eps) /
           (static_cast<double>(total) + eps * universe_.alphabet_size);
  }

  double score(const SymbolContext& context, Symbol x) const { return std::log(conditional(context, x)); }

  bool is_compliant(std::span<const Symbol> panel) const { return universe_.compliant(panel); }

 private:
  void check_symbol(Symbol s) const {
    if (s < 0 || s >= universe_.alphabet_size) {
      throw ArgumentError("symbol " + std::to_string(s) + " outside alphabet of size " +
                          std::to_string(universe_.alphabet_size));
    }
  }

  void validate(const SymbolContext& context) const {
    if (context.origin_len() != static_cast<std::size_t>(universe_.panel_len)) {
      throw ArgumentError("context length does not match universe panel length");
    }
    for (Symbol s : context.items()) check_symbol(s);
  }

  SymbolicUniverse universe_;
  std::vector<std::vector<Symbol>> compliant_;
};

inline double exact_conditional(const ExactEstimator& estimator, const SymbolContext& context, Symbol x) {
  return estimator.conditional(context, x);
}

}  // namespace ucgs::oracle
