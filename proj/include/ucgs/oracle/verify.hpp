#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ucgs/core/judgment.hpp"
#include "ucgs/oracle/universe.hpp"
#include "ucgs/util/rng.hpp"

namespace ucgs::oracle {

/// Outcome of checking one judgment function against ground truth.
struct PropositionTally {
  std::string proposition;  // "selection", "odd-one-out", "two-panel"
  std::string universe;
  std::size_t constructible = 0;  // problems expressible in the universe
  std::size_t trials = 0;         // problems actually checked
  std::size_t passed = 0;
  std::size_t ambiguous = 0;  // odd-one-out panels with several admissible answers
  bool sampled = false;
  std::vector<std::string> failures;

  bool all_pass() const noexcept { return passed == trials; }
};

struct VerificationReport {
  std::vector<PropositionTally> tallies;

  bool all_pass() const {
    for (const auto& t : tallies)
      if (!t.all_pass()) return false;
    return true;
  }
  bool sampled() const {
    for (const auto& t : tallies)
      if (t.sampled) return true;
    return false;
  }
};

namespace detail {

inline std::string show(std::span<const Symbol> s) {
  std::string out;
  for (Symbol x : s) out.push_back(static_cast<char>('a' + x));
  return out;
}

/// Chooses which of `total` trials to run: all of them within budget,
/// otherwise a uniform sample without replacement in ascending order.
inline std::vector<std::size_t> pick_trials(std::size_t total, std::size_t budget, std::uint64_t seed,
                                            bool& sampled) {
  std::vector<std::size_t> idx(total);
  for (std::size_t i = 0; i < total; ++i) idx[i] = i;
  sampled = total > budget;
  if (!sampled) return idx;
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(idx));
  idx.resize(budget);
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline void check_epsilon(const ExactEstimator& est) {
  const auto& u = est.universe();
  const double bound = 1.0 / (2.0 * u.alphabet_size * static_cast<double>(est.compliant().size()));
  if (!(u.epsilon < bound)) {
    throw ArgumentError("epsilon " + std::to_string(u.epsilon) + " too large for universe '" + u.name +
                        "' (must be below " + std::to_string(bound) + ")");
  }
}

}  // namespace detail

/// Every selection problem in the universe: a compliant panel, its last item
/// removed, and a candidate list made of the true item plus every symbol that
/// would break the rule, with the answer placed at each candidate position.
inline PropositionTally verify_selection(const ExactEstimator& est, std::size_t budget, std::uint64_t seed = 7) {
  const auto& u = est.universe();
  PropositionTally t{"selection", u.name, 0, 0, 0, 0, false, {}};
  struct Trial {
    std::size_t panel;
    std::size_t answer_pos;
  };
  std::vector<Trial> all;
  std::vector<std::vector<Symbol>> distractors(est.compliant().size());
  for (std::size_t p = 0; p < est.compliant().size(); ++p) {
    std::vector<Symbol> probe = est.compliant()[p];
    const Symbol answer = probe.back();
    for (Symbol x = 0; x < u.alphabet_size; ++x) {
      if (x == answer) continue;
      probe.back() = x;
      if (!est.is_compliant(probe)) distractors[p].push_back(x);
    }
    for (std::size_t j = 0; j <= distractors[p].size(); ++j) all.push_back({p, j});
  }
  t.constructible = all.size();
  for (std::size_t k : detail::pick_trials(all.size(), budget, seed, t.sampled)) {
    const Trial& tr = all[k];
    const auto& full = est.compliant()[tr.panel];
    std::vector<Symbol> cands = distractors[tr.panel];
    cands.insert(cands.begin() + static_cast<std::ptrdiff_t>(tr.answer_pos), full.back());
    const SelectionResult r = solve_selection(SymbolPanel(full), std::span<const Symbol>(cands), est);
    ++t.trials;
    if (r.chosen_index == tr.answer_pos) {
      ++t.passed;
    } else {
      t.failures.push_back("panel " + detail::show(full) + " candidates " + detail::show(cands) + ": chose " +
                           std::to_string(r.chosen_index) + ", expected " + std::to_string(tr.answer_pos));
    }
  }
  return t;
}

/// Every odd-one-out problem obtained by corrupting one position of a
/// compliant panel so that the panel breaks the rule. A position is an
/// admissible answer when removing it leaves a completable context; panels
/// with one admissible answer must be solved exactly, panels with several
/// must be solved within the admissible set.
inline PropositionTally verify_odd_one_out(const ExactEstimator& est, std::size_t budget, std::uint64_t seed = 11) {
  const auto& u = est.universe();
  PropositionTally t{"odd-one-out", u.name, 0, 0, 0, 0, false, {}};
  std::set<std::vector<Symbol>> corrupted;
  for (const auto& p : est.compliant()) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      std::vector<Symbol> q = p;
      for (Symbol y = 0; y < u.alphabet_size; ++y) {
        if (y == p[i]) continue;
        q[i] = y;
        if (!est.is_compliant(q)) corrupted.insert(q);
      }
    }
  }
  const std::vector<std::vector<Symbol>> all(corrupted.begin(), corrupted.end());
  t.constructible = all.size();
  for (std::size_t k : detail::pick_trials(all.size(), budget, seed, t.sampled)) {
    const auto& q = all[k];
    const SymbolPanel panel(q);
    std::vector<std::size_t> admissible;
    for (std::size_t j = 0; j < q.size(); ++j) {
      const auto counts = est.completion_counts(remove_item(panel, j));
      std::uint64_t total = 0;
      for (auto c : counts) total += c;
      if (total > 0) admissible.push_back(j);
    }
    const OddOneOutResult r = solve_o3(panel, est);
    ++t.trials;
    if (admissible.size() > 1) ++t.ambiguous;
    const bool ok = std::find(admissible.begin(), admissible.end(), r.odd_index) != admissible.end();
    if (ok) {
      ++t.passed;
    } else {
      t.failures.push_back("panel " + detail::show(q) + ": chose " + std::to_string(r.odd_index));
    }
  }
  return t;
}

/// Two-panel problems: a left context completable only under `left_rule`, a
/// right context completable only under `right_rule`, and every query that
/// completes exactly one of them. Scores come from the union universe.
inline PropositionTally verify_two_panel(const SymbolicUniverse& left_rule, const SymbolicUniverse& right_rule,
                                         std::size_t budget, std::uint64_t seed = 13) {
  const ExactEstimator joint(union_universe(left_rule, right_rule));
  detail::check_epsilon(joint);
  const ExactEstimator left_est(left_rule);
  const ExactEstimator right_est(right_rule);
  PropositionTally t{"two-panel", left_rule.name + " vs " + right_rule.name, 0, 0, 0, 0, false, {}};

  const auto prefixes = [](const ExactEstimator& e) {
    std::set<std::vector<Symbol>> s;
    for (const auto& p : e.compliant()) s.insert(std::vector<Symbol>(p.begin(), p.end() - 1));
    return std::vector<std::vector<Symbol>>(s.begin(), s.end());
  };
  const auto completes = [](const ExactEstimator& e, std::vector<Symbol> prefix, Symbol x) {
    prefix.push_back(x);
    return e.is_compliant(prefix);
  };
  const auto completable = [&](const ExactEstimator& e, const std::vector<Symbol>& prefix) {
    for (Symbol x = 0; x < e.universe().alphabet_size; ++x)
      if (completes(e, prefix, x)) return true;
    return false;
  };

  std::vector<std::vector<Symbol>> lefts;
  for (auto& p : prefixes(left_est))
    if (!completable(right_est, p)) lefts.push_back(p);
  std::vector<std::vector<Symbol>> rights;
  for (auto& p : prefixes(right_est))
    if (!completable(left_est, p)) rights.push_back(p);

  struct Trial {
    std::size_t left;
    std::size_t right;
    Symbol query;
    Side truth;
  };
  std::vector<Trial> all;
  const int a = left_rule.alphabet_size;
  for (std::size_t l = 0; l < lefts.size(); ++l) {
    for (std::size_t r = 0; r < rights.size(); ++r) {
      for (Symbol x = 0; x < a; ++x) {
        const bool in_left = completes(left_est, lefts[l], x);
        const bool in_right = completes(right_est, rights[r], x);
        if (in_left != in_right) all.push_back({l, r, x, in_left ? Side::kLeft : Side::kRight});
      }
    }
  }
  t.constructible = all.size();
  for (std::size_t k : detail::pick_trials(all.size(), budget, seed, t.sampled)) {
    const Trial& tr = all[k];
    BasicSvrtProblem<Symbol> problem{SymbolPanel(lefts[tr.left]), SymbolPanel(rights[tr.right]),
                                     {{tr.query, tr.truth}}};
    const auto verdicts = solve_svrt(problem, joint);
    ++t.trials;
    if (verdicts[0].label == tr.truth) {
      ++t.passed;
    } else {
      t.failures.push_back("left " + detail::show(lefts[tr.left]) + " right " + detail::show(rights[tr.right]) +
                           " query " + detail::show(std::vector<Symbol>{tr.query}) + ": got " +
                           to_string(verdicts[0].label));
    }
  }
  return t;
}

inline VerificationReport verify_propositions(const SymbolicUniverse& universe,
                                              std::size_t budget = std::numeric_limits<std::size_t>::max()) {
  const ExactEstimator est(universe);
  detail::check_epsilon(est);
  VerificationReport report;
  report.tallies.push_back(verify_selection(est, budget));
  report.tallies.push_back(verify_odd_one_out(est, budget));
  return report;
}

struct TwoPanelSpec {
  SymbolicUniverse left;
  SymbolicUniverse right;
};

/// The five built-in universes: three single-rule universes and one
/// two-rule pairing for the two-panel task.
inline std::vector<SymbolicUniverse> builtin_universes() {
  return {make_universe("all_equal", 3, 4), make_universe("all_distinct", 4, 3), make_universe("progression", 5, 3)};
}

inline TwoPanelSpec builtin_two_panel() {
  return {make_universe("all_equal", 4, 4), make_universe("all_distinct", 4, 4)};
}

inline VerificationReport verify_builtin_suite(std::size_t budget = std::numeric_limits<std::size_t>::max()) {
  VerificationReport report;
  for (const auto& u : builtin_universes()) {
    auto r = verify_propositions(u, budget);
    for (auto& t : r.tallies) report.tallies.push_back(std::move(t));
  }
  const TwoPanelSpec pair = builtin_two_panel();
  report.tallies.push_back(verify_two_panel(pair.left, pair.right, budget));
  return report;
}

inline std::string format_report(const VerificationReport& report) {
  std::ostringstream os;
  os << "proposition   universe                      trials  passed  ambiguous  sampled\n";
  for (const auto& t : report.tallies) {
    char line[256];
    std::snprintf(line, sizeof line, "%-13s %-29s %6zu  %6zu  %9zu  %s\n", t.proposition.c_str(),
                  t.universe.c_str(), t.trials, t.passed, t.ambiguous, t.sampled ? "yes" : "no");
    os << line;
    for (const auto& f : t.failures) os << "  FAIL " << f << "\n";
  }
  os << (report.all_pass() ? "all checks passed" : "FAILURES present") << (report.sampled() ? " (sampled)" : "")
     << "\n";
  return os.str();
}

}  // namespace ucgs::oracle
