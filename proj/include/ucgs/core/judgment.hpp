#pragma once

#include <concepts>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ucgs/core/panel.hpp"
#include "ucgs/core/problems.hpp"
#include "ucgs/util/errors.hpp"

namespace ucgs {

/// Anything that assigns a log-predictability log p(x | context) to an item.
/// `score` must be deterministic and must not modify the estimator.
template <class E, class Item>
concept PredictabilityEstimator = requires(const E& e, const BasicContext<Item>& c, const Item& x) {
  { e.score(c, x) } -> std::convertible_to<double>;
};

template <class Item>
struct ScoreQuery {
  const BasicContext<Item>* context;
  const Item* target;
};

/// Optional batched entry point. Results must agree with pairwise `score`
/// calls; the judgment functions use it when present.
template <class E, class Item>
concept BatchPredictabilityEstimator =
    PredictabilityEstimator<E, Item> && requires(const E& e, std::span<const ScoreQuery<Item>> q) {
      { e.score_batch(q) } -> std::same_as<std::vector<double>>;
    };

template <class Item, class Estimator>
  requires PredictabilityEstimator<Estimator, Item>
std::vector<double> score_queries(const Estimator& estimator, std::span<const ScoreQuery<Item>> queries) {
  if constexpr (BatchPredictabilityEstimator<Estimator, Item>) {
    return estimator.score_batch(queries);
  } else {
    std::vector<double> out;
    out.reserve(queries.size());
    for (const auto& q : queries) out.push_back(static_cast<double>(estimator.score(*q.context, *q.target)));
    return out;
  }
}

/// First index of the maximum; ties go to the lowest index.
inline std::size_t argmax_lowest(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

/// First index of the minimum; ties go to the lowest index.
inline std::size_t argmin_lowest(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] < v[best]) best = i;
  }
  return best;
}

struct SelectionResult {
  std::size_t chosen_index = 0;
  std::vector<double> scores;
};

/// Answer selection for RPM and VAP: the candidate that best fills the last
/// panel position, i.e. argmax_x log p(x | panel without its last item).
template <class Item, class Estimator>
  requires PredictabilityEstimator<Estimator, Item>
SelectionResult solve_selection(const BasicPanel<Item>& panel, std::span<const Item> candidates,
                                const Estimator& estimator) {
  if (candidates.empty()) throw ArgumentError("solve_selection: candidate list is empty");
  const BasicContext<Item> context = remove_item(panel, panel.size() - 1);
  std::vector<ScoreQuery<Item>> queries;
  queries.reserve(candidates.size());
  for (const Item& c : candidates) queries.push_back({&context, &c});
  SelectionResult r;
  r.scores = score_queries<Item>(estimator, std::span<const ScoreQuery<Item>>(queries));
  r.chosen_index = argmax_lowest(r.scores);
  return r;
}

struct OddOneOutResult {
  std::size_t odd_index = 0;
  std::vector<double> scores;
};

/// Odd-one-out: the position whose item is least predictable from the rest.
template <class Item, class Estimator>
  requires PredictabilityEstimator<Estimator, Item>
OddOneOutResult solve_o3(const BasicPanel<Item>& panel, const Estimator& estimator) {
  if (panel.size() < 3) throw ArgumentError("solve_o3: panel needs at least three items");
  std::vector<BasicContext<Item>> contexts;
  contexts.reserve(panel.size());
  for (std::size_t i = 0; i < panel.size(); ++i) contexts.push_back(remove_item(panel, i));
  std::vector<ScoreQuery<Item>> queries;
  queries.reserve(panel.size());
  for (std::size_t i = 0; i < panel.size(); ++i) queries.push_back({&contexts[i], &panel[i]});
  OddOneOutResult r;
  r.scores = score_queries<Item>(estimator, std::span<const ScoreQuery<Item>>(queries));
  r.odd_index = argmin_lowest(r.scores);
  return r;
}

struct SvrtVerdict {
  Side label = Side::kLeft;
  double score_left = 0.0;
  double score_right = 0.0;
};

/// Two-panel classification: each query joins the panel under which it is
/// more predictable as an appended item. Equal scores resolve to LEFT.
template <class Item, class Estimator>
  requires PredictabilityEstimator<Estimator, Item>
std::vector<SvrtVerdict> solve_svrt(const BasicSvrtProblem<Item>& problem, const Estimator& estimator) {
  if (problem.left.size() != problem.right.size()) {
    throw ArgumentError("solve_svrt: left and right panels must have equal length (got " +
                        std::to_string(problem.left.size()) + " and " + std::to_string(problem.right.size()) +
                        ")");
  }
  const BasicContext<Item> left = extension_context(problem.left);
  const BasicContext<Item> right = extension_context(problem.right);
  std::vector<ScoreQuery<Item>> queries;
  queries.reserve(2 * problem.queries.size());
  for (const auto& q : problem.queries) {
    queries.push_back({&left, &q.first});
    queries.push_back({&right, &q.first});
  }
  const std::vector<double> s = score_queries<Item>(estimator, std::span<const ScoreQuery<Item>>(queries));
  std::vector<SvrtVerdict> out;
  out.reserve(problem.queries.size());
  for (std::size_t i = 0; i < problem.queries.size(); ++i) {
    SvrtVerdict v;
    v.score_left = s[2 * i];
    v.score_right = s[2 * i + 1];
    v.label = v.score_left >= v.score_right ? Side::kLeft : Side::kRight;
    out.push_back(v);
  }
  return out;
}

/// Candidate closest to a generated image in mean squared pixel distance.
inline std::size_t nearest_candidate(const Image& generated, std::span<const Image> candidates) {
  if (candidates.empty()) throw ArgumentError("nearest_candidate: candidate list is empty");
  std::size_t best = 0;
  double best_d = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (!generated.same_shape(candidates[i])) {
      throw ArgumentError("nearest_candidate: candidate " + std::to_string(i) + " shape mismatch");
    }
    const double d = mean_squared_distance(generated, candidates[i]);
    if (i == 0 || d < best_d) {
      best = i;
      best_d = d;
    }
  }
  return best;
}

inline double selection_accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> truths) {
  if (predictions.size() != truths.size()) throw ArgumentError("selection_accuracy: length mismatch");
  if (predictions.empty()) throw ArgumentError("selection_accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) hits += predictions[i] == truths[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

}  // namespace ucgs
