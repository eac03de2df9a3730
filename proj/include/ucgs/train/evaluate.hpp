#pragma once

#include <cmath>
#include <deque>
#include <map>
#include <span>
#include <vector>

#include "ucgs/core/judgment.hpp"
#include "ucgs/train/data.hpp"
#include "ucgs/train/model.hpp"

namespace ucgs::train {

struct TaskResult {
  TaskKind task = TaskKind::kRpm;
  std::size_t n = 0;  // judged items: problems, or queries for svrt
  std::size_t correct = 0;
  std::vector<std::size_t> predicted;
  std::vector<std::size_t> truth;

  double accuracy() const { return n ? static_cast<double>(correct) / static_cast<double>(n) : 0.0; }
};

struct Interval {
  double lo = 0;
  double hi = 0;
};

/// Wilson score interval for a binomial proportion; z = 1.96 gives 95%.
inline Interval wilson_interval(std::size_t correct, std::size_t n, double z = 1.96) {
  if (n == 0) return {0.0, 1.0};
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(correct) / nn;
  const double z2 = z * z;
  const double centre = (p + z2 / (2 * nn)) / (1 + z2 / nn);
  const double half = z * std::sqrt(p * (1 - p) / nn + z2 / (4 * nn * nn)) / (1 + z2 / nn);
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

namespace detail {

/// Two-pass batching around the judgment functions: a recording pass
/// collects every query the judgments ask, one batched call scores them all,
/// and a replay pass hands the scores back in the same order.
template <class Item>
class QueryTape {
 public:
  struct Recorder {
    QueryTape* tape;
    double score(const BasicContext<Item>& c, const Item& x) const {
      const ScoreQuery<Item> q{&c, &x};
      return score_batch(std::span<const ScoreQuery<Item>>(&q, 1)).front();
    }
    std::vector<double> score_batch(std::span<const ScoreQuery<Item>> qs) const {
      std::map<const BasicContext<Item>*, const BasicContext<Item>*> copies;
      for (const auto& q : qs) {
        auto [it, inserted] = copies.try_emplace(q.context, nullptr);
        if (inserted) it->second = &tape->contexts_.emplace_back(*q.context);
        tape->queries_.push_back({it->second, &tape->targets_.emplace_back(*q.target)});
      }
      return std::vector<double>(qs.size(), 0.0);
    }
  };

  struct Replayer {
    QueryTape* tape;
    double score(const BasicContext<Item>&, const Item&) const { return tape->scores_.at(tape->cursor_++); }
    std::vector<double> score_batch(std::span<const ScoreQuery<Item>> qs) const {
      std::vector<double> out;
      for (std::size_t i = 0; i < qs.size(); ++i) out.push_back(tape->scores_.at(tape->cursor_++));
      return out;
    }
  };

  Recorder recorder() { return {this}; }
  Replayer replayer() { return {this}; }

  template <class Estimator>
  void score_with(const Estimator& est) {
    scores_ = score_queries<Item>(est, std::span<const ScoreQuery<Item>>(queries_));
    cursor_ = 0;
  }

  bool exhausted() const { return cursor_ == scores_.size(); }

 private:
  std::deque<BasicContext<Item>> contexts_;
  std::deque<Item> targets_;
  std::vector<ScoreQuery<Item>> queries_;
  std::vector<double> scores_;
  std::size_t cursor_ = 0;
};

/// Applies the judgment function of `r.task` and appends (prediction, truth)
/// pairs to the result.
template <class Estimator>
void judge(const ProblemRecord& r, const Split& split, const Estimator& est, TaskResult& out) {
  switch (r.task) {
    case TaskKind::kRpm:
    case TaskKind::kVap: {
      const auto p = raven::to_selection(r, split);
      const auto res = solve_selection(p.panel, std::span<const Image>(p.candidates), est);
      out.predicted.push_back(res.chosen_index);
      out.truth.push_back(p.answer_index);
      break;
    }
    case TaskKind::kO3: {
      const auto p = raven::to_o3(r, split);
      out.predicted.push_back(solve_o3(p.panel, est).odd_index);
      out.truth.push_back(p.odd_index);
      break;
    }
    case TaskKind::kSvrt: {
      const auto p = raven::to_svrt(r, split);
      const auto verdicts = solve_svrt(p, est);
      for (std::size_t i = 0; i < verdicts.size(); ++i) {
        out.predicted.push_back(static_cast<std::size_t>(verdicts[i].label));
        out.truth.push_back(static_cast<std::size_t>(p.queries[i].second));
      }
      break;
    }
  }
}

}  // namespace detail

/// Accuracy of the judgment function for `task` over a split, with one
/// estimator. Problems are scored `chunk` at a time through one batched
/// estimator call per chunk. Deterministic for a deterministic estimator.
template <class Estimator>
  requires PredictabilityEstimator<Estimator, Image>
TaskResult validate(const Estimator& est, const Split& split, TaskKind task, std::size_t chunk = 256) {
  if (task != TaskKind::kRpm && task != TaskKind::kVap && task != TaskKind::kO3 && task != TaskKind::kSvrt) {
    throw ArgumentError("validate: unknown task kind");
  }
  if (split.empty()) throw ArgumentError("validate: split is empty");
  for (const auto& r : split.records()) {
    if (r.task != task) {
      throw ArgumentError("validate: dataset holds " + std::string(raven::to_string(r.task)) + " problems, asked for " +
                          raven::to_string(task));
    }
  }
  TaskResult out;
  out.task = task;
  const auto& recs = split.records();
  for (std::size_t start = 0; start < recs.size(); start += std::max<std::size_t>(chunk, 1)) {
    const std::size_t end = std::min(recs.size(), start + std::max<std::size_t>(chunk, 1));
    detail::QueryTape<Image> tape;
    TaskResult scratch;
    const auto rec = tape.recorder();
    for (std::size_t i = start; i < end; ++i) detail::judge(recs[i], split, rec, scratch);
    tape.score_with(est);
    const auto rep = tape.replayer();
    for (std::size_t i = start; i < end; ++i) detail::judge(recs[i], split, rep, out);
    if (!tape.exhausted()) throw StateError("validate: judgment asked a different query sequence on replay");
  }
  out.n = out.predicted.size();
  for (std::size_t i = 0; i < out.n; ++i) out.correct += out.predicted[i] == out.truth[i] ? 1 : 0;
  return out;
}

inline constexpr std::uint64_t kGenerateSalt = 0x67656e;

struct GeneratedAnswer {
  std::uint64_t id = 0;
  model::Codes codes;
  Image image;
  std::size_t chosen = 0;  // nearest candidate
  std::size_t answer = 0;
};

/// Generative answering for selection problems: sample the missing image
/// from the context, then pick the nearest candidate. Sample i uses the
/// seed derived from (seed, problem id), so results do not depend on
/// batching or on which subset of problems is evaluated.
inline std::vector<GeneratedAnswer> generate_answers(const Model& m, const Split& split, double temperature,
                                                     std::uint64_t seed, std::size_t chunk = 256) {
  std::vector<GeneratedAnswer> out;
  const auto est = m.estimator();
  const auto& recs = split.records();
  for (std::size_t start = 0; start < recs.size(); start += chunk) {
    const std::size_t end = std::min(recs.size(), start + chunk);
    std::vector<Context> contexts;
    std::vector<std::uint64_t> seeds;
    std::vector<RpmProblem> problems;
    for (std::size_t i = start; i < end; ++i) {
      problems.push_back(raven::to_selection(recs[i], split));
      contexts.push_back(remove_item(problems.back().panel, problems.back().panel.size() - 1));
      seeds.push_back(derive_seed(seed, recs[i].id, kGenerateSalt));
    }
    auto gen = est.generate(contexts, temperature, seeds, chunk);
    for (std::size_t i = start; i < end; ++i) {
      auto& [codes, image] = gen[i - start];
      const auto& p = problems[i - start];
      GeneratedAnswer a;
      a.id = recs[i].id;
      a.chosen = nearest_candidate(image, std::span<const Image>(p.candidates));
      a.answer = p.answer_index;
      a.codes = std::move(codes);
      a.image = std::move(image);
      out.push_back(std::move(a));
    }
  }
  return out;
}

inline TaskResult generative_accuracy(std::span<const GeneratedAnswer> answers, TaskKind task) {
  TaskResult r;
  r.task = task;
  for (const auto& a : answers) {
    r.predicted.push_back(a.chosen);
    r.truth.push_back(a.answer);
    r.correct += a.chosen == a.answer ? 1 : 0;
  }
  r.n = answers.size();
  return r;
}

}  // namespace ucgs::train
