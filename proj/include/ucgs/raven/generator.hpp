#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ucgs/core/problems.hpp"
#include "ucgs/raven/render.hpp"
#include "ucgs/raven/rules.hpp"
#include "ucgs/util/rng.hpp"

namespace ucgs::raven {

enum class TaskKind { kRpm, kVap, kO3, kSvrt };

inline const char* to_string(TaskKind t) {
  switch (t) {
    case TaskKind::kRpm: return "rpm";
    case TaskKind::kVap: return "vap";
    case TaskKind::kO3: return "o3";
    case TaskKind::kSvrt: return "svrt";
  }
  return "?";
}

inline TaskKind task_from_string(const std::string& s) {
  if (s == "rpm") return TaskKind::kRpm;
  if (s == "vap") return TaskKind::kVap;
  if (s == "o3") return TaskKind::kO3;
  if (s == "svrt") return TaskKind::kSvrt;
  throw ArgumentError("unknown task kind '" + s + "'");
}

/// One problem in symbolic form. Field use by task:
///   rpm, vap: panel (answer included as last item), candidates, answer
///   o3:       panel, answer = odd index
///   svrt:     panel = left, right, queries
struct ProblemRecord {
  std::uint64_t id = 0;
  TaskKind task = TaskKind::kRpm;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> source_id;
  RuleSpec rules;
  std::vector<Scene> panel;
  std::vector<Scene> candidates;
  std::vector<Scene> right;
  std::vector<std::pair<Scene, Side>> queries;
  std::size_t answer = 0;

  bool operator==(const ProblemRecord&) const = default;
};

struct GeneratorConfig {
  std::size_t candidates = 8;
  int max_attempts = 64;  // whole-problem redraws before giving up
  int max_distractor_draws = 4096;
};

// Salts separating the random streams derived from one problem seed.
inline constexpr std::uint64_t kO3Salt = 0x6f33;
inline constexpr std::uint64_t kVapSalt = 0x766170;

/// Perturbs one or two attributes of `answer` until `count` distinct scenes
/// are found that differ from the answer and leave the grid non-compliant
/// under every rule specification when placed after `context`.
inline std::vector<Scene> make_distractors(std::span<const Scene> context, const Scene& answer, std::size_t count,
                                           Rng& rng, int max_draws = 4096) {
  std::vector<Scene> grid(context.begin(), context.end());
  grid.push_back(answer);
  if (grid.size() % kRowLen != 0) throw ArgumentError("make_distractors: context must end one cell short of a row");
  std::vector<Scene> out;
  std::vector<Attribute> attrs(kAllAttributes.begin(), kAllAttributes.end());
  for (int draw = 0; out.size() < count; ++draw) {
    if (draw >= max_draws) throw GenerationError("could not find enough non-compliant distractors");
    rng.shuffle(std::span<Attribute>(attrs));
    const int flips = rng.uniform_int(1, 2);
    Scene s = answer;
    for (int f = 0; f < flips; ++f) {
      const Attribute a = attrs[static_cast<std::size_t>(f)];
      const int old = get(s, a);
      // Uniform over the other values of the attribute.
      int v = rng.uniform_int(min_value(a), max_value(a) - 1);
      if (v >= old) ++v;
      set(s, a, v);
    }
    if (!is_valid(s) || s == answer || std::find(out.begin(), out.end(), s) != out.end()) continue;
    grid.back() = s;
    if (compliant_any(grid)) continue;
    out.push_back(s);
  }
  return out;
}

namespace detail {

inline void place_answer(ProblemRecord& rec, const Scene& answer, std::vector<Scene> distractors, Rng& rng) {
  rec.candidates = std::move(distractors);
  rec.candidates.push_back(answer);
  rng.shuffle(std::span<Scene>(rec.candidates));
  rec.answer = static_cast<std::size_t>(std::find(rec.candidates.begin(), rec.candidates.end(), answer) -
                                        rec.candidates.begin());
}

}  // namespace detail

/// Draws a rule specification and a 3x3 grid that follows it, then builds the
/// candidate list around the bottom-right scene.
inline ProblemRecord sample_problem(Rng& rng, const GeneratorConfig& cfg = {}) {
  if (cfg.candidates < 2) throw ArgumentError("a selection problem needs at least two candidates");
  for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    const Layout layout = rng.below(2) == 0 ? Layout::kCenter : Layout::kGrid;
    ProblemRecord rec;
    rec.task = TaskKind::kRpm;
    rec.rules = sample_rule_spec(rng, layout);
    rec.panel = instantiate(rec.rules, layout, 3, rng);
    if (!satisfies(rec.rules, rec.panel)) continue;
    try {
      auto d = make_distractors(std::span<const Scene>(rec.panel).first(8), rec.panel.back(), cfg.candidates - 1, rng,
                                cfg.max_distractor_draws);
      detail::place_answer(rec, rec.panel.back(), std::move(d), rng);
    } catch (const GenerationError&) {
      continue;
    }
    return rec;
  }
  throw GenerationError("no feasible problem after " + std::to_string(cfg.max_attempts) + " attempts");
}

/// Problem `index` under `master`: a pure function of the pair.
inline ProblemRecord generate_problem(std::uint64_t master, std::uint64_t index, const GeneratorConfig& cfg = {}) {
  const std::uint64_t seed = derive_seed(master, index);
  Rng rng(seed);
  ProblemRecord rec = sample_problem(rng, cfg);
  rec.id = index;
  rec.seed = seed;
  return rec;
}

/// Replaces the bottom-right image with a uniformly drawn distractor.
inline ProblemRecord build_o3_id(const ProblemRecord& rpm, Rng& rng) {
  if (rpm.task != TaskKind::kRpm) throw ArgumentError("build_o3_id expects an rpm problem");
  std::vector<std::size_t> others;
  for (std::size_t i = 0; i < rpm.candidates.size(); ++i)
    if (i != rpm.answer) others.push_back(i);
  if (others.empty()) throw ArgumentError("build_o3_id: problem has no distractor");
  ProblemRecord o3;
  o3.id = rpm.id;
  o3.task = TaskKind::kO3;
  o3.seed = rpm.seed;
  o3.source_id = rpm.id;
  o3.rules = rpm.rules;
  o3.panel = rpm.panel;
  o3.panel.back() = rpm.candidates[others[rng.below(others.size())]];
  o3.answer = o3.panel.size() - 1;
  return o3;
}

inline ProblemRecord build_o3_id(const ProblemRecord& rpm) {
  Rng rng(derive_seed(rpm.seed, 0, kO3Salt));
  return build_o3_id(rpm, rng);
}

/// Keeps the first two rows; candidates are fresh distractors of image 5.
inline ProblemRecord build_vap_id(const ProblemRecord& rpm, const GeneratorConfig& cfg = {}) {
  if (rpm.task != TaskKind::kRpm) throw ArgumentError("build_vap_id expects an rpm problem");
  Rng rng(derive_seed(rpm.seed, 0, kVapSalt));
  ProblemRecord vap;
  vap.id = rpm.id;
  vap.task = TaskKind::kVap;
  vap.seed = rpm.seed;
  vap.source_id = rpm.id;
  vap.rules = rpm.rules;
  vap.panel.assign(rpm.panel.begin(), rpm.panel.begin() + 6);
  auto d = make_distractors(std::span<const Scene>(vap.panel).first(5), vap.panel.back(), cfg.candidates - 1, rng,
                            cfg.max_distractor_draws);
  detail::place_answer(vap, vap.panel.back(), std::move(d), rng);
  return vap;
}

/// Left context is rows 1-2 without image 5, right context is rows 2-3
/// without image 8; images 5 and 8 are the queries.
inline ProblemRecord build_svrt_id(const ProblemRecord& rpm) {
  if (rpm.task != TaskKind::kRpm) throw ArgumentError("build_svrt_id expects an rpm problem");
  ProblemRecord s;
  s.id = rpm.id;
  s.task = TaskKind::kSvrt;
  s.seed = rpm.seed;
  s.source_id = rpm.id;
  s.rules = rpm.rules;
  s.panel.assign(rpm.panel.begin(), rpm.panel.begin() + 5);
  s.right.assign(rpm.panel.begin() + 3, rpm.panel.begin() + 8);
  s.queries = {{rpm.panel[5], Side::kLeft}, {rpm.panel[8], Side::kRight}};
  return s;
}

struct Splits {
  std::vector<ProblemRecord> train;
  std::vector<ProblemRecord> valid;
  std::vector<ProblemRecord> test;
};

/// Problems 0..total-1, cut into consecutive train/valid/test ranges.
inline Splits generate_splits(std::uint64_t master, std::size_t total, double train_frac, double valid_frac,
                              const GeneratorConfig& cfg = {}) {
  if (train_frac < 0 || valid_frac < 0 || train_frac + valid_frac > 1.0) throw ArgumentError("bad split fractions");
  const auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(total)));
  const auto n_valid = static_cast<std::size_t>(std::llround(valid_frac * static_cast<double>(total)));
  if (n_train + n_valid > total) throw ArgumentError("bad split fractions");
  Splits s;
  for (std::size_t i = 0; i < total; ++i) {
    auto rec = generate_problem(master, i, cfg);
    (i < n_train ? s.train : i < n_train + n_valid ? s.valid : s.test).push_back(std::move(rec));
  }
  return s;
}

/// Anything that maps a scene to its image.
template <class S>
concept ImageSource = requires(const S& s, const Scene& scene) {
  { s.image(scene) } -> std::convertible_to<const Image&>;
};

template <ImageSource Source>
std::vector<Image> images_of(std::span<const Scene> scenes, const Source& src) {
  std::vector<Image> out;
  out.reserve(scenes.size());
  for (const Scene& s : scenes) out.push_back(src.image(s));
  return out;
}

template <ImageSource Source>
BasicSelectionProblem<Image> to_selection(const ProblemRecord& r, const Source& src) {
  if (r.task != TaskKind::kRpm && r.task != TaskKind::kVap) throw ArgumentError("not a selection problem");
  return {BasicPanel<Image>(images_of(std::span<const Scene>(r.panel), src)),
          images_of(std::span<const Scene>(r.candidates), src), r.answer};
}

template <ImageSource Source>
O3Problem to_o3(const ProblemRecord& r, const Source& src) {
  if (r.task != TaskKind::kO3) throw ArgumentError("not an odd-one-out problem");
  return {BasicPanel<Image>(images_of(std::span<const Scene>(r.panel), src)), r.answer};
}

template <ImageSource Source>
SvrtProblem to_svrt(const ProblemRecord& r, const Source& src) {
  if (r.task != TaskKind::kSvrt) throw ArgumentError("not a two-panel problem");
  SvrtProblem p{BasicPanel<Image>(images_of(std::span<const Scene>(r.panel), src)),
                BasicPanel<Image>(images_of(std::span<const Scene>(r.right), src)),
                {}};
  for (const auto& [scene, side] : r.queries) p.queries.emplace_back(src.image(scene), side);
  return p;
}

}  // namespace ucgs::raven
