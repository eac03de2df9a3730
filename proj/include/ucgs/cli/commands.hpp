#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ucgs/oracle/verify.hpp"
#include "ucgs/raven/scene_oracle.hpp"
#include "ucgs/train/trainer.hpp"

namespace ucgs::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using train::RunConfig;
using train::Split;
using raven::TaskKind;

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2 };

/// Bad invocation: exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::array<const char*, 6> kDatasetDirs{"train", "valid", "test", "o3-id", "vap-id", "svrt-id"};

inline void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_bytes(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------- gen-data

struct GenDataResult {
  std::vector<fs::path> dirs;
  std::vector<std::size_t> sizes;
};

/// MiniRAVEN train/valid/test plus the three derived test sets, which are
/// built from test-split problems only.
inline GenDataResult gen_data(const RunConfig& cfg, const fs::path& out, bool force, std::ostream& log) {
  cfg.validate();
  if (fs::exists(out) && !fs::is_directory(out)) throw StateError(out.string() + " exists and is not a directory");
  if (fs::exists(out) && !fs::is_empty(out)) {
    if (!force) throw StateError(out.string() + " is not empty; pass --force to overwrite the datasets in it");
    for (const char* d : kDatasetDirs) fs::remove_all(out / d);
  }
  raven::GeneratorConfig gen;
  gen.candidates = cfg.data.candidates;
  const auto splits = raven::generate_splits(cfg.data.seed, cfg.data.total, cfg.data.train_frac, cfg.data.valid_frac, gen);
  std::vector<raven::ProblemRecord> o3, vap, svrt;
  for (const auto& r : splits.test) {
    o3.push_back(raven::build_o3_id(r));
    vap.push_back(raven::build_vap_id(r, gen));
    svrt.push_back(raven::build_svrt_id(r));
  }
  const raven::SceneAtlas atlas({cfg.data.size, cfg.data.size});
  const std::array<std::pair<TaskKind, const std::vector<raven::ProblemRecord>*>, 6> sets{{
      {TaskKind::kRpm, &splits.train},
      {TaskKind::kRpm, &splits.valid},
      {TaskKind::kRpm, &splits.test},
      {TaskKind::kO3, &o3},
      {TaskKind::kVap, &vap},
      {TaskKind::kSvrt, &svrt},
  }};
  GenDataResult res;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    raven::Dataset ds;
    ds.header.task = sets[i].first;
    ds.header.split = kDatasetDirs[i];
    ds.header.render = atlas.config();
    ds.header.seed = cfg.data.seed;
    ds.header.config_hash = cfg.data_hash();
    ds.records = *sets[i].second;
    const fs::path dir = out / kDatasetDirs[i];
    raven::write_dataset(ds, dir, atlas);
    res.dirs.push_back(dir);
    res.sizes.push_back(ds.records.size());
    log << kDatasetDirs[i] << ": " << ds.records.size() << " " << raven::to_string(ds.header.task) << " problems -> "
        << dir.string() << "\n";
  }
  write_file_bytes(out / "config", cfg.to_text());
  return res;
}

/// Loads one dataset directory and checks it was generated under the data
/// section of `cfg` (when given).
inline Split load_split(const fs::path& dir, const RunConfig* cfg = nullptr) {
  Split s = Split::load(dir);
  if (cfg) {
    const auto header = raven::read_header(dir);
    if (header.config_hash != cfg->data_hash()) {
      throw ConfigError("dataset " + dir.string() + " was generated under a different data configuration (hash " +
                        header.config_hash.substr(0, 12) + ", expected " + cfg->data_hash().substr(0, 12) + ")");
    }
  }
  return s;
}

// ------------------------------------------------------------------- train

struct TrainSummary {
  train::Stage1Result stage1;
  train::Stage2Result stage2;
  json record;
};

/// Both stages back to back; stage 2 starts from the best stage-1 tokenizer.
inline TrainSummary run_train(const RunConfig& cfg, const fs::path& data, const fs::path& out, bool resume,
                              std::ostream& log) {
  cfg.validate();
  const Split tr = load_split(data / "train", &cfg);
  const Split va = load_split(data / "valid", &cfg);
  fs::create_directories(out);
  if (resume && fs::exists(out / "config") && read_file_bytes(out / "config") != cfg.to_text()) {
    throw ConfigError("cannot resume: " + (out / "config").string() + " differs from the current configuration");
  }
  write_file_bytes(out / "config", cfg.to_text());
  train::Hooks hooks;
  hooks.log = &log;
  hooks.resume = resume;
  TrainSummary s;
  s.stage1 = train::pretrain_tokenizer(cfg, tr, va, out, hooks);
  hooks.resume = true;  // stage 2 shares the log file
  if (!resume) {
    fs::remove(out / train::kStage2Last);
    fs::remove(out / train::kStage2Best);
  }
  s.stage2 = train::train_reasoner(cfg, tr, va, s.stage1.best, out, hooks);
  s.record = {{"config_hash", cfg.hash()},
              {"stage1", {{"checkpoint", s.stage1.best.string()},
                          {"best_epoch", s.stage1.best_epoch},
                          {"best_valid_mse", s.stage1.best_mse}}},
              {"stage2", {{"checkpoint", s.stage2.best.string()},
                          {"best_epoch", s.stage2.best_epoch},
                          {"best_valid_accuracy", s.stage2.best_accuracy},
                          {"epochs_run", s.stage2.epochs_run},
                          {"stopped_early", s.stage2.stopped_early}}}};
  write_json(out / "summary.json", s.record);
  log << "stage 1 best: epoch " << s.stage1.best_epoch << ", valid mse " << s.stage1.best_mse << "\n"
      << "stage 2 best: epoch " << s.stage2.best_epoch << ", valid accuracy " << s.stage2.best_accuracy << "\n";
  return s;
}

// -------------------------------------------------------------------- eval

struct EvalOptions {
  fs::path checkpoint;  // required for the model estimator
  fs::path data;        // one dataset directory
  std::optional<TaskKind> task;
  std::string estimator = "model";  // model | oracle
  std::string mode = "selective";   // selective | generative
  std::uint64_t seed = 0;
  std::optional<double> temperature;
  std::size_t limit = 0;
  fs::path report;
};

inline json result_json(const train::TaskResult& r) {
  const auto ci = train::wilson_interval(r.correct, r.n);
  return {{"task", raven::to_string(r.task)}, {"N", r.n},        {"correct", r.correct},
          {"accuracy", r.accuracy()},        {"ci95_low", ci.lo}, {"ci95_high", ci.hi}};
}

inline json run_eval(const EvalOptions& o, std::ostream& out) {
  if (o.estimator != "model" && o.estimator != "oracle") throw UsageError("--estimator must be model or oracle");
  if (o.mode != "selective" && o.mode != "generative") throw UsageError("--mode must be selective or generative");
  if (o.estimator == "oracle" && o.mode == "generative") throw UsageError("the oracle estimator cannot generate");
  if (o.estimator == "model" && o.checkpoint.empty()) throw UsageError("--checkpoint is required with the model estimator");
  Split split = Split::load(o.data);
  const TaskKind task = o.task.value_or(split.task());
  if (task != split.task()) {
    throw ArgumentError(std::string("dataset ") + o.data.string() + " holds " + raven::to_string(split.task()) +
                        " problems, not " + raven::to_string(task));
  }
  if (o.mode == "generative" && task != TaskKind::kRpm && task != TaskKind::kVap) {
    throw ArgumentError("generative mode needs a selection task (rpm or vap)");
  }
  split = split.head(o.limit);
  json rep;
  train::TaskResult r;
  if (o.estimator == "oracle") {
    const raven::ImageSceneOracle oracle({split.image_size(), split.image_size()});
    r = train::validate(oracle, split, task);
  } else {
    const auto m = train::load_model(o.checkpoint);
    const auto header = raven::read_header(o.data);
    if (header.render.height != m->config.data.size || header.render.width != m->config.data.size) {
      throw ArgumentError("dataset image size does not match the checkpoint");
    }
    rep["config_hash"] = m->config.hash();
    if (o.mode == "selective") {
      r = train::validate(m->estimator(), split, task);
    } else {
      const double temp = o.temperature.value_or(m->config.temperature);
      const auto answers = train::generate_answers(*m, split, temp, o.seed);
      r = train::generative_accuracy(answers, task);
      rep["temperature"] = temp;
      rep["seed"] = o.seed;
    }
  }
  rep["mode"] = o.mode;
  rep["estimator"] = o.estimator;
  rep["dataset"] = o.data.string();
  rep["dataset_config_hash"] = raven::read_header(o.data).config_hash;
  rep.update(result_json(r));
  char line[256];
  std::snprintf(line, sizeof line, "%s %s: %zu/%zu correct, accuracy %.4f (95%% CI %.4f-%.4f)\n",
                raven::to_string(task), o.mode.c_str(), r.correct, r.n, r.accuracy(), rep["ci95_low"].get<double>(),
                rep["ci95_high"].get<double>());
  out << line;
  if (!o.report.empty()) write_json(o.report, rep);
  return rep;
}

// ---------------------------------------------------------------- generate

inline constexpr int kGutter = 2;

/// 3x3 grid of the panel with the generated image in the bottom-right
/// cell; cells separated by white gutters.
inline Image compose_grid(std::span<const Image> cells) {
  if (cells.size() != 9) throw ArgumentError("compose_grid: need 9 cells");
  const int h = cells[0].height(), w = cells[0].width();
  const int gh = 3 * h + 2 * kGutter, gw = 3 * w + 2 * kGutter;
  std::vector<float> px(static_cast<std::size_t>(gh) * gw, 1.0f);
  for (int c = 0; c < 9; ++c) {
    if (cells[static_cast<std::size_t>(c)].height() != h || cells[static_cast<std::size_t>(c)].width() != w) {
      throw ArgumentError("compose_grid: cells differ in size");
    }
    const int oy = (c / 3) * (h + kGutter), ox = (c % 3) * (w + kGutter);
    const auto src = cells[static_cast<std::size_t>(c)].pixels();
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        px[static_cast<std::size_t>((oy + y) * gw + ox + x)] = src[static_cast<std::size_t>(y * w + x)];
  }
  return Image(gh, gw, std::move(px));
}

struct GenerateOptions {
  fs::path checkpoint;
  fs::path data;
  std::size_t count = 16;
  std::uint64_t seed = 0;
  std::optional<double> temperature;
  fs::path out;
};

inline json run_generate(const GenerateOptions& o, std::ostream& log) {
  if (o.count < 1) throw UsageError("--count must be at least 1");
  if (o.out.empty()) throw UsageError("--out is required");
  const auto m = train::load_model(o.checkpoint);
  const Split split = Split::load(o.data).head(o.count);
  if (split.task() != TaskKind::kRpm) throw ArgumentError("generate needs an rpm dataset");
  const double temp = o.temperature.value_or(m->config.temperature);
  const auto answers = train::generate_answers(*m, split, temp, o.seed);
  fs::create_directories(o.out);
  std::string manifest;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < answers.size(); ++i) {
    const auto& a = answers[i];
    const auto& r = split.records()[i];
    std::vector<Image> cells;
    for (std::size_t k = 0; k + 1 < r.panel.size(); ++k) cells.push_back(split.image(r.panel[k]));
    cells.push_back(a.image);
    const std::string name = "grid-" + std::to_string(a.id) + ".png";
    write_file_bytes(o.out / name, png::encode(compose_grid(cells).to_gray16()));
    correct += a.chosen == a.answer ? 1 : 0;
    json v{{"id", a.id},         {"grid", name},        {"chosen", a.chosen},
           {"answer", a.answer}, {"correct", a.chosen == a.answer}, {"codes", a.codes}};
    manifest += v.dump() + "\n";
  }
  write_file_bytes(o.out / "verdicts.jsonl", manifest);
  json summary{{"task", "rpm"},
               {"mode", "generative"},
               {"N", answers.size()},
               {"correct", correct},
               {"accuracy", static_cast<double>(correct) / static_cast<double>(answers.size())},
               {"seed", o.seed},
               {"temperature", temp},
               {"config_hash", m->config.hash()},
               {"dataset", o.data.string()}};
  write_json(o.out / "summary.json", summary);
  log << answers.size() << " grids written to " << o.out.string() << "; nearest-candidate verdicts " << correct << "/"
      << answers.size() << " correct\n";
  return summary;
}

// ------------------------------------------------------------ oracle-check

/// "rule:A:N" for a single-rule universe, "left+right:A:N" for a two-panel
/// pairing.
struct UniverseSpec {
  std::string left;
  std::string right;  // empty for single-rule
  int alphabet = 0;
  int length = 0;
};

inline UniverseSpec parse_universe(const std::string& text) {
  const auto c1 = text.find(':');
  const auto c2 = c1 == std::string::npos ? std::string::npos : text.find(':', c1 + 1);
  if (c2 == std::string::npos) throw UsageError("universe '" + text + "': expected rule:A:N or left+right:A:N");
  UniverseSpec u;
  const std::string rules = text.substr(0, c1);
  const auto plus = rules.find('+');
  u.left = rules.substr(0, plus);
  if (plus != std::string::npos) u.right = rules.substr(plus + 1);
  try {
    std::size_t used = 0;
    u.alphabet = std::stoi(text.substr(c1 + 1, c2 - c1 - 1), &used);
    if (used != c2 - c1 - 1) throw std::invalid_argument("A");
    const std::string n = text.substr(c2 + 1);
    u.length = std::stoi(n, &used);
    if (used != n.size()) throw std::invalid_argument("N");
  } catch (const std::exception&) {
    throw UsageError("universe '" + text + "': A and N must be integers");
  }
  for (const std::string* r : {&u.left, &u.right}) {
    if (r->empty() && r == &u.right) continue;
    if (!oracle::rules::by_name(*r)) {
      std::string known;
      for (const auto& n : oracle::rules::names()) known += (known.empty() ? "" : ", ") + n;
      throw UsageError("unknown rule '" + *r + "' (known: " + known + ")");
    }
  }
  if (u.alphabet < 1 || u.length < 2) throw UsageError("universe '" + text + "': need A >= 1 and N >= 2");
  return u;
}

struct OracleCheckOptions {
  std::vector<std::string> universes;  // empty: the built-in suite
  std::optional<std::size_t> sample;
  fs::path report;
};

inline json tally_json(const oracle::PropositionTally& t) {
  return {{"proposition", t.proposition}, {"universe", t.universe}, {"constructible", t.constructible},
          {"trials", t.trials},           {"passed", t.passed},     {"ambiguous", t.ambiguous},
          {"sampled", t.sampled},         {"failures", t.failures}};
}

inline oracle::VerificationReport run_oracle_check(const OracleCheckOptions& o, std::ostream& out) {
  std::vector<UniverseSpec> specs;
  for (const auto& u : o.universes) specs.push_back(parse_universe(u));
  const std::size_t budget = o.sample.value_or(std::numeric_limits<std::size_t>::max());
  if (o.sample && *o.sample == 0) throw UsageError("--sample must be positive");
  oracle::VerificationReport report;
  if (specs.empty()) {
    report = oracle::verify_builtin_suite(budget);
  } else {
    for (const auto& s : specs) {
      const auto left = oracle::make_universe(s.left, s.alphabet, s.length);
      if (s.right.empty()) {
        for (auto& t : oracle::verify_propositions(left, budget).tallies) report.tallies.push_back(std::move(t));
      } else {
        report.tallies.push_back(
            oracle::verify_two_panel(left, oracle::make_universe(s.right, s.alphabet, s.length), budget));
      }
    }
  }
  out << oracle::format_report(report);
  if (!o.report.empty()) {
    json j{{"all_pass", report.all_pass()}, {"sampled", report.sampled()}, {"tallies", json::array()}};
    for (const auto& t : report.tallies) j["tallies"].push_back(tally_json(t));
    write_json(o.report, j);
  }
  return report;
}

}  // namespace ucgs::cli
