#include <gtest/gtest.h>

#include <cstdlib>
#include <set>
#include <sstream>

#include "ucgs/cli/commands.hpp"

using namespace ucgs;
using namespace ucgs::cli;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config() {
  RunConfig c;
  c.data.total = 120;
  c.tok.channels = 8;
  c.tok.first_channels = 4;
  c.tok.res_hidden = 4;
  c.tok.res_blocks = 1;
  c.tok.codebook_size = 16;
  c.tok.code_dim = 8;
  c.rsn.width = 16;
  c.rsn.heads = 2;
  c.rsn.layers = 1;
  c.rsn.ff = 32;
  c.rsn.concepts = 2;
  c.train.stage1_epochs = 2;
  c.train.stage2_epochs = 2;
  c.train.stage1_batch = 16;
  c.train.stage2_batch = 16;
  c.validate();
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ucgs-cli-" + name);
  fs::remove_all(p);
  return p;
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_file_bytes(e.path());
  }
  return out;
}

json read_json(const fs::path& p) { return json::parse(read_file_bytes(p)); }

std::vector<json> read_jsonl(const fs::path& p) {
  std::vector<json> out;
  std::istringstream in(read_file_bytes(p));
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

int run_binary(const std::string& args) {
  const std::string cmd = std::string(UCGS_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

/// One tiny dataset and one tiny trained run shared by the whole suite.
class Workspace : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(scratch("ws"));
    std::ostringstream log;
    gen_data(tiny_config(), data(), false, log);
    summary_ = new TrainSummary(run_train(tiny_config(), data(), run(), false, log));
  }
  static void TearDownTestSuite() {
    delete summary_;
    delete root_;
  }
  static fs::path data() { return *root_ / "data"; }
  static fs::path run() { return *root_ / "run"; }
  static fs::path model() { return summary_->stage2.best; }

  static fs::path* root_;
  static TrainSummary* summary_;
};

fs::path* Workspace::root_ = nullptr;
TrainSummary* Workspace::summary_ = nullptr;

}  // namespace

// ---------------------------------------------------------------- gen-data

TEST_F(Workspace, GenDataWritesSixDatasetsDerivedFromTheTestSplit) {
  std::set<std::uint64_t> test_ids;
  for (const auto& r : raven::read_dataset(data() / "test").dataset.records) test_ids.insert(r.id);
  EXPECT_EQ(test_ids.size(), 24u);

  const std::map<std::string, std::pair<TaskKind, std::size_t>> expect{
      {"train", {TaskKind::kRpm, 72}}, {"valid", {TaskKind::kRpm, 24}}, {"test", {TaskKind::kRpm, 24}},
      {"o3-id", {TaskKind::kO3, 24}},  {"vap-id", {TaskKind::kVap, 24}}, {"svrt-id", {TaskKind::kSvrt, 24}}};
  for (const char* d : kDatasetDirs) {
    SCOPED_TRACE(d);
    const auto ds = raven::read_dataset(data() / d).dataset;
    EXPECT_EQ(ds.header.task, expect.at(d).first);
    EXPECT_EQ(ds.header.config_hash, tiny_config().data_hash());
    ASSERT_EQ(ds.records.size(), expect.at(d).second);
    if (std::string(d).ends_with("-id")) {
      std::set<std::uint64_t> sources;
      for (const auto& r : ds.records) {
        ASSERT_TRUE(r.source_id.has_value());
        EXPECT_TRUE(test_ids.contains(*r.source_id)) << *r.source_id;
        sources.insert(*r.source_id);
      }
      EXPECT_EQ(sources, test_ids);
    }
  }
  EXPECT_EQ(read_file_bytes(data() / "config"), tiny_config().to_text());
}

TEST(GenData, RerunWithTheSameSeedIsByteIdentical) {
  const fs::path a = scratch("regen-a"), b = scratch("regen-b");
  std::ostringstream log;
  gen_data(tiny_config(), a, false, log);
  gen_data(tiny_config(), b, false, log);
  const auto ta = tree_bytes(a), tb = tree_bytes(b);
  EXPECT_EQ(ta, tb);
  for (const char* d : kDatasetDirs) EXPECT_TRUE(ta.contains(std::string(d) + "/checksums"));

  RunConfig other = tiny_config();
  other.data.seed += 1;
  const fs::path c = scratch("regen-c");
  gen_data(other, c, false, log);
  EXPECT_NE(read_file_bytes(a / "test" / "checksums"), read_file_bytes(c / "test" / "checksums"));
}

TEST(GenData, RefusesANonEmptyDirectoryUnlessForced) {
  const fs::path dir = scratch("force");
  fs::create_directories(dir);
  write_file_bytes(dir / "notes.txt", "keep me");
  std::ostringstream log;
  EXPECT_THROW(gen_data(tiny_config(), dir, false, log), StateError);
  EXPECT_FALSE(fs::exists(dir / "train"));

  write_file_bytes(dir / "notes.txt", "keep me");
  gen_data(tiny_config(), dir, true, log);
  for (const char* d : kDatasetDirs) EXPECT_TRUE(fs::is_directory(dir / d)) << d;
  EXPECT_EQ(read_file_bytes(dir / "notes.txt"), "keep me");

  // A forced rerun with a smaller config leaves no stale images behind.
  RunConfig small = tiny_config();
  small.data.total = 20;
  gen_data(small, dir, true, log);
  EXPECT_NO_THROW(raven::verify_checksums(dir / "train"));
  EXPECT_EQ(raven::read_dataset(dir / "train").dataset.records.size(), 12u);
}

TEST_F(Workspace, LoadSplitDetectsAForeignDataConfiguration) {
  const RunConfig same = tiny_config();
  EXPECT_NO_THROW(load_split(data() / "valid", &same));
  RunConfig other = tiny_config();
  other.data.seed = 99;
  EXPECT_THROW(load_split(data() / "valid", &other), ConfigError);
  // Non-data keys do not matter.
  RunConfig lr = tiny_config();
  lr.train.stage2_lr = 1e-3;
  EXPECT_NO_THROW(load_split(data() / "valid", &lr));
}

// ------------------------------------------------------------------- train

TEST_F(Workspace, TrainWritesCheckpointsLogAndSummary) {
  for (const char* f : {train::kStage1Best, train::kStage1Last, train::kStage2Best, train::kStage2Last,
                        train::kTrainLog, "config", "summary.json"}) {
    EXPECT_TRUE(fs::exists(run() / f)) << f;
  }
  const json s = read_json(run() / "summary.json");
  EXPECT_EQ(s["config_hash"], tiny_config().hash());
  EXPECT_TRUE(s["stage1"].contains("best_valid_mse"));
  EXPECT_TRUE(s["stage2"].contains("best_valid_accuracy"));
  EXPECT_DOUBLE_EQ(s["stage2"]["best_valid_accuracy"].get<double>(), summary_->stage2.best_accuracy);

  std::set<int> stages;
  for (const auto& rec : read_jsonl(run() / train::kTrainLog)) stages.insert(rec["stage"].get<int>());
  EXPECT_EQ(stages, (std::set<int>{1, 2}));

  const auto m = train::load_model(model());
  EXPECT_EQ(m->config.hash(), tiny_config().hash());
}

TEST_F(Workspace, ResumedTrainingMatchesAnUninterruptedRun) {
  const fs::path dir = scratch("resume");
  std::ostringstream log;
  RunConfig one = tiny_config();
  one.train.stage1_epochs = 1;
  one.train.stage2_epochs = 1;
  // A different config must not be resumable.
  run_train(one, data(), dir, false, log);
  EXPECT_THROW(run_train(tiny_config(), data(), dir, true, log), ConfigError);

  const fs::path dir2 = scratch("resume2");
  train::Hooks h;  // interrupted after the first tokenizer epoch
  const Split tr = load_split(data() / "train"), va = load_split(data() / "valid");
  fs::create_directories(dir2);
  write_file_bytes(dir2 / "config", tiny_config().to_text());
  h.keep_going = [](int stage, int epoch) { return !(stage == 1 && epoch >= 1); };
  train::pretrain_tokenizer(tiny_config(), tr, va, dir2, h);
  run_train(tiny_config(), data(), dir2, true, log);
  EXPECT_EQ(read_file_bytes(dir2 / train::kStage2Last), read_file_bytes(run() / train::kStage2Last));
  EXPECT_EQ(read_file_bytes(dir2 / train::kStage2Best), read_file_bytes(run() / train::kStage2Best));
}

// -------------------------------------------------------------------- eval

TEST_F(Workspace, OracleEstimatorIsPerfectOnRpmAndVap) {
  std::ostringstream out;
  for (const char* d : {"test", "vap-id"}) {
    EvalOptions o;
    o.data = data() / d;
    o.estimator = "oracle";
    const json r = run_eval(o, out);
    EXPECT_EQ(r["correct"], r["N"]) << d;
    EXPECT_DOUBLE_EQ(r["accuracy"].get<double>(), 1.0);
  }
}

TEST_F(Workspace, EvalReportIsMachineReadable) {
  EvalOptions o;
  o.checkpoint = model();
  o.data = data() / "o3-id";
  o.report = scratch("report") / "o3.json";
  std::ostringstream out;
  run_eval(o, out);
  const json r = read_json(o.report);
  for (const char* k : {"task", "N", "correct", "accuracy", "ci95_low", "ci95_high", "config_hash", "dataset_config_hash"}) {
    EXPECT_TRUE(r.contains(k)) << k;
  }
  EXPECT_EQ(r["task"], "o3");
  EXPECT_EQ(r["N"], 24);
  EXPECT_EQ(r["config_hash"], tiny_config().hash());
  EXPECT_EQ(r["dataset_config_hash"], tiny_config().data_hash());
  EXPECT_LE(r["ci95_low"].get<double>(), r["accuracy"].get<double>());
  EXPECT_GE(r["ci95_high"].get<double>(), r["accuracy"].get<double>());
  EXPECT_NE(out.str().find("o3 selective"), std::string::npos);

  // SVRT counts queries, not problems.
  o.data = data() / "svrt-id";
  o.report.clear();
  const json s = run_eval(o, out);
  std::size_t queries = 0;
  for (const auto& rec : raven::read_dataset(o.data).dataset.records) queries += rec.queries.size();
  EXPECT_EQ(s["N"].get<std::size_t>(), queries);
  EXPECT_GT(queries, 24u);
}

TEST_F(Workspace, EvalRejectsMismatchedTasksAndBadFlags) {
  std::ostringstream out;
  EvalOptions o;
  o.checkpoint = model();
  o.data = data() / "test";
  o.task = TaskKind::kO3;
  EXPECT_THROW(run_eval(o, out), ArgumentError);
  o.task = TaskKind::kRpm;
  o.estimator = "psychic";
  EXPECT_THROW(run_eval(o, out), UsageError);
  o.estimator = "model";
  o.mode = "generative";
  o.data = data() / "svrt-id";
  o.task.reset();
  EXPECT_THROW(run_eval(o, out), ArgumentError);
}

// ---------------------------------------------------------------- generate

TEST(ComposeGrid, LayoutIsThreeByThreeWithGutters) {
  std::vector<Image> cells;
  for (int i = 0; i < 9; ++i) cells.push_back(Image(5, 7, std::vector<float>(35, 0.1f * static_cast<float>(i))));
  const Image g = compose_grid(cells);
  EXPECT_EQ(g.height(), 3 * 5 + 2 * kGutter);
  EXPECT_EQ(g.width(), 3 * 7 + 2 * kGutter);
  for (int i = 0; i < 9; ++i) {
    const int y = (i / 3) * (5 + kGutter) + 2, x = (i % 3) * (7 + kGutter) + 3;
    EXPECT_FLOAT_EQ(g.at(y, x), 0.1f * static_cast<float>(i)) << i;
  }
  EXPECT_FLOAT_EQ(g.at(5, 0), 1.0f);  // gutter row
  cells.pop_back();
  EXPECT_THROW(compose_grid(cells), ArgumentError);
}

TEST_F(Workspace, GenerateVerdictsMatchGenerativeEvalAndGreedyIsRepeatable) {
  GenerateOptions g;
  g.checkpoint = model();
  g.data = data() / "test";
  g.count = 24;
  g.seed = 3;
  g.temperature = 0.0;
  g.out = scratch("gen-a");
  std::ostringstream log;
  const json summary = run_generate(g, log);

  EvalOptions e;
  e.checkpoint = model();
  e.data = g.data;
  e.mode = "generative";
  e.seed = 3;
  e.temperature = 0.0;
  const json ev = run_eval(e, log);
  EXPECT_EQ(summary["correct"], ev["correct"]);
  EXPECT_EQ(summary["N"], ev["N"]);

  const auto verdicts = read_jsonl(g.out / "verdicts.jsonl");
  ASSERT_EQ(verdicts.size(), 24u);
  const auto grid = png::decode(read_file_bytes(g.out / verdicts[0]["grid"].get<std::string>()), "grid");
  EXPECT_EQ(grid.height, 3 * 32 + 2 * kGutter);
  EXPECT_EQ(grid.width, 3 * 32 + 2 * kGutter);

  const fs::path first = g.out;
  g.out = scratch("gen-b");
  run_generate(g, log);
  EXPECT_EQ(tree_bytes(first), tree_bytes(g.out));

  // Sampled generation with the same seed is repeatable as well, and the
  // verdicts on a prefix do not depend on how many problems were asked for.
  g.temperature = 1.0;
  const fs::path sampled = scratch("gen-c");
  g.out = sampled;
  run_generate(g, log);
  g.count = 5;
  g.out = scratch("gen-d");
  run_generate(g, log);
  const auto all = read_jsonl(sampled / "verdicts.jsonl");
  const auto part = read_jsonl(g.out / "verdicts.jsonl");
  for (std::size_t i = 0; i < part.size(); ++i) EXPECT_EQ(part[i], all[i]);
}

// ------------------------------------------------------------ oracle-check

TEST(OracleCheck, BuiltInSuitePassesExhaustively) {
  std::ostringstream out;
  const fs::path report = scratch("oracle") / "report.json";
  OracleCheckOptions o;
  o.report = report;
  const auto r = run_oracle_check(o, out);
  EXPECT_TRUE(r.all_pass());
  EXPECT_FALSE(r.sampled());
  const json j = read_json(report);
  EXPECT_TRUE(j["all_pass"].get<bool>());
  std::set<std::string> universes;
  for (const auto& t : j["tallies"]) {
    EXPECT_EQ(t["passed"], t["trials"]);
    universes.insert(t["universe"].get<std::string>());
  }
  EXPECT_EQ(universes.size(), 4u);  // three single-rule universes and one pairing
}

TEST(OracleCheck, ParsesUniverseSpecs) {
  const auto u = parse_universe("all_equal+all_distinct:4:3");
  EXPECT_EQ(u.left, "all_equal");
  EXPECT_EQ(u.right, "all_distinct");
  EXPECT_EQ(u.alphabet, 4);
  EXPECT_EQ(u.length, 3);
  for (const char* bad : {"nonsense:3:3", "all_equal:3", "all_equal:x:3", "all_equal:3:3z", "all_equal+bogus:3:3",
                          "all_equal:0:3", "all_equal:3:1"}) {
    EXPECT_THROW(parse_universe(bad), UsageError) << bad;
  }
}

TEST(OracleCheck, SamplingIsFlaggedAndBudgetIsEnforced) {
  std::ostringstream out;
  OracleCheckOptions o;
  o.universes = {"all_distinct:7:7"};
  o.sample = 1000;
  const auto r = run_oracle_check(o, out);
  EXPECT_TRUE(r.all_pass());
  EXPECT_TRUE(r.sampled());
  EXPECT_NE(out.str().find("sampled"), std::string::npos);

  o.universes = {"all_distinct:8:8"};
  o.sample.reset();
  EXPECT_THROW(run_oracle_check(o, out), CapacityError);
}

// ------------------------------------------------------------- exit codes

TEST_F(Workspace, BinaryExitCodes) {
  const std::string d = data().string();
  EXPECT_EQ(run_binary("oracle-check"), 0);
  EXPECT_EQ(run_binary("oracle-check --universe progression:4:3"), 0);
  EXPECT_EQ(run_binary("oracle-check --universe nonsense:3:3"), 2);
  EXPECT_EQ(run_binary("oracle-check --universe all_distinct:8:8"), 1);
  EXPECT_EQ(run_binary(""), 2);
  EXPECT_EQ(run_binary("frobnicate"), 2);
  EXPECT_EQ(run_binary("eval --data " + d + "/test --estimator oracle"), 0);
  EXPECT_EQ(run_binary("eval --data " + d + "/test --estimator oracle --task o3"), 2);
  EXPECT_EQ(run_binary("eval --data " + d + "/test --estimator oracle --task riddle"), 2);
  EXPECT_EQ(run_binary("eval --data " + d + "/does-not-exist --estimator oracle"), 1);
  EXPECT_EQ(run_binary("eval --data " + d + "/test --checkpoint " + model().string()), 0);
  EXPECT_EQ(run_binary("gen-data --out " + d), 1);  // not empty
  EXPECT_EQ(run_binary("gen-data --out " + scratch("bin-gen").string() + " --set data.bogus=1"), 2);
  EXPECT_EQ(run_binary("gen-data --out " + scratch("bin-gen").string() + " --set data.total=-5"), 2);
  EXPECT_EQ(run_binary("generate --checkpoint " + model().string() + " --data " + d + "/test --count 0 --out " +
                       scratch("bin-grid").string()),
            2);
}
