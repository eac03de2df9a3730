#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "ucgs/core/judgment.hpp"
#include "ucgs/raven/dataset.hpp"
#include "ucgs/raven/scene_oracle.hpp"

using namespace ucgs;
using namespace ucgs::raven;
namespace fs = std::filesystem;

namespace {

const SceneAtlas& atlas() {
  static const SceneAtlas a;
  return a;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ucgs_raven_" + name);
  fs::remove_all(p);
  return p;
}

std::vector<Scene> with_last(std::span<const Scene> context, const Scene& x) {
  std::vector<Scene> g(context.begin(), context.end());
  g.push_back(x);
  return g;
}

Dataset sample_dataset(std::size_t n, std::uint64_t seed = 42) {
  Dataset ds;
  ds.header.seed = seed;
  ds.header.split = "test";
  ds.header.config_hash = "deadbeef";
  for (std::size_t i = 0; i < n; ++i) ds.records.push_back(generate_problem(seed, i));
  return ds;
}

}  // namespace

TEST(Scenes, EnumerationIsIndexed) {
  const auto& all = all_scenes();
  ASSERT_EQ(all.size(), 180u);  // 36 center scenes + 4 counts x 36 grid scenes
  for (std::size_t i = 0; i < all.size(); ++i) {
    EXPECT_TRUE(is_valid(all[i]));
    EXPECT_EQ(scene_index(all[i]), i);
  }
  EXPECT_FALSE(is_valid(Scene{2, Shape::kCircle, 1, 1, Layout::kCenter}));
}

TEST(Render, CenterCircle) {
  const Image img = render_scene({1, Shape::kCircle, 3, 3, Layout::kCenter});
  EXPECT_EQ(img.height(), 32);
  EXPECT_FLOAT_EQ(img.at(16, 16), quantize_intensity(0.9));
  EXPECT_FLOAT_EQ(img.at(0, 0), 0.0f);
  // Radius 7 around (16, 16): pixel 22 is inside, pixel 24 is not.
  EXPECT_GT(img.at(16, 22), 0.0f);
  EXPECT_EQ(img.at(16, 24), 0.0f);
}

TEST(Render, Deterministic) {
  const Scene s{3, Shape::kPentagon, 2, 1, Layout::kGrid};
  EXPECT_EQ(render_scene(s), render_scene(s));
}

TEST(Render, InjectiveOverAllScenes) {
  std::set<std::vector<float>> seen;
  for (const Scene& s : all_scenes()) {
    const Image img = render_scene(s);
    seen.emplace(img.pixels().begin(), img.pixels().end());
  }
  EXPECT_EQ(seen.size(), all_scenes().size());
  EXPECT_EQ(atlas().distinct(), all_scenes().size());
}

TEST(Render, InjectiveAtOtherSizes) {
  for (int h : {48, 64}) EXPECT_EQ(SceneAtlas({h, h}).distinct(), all_scenes().size()) << h;
}

TEST(Render, OverflowRejected) {
  EXPECT_THROW(render_scene({2, Shape::kSquare, 1, 1, Layout::kCenter}), ArgumentError);
}

TEST(Render, AtlasFindsScenes) {
  for (const Scene& s : all_scenes()) EXPECT_EQ(atlas().find(atlas().image(s)), s);
  EXPECT_FALSE(atlas().find(Image::blank(32, 32)).has_value());
}

TEST(Rules, ProgressionOnSize) {
  RuleSpec spec;
  spec[Attribute::kSize] = {RuleKind::kProgression, 1};
  Rng rng(1);
  const auto grid = instantiate(spec, Layout::kCenter, 3, rng);
  for (int r = 0; r < 3; ++r) {
    EXPECT_EQ(grid[3 * r].size, 1);
    EXPECT_EQ(grid[3 * r + 1].size, 2);
    EXPECT_EQ(grid[3 * r + 2].size, 3);
  }
  EXPECT_TRUE(satisfies(spec, grid));
}

TEST(Rules, DistributeThreeSharesOneSet) {
  RuleSpec spec;
  spec[Attribute::kShape] = {RuleKind::kDistributeThree, 0};
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const auto grid = instantiate(spec, Layout::kGrid, 3, rng);
    std::multiset<int> first;
    for (int c = 0; c < 3; ++c) first.insert(get(grid[c], Attribute::kShape));
    EXPECT_EQ(std::set<int>(first.begin(), first.end()).size(), 3u);
    for (int r = 1; r < 3; ++r) {
      std::multiset<int> row;
      for (int c = 0; c < 3; ++c) row.insert(get(grid[3 * r + c], Attribute::kShape));
      EXPECT_EQ(row, first);
    }
  }
}

TEST(Rules, ArithmeticOnCount) {
  std::vector<Scene> g(3, Scene{1, Shape::kSquare, 1, 1, Layout::kGrid});
  g[1].count = 2;
  g[2].count = 3;
  EXPECT_TRUE(follows({RuleKind::kArithmetic, 0}, Attribute::kCount, g));
  EXPECT_FALSE(follows({RuleKind::kArithmetic, 0}, Attribute::kSize, g));
  g[2].count = 4;
  EXPECT_FALSE(follows({RuleKind::kArithmetic, 0}, Attribute::kCount, g));
  EXPECT_TRUE(compliant_any(g));  // 1, 2, 4 is still a distribute-three row
  g[2].count = 1;
  EXPECT_FALSE(compliant_any(g));
}

TEST(Rules, LayoutMustNotChange) {
  std::vector<Scene> g(6, Scene{1, Shape::kSquare, 1, 1, Layout::kCenter});
  EXPECT_TRUE(compliant_any(g));
  g[4].layout = Layout::kGrid;
  EXPECT_FALSE(compliant_any(g));
}

TEST(Rules, SampledSpecsInstantiate) {
  Rng rng(9);
  for (int i = 0; i < 500; ++i) {
    const Layout layout = i % 2 ? Layout::kGrid : Layout::kCenter;
    const RuleSpec spec = sample_rule_spec(rng, layout);
    const auto grid = instantiate(spec, layout, 3, rng);
    for (const Scene& s : grid) ASSERT_TRUE(is_valid(s));
    ASSERT_TRUE(satisfies(spec, grid));
    ASSERT_TRUE(compliant_any(grid));
  }
}

TEST(Generator, ExactlyOneCompliantCandidate) {
  for (std::uint64_t i = 0; i < 400; ++i) {
    const ProblemRecord r = generate_problem(42, i);
    ASSERT_EQ(r.panel.size(), 9u);
    ASSERT_EQ(r.candidates.size(), 8u);
    EXPECT_TRUE(satisfies(r.rules, r.panel));
    EXPECT_EQ(r.candidates[r.answer], r.panel.back());
    std::size_t compliant = 0;
    for (const Scene& c : r.candidates) compliant += compliant_any(with_last(std::span(r.panel).first(8), c)) ? 1 : 0;
    EXPECT_EQ(compliant, 1u) << "problem " << i;
    EXPECT_EQ(std::set<Scene>(r.candidates.begin(), r.candidates.end()).size(), 8u);
  }
}

TEST(Generator, PureFunctionOfSeed) {
  for (std::uint64_t i = 0; i < 20; ++i) {
    const auto a = generate_problem(5, i);
    EXPECT_EQ(a, generate_problem(5, i));
    EXPECT_EQ(a.seed, derive_seed(5, i));
  }
  EXPECT_NE(generate_problem(5, 0), generate_problem(6, 0));
}

TEST(Generator, AnswerPositionsSpread) {
  std::vector<int> hist(8, 0);
  for (std::uint64_t i = 0; i < 800; ++i) ++hist[generate_problem(3, i).answer];
  for (int h : hist) EXPECT_GT(h, 50);
}

TEST(Generator, SplitSizes) {
  const Splits s = generate_splits(1, 100, 0.6, 0.2);
  EXPECT_EQ(s.train.size(), 60u);
  EXPECT_EQ(s.valid.size(), 20u);
  EXPECT_EQ(s.test.size(), 20u);
  EXPECT_EQ(s.test.front().id, 80u);
}

TEST(IdZs, OddOneOut) {
  for (std::uint64_t i = 0; i < 200; ++i) {
    const auto r = generate_problem(42, i);
    const auto o = build_o3_id(r);
    ASSERT_EQ(o.panel.size(), 9u);
    EXPECT_EQ(o.answer, 8u);
    EXPECT_EQ(o.source_id, r.id);
    EXPECT_NE(o.panel[8], r.panel[8]);
    EXPECT_NE(atlas().image(o.panel[8]), atlas().image(r.panel[8]));
    EXPECT_TRUE(std::find(r.candidates.begin(), r.candidates.end(), o.panel[8]) != r.candidates.end());
    EXPECT_TRUE(consistent_prefix(r.rules, std::span(o.panel).first(8)));
    EXPECT_FALSE(compliant_any(o.panel));
    EXPECT_EQ(o, build_o3_id(r));
  }
}

TEST(IdZs, VisualAnalogy) {
  for (std::uint64_t i = 0; i < 200; ++i) {
    const auto r = generate_problem(42, i);
    const auto v = build_vap_id(r);
    ASSERT_EQ(v.panel.size(), 6u);
    EXPECT_TRUE(std::equal(v.panel.begin(), v.panel.end(), r.panel.begin()));
    EXPECT_EQ(v.candidates.size(), 8u);
    EXPECT_EQ(v.candidates[v.answer], r.panel[5]);
    EXPECT_TRUE(satisfies(r.rules, v.panel));
    std::size_t compliant = 0;
    for (const Scene& c : v.candidates) compliant += compliant_any(with_last(std::span(v.panel).first(5), c)) ? 1 : 0;
    EXPECT_EQ(compliant, 1u);
  }
}

TEST(IdZs, TwoPanel) {
  std::size_t left = 0, right = 0;
  for (std::uint64_t i = 0; i < 200; ++i) {
    const auto r = generate_problem(42, i);
    const auto s = build_svrt_id(r);
    ASSERT_EQ(s.panel.size(), 5u);
    ASSERT_EQ(s.right.size(), 5u);
    ASSERT_EQ(s.queries.size(), 2u);
    for (std::size_t k = 0; k < 5; ++k) {
      EXPECT_EQ(s.panel[k], r.panel[k]);
      EXPECT_EQ(s.right[k], r.panel[k + 3]);
    }
    EXPECT_EQ(s.queries[0].first, r.panel[5]);
    EXPECT_EQ(s.queries[1].first, r.panel[8]);
    for (const auto& q : s.queries) (q.second == Side::kLeft ? left : right) += 1;
    EXPECT_TRUE(consistent_prefix(r.rules, s.panel));
    EXPECT_TRUE(consistent_prefix(r.rules, s.right));
  }
  EXPECT_EQ(left, right);
}

TEST(IdZs, ContextUnionCoversEightImages) {
  const auto s = build_svrt_id(generate_problem(42, 0));
  // Panel scenes may repeat, so check indices rather than values.
  std::set<int> idx;
  for (int k = 0; k < 5; ++k) idx.insert(k);
  for (int k = 3; k < 8; ++k) idx.insert(k);
  EXPECT_EQ(idx, (std::set<int>{0, 1, 2, 3, 4, 5, 6, 7}));
  EXPECT_EQ(s.right[2], generate_problem(42, 0).panel[5]);
}

TEST(SceneOracle, SolvesSelectionExactly) {
  const SceneOracle o;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const auto r = generate_problem(11, i);
    EXPECT_EQ(solve_selection(BasicPanel<Scene>(r.panel), std::span<const Scene>(r.candidates), o).chosen_index,
              r.answer);
    const auto v = build_vap_id(r);
    EXPECT_EQ(solve_selection(BasicPanel<Scene>(v.panel), std::span<const Scene>(v.candidates), o).chosen_index,
              v.answer);
  }
}

TEST(SceneOracle, NormalizesOverScenes) {
  const SceneOracle o;
  const auto r = generate_problem(11, 3);
  const auto c = remove_item(BasicPanel<Scene>(r.panel), 4);
  double sum = 0;
  for (const Scene& s : all_scenes()) sum += o.conditional(c, s);
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(SceneOracle, ImageFrontEndAgrees) {
  const ImageSceneOracle io;
  const SceneOracle so;
  const auto r = generate_problem(11, 7);
  const auto p = to_selection(r, atlas());
  const auto a = solve_selection(p.panel, std::span<const Image>(p.candidates), io);
  const auto b = solve_selection(BasicPanel<Scene>(r.panel), std::span<const Scene>(r.candidates), so);
  EXPECT_EQ(a.scores, b.scores);
}

TEST(Dataset, RoundTripIsLossless) {
  const fs::path dir = scratch("roundtrip");
  const Dataset ds = sample_dataset(100);
  write_dataset(ds, dir, atlas());
  const LoadedDataset back = read_dataset(dir);
  EXPECT_EQ(back.dataset, ds);
  for (const auto& r : ds.records)
    for (const Scene& s : r.candidates) EXPECT_EQ(back.images.image(s), atlas().image(s));
  fs::remove_all(dir);
}

TEST(Dataset, AllTaskKindsRoundTrip) {
  const Dataset base = sample_dataset(30);
  for (TaskKind kind : {TaskKind::kO3, TaskKind::kVap, TaskKind::kSvrt}) {
    Dataset ds = base;
    ds.header.task = kind;
    for (auto& r : ds.records) {
      r = kind == TaskKind::kO3 ? build_o3_id(r) : kind == TaskKind::kVap ? build_vap_id(r) : build_svrt_id(r);
    }
    const fs::path dir = scratch(std::string("kind_") + to_string(kind));
    write_dataset(ds, dir, atlas());
    EXPECT_EQ(read_dataset(dir).dataset, ds) << to_string(kind);
    fs::remove_all(dir);
  }
}

TEST(Dataset, CorruptImageNamesFile) {
  const fs::path dir = scratch("corrupt");
  write_dataset(sample_dataset(10), dir, atlas());
  fs::path victim;
  for (const auto& e : fs::directory_iterator(dir / "images")) {
    victim = e.path();
    break;
  }
  std::string bytes = read_file_bytes(victim);
  bytes[bytes.size() / 2] ^= 0x5a;
  write_file_bytes(victim, bytes);
  try {
    read_dataset(dir);
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_EQ(e.kind(), LoadErrorKind::kChecksumFailure);
    EXPECT_NE(std::string(e.what()).find(victim.filename().string()), std::string::npos);
  }
  fs::remove_all(dir);
}

TEST(Dataset, DistinctLoadErrors) {
  const fs::path dir = scratch("errors");
  write_dataset(sample_dataset(5), dir, atlas());
  // Missing image.
  fs::path victim = *fs::directory_iterator(dir / "images");
  const std::string saved = read_file_bytes(victim);
  fs::remove(victim);
  try {
    read_dataset(dir);
    FAIL();
  } catch (const LoadError& e) {
    EXPECT_EQ(e.kind(), LoadErrorKind::kMissingFile);
  }
  write_file_bytes(victim, saved);
  EXPECT_NO_THROW(read_dataset(dir));
  // Version bump.
  std::string cfg = read_file_bytes(dir / kConfigFile);
  const std::string good = cfg;
  cfg.replace(cfg.find("ucgs-dataset/1"), 14, "ucgs-dataset/9");
  write_file_bytes(dir / kConfigFile, cfg);
  try {
    read_dataset(dir);
    FAIL();
  } catch (const LoadError& e) {
    EXPECT_EQ(e.kind(), LoadErrorKind::kVersionMismatch);
  }
  write_file_bytes(dir / kConfigFile, good);
  // Missing directory entirely.
  EXPECT_THROW(read_dataset(dir / "nope"), LoadError);
  fs::remove_all(dir);
}

TEST(Dataset, ManifestSeedRegenerates) {
  const fs::path dir = scratch("regen");
  write_dataset(sample_dataset(50, 77), dir, atlas());
  const auto back = read_dataset(dir);
  for (const auto& r : back.dataset.records) {
    EXPECT_EQ(r.seed, derive_seed(back.dataset.header.seed, r.id));
    EXPECT_EQ(generate_problem(back.dataset.header.seed, r.id), r);
  }
  fs::remove_all(dir);
}

TEST(Dataset, WritesAreByteIdentical) {
  const fs::path a = scratch("bytes_a");
  const fs::path b = scratch("bytes_b");
  write_dataset(sample_dataset(40), a, atlas());
  write_dataset(sample_dataset(40), b, atlas());
  EXPECT_EQ(read_file_bytes(a / kChecksumFile), read_file_bytes(b / kChecksumFile));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Dataset, GoldenSeed42) {
  // Pinned from the first verified run; any change to sampling, rules,
  // rendering or the file format shows up here.
  const fs::path dir = scratch("golden");
  write_dataset(sample_dataset(100, 42), dir, atlas());
  EXPECT_EQ(sha256_file(dir / kManifestFile), "5a36b7383a739f1c823969edcbde9e7ca1e1bab3966fd1988d43b06f6c7adf2a");
  EXPECT_EQ(sha256_file(dir / kChecksumFile), "ad45a94194f7607db53ce4df8dfe9625da9522496461dca548b073a734da76a5");
  fs::remove_all(dir);
}
