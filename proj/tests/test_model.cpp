#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gradcheck.hpp"
#include "ucgs/model/estimator.hpp"

using namespace ucgs;
using namespace ucgs::model;
using ucgs::testing::max_grad_error;
using ucgs::testing::random_mat;
using ucgs::testing::random_param;

namespace {

ReasonerConfig toy_config() {
  ReasonerConfig c;
  c.width = 8;
  c.heads = 2;
  c.layers = 1;
  c.ff = 16;
  c.concepts = 2;
  c.patches = 4;
  c.codebook_size = 8;
  c.code_dim = 6;
  return c;
}

Codes random_codes(const ReasonerConfig& c, Rng& rng) {
  Codes out(static_cast<std::size_t>(c.patches));
  for (int& v : out) v = static_cast<int>(rng.below(static_cast<std::uint64_t>(c.codebook_size)));
  return out;
}

/// A batch of `b` contexts of `len` random images with slots 0..len-1 and
/// target slot len.
CodeBatch random_batch(const ReasonerConfig& c, int b, int len, Rng& rng) {
  CodeBatch batch;
  for (int i = 0; i < b; ++i) {
    ContextRef r;
    for (int j = 0; j < len; ++j) {
      r.images.push_back(batch.add_image(random_codes(c, rng)));
      r.slots.push_back(j);
    }
    r.target_slot = len;
    batch.contexts.push_back(r);
  }
  return batch;
}

template <class T>
struct Fixture {
  ReasonerConfig cfg;
  Param<T> codebook;
  Reasoner<T> model;

  Fixture(const ReasonerConfig& c, std::uint64_t seed)
      : cfg(c), codebook(make(c, seed)), model(c, codebook, seed + 1) {}

  static Param<T> make(const ReasonerConfig& c, std::uint64_t seed) {
    Rng rng(seed);
    Param<T> p = nn::make_param<T>("codebook", nn::normal_init<T>(c.codebook_size, c.code_dim, 1.0, rng));
    p.frozen = true;
    return p;
  }
};

}  // namespace

TEST(PatchEncoder, ShapeDeterminismAndPositionSensitivity) {
  Fixture<float> f(ReasonerConfig{}, 1);
  Rng rng(2);
  const Codes a = random_codes(f.cfg, rng);
  Codes shuffled = a;
  std::reverse(shuffled.begin(), shuffled.end());
  ASSERT_NE(a, shuffled);
  const std::vector<Codes> imgs{a, a, shuffled};
  const Mat<float> s = f.model.encode_concepts(imgs);
  ASSERT_EQ(s.rows(), 3 * 8);
  ASSERT_EQ(s.cols(), 64);
  EXPECT_EQ(s.middleRows(0, 8), s.middleRows(8, 8));
  EXPECT_NE(s.middleRows(0, 8), s.middleRows(16, 8));
  EXPECT_TRUE(s.allFinite());
}

TEST(ConceptEncoder, GroupIsolationIsExact) {
  Fixture<float> f(ReasonerConfig{}, 3);
  const int k = f.cfg.concepts, n = 8;
  Rng rng(4);
  Mat<float> concepts = random_mat(n * k, f.cfg.width, rng).cast<float>();
  std::vector<ContextRef> ctx(1);
  for (int i = 0; i < n; ++i) {
    ctx[0].images.push_back(i);
    ctx[0].slots.push_back(i);
  }
  ctx[0].target_slot = 8;
  auto run = [&](const Mat<float>& c) {
    Graph<float> g(false);
    return Mat<float>(g.value(f.model.target_concepts(g, g.constant(c), ctx)));
  };
  const Mat<float> base = run(concepts);
  for (int kp = 0; kp < k; ++kp) {
    Mat<float> perturbed = concepts;
    for (int i = 0; i < n; ++i) perturbed.row(i * k + kp).array() += 3.0f;
    const Mat<float> out = run(perturbed);
    for (int kk = 0; kk < k; ++kk) {
      if (kk == kp) {
        EXPECT_NE(out.row(kk), base.row(kk));
      } else {
        EXPECT_EQ(out.row(kk), base.row(kk)) << "group " << kk << " moved when group " << kp << " changed";
      }
    }
  }
}

TEST(ConceptEncoder, AcceptsEveryTaskContextSize) {
  Fixture<float> f(ReasonerConfig{}, 5);
  Rng rng(6);
  for (int len : {8, 5, 4}) {
    const CodeBatch b = random_batch(f.cfg, 2, len, rng);
    const Mat<float> s = f.model.predict_concepts(b);
    EXPECT_EQ(s.rows(), 2 * f.cfg.concepts);
    EXPECT_TRUE(s.allFinite());
  }
}

TEST(ConceptEncoder, RejectsBadSlots) {
  Fixture<float> f(ReasonerConfig{}, 7);
  Rng rng(8);
  CodeBatch b = random_batch(f.cfg, 1, 3, rng);
  b.contexts[0].target_slot = 16;
  EXPECT_THROW(f.model.predict_concepts(b), ArgumentError);
  b.contexts[0].target_slot = 1;
  EXPECT_THROW(f.model.predict_concepts(b), ArgumentError);
  b.contexts[0].target_slot = 3;
  b.contexts[0].slots[2] = 0;
  EXPECT_THROW(f.model.predict_concepts(b), ArgumentError);
  b.contexts[0].slots[2] = 17;
  EXPECT_THROW(f.model.predict_concepts(b), ArgumentError);
}

TEST(Decoder, CausalityIsExact) {
  Fixture<float> f(ReasonerConfig{}, 9);
  Rng rng(10);
  const CodeBatch b = random_batch(f.cfg, 1, 8, rng);
  const Mat<float> s = f.model.predict_concepts(b);
  const Codes target = random_codes(f.cfg, rng);
  auto logits = [&](const Codes& t) {
    Graph<float> g(false);
    const std::vector<Codes> p{t};
    return Mat<float>(g.value(f.model.code_logits(g, g.constant(s), p, f.cfg.patches)));
  };
  const Mat<float> base = logits(target);
  for (int m = 0; m < f.cfg.patches; ++m) {
    Codes changed = target;
    for (int j = m; j < f.cfg.patches; ++j) changed[static_cast<std::size_t>(j)] = (changed[static_cast<std::size_t>(j)] + 5) % 128;
    const Mat<float> out = logits(changed);
    // Row m predicts code m from codes 0..m-1 only.
    EXPECT_EQ(out.topRows(m + 1), base.topRows(m + 1)) << "m=" << m;
    if (m + 1 < f.cfg.patches) {
      EXPECT_NE(out.row(m + 1), base.row(m + 1));
    }
  }
}

TEST(Decoder, EveryCategoricalNormalises) {
  Fixture<float> f(ReasonerConfig{}, 11);
  Rng rng(12);
  const CodeBatch b = random_batch(f.cfg, 4, 8, rng);
  const Mat<float> s = f.model.predict_concepts(b);
  std::vector<Codes> t;
  for (int i = 0; i < 4; ++i) t.push_back(random_codes(f.cfg, rng));
  Graph<float> g(false);
  const Mat<float> logits = g.value(f.model.code_logits(g, g.constant(s), t, f.cfg.patches));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    double z = 0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) z += std::exp(logits(r, j) - mx);
    double total = 0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) total += std::exp(logits(r, j) - mx) / z;
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(Decoder, PrefixOverflowIsAStateError) {
  Fixture<float> f(ReasonerConfig{}, 13);
  Rng rng(14);
  const Mat<float> s = f.model.predict_concepts(random_batch(f.cfg, 1, 8, rng));
  const std::vector<Codes> full{random_codes(f.cfg, rng)};
  EXPECT_THROW(f.model.decode_step(s, full), StateError);
}

TEST(LogPredictability, TeacherForcedMatchesSequentialSteps) {
  Fixture<float> f(ReasonerConfig{}, 15);
  Rng rng(16);
  const CodeBatch b = random_batch(f.cfg, 3, 8, rng);
  std::vector<Codes> targets;
  for (int i = 0; i < 3; ++i) targets.push_back(random_codes(f.cfg, rng));
  const auto batched = f.model.log_predictability(b, targets);
  const Mat<float> s = f.model.predict_concepts(b);
  for (int i = 0; i < 3; ++i) {
    const Mat<float> si = s.middleRows(i * f.cfg.concepts, f.cfg.concepts);
    double seq = 0;
    for (int m = 0; m < f.cfg.patches; ++m) {
      const std::vector<Codes> prefix{Codes(targets[static_cast<std::size_t>(i)].begin(),
                                            targets[static_cast<std::size_t>(i)].begin() + m)};
      const Mat<float> logits = f.model.decode_step(si, prefix);
      const double mx = logits.maxCoeff();
      double z = 0;
      for (Eigen::Index j = 0; j < logits.cols(); ++j) z += std::exp(double(logits(0, j)) - mx);
      seq += double(logits(0, targets[static_cast<std::size_t>(i)][static_cast<std::size_t>(m)])) - mx - std::log(z);
    }
    EXPECT_NEAR(batched[static_cast<std::size_t>(i)], seq, 1e-5);
    EXPECT_LE(batched[static_cast<std::size_t>(i)], 0.0);
  }
}

TEST(LogPredictability, ZeroParametersGiveUniformCodes) {
  ReasonerConfig c = toy_config();
  c.patches = 1;
  c.codebook_size = 4;
  Fixture<double> f(c, 17);
  for (Param<double>* p : f.model.params()) p->value.setZero();
  Rng rng(18);
  const CodeBatch b = random_batch(c, 2, 3, rng);
  const std::vector<Codes> t{{1}, {3}};
  for (double lp : f.model.log_predictability(b, t)) EXPECT_NEAR(lp, std::log(0.25), 1e-12);

  Fixture<float> big(ReasonerConfig{}, 19);
  for (Param<float>* p : big.model.params()) p->value.setZero();
  const std::vector<Codes> t2{random_codes(big.cfg, rng)};
  const auto lp = big.model.log_predictability(random_batch(big.cfg, 1, 8, rng), t2);
  EXPECT_NEAR(lp[0], 16 * std::log(1.0 / 128), 1e-4);
}

TEST(LogPredictability, SharedContextsMatchExpandedContexts) {
  Fixture<float> f(ReasonerConfig{}, 20);
  Rng rng(21);
  const CodeBatch one = random_batch(f.cfg, 1, 8, rng);
  std::vector<Codes> cands;
  for (int i = 0; i < 4; ++i) cands.push_back(random_codes(f.cfg, rng));
  const auto shared = f.model.log_predictability(one, cands, std::vector<int>(4, 0));
  CodeBatch four = one;
  four.contexts.assign(4, one.contexts[0]);
  const auto expanded = f.model.log_predictability(four, cands);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(shared[static_cast<std::size_t>(i)], expanded[static_cast<std::size_t>(i)], 1e-5);
}

TEST(ReasonerGrad, PredictionLossMatchesFiniteDifferences) {
  const ReasonerConfig c = toy_config();
  Fixture<double> f(c, 22);
  Rng rng(23);
  const CodeBatch b = random_batch(c, 2, 3, rng);
  const std::vector<Codes> t{random_codes(c, rng), random_codes(c, rng)};
  const ParamList<double> ps = f.model.params();
  const double err = max_grad_error(ps, [&](Graph<double>& g) { return f.model.prediction_loss(g, b, t); });
  EXPECT_LT(err, 1e-3);
  EXPECT_LT(err, 1e-6);  // double precision leaves ample headroom
}

TEST(ReasonerGrad, UnfrozenCodebookReceivesGradient) {
  const ReasonerConfig c = toy_config();
  Fixture<double> f(c, 24);
  f.codebook.frozen = false;
  Rng rng(25);
  const CodeBatch b = random_batch(c, 2, 3, rng);
  const std::vector<Codes> t{random_codes(c, rng), random_codes(c, rng)};
  EXPECT_LT(max_grad_error({&f.codebook}, [&](Graph<double>& g) { return f.model.prediction_loss(g, b, t); }), 1e-6);
}

TEST(Sampling, GreedyIsDeterministicAndSeededSamplingReproduces) {
  Fixture<float> f(ReasonerConfig{}, 26);
  Rng rng(27);
  const Mat<float> s = f.model.predict_concepts(random_batch(f.cfg, 3, 8, rng));
  const auto g1 = f.model.sample(s, 0.0, {});
  const auto g2 = f.model.sample(s, 0.0, {});
  EXPECT_EQ(g1, g2);
  ASSERT_EQ(g1.size(), 3u);
  EXPECT_EQ(g1[0].size(), 16u);

  std::vector<Rng> a{Rng(1), Rng(2), Rng(3)}, b{Rng(1), Rng(2), Rng(3)};
  const auto s1 = f.model.sample(s, 1.0, a);
  const auto s2 = f.model.sample(s, 1.0, b);
  EXPECT_EQ(s1, s2);
  // A sequence's draw does not depend on its batch neighbours.
  std::vector<Rng> solo{Rng(2)};
  const Mat<float> s_mid = s.middleRows(f.cfg.concepts, f.cfg.concepts);
  EXPECT_EQ(f.model.sample(s_mid, 1.0, solo)[0], s1[1]);
  // Vanishing temperature collapses onto greedy decoding.
  std::vector<Rng> cold{Rng(4), Rng(5), Rng(6)};
  EXPECT_EQ(f.model.sample(s, 1e-6, cold), g1);
}

TEST(CodeEstimatorTest, ScoresArePureAndOrderInvariant) {
  Fixture<float> f(ReasonerConfig{}, 28);
  CodeEstimator<float> est(f.model, 3);
  Rng rng(29);
  std::vector<Codes> items;
  for (int i = 0; i < 8; ++i) items.push_back(random_codes(f.cfg, rng));
  const CodeContext ctx(items, 8, 9);
  std::vector<Codes> cands;
  for (int i = 0; i < 8; ++i) cands.push_back(random_codes(f.cfg, rng));
  std::vector<ScoreQuery<Codes>> q;
  for (const Codes& c : cands) q.push_back({&ctx, &c});
  const auto forward = est.score_batch(q);
  std::reverse(q.begin(), q.end());
  auto backward = est.score_batch(q);
  std::reverse(backward.begin(), backward.end());
  for (int i = 0; i < 8; ++i) {
    EXPECT_NEAR(forward[static_cast<std::size_t>(i)], backward[static_cast<std::size_t>(i)], 1e-5);
    EXPECT_NEAR(forward[static_cast<std::size_t>(i)], est.score(ctx, cands[static_cast<std::size_t>(i)]), 1e-5);
    EXPECT_LE(forward[static_cast<std::size_t>(i)], 0.0);
  }
  // Through the judgment layer.
  const BasicPanel<Codes> panel(items);
  const auto sel = solve_selection<Codes>(panel, std::span<const Codes>(cands), est);
  EXPECT_EQ(sel.chosen_index, argmax_lowest(forward));
}
