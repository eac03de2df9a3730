#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "ucgs/raven/render.hpp"
#include "ucgs/vq/tokenizer.hpp"

using namespace ucgs;
using namespace ucgs::vq;
using ucgs::testing::max_grad_error;
using ucgs::testing::random_mat;
using ucgs::testing::random_param;

namespace {

/// A tokenizer small enough for finite differences: 4x4 images, one code
/// per image, two downsampling stages.
TokenizerConfig toy_config() {
  TokenizerConfig c;
  c.height = c.width = 4;
  c.grid = 1;
  c.codebook_size = 6;
  c.code_dim = 3;
  c.channels = 4;
  c.first_channels = 3;
  c.res_hidden = 2;
  c.res_blocks = 1;
  return c;
}

Image random_image(int h, int w, Rng& rng) {
  std::vector<float> px(static_cast<std::size_t>(h * w));
  for (float& v : px) v = quantize_intensity(rng.uniform01());
  return Image(h, w, std::move(px));
}

/// Independent nearest-neighbour scan in double, with the distance written
/// as |f|^2 - 2 f.e + |e|^2 to avoid sharing code with the library.
int brute_nearest(const Mat<float>& f, Eigen::Index r, const Mat<float>& cb) {
  int best = -1;
  double best_d = 0;
  for (Eigen::Index l = 0; l < cb.rows(); ++l) {
    double ff = 0, fe = 0, ee = 0;
    for (Eigen::Index j = 0; j < cb.cols(); ++j) {
      ff += double(f(r, j)) * f(r, j);
      fe += double(f(r, j)) * cb(l, j);
      ee += double(cb(l, j)) * cb(l, j);
    }
    const double d = ff - 2 * fe + ee;
    if (best < 0 || d < best_d) {
      best = static_cast<int>(l);
      best_d = d;
    }
  }
  return best;
}

}  // namespace

TEST(Quantize, ExactRowAndLowestIndexTie) {
  Mat<float> cb = Mat<float>::Zero(10, 2);
  for (int l = 0; l < 10; ++l) cb.row(l) << 10.0f * l, 5.0f;
  cb.row(2) << 1.0f, 0.0f;
  cb.row(9) << -1.0f, 0.0f;
  Mat<float> f(3, 2);
  f.row(0) = cb.row(7);
  f.row(1) << 0.0f, 0.0f;  // distance 1 to rows 2 and 9
  f.row(2) << -0.9f, 0.0f;
  const auto idx = nearest_codes(f, cb);
  EXPECT_EQ(idx, (std::vector<int>{7, 2, 9}));
}

TEST(Quantize, OneHotCodebookIsIdentity) {
  Mat<float> cb = Mat<float>::Zero(128, 64);
  for (int l = 0; l < 64; ++l) cb(l, l) = 1.0f;
  for (int l = 64; l < 128; ++l) cb.row(l).setConstant(5.0f);
  Mat<float> f = Mat<float>::Zero(1, 64);
  f(0, 3) = 1.0f;
  const PatchCodes c = quantize(f, cb, 1);
  EXPECT_EQ(c.indices, std::vector<int>{3});
  EXPECT_EQ((c.quantized - f).squaredNorm(), 0.0f);
}

TEST(Quantize, MatchesBruteForceOnRandomFeatures) {
  Rng rng(3);
  const Mat<float> cb = random_mat(128, 64, rng).cast<float>();
  const Mat<float> f = random_mat(1000, 64, rng).cast<float>();
  const auto idx = nearest_codes(f, cb);
  int agree = 0;
  for (Eigen::Index r = 0; r < f.rows(); ++r) agree += idx[static_cast<std::size_t>(r)] == brute_nearest(f, r, cb);
  EXPECT_EQ(agree, 1000);
}

TEST(Quantize, QuantizedRowsAreCodebookRows) {
  Rng rng(4);
  const Mat<float> cb = random_mat(16, 5, rng).cast<float>();
  for (int trial = 0; trial < 20; ++trial) {
    const PatchCodes c = quantize<float>(random_mat(9, 5, rng).cast<float>(), cb, 3);
    for (int m = 0; m < 9; ++m) EXPECT_EQ(c.quantized.row(m), cb.row(c.indices[static_cast<std::size_t>(m)]));
  }
}

TEST(Tokenizer, DefaultShapesAndDeterminism) {
  Tokenizer<float> tok(TokenizerConfig{}, 7);
  raven::SceneAtlas atlas(raven::RenderConfig{});
  const std::vector<Image> imgs{atlas.image(0), atlas.image(100), atlas.image(179)};
  const auto a = tok.encode(imgs);
  const auto b = tok.encode(imgs);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].indices.size(), 16u);
    EXPECT_EQ(a[i].grid, 4);
    for (int k : a[i].indices) {
      EXPECT_GE(k, 0);
      EXPECT_LT(k, 128);
    }
    EXPECT_EQ(a[i], b[i]);
  }
  // Batch composition does not change an image's codes.
  EXPECT_EQ(tok.encode(imgs[1]), a[1]);
}

TEST(Tokenizer, DecodeIsClampedDeterministicAndShaped) {
  Tokenizer<float> tok(TokenizerConfig{}, 8);
  Rng rng(9);
  std::vector<PatchCodes> codes;
  for (int i = 0; i < 4; ++i) {
    std::vector<int> idx(16);
    for (int& k : idx) k = static_cast<int>(rng.below(128));
    codes.push_back(tok.codes_from_indices(idx));
  }
  // Blow up the output scale so clamping is actually exercised.
  for (Param<float>* p : tok.params()) p->value *= 3.0f;
  const auto a = tok.decode(std::span<const PatchCodes>(codes));
  const auto b = tok.decode(std::span<const PatchCodes>(codes));
  EXPECT_EQ(a, b);
  for (const Image& img : a) {
    EXPECT_EQ(img.height(), 32);
    EXPECT_EQ(img.width(), 32);
    for (float v : img.pixels()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}

TEST(Tokenizer, RejectsShapeAndGridMismatch) {
  Tokenizer<float> tok(TokenizerConfig{}, 1);
  EXPECT_THROW(tok.encode(Image::blank(16, 16)), ArgumentError);
  PatchCodes bad = tok.codes_from_indices(std::vector<int>(16, 0));
  bad.grid = 2;
  EXPECT_THROW(tok.decode(bad), ArgumentError);
  EXPECT_THROW(tok.codes_from_indices(std::vector<int>(4, 0)), ArgumentError);
  TokenizerConfig odd;
  odd.grid = 3;
  EXPECT_THROW(Tokenizer<float>(odd, 1), ArgumentError);
}

TEST(TokenizerLossTerms, ZeroWhenReconAndQuantMatch) {
  Rng rng(10);
  Graph<double> g;
  const Mat<double> x = random_mat(16, 1, rng), f = random_mat(4, 3, rng);
  TokenizerLoss rep;
  Var total = tokenizer_loss(g, g.constant(x), g.constant(x), g.constant(f), g.constant(f), 0.25, &rep);
  EXPECT_EQ(g.value(total)(0, 0), 0.0);
  EXPECT_EQ(rep.recon, 0.0);
  EXPECT_EQ(rep.codebook, 0.0);
  EXPECT_EQ(rep.commitment, 0.0);
}

TEST(TokenizerLossTerms, TotalIsWeightedSumOfNonNegativeParts) {
  Rng rng(11);
  Graph<double> g;
  TokenizerLoss rep;
  tokenizer_loss(g, g.constant(random_mat(16, 1, rng)), g.constant(random_mat(16, 1, rng)),
                 g.constant(random_mat(4, 3, rng)), g.constant(random_mat(4, 3, rng)), 0.25, &rep);
  EXPECT_GT(rep.recon, 0);
  EXPECT_GT(rep.codebook, 0);
  EXPECT_DOUBLE_EQ(rep.codebook, rep.commitment);
  EXPECT_DOUBLE_EQ(rep.total, rep.recon + rep.codebook + 0.25 * rep.commitment);
}

// Under straight-through the feature gradient is d(recon mse)/d(quantized)
// plus the commitment gradient, each checked here against finite
// differences on a two-patch toy.
TEST(TokenizerGrad, StraightThroughFeatureGradient) {
  const TokenizerConfig cfg = toy_config();
  Tokenizer<double> tok(cfg, 12);
  Rng rng(13);
  const std::vector<Image> imgs{random_image(4, 4, rng), random_image(4, 4, rng)};
  const Mat<double> x = stack_images<double>(imgs, 4, 4);
  auto feat = random_param("feat", 2, 3, rng);
  const double beta = cfg.beta;
  const std::vector<int> idx = nearest_codes(feat.value, tok.codebook().value);

  {
    Graph<double> g;
    Var f = g.param(feat);
    Var q = nn::gather_rows(g, g.param(tok.codebook()), idx);
    Var recon = tok.decode_graph(g, nn::straight_through(g, f, q), 2);
    g.backward(tokenizer_loss(g, g.constant(x), recon, f, q, beta));
  }
  const Mat<double> analytic = feat.grad;

  auto quant = random_param("quant", 2, 3, rng);
  quant.value = lookup<double>(tok.codebook().value, idx);
  const double h = 1e-6;
  auto recon_loss = [&](const Mat<double>& q) {
    Graph<double> g(false);
    return g.value(nn::mse(g, tok.decode_graph(g, g.constant(q), 2), g.constant(x)))(0, 0);
  };
  Mat<double> numeric(2, 3);
  for (Eigen::Index i = 0; i < numeric.size(); ++i) {
    Mat<double> up = quant.value, down = quant.value;
    up.data()[i] += h;
    down.data()[i] -= h;
    const double d_recon = (recon_loss(up) - recon_loss(down)) / (2 * h);
    Mat<double> fu = feat.value, fd = feat.value;
    fu.data()[i] += h;
    fd.data()[i] -= h;
    const double d_commit =
        beta * ((fu - quant.value).squaredNorm() - (fd - quant.value).squaredNorm()) / (2 * h * numeric.size());
    numeric.data()[i] = d_recon + d_commit;
  }
  for (Eigen::Index i = 0; i < numeric.size(); ++i) {
    const double a = analytic.data()[i], n = numeric.data()[i];
    EXPECT_LE(std::abs(a - n) / std::max({1e-8, std::abs(a), std::abs(n)}), 1e-3) << "entry " << i;
  }
  // The commitment part has the closed form 2 beta (feat - quant) / numel.
  Graph<double> g;
  Var f = g.param(feat);
  feat.zero_grad();
  g.backward(nn::scale(g, nn::mse(g, f, g.constant(quant.value)), beta));
  EXPECT_TRUE(feat.grad.isApprox(2 * beta * (feat.value - quant.value) / 6.0, 1e-12));
}

TEST(TokenizerGrad, CodebookLearnsOnlyFromCodebookTerm) {
  const TokenizerConfig cfg = toy_config();
  Tokenizer<double> tok(cfg, 14);
  Rng rng(15);
  const std::vector<Image> imgs{random_image(4, 4, rng), random_image(4, 4, rng), random_image(4, 4, rng)};
  const Mat<double> x = stack_images<double>(imgs, 4, 4);
  for (Param<double>* p : tok.params()) p->zero_grad();
  Graph<double> g;
  g.backward(tok.loss_graph(g, g.constant(x), 3));
  const Mat<double> full = tok.codebook().grad;

  // Expected: d mse(sg[feat], e[idx]) / d e.
  const Mat<double> feat = tok.features(imgs);
  const auto idx = nearest_codes(feat, tok.codebook().value);
  Mat<double> expected = Mat<double>::Zero(cfg.codebook_size, cfg.code_dim);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    expected.row(idx[r]) += 2.0 * (tok.codebook().value.row(idx[r]) - feat.row(static_cast<Eigen::Index>(r))) /
                            static_cast<double>(feat.size());
  }
  EXPECT_TRUE(full.isApprox(expected, 1e-12)) << full << "\n---\n" << expected;
}

TEST(TokenizerGrad, EncoderAndDecoderBackprop) {
  const TokenizerConfig cfg = toy_config();
  Tokenizer<double> tok(cfg, 16);
  Rng rng(17);
  const std::vector<Image> imgs{random_image(4, 4, rng), random_image(4, 4, rng)};
  const Mat<double> x = stack_images<double>(imgs, 4, 4);
  const Mat<double> target = random_mat(2, 3, rng);
  ParamList<double> all = tok.params();
  ParamList<double> enc, dec;
  bool past_codebook = false;
  for (Param<double>* p : all) {
    if (p == &tok.codebook()) {
      past_codebook = true;
      continue;
    }
    (past_codebook ? dec : enc).push_back(p);
  }
  EXPECT_LT(max_grad_error(enc,
                           [&](Graph<double>& g) {
                             return nn::mse(g, tok.encode_graph(g, g.constant(x), 2), g.constant(target));
                           }),
            1e-6);
  // Decoder parameters see the true gradient of the full loss: indices are
  // fixed by the encoder, which these parameters do not touch.
  EXPECT_LT(max_grad_error(dec, [&](Graph<double>& g) { return tok.loss_graph(g, g.constant(x), 2); }), 1e-6);
}

TEST(TokenizerGrad, FrozenTokenizerCollectsNoGradient) {
  Tokenizer<double> tok(toy_config(), 18);
  tok.set_frozen(true);
  Rng rng(19);
  const std::vector<Image> imgs{random_image(4, 4, rng)};
  for (Param<double>* p : tok.params()) p->zero_grad();
  Graph<double> g;
  Var loss = tok.loss_graph(g, g.constant(stack_images<double>(imgs, 4, 4)), 1);
  EXPECT_FALSE(g.needs_grad(loss));
  g.backward(loss);
  for (Param<double>* p : tok.params()) EXPECT_EQ(p->grad.squaredNorm(), 0.0) << p->name;
}
