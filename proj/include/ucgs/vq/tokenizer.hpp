#pragma once

#include <bit>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ucgs/core/image.hpp"
#include "ucgs/nn/layers.hpp"

namespace ucgs::vq {

using nn::Graph;
using nn::Mat;
using nn::Param;
using nn::ParamList;
using nn::Var;

struct TokenizerConfig {
  int height = 32;
  int width = 32;
  int grid = 4;              // codes per side; M = grid * grid
  int codebook_size = 128;   // L
  int code_dim = 64;         // D_e
  int channels = 64;
  int first_channels = 32;   // width of the first downsampling stage
  int res_hidden = 32;
  int res_blocks = 2;
  double beta = 0.25;        // commitment weight

  int patches() const { return grid * grid; }

  /// Number of stride-2 stages between the image and the code grid.
  int stages() const {
    if (grid <= 0 || height != width || height % grid != 0) {
      throw ArgumentError("tokenizer: image must be square and a multiple of the code grid");
    }
    const int ratio = height / grid;
    if (!std::has_single_bit(static_cast<unsigned>(ratio)) || ratio < 2) {
      throw ArgumentError("tokenizer: image size / grid must be a power of two >= 2");
    }
    return std::countr_zero(static_cast<unsigned>(ratio));
  }

  void validate() const {
    stages();
    if (codebook_size < 2) throw ArgumentError("tokenizer: codebook needs at least 2 entries");
    if (code_dim < 1 || channels < 1 || first_channels < 1 || res_hidden < 1 || res_blocks < 0) {
      throw ArgumentError("tokenizer: widths must be positive");
    }
    if (!(beta >= 0)) throw ArgumentError("tokenizer: beta must be non-negative");
  }
};

/// Codebook indices for one image plus the looked-up vectors.
template <class T>
struct BasicPatchCodes {
  std::vector<int> indices;
  Mat<T> quantized;  // M x D_e, row m == codebook row indices[m]
  int grid = 0;

  friend bool operator==(const BasicPatchCodes& a, const BasicPatchCodes& b) {
    return a.grid == b.grid && a.indices == b.indices && a.quantized == b.quantized;
  }
};
using PatchCodes = BasicPatchCodes<float>;

/// Nearest codebook row for every feature row by squared Euclidean distance;
/// ties go to the lowest index.
template <class T>
std::vector<int> nearest_codes(const Mat<T>& features, const Mat<T>& codebook) {
  if (features.cols() != codebook.cols()) throw ArgumentError("quantize: feature width differs from codebook");
  std::vector<int> out(static_cast<std::size_t>(features.rows()));
  const Eigen::Index d = features.cols();
  for (Eigen::Index r = 0; r < features.rows(); ++r) {
    const T* f = features.row(r).data();
    T best = std::numeric_limits<T>::infinity();
    int arg = 0;
    for (Eigen::Index l = 0; l < codebook.rows(); ++l) {
      const T* e = codebook.row(l).data();
      T dist = 0;
      for (Eigen::Index j = 0; j < d; ++j) dist += (f[j] - e[j]) * (f[j] - e[j]);
      if (dist < best) {
        best = dist;
        arg = static_cast<int>(l);
      }
    }
    out[static_cast<std::size_t>(r)] = arg;
  }
  return out;
}

template <class T>
Mat<T> lookup(const Mat<T>& codebook, std::span<const int> indices) {
  Mat<T> q(static_cast<Eigen::Index>(indices.size()), codebook.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= codebook.rows()) throw BoundsError("code index " + std::to_string(indices[i]));
    q.row(static_cast<Eigen::Index>(i)) = codebook.row(indices[i]);
  }
  return q;
}

/// Quantizes an (M x D_e) feature block for one image.
template <class T>
BasicPatchCodes<T> quantize(const Mat<T>& features, const Mat<T>& codebook, int grid) {
  BasicPatchCodes<T> c;
  c.indices = nearest_codes(features, codebook);
  c.quantized = lookup<T>(codebook, c.indices);
  c.grid = grid;
  return c;
}

/// Images stacked as (n*H*W x 1) rows, the layout the conv ops expect.
template <class T>
Mat<T> stack_images(std::span<const Image> images, int height, int width) {
  Mat<T> x(static_cast<Eigen::Index>(images.size()) * height * width, 1);
  Eigen::Index r = 0;
  for (const Image& img : images) {
    if (img.height() != height || img.width() != width) {
      throw ArgumentError("tokenizer: expected " + std::to_string(height) + "x" + std::to_string(width) + " image, got " +
                          std::to_string(img.height()) + "x" + std::to_string(img.width()));
    }
    for (float v : img.pixels()) x(r++, 0) = static_cast<T>(v);
  }
  return x;
}

template <class T>
struct ResBlock {
  nn::Conv2d<T> conv3, conv1;

  ResBlock() = default;
  ResBlock(const std::string& name, int ch, int hidden, Rng& rng)
      : conv3(name + ".c3", ch, hidden, 3, 1, 1, rng), conv1(name + ".c1", hidden, ch, 1, 1, 0, rng) {}

  Var operator()(Graph<T>& g, Var x, int n, int h, int w) {
    int hh = h, ww = w;
    Var y = conv3(g, nn::relu(g, x), n, hh, ww);
    y = conv1(g, nn::relu(g, y), n, hh, ww);
    return nn::add(g, x, y);
  }

  void collect(ParamList<T>& out) {
    conv3.collect(out);
    conv1.collect(out);
  }
};

struct TokenizerLoss {
  double recon = 0;
  double codebook = 0;
  double commitment = 0;
  double total = 0;
};

/// mse(recon, image) + mse(sg[feat], quant) + beta * mse(feat, sg[quant]),
/// every term a mean over entries. The codebook only learns from the middle
/// term; features receive the commitment gradient plus whatever reaches them
/// through a straight-through reconstruction path.
template <class T>
Var tokenizer_loss(Graph<T>& g, Var image, Var recon, Var feat, Var quant, T beta, TokenizerLoss* report = nullptr) {
  Var rec = nn::mse(g, recon, image);
  Var cb = nn::mse(g, nn::detach(g, feat), quant);
  Var commit = nn::mse(g, feat, nn::detach(g, quant));
  Var total = nn::add(g, nn::add(g, rec, cb), nn::scale(g, commit, beta));
  if (report) {
    report->recon = static_cast<double>(g.value(rec)(0, 0));
    report->codebook = static_cast<double>(g.value(cb)(0, 0));
    report->commitment = static_cast<double>(g.value(commit)(0, 0));
    report->total = static_cast<double>(g.value(total)(0, 0));
  }
  return total;
}

/// Convolutional VQ autoencoder. Parameters live in the object; do not move
/// it after collecting parameter pointers.
template <class T>
class Tokenizer {
 public:
  Tokenizer(const TokenizerConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const int s = cfg_.stages();
    int cin = kChannels;
    for (int i = 0; i < s; ++i) {
      const int cout = i == 0 ? cfg_.first_channels : cfg_.channels;
      down_.emplace_back("tok.enc.down" + std::to_string(i), cin, cout, 4, 2, 1, rng);
      cin = cout;
    }
    enc_in_ = nn::Conv2d<T>("tok.enc.mix", cin, cfg_.channels, 3, 1, 1, rng);
    for (int i = 0; i < cfg_.res_blocks; ++i) {
      enc_res_.emplace_back("tok.enc.res" + std::to_string(i), cfg_.channels, cfg_.res_hidden, rng);
    }
    enc_out_ = nn::Conv2d<T>("tok.enc.out", cfg_.channels, cfg_.code_dim, 1, 1, 0, rng);

    const double bound = 1.0 / cfg_.codebook_size;
    codebook_ = nn::make_param<T>("tok.codebook", nn::uniform_init<T>(cfg_.codebook_size, cfg_.code_dim, bound, rng));

    dec_in_ = nn::Conv2d<T>("tok.dec.mix", cfg_.code_dim, cfg_.channels, 3, 1, 1, rng);
    for (int i = 0; i < cfg_.res_blocks; ++i) {
      dec_res_.emplace_back("tok.dec.res" + std::to_string(i), cfg_.channels, cfg_.res_hidden, rng);
    }
    for (int i = s - 1; i >= 0; --i) {
      const int in = i == s - 1 ? cfg_.channels : (i == 0 ? cfg_.first_channels : cfg_.channels);
      const int out = i == 0 ? kChannels : (i == 1 ? cfg_.first_channels : cfg_.channels);
      up_.emplace_back("tok.dec.up" + std::to_string(i), in, out, 4, 2, 1, rng);
    }
  }

  Tokenizer(const Tokenizer&) = delete;
  Tokenizer& operator=(const Tokenizer&) = delete;

  const TokenizerConfig& config() const noexcept { return cfg_; }
  Param<T>& codebook() noexcept { return codebook_; }
  const Param<T>& codebook() const noexcept { return codebook_; }

  ParamList<T> params() {
    ParamList<T> out;
    for (auto& c : down_) c.collect(out);
    enc_in_.collect(out);
    for (auto& r : enc_res_) r.collect(out);
    enc_out_.collect(out);
    out.push_back(&codebook_);
    dec_in_.collect(out);
    for (auto& r : dec_res_) r.collect(out);
    for (auto& c : up_) c.collect(out);
    return out;
  }

  void set_frozen(bool frozen) {
    for (Param<T>* p : params()) p->frozen = frozen;
  }

  /// Pre-quantization features, (n*M x D_e) with each image's M rows in
  /// row-major grid order.
  Var encode_graph(Graph<T>& g, Var x, int n) {
    int h = cfg_.height, w = cfg_.width;
    for (auto& c : down_) x = nn::relu(g, c(g, x, n, h, w));
    x = enc_in_(g, x, n, h, w);
    for (auto& r : enc_res_) x = r(g, x, n, h, w);
    return enc_out_(g, nn::relu(g, x), n, h, w);
  }

  /// Unclamped reconstruction, (n*H*W x 1).
  Var decode_graph(Graph<T>& g, Var q, int n) {
    int h = cfg_.grid, w = cfg_.grid;
    Var x = dec_in_(g, q, n, h, w);
    for (auto& r : dec_res_) x = r(g, x, n, h, w);
    x = nn::relu(g, x);
    for (std::size_t i = 0; i < up_.size(); ++i) {
      x = up_[i](g, x, n, h, w);
      if (i + 1 < up_.size()) x = nn::relu(g, x);
    }
    return x;
  }

  /// Training objective on a batch: reconstruction through the
  /// straight-through estimator plus the codebook and commitment terms.
  Var loss_graph(Graph<T>& g, Var x, int n, TokenizerLoss* report = nullptr) {
    Var feat = encode_graph(g, x, n);
    const std::vector<int> idx = nearest_codes(g.value(feat), codebook_.value);
    Var quant = nn::gather_rows(g, g.param(codebook_), idx);
    Var recon = decode_graph(g, nn::straight_through(g, feat, quant), n);
    return tokenizer_loss(g, x, recon, feat, quant, static_cast<T>(cfg_.beta), report);
  }

  // Inference never records gradients, so these are safe to call
  // concurrently; the const_cast only lets the layers read parameters.

  Mat<T> features(std::span<const Image> images) const {
    auto& self = const_cast<Tokenizer&>(*this);
    Graph<T> g(false);
    Var x = g.constant(stack_images<T>(images, cfg_.height, cfg_.width));
    return g.value(self.encode_graph(g, x, static_cast<int>(images.size())));
  }

  std::vector<BasicPatchCodes<T>> encode(std::span<const Image> images) const {
    const Mat<T> f = features(images);
    const int m = cfg_.patches();
    std::vector<BasicPatchCodes<T>> out;
    out.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
      out.push_back(quantize<T>(f.middleRows(static_cast<Eigen::Index>(i) * m, m), codebook_.value, cfg_.grid));
    }
    return out;
  }

  BasicPatchCodes<T> encode(const Image& image) const { return encode(std::span<const Image>(&image, 1)).front(); }

  BasicPatchCodes<T> codes_from_indices(std::vector<int> indices) const {
    if (static_cast<int>(indices.size()) != cfg_.patches()) throw ArgumentError("tokenizer: wrong number of codes");
    BasicPatchCodes<T> c;
    c.quantized = lookup<T>(codebook_.value, indices);
    c.indices = std::move(indices);
    c.grid = cfg_.grid;
    return c;
  }

  /// Reconstructions clamped to [0, 1].
  std::vector<Image> decode(std::span<const BasicPatchCodes<T>> codes) const {
    auto& self = const_cast<Tokenizer&>(*this);
    if (codes.empty()) return {};
    const int m = cfg_.patches();
    Mat<T> q(static_cast<Eigen::Index>(codes.size()) * m, cfg_.code_dim);
    for (std::size_t i = 0; i < codes.size(); ++i) {
      if (codes[i].grid != cfg_.grid || codes[i].quantized.rows() != m || codes[i].quantized.cols() != cfg_.code_dim) {
        throw ArgumentError("tokenizer: code grid does not match the configuration");
      }
      q.middleRows(static_cast<Eigen::Index>(i) * m, m) = codes[i].quantized;
    }
    Graph<T> g(false);
    const Mat<T>& y = g.value(self.decode_graph(g, g.constant(std::move(q)), static_cast<int>(codes.size())));
    const std::size_t px = static_cast<std::size_t>(cfg_.height) * cfg_.width;
    std::vector<Image> out;
    out.reserve(codes.size());
    for (std::size_t i = 0; i < codes.size(); ++i) {
      std::vector<float> pixels(px);
      for (std::size_t j = 0; j < px; ++j) {
        pixels[j] = quantize_intensity(static_cast<double>(y(static_cast<Eigen::Index>(i * px + j), 0)));
      }
      out.emplace_back(cfg_.height, cfg_.width, std::move(pixels));
    }
    return out;
  }

  Image decode(const BasicPatchCodes<T>& codes) const { return decode(std::span<const BasicPatchCodes<T>>(&codes, 1)).front(); }

  /// Mean per-pixel squared error of decode(encode(x)) over a set of images.
  double reconstruction_mse(std::span<const Image> images, std::size_t batch = 64) const {
    double sq = 0;
    std::size_t px = 0;
    for (std::size_t i = 0; i < images.size(); i += batch) {
      const auto part = images.subspan(i, std::min(batch, images.size() - i));
      const auto codes = encode(part);
      const auto recon = decode(std::span<const BasicPatchCodes<T>>(codes));
      for (std::size_t j = 0; j < part.size(); ++j) {
        const auto a = part[j].pixels();
        const auto b = recon[j].pixels();
        for (std::size_t k = 0; k < a.size(); ++k) sq += (double(a[k]) - b[k]) * (double(a[k]) - b[k]);
        px += a.size();
      }
    }
    return px ? sq / static_cast<double>(px) : 0.0;
  }

 private:
  TokenizerConfig cfg_;
  std::vector<nn::Conv2d<T>> down_;
  nn::Conv2d<T> enc_in_;
  std::vector<ResBlock<T>> enc_res_;
  nn::Conv2d<T> enc_out_;
  Param<T> codebook_;
  nn::Conv2d<T> dec_in_;
  std::vector<ResBlock<T>> dec_res_;
  std::vector<nn::ConvTranspose2d<T>> up_;
};

}  // namespace ucgs::vq
