#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ucgs/nn/graph.hpp"
#include "ucgs/util/rng.hpp"

namespace ucgs::nn {

/// Uniform(-bound, bound) entries, drawn in row-major order.
template <class T>
Mat<T> uniform_init(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  Mat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>((2.0 * rng.uniform01() - 1.0) * bound);
  return m;
}

template <class T>
Mat<T> normal_init(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  Mat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.normal(0.0, stddev));
  return m;
}

template <class T>
Param<T> make_param(std::string name, Mat<T> value) {
  Param<T> p{std::move(name), std::move(value), {}, false};
  p.zero_grad();
  return p;
}

template <class T>
struct Linear {
  Param<T> w;
  Param<T> b;
  bool has_bias = true;

  Linear() = default;
  Linear(const std::string& name, int in, int out, bool bias, Rng& rng) : has_bias(bias) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    w = make_param<T>(name + ".w", uniform_init<T>(in, out, bound, rng));
    if (bias) b = make_param<T>(name + ".b", uniform_init<T>(1, out, bound, rng));
  }

  Var operator()(Graph<T>& g, Var x) { return linear(g, x, g.param(w), has_bias ? g.param(b) : Var{}); }

  void collect(ParamList<T>& out) {
    out.push_back(&w);
    if (has_bias) out.push_back(&b);
  }
};

template <class T>
struct LayerNorm {
  Param<T> gain;
  Param<T> bias;

  LayerNorm() = default;
  LayerNorm(const std::string& name, int width) {
    gain = make_param<T>(name + ".g", Mat<T>::Ones(1, width));
    bias = make_param<T>(name + ".b", Mat<T>::Zero(1, width));
  }

  Var operator()(Graph<T>& g, Var x) { return layer_norm(g, x, g.param(gain), g.param(bias)); }

  void collect(ParamList<T>& out) {
    out.push_back(&gain);
    out.push_back(&bias);
  }
};

template <class T>
struct MultiHeadAttention {
  Linear<T> q, k, v, o;
  int heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& name, int width, int heads_, Rng& rng) : heads(heads_) {
    if (width % heads_ != 0) throw ArgumentError("attention width must divide into heads");
    q = Linear<T>(name + ".q", width, width, true, rng);
    k = Linear<T>(name + ".k", width, width, true, rng);
    v = Linear<T>(name + ".v", width, width, true, rng);
    o = Linear<T>(name + ".o", width, width, true, rng);
  }

  Var operator()(Graph<T>& g, Var xq, Var xkv, AttnShape s) {
    s.heads = heads;
    return o(g, attention(g, q(g, xq), k(g, xkv), v(g, xkv), s));
  }

  void collect(ParamList<T>& out) {
    q.collect(out);
    k.collect(out);
    v.collect(out);
    o.collect(out);
  }
};

/// Pre-norm decoder layer: self-attention, cross-attention to a memory, and
/// a ReLU feed-forward block, each wrapped in a residual connection.
template <class T>
struct DecoderLayer {
  LayerNorm<T> ln1, ln2, ln3;
  MultiHeadAttention<T> self_attn, cross_attn;
  Linear<T> ff1, ff2;

  DecoderLayer() = default;
  DecoderLayer(const std::string& name, int width, int heads, int ff, Rng& rng)
      : ln1(name + ".ln1", width),
        ln2(name + ".ln2", width),
        ln3(name + ".ln3", width),
        self_attn(name + ".self", width, heads, rng),
        cross_attn(name + ".cross", width, heads, rng),
        ff1(name + ".ff1", width, ff, true, rng),
        ff2(name + ".ff2", ff, width, true, rng) {}

  /// `x` holds nseq * tq rows, `mem` holds nseq * tk rows.
  Var operator()(Graph<T>& g, Var x, Var mem, int nseq, int tq, int tk, bool causal) {
    Var h = ln1(g, x);
    x = add(g, x, self_attn(g, h, h, {nseq, tq, tq, 1, causal}));
    x = add(g, x, cross_attn(g, ln2(g, x), mem, {nseq, tq, tk, 1, false}));
    return add(g, x, ff2(g, relu(g, ff1(g, ln3(g, x)))));
  }

  void collect(ParamList<T>& out) {
    ln1.collect(out);
    self_attn.collect(out);
    ln2.collect(out);
    cross_attn.collect(out);
    ln3.collect(out);
    ff1.collect(out);
    ff2.collect(out);
  }
};

/// Stack of decoder layers followed by a final layer norm.
template <class T>
struct TransformerDecoder {
  std::vector<DecoderLayer<T>> layers;
  LayerNorm<T> final_ln;

  TransformerDecoder() = default;
  TransformerDecoder(const std::string& name, int depth, int width, int heads, int ff, Rng& rng)
      : final_ln(name + ".ln", width) {
    for (int i = 0; i < depth; ++i) layers.emplace_back(name + "." + std::to_string(i), width, heads, ff, rng);
  }

  Var operator()(Graph<T>& g, Var x, Var mem, int nseq, int tq, int tk, bool causal) {
    for (auto& l : layers) x = l(g, x, mem, nseq, tq, tk, causal);
    return final_ln(g, x);
  }

  void collect(ParamList<T>& out) {
    for (auto& l : layers) l.collect(out);
    final_ln.collect(out);
  }
};

template <class T>
struct Conv2d {
  Param<T> w;
  Param<T> b;
  int cin = 1, cout = 1, k = 3, stride = 1, pad = 1;

  Conv2d() = default;
  Conv2d(const std::string& name, int cin_, int cout_, int k_, int stride_, int pad_, Rng& rng)
      : cin(cin_), cout(cout_), k(k_), stride(stride_), pad(pad_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin * k * k));
    w = make_param<T>(name + ".w", uniform_init<T>(k * k * cin, cout, bound, rng));
    b = make_param<T>(name + ".b", uniform_init<T>(1, cout, bound, rng));
  }

  /// Input maps are n x h x w; returns the output and updates h, w.
  Var operator()(Graph<T>& g, Var x, int n, int& h, int& wd) {
    const ConvGeom c{n, h, wd, cin, k, stride, pad};
    Var y = conv2d(g, x, g.param(w), g.param(b), c);
    h = c.out_h();
    wd = c.out_w();
    return y;
  }

  void collect(ParamList<T>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

template <class T>
struct ConvTranspose2d {
  Param<T> w;
  Param<T> b;
  int cin = 1, cout = 1, k = 4, stride = 2, pad = 1;

  ConvTranspose2d() = default;
  ConvTranspose2d(const std::string& name, int cin_, int cout_, int k_, int stride_, int pad_, Rng& rng)
      : cin(cin_), cout(cout_), k(k_), stride(stride_), pad(pad_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cout * k * k));
    w = make_param<T>(name + ".w", uniform_init<T>(cin, k * k * cout, bound, rng));
    b = make_param<T>(name + ".b", uniform_init<T>(1, cout, bound, rng));
  }

  Var operator()(Graph<T>& g, Var x, int n, int& h, int& wd) {
    const ConvGeom c{n, h, wd, cin, k, stride, pad};
    Var y = conv_transpose2d(g, x, g.param(w), g.param(b), c);
    h = c.up_h();
    wd = c.up_w();
    return y;
  }

  void collect(ParamList<T>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

}  // namespace ucgs::nn
