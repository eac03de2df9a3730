#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ucgs/util/errors.hpp"

namespace ucgs::nn {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A trainable tensor that outlives graphs. `grad` accumulates across
/// backward passes until the optimiser clears it.
template <class T>
struct Param {
  std::string name;
  Mat<T> value;
  Mat<T> grad;
  bool frozen = false;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

template <class T>
using ParamList = std::vector<Param<T>*>;

struct Var {
  int id = -1;
  bool valid() const noexcept { return id >= 0; }
};

/// Reverse-mode tape over row-major matrices. Every op records its value and,
/// when any input needs a gradient, a closure that pushes the output gradient
/// back to its inputs. Graphs are single use: build, backward, discard.
template <class T>
class Graph {
 public:
  using Backward = std::function<void(Graph&, int)>;

  struct Node {
    Mat<T> value;
    Mat<T> grad;
    Param<T>* param = nullptr;
    bool needs_grad = false;
    Backward backward;
  };

  /// With `track_grads` false nothing records a backward closure; inference
  /// graphs built this way never write to parameters.
  explicit Graph(bool track_grads = true) : track_(track_grads) {}

  bool tracking() const noexcept { return track_; }

  Var constant(Mat<T> v) {
    nodes_.push_back(Node{std::move(v), {}, nullptr, false, {}});
    return {static_cast<int>(nodes_.size()) - 1};
  }

  /// Parameters enter by reference; gradients land directly in p.grad.
  Var param(Param<T>& p) {
    nodes_.push_back(Node{{}, {}, &p, track_ && !p.frozen, {}});
    return {static_cast<int>(nodes_.size()) - 1};
  }

  const Mat<T>& value(Var v) const {
    const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
    return n.param ? n.param->value : n.value;
  }
  bool needs_grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).needs_grad; }

  /// Gradient slot of a node, zero-initialised on first touch.
  Mat<T>& grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    Mat<T>& g = n.param ? n.param->grad : n.grad;
    const Mat<T>& v = n.param ? n.param->value : n.value;
    if (g.rows() != v.rows() || g.cols() != v.cols()) g.setZero(v.rows(), v.cols());
    return g;
  }
  Mat<T>& grad(Var v) { return grad(v.id); }

  /// Gradient of a non-parameter node after backward, or empty.
  const Mat<T>& grad_of(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).grad; }

  Var record(Mat<T> value, std::initializer_list<Var> inputs, Backward bw) {
    bool need = false;
    for (Var in : inputs) need = need || needs_grad(in);
    nodes_.push_back(Node{std::move(value), {}, nullptr, need, need ? std::move(bw) : Backward{}});
    return {static_cast<int>(nodes_.size()) - 1};
  }

  Var record_many(Mat<T> value, std::span<const Var> inputs, Backward bw) {
    bool need = false;
    for (Var in : inputs) need = need || needs_grad(in);
    nodes_.push_back(Node{std::move(value), {}, nullptr, need, need ? std::move(bw) : Backward{}});
    return {static_cast<int>(nodes_.size()) - 1};
  }

  /// Seeds d(loss)/d(loss) = 1 for a 1x1 loss and runs the tape backwards.
  void backward(Var loss) {
    if (value(loss).size() != 1) throw ArgumentError("backward: loss must be a scalar");
    grad(loss).setOnes();
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.needs_grad || !n.backward) continue;
      if (n.grad.size() == 0) continue;  // nothing flowed here
      n.backward(*this, id);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
  bool track_ = true;
};

// ---------------------------------------------------------------- basic ops

template <class T>
Var matmul(Graph<T>& g, Var a, Var b) {
  if (g.value(a).cols() != g.value(b).rows()) throw ArgumentError("matmul: inner dimensions differ");
  Mat<T> out = g.value(a) * g.value(b);
  return g.record(std::move(out), {a, b}, [a, b](Graph<T>& g, int self) {
    const Mat<T>& dy = g.grad(self);
    if (g.needs_grad(a)) g.grad(a).noalias() += dy * g.value(b).transpose();
    if (g.needs_grad(b)) g.grad(b).noalias() += g.value(a).transpose() * dy;
  });
}

/// x W + b with W stored (in x out); `b` may be invalid for no bias.
template <class T>
Var linear(Graph<T>& g, Var x, Var w, Var b) {
  const Mat<T>& xv = g.value(x);
  const Mat<T>& wv = g.value(w);
  if (xv.cols() != wv.rows()) {
    throw ArgumentError("linear: input width " + std::to_string(xv.cols()) + " vs weight rows " +
                        std::to_string(wv.rows()));
  }
  Mat<T> out(xv.rows(), wv.cols());
  out.noalias() = xv * wv;
  if (b.valid()) out.rowwise() += g.value(b).row(0);
  auto bw = [x, w, b](Graph<T>& g, int self) {
    const Mat<T>& dy = g.grad(self);
    if (g.needs_grad(x)) g.grad(x).noalias() += dy * g.value(w).transpose();
    if (g.needs_grad(w)) g.grad(w).noalias() += g.value(x).transpose() * dy;
    if (b.valid() && g.needs_grad(b)) g.grad(b).row(0) += dy.colwise().sum();
  };
  if (b.valid()) return g.record(std::move(out), {x, w, b}, bw);
  return g.record(std::move(out), {x, w}, bw);
}

template <class T>
Var add(Graph<T>& g, Var a, Var b) {
  if (g.value(a).rows() != g.value(b).rows() || g.value(a).cols() != g.value(b).cols()) {
    throw ArgumentError("add: shape mismatch");
  }
  Mat<T> out = g.value(a) + g.value(b);
  return g.record(std::move(out), {a, b}, [a, b](Graph<T>& g, int self) {
    const Mat<T>& dy = g.grad(self);
    if (g.needs_grad(a)) g.grad(a) += dy;
    if (g.needs_grad(b)) g.grad(b) += dy;
  });
}

template <class T>
Var sub(Graph<T>& g, Var a, Var b) {
  if (g.value(a).rows() != g.value(b).rows() || g.value(a).cols() != g.value(b).cols()) {
    throw ArgumentError("sub: shape mismatch");
  }
  Mat<T> out = g.value(a) - g.value(b);
  return g.record(std::move(out), {a, b}, [a, b](Graph<T>& g, int self) {
    const Mat<T>& dy = g.grad(self);
    if (g.needs_grad(a)) g.grad(a) += dy;
    if (g.needs_grad(b)) g.grad(b) -= dy;
  });
}

/// a[r] += p[r mod P]: adds a P-row table to every consecutive block of P rows.
template <class T>
Var add_tiled(Graph<T>& g, Var a, Var p) {
  const Mat<T>& av = g.value(a);
  const Mat<T>& pv = g.value(p);
  const Eigen::Index period = pv.rows();
  if (pv.cols() != av.cols() || period == 0 || av.rows() % period != 0) {
    throw ArgumentError("add_tiled: table must tile the input rows");
  }
  Mat<T> out = av;
  for (Eigen::Index r = 0; r < out.rows(); r += period) out.middleRows(r, period) += pv;
  return g.record(std::move(out), {a, p}, [a, p, period](Graph<T>& g, int self) {
    const Mat<T>& dy = g.grad(self);
    if (g.needs_grad(a)) g.grad(a) += dy;
    if (g.needs_grad(p)) {
      Mat<T>& dp = g.grad(p);
      for (Eigen::Index r = 0; r < dy.rows(); r += period) dp += dy.middleRows(r, period);
    }
  });
}

template <class T>
Var relu(Graph<T>& g, Var a) {
  Mat<T> out = g.value(a).cwiseMax(T(0));
  return g.record(std::move(out), {a}, [a](Graph<T>& g, int self) {
    const Mat<T>& dy = g.grad(self);
    g.grad(a).array() += (g.value(a).array() > T(0)).select(dy.array(), T(0));
  });
}

template <class T>
Var scale(Graph<T>& g, Var a, T s) {
  Mat<T> out = g.value(a) * s;
  return g.record(std::move(out), {a}, [a, s](Graph<T>& g, int self) { g.grad(a) += g.grad(self) * s; });
}

/// Row-wise layer normalisation with learned gain and bias (1 x C each).
template <class T>
Var layer_norm(Graph<T>& g, Var x, Var gain, Var bias, T eps = T(1e-5)) {
  const Mat<T>& xv = g.value(x);
  const Eigen::Index n = xv.rows();
  const Eigen::Index c = xv.cols();
  Mat<T> xhat(n, c);
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const T mu = xv.row(r).mean();
    const T var = (xv.row(r).array() - mu).square().mean();
    inv(r) = T(1) / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * inv(r);
  }
  Mat<T> out = (xhat.array().rowwise() * g.value(gain).row(0).array()).matrix();
  out.rowwise() += g.value(bias).row(0);
  return g.record(std::move(out), {x, gain, bias},
                  [x, gain, bias, xhat = std::move(xhat), inv = std::move(inv)](Graph<T>& g, int self) {
                    const Mat<T>& dy = g.grad(self);
                    if (g.needs_grad(gain)) g.grad(gain).row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
                    if (g.needs_grad(bias)) g.grad(bias).row(0) += dy.colwise().sum();
                    if (!g.needs_grad(x)) return;
                    const auto gv = g.value(gain).row(0).array();
                    Mat<T>& dx = g.grad(x);
                    const T cn = static_cast<T>(xhat.cols());
                    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
                      const auto dxhat = (dy.row(r).array() * gv).eval();
                      const T m1 = dxhat.mean();
                      const T m2 = (dxhat * xhat.row(r).array()).sum() / cn;
                      dx.row(r).array() += inv(r) * (dxhat - m1 - xhat.row(r).array() * m2);
                    }
                  });
}

/// Rows of `a` picked by index; backward scatters (adds) into the picked rows.
template <class T>
Var gather_rows(Graph<T>& g, Var a, std::vector<int> idx) {
  const Mat<T>& av = g.value(a);
  Mat<T> out(static_cast<Eigen::Index>(idx.size()), av.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= av.rows()) throw BoundsError("gather_rows: index " + std::to_string(idx[i]));
    out.row(static_cast<Eigen::Index>(i)) = av.row(idx[i]);
  }
  return g.record(std::move(out), {a}, [a, idx = std::move(idx)](Graph<T>& g, int self) {
    const Mat<T>& dy = g.grad(self);
    Mat<T>& da = g.grad(a);
    for (std::size_t i = 0; i < idx.size(); ++i) da.row(idx[i]) += dy.row(static_cast<Eigen::Index>(i));
  });
}

template <class T>
Var concat_rows(Graph<T>& g, const std::vector<Var>& parts) {
  if (parts.empty()) throw ArgumentError("concat_rows: nothing to concatenate");
  Eigen::Index rows = 0;
  const Eigen::Index cols = g.value(parts[0]).cols();
  for (Var p : parts) {
    if (g.value(p).cols() != cols) throw ArgumentError("concat_rows: column mismatch");
    rows += g.value(p).rows();
  }
  Mat<T> out(rows, cols);
  Eigen::Index r = 0;
  for (Var p : parts) {
    out.middleRows(r, g.value(p).rows()) = g.value(p);
    r += g.value(p).rows();
  }
  return g.record_many(std::move(out), parts, [parts](Graph<T>& g, int self) {
    const Mat<T>& dy = g.grad(self);
    Eigen::Index r = 0;
    for (Var p : parts) {
      const Eigen::Index n = g.value(p).rows();
      if (g.needs_grad(p)) g.grad(p) += dy.middleRows(r, n);
      r += n;
    }
  });
}

/// log softmax(logits[r])[targets[r]] for every row, as an (n x 1) column.
template <class T>
Var select_log_softmax(Graph<T>& g, Var logits, std::vector<int> targets) {
  const Mat<T>& lv = g.value(logits);
  if (static_cast<Eigen::Index>(targets.size()) != lv.rows()) throw ArgumentError("select_log_softmax: row count");
  Mat<T> probs(lv.rows(), lv.cols());
  Mat<T> out(lv.rows(), 1);
  for (Eigen::Index r = 0; r < lv.rows(); ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    if (t < 0 || t >= lv.cols()) throw BoundsError("select_log_softmax: target " + std::to_string(t));
    const T mx = lv.row(r).maxCoeff();
    const auto e = (lv.row(r).array() - mx).exp().eval();
    const T z = e.sum();
    probs.row(r) = e / z;
    out(r, 0) = lv(r, t) - mx - std::log(z);
  }
  return g.record(std::move(out), {logits},
                  [logits, targets = std::move(targets), probs = std::move(probs)](Graph<T>& g, int self) {
                    const Mat<T>& dy = g.grad(self);
                    Mat<T>& dl = g.grad(logits);
                    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
                      dl.row(r) -= dy(r, 0) * probs.row(r);
                      dl(r, targets[static_cast<std::size_t>(r)]) += dy(r, 0);
                    }
                  });
}

template <class T>
Var sum_all(Graph<T>& g, Var a) {
  Mat<T> out(1, 1);
  out(0, 0) = g.value(a).sum();
  return g.record(std::move(out), {a}, [a](Graph<T>& g, int self) { g.grad(a).array() += g.grad(self)(0, 0); });
}

template <class T>
Var mean_all(Graph<T>& g, Var a) {
  return scale(g, sum_all(g, a), T(1) / static_cast<T>(g.value(a).size()));
}

/// Mean of squared differences over all entries.
template <class T>
Var mse(Graph<T>& g, Var a, Var b) {
  const Mat<T>& av = g.value(a);
  const Mat<T>& bv = g.value(b);
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) throw ArgumentError("mse: shape mismatch");
  Mat<T> out(1, 1);
  const T n = static_cast<T>(av.size());
  out(0, 0) = (av - bv).squaredNorm() / n;
  return g.record(std::move(out), {a, b}, [a, b, n](Graph<T>& g, int self) {
    const T s = T(2) * g.grad(self)(0, 0) / n;
    const Mat<T> d = g.value(a) - g.value(b);
    if (g.needs_grad(a)) g.grad(a) += s * d;
    if (g.needs_grad(b)) g.grad(b) -= s * d;
  });
}

/// Same value, no gradient: the stop-gradient operator.
template <class T>
Var detach(Graph<T>& g, Var a) {
  return g.constant(g.value(a));
}

/// Forward value of `quantized`, gradient delivered to `features` unchanged.
template <class T>
Var straight_through(Graph<T>& g, Var features, Var quantized) {
  if (g.value(features).rows() != g.value(quantized).rows() || g.value(features).cols() != g.value(quantized).cols()) {
    throw ArgumentError("straight_through: shape mismatch");
  }
  Mat<T> out = g.value(quantized);
  return g.record(std::move(out), {features}, [features](Graph<T>& g, int self) { g.grad(features) += g.grad(self); });
}

// ---------------------------------------------------------------- attention

/// Batched multi-head attention layout: `nseq` independent sequences, each
/// with `tq` query rows and `tk` key/value rows, stored back to back.
struct AttnShape {
  int nseq = 1;
  int tq = 1;
  int tk = 1;
  int heads = 1;
  bool causal = false;
};

/// softmax(Q K^T / sqrt(dh)) V per sequence and head, on already projected
/// rows. A causal mask lets query t see keys 0..t.
template <class T>
Var attention(Graph<T>& g, Var q, Var k, Var v, AttnShape s) {
  const Mat<T>& qv = g.value(q);
  const Mat<T>& kv = g.value(k);
  const Mat<T>& vv = g.value(v);
  const Eigen::Index d = qv.cols();
  if (kv.cols() != d || vv.cols() != d || d % s.heads != 0) throw ArgumentError("attention: width mismatch");
  if (qv.rows() != Eigen::Index(s.nseq) * s.tq || kv.rows() != Eigen::Index(s.nseq) * s.tk || vv.rows() != kv.rows()) {
    throw ArgumentError("attention: row counts do not match the sequence layout");
  }
  if (s.causal && s.tq != s.tk) throw ArgumentError("attention: causal masking needs tq == tk");
  const Eigen::Index dh = d / s.heads;
  const T sc = T(1) / std::sqrt(static_cast<T>(dh));
  // probs holds one tq x tk block per (sequence, head).
  Mat<T> probs(Eigen::Index(s.nseq) * s.heads * s.tq, s.tk);
  Mat<T> out(qv.rows(), d);
  Mat<T> scores(s.tq, s.tk);
  for (int n = 0; n < s.nseq; ++n) {
    for (int h = 0; h < s.heads; ++h) {
      const auto qh = qv.block(Eigen::Index(n) * s.tq, h * dh, s.tq, dh);
      const auto kh = kv.block(Eigen::Index(n) * s.tk, h * dh, s.tk, dh);
      const auto vh = vv.block(Eigen::Index(n) * s.tk, h * dh, s.tk, dh);
      scores.noalias() = qh * kh.transpose();
      scores *= sc;
      auto p = probs.middleRows((Eigen::Index(n) * s.heads + h) * s.tq, s.tq);
      for (int i = 0; i < s.tq; ++i) {
        const int visible = s.causal ? i + 1 : s.tk;
        const T mx = scores.row(i).head(visible).maxCoeff();
        T z = 0;
        for (int j = 0; j < s.tk; ++j) {
          const T e = j < visible ? std::exp(scores(i, j) - mx) : T(0);
          p(i, j) = e;
          z += e;
        }
        p.row(i) /= z;
      }
      out.block(Eigen::Index(n) * s.tq, h * dh, s.tq, dh).noalias() = p * vh;
    }
  }
  return g.record(std::move(out), {q, k, v}, [q, k, v, s, dh, sc, probs = std::move(probs)](Graph<T>& g, int self) {
    const Mat<T>& dy = g.grad(self);
    const bool gq = g.needs_grad(q), gk = g.needs_grad(k), gv = g.needs_grad(v);
    Mat<T> dp(s.tq, s.tk);
    Mat<T> ds(s.tq, s.tk);
    for (int n = 0; n < s.nseq; ++n) {
      for (int h = 0; h < s.heads; ++h) {
        const auto qh = g.value(q).block(Eigen::Index(n) * s.tq, h * dh, s.tq, dh);
        const auto kh = g.value(k).block(Eigen::Index(n) * s.tk, h * dh, s.tk, dh);
        const auto vh = g.value(v).block(Eigen::Index(n) * s.tk, h * dh, s.tk, dh);
        const auto p = probs.middleRows((Eigen::Index(n) * s.heads + h) * s.tq, s.tq);
        const auto dyh = dy.block(Eigen::Index(n) * s.tq, h * dh, s.tq, dh);
        if (gv) g.grad(v).block(Eigen::Index(n) * s.tk, h * dh, s.tk, dh).noalias() += p.transpose() * dyh;
        if (!gq && !gk) continue;
        dp.noalias() = dyh * vh.transpose();
        for (int i = 0; i < s.tq; ++i) {
          const T dot = (dp.row(i).array() * p.row(i).array()).sum();
          ds.row(i) = (p.row(i).array() * (dp.row(i).array() - dot)).matrix() * sc;
        }
        if (gq) g.grad(q).block(Eigen::Index(n) * s.tq, h * dh, s.tq, dh).noalias() += ds * kh;
        if (gk) g.grad(k).block(Eigen::Index(n) * s.tk, h * dh, s.tk, dh).noalias() += ds.transpose() * qh;
      }
    }
  });
}

// ---------------------------------------------------------------- convolution

/// Feature maps are stored as rows (n, y, x) and columns = channels.
struct ConvGeom {
  int n = 1;
  int h = 1;
  int w = 1;
  int cin = 1;
  int k = 3;
  int stride = 1;
  int pad = 1;

  int out_h() const { return (h + 2 * pad - k) / stride + 1; }
  int out_w() const { return (w + 2 * pad - k) / stride + 1; }
  /// Output size of the transposed convolution with the same parameters.
  int up_h() const { return (h - 1) * stride - 2 * pad + k; }
  int up_w() const { return (w - 1) * stride - 2 * pad + k; }
};

namespace detail {

/// im2col over maps of size (h, w); columns ordered (ky, kx, c).
template <class T>
void im2col(const Mat<T>& x, const ConvGeom& c, int ho, int wo, Mat<T>& cols) {
  cols.setZero(Eigen::Index(c.n) * ho * wo, Eigen::Index(c.k) * c.k * c.cin);
  for (int b = 0; b < c.n; ++b)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        T* dst = cols.row((Eigen::Index(b) * ho + oy) * wo + ox).data();
        for (int ky = 0; ky < c.k; ++ky) {
          const int iy = oy * c.stride - c.pad + ky;
          if (iy < 0 || iy >= c.h) continue;
          for (int kx = 0; kx < c.k; ++kx) {
            const int ix = ox * c.stride - c.pad + kx;
            if (ix < 0 || ix >= c.w) continue;
            const T* src = x.row((Eigen::Index(b) * c.h + iy) * c.w + ix).data();
            std::copy(src, src + c.cin, dst + (ky * c.k + kx) * c.cin);
          }
        }
      }
}

/// Adjoint of im2col: scatter-add columns back onto (h, w) maps.
template <class T>
void col2im(const Mat<T>& cols, const ConvGeom& c, int ho, int wo, Mat<T>& x) {
  for (int b = 0; b < c.n; ++b)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        const T* src = cols.row((Eigen::Index(b) * ho + oy) * wo + ox).data();
        for (int ky = 0; ky < c.k; ++ky) {
          const int iy = oy * c.stride - c.pad + ky;
          if (iy < 0 || iy >= c.h) continue;
          for (int kx = 0; kx < c.k; ++kx) {
            const int ix = ox * c.stride - c.pad + kx;
            if (ix < 0 || ix >= c.w) continue;
            T* dst = x.row((Eigen::Index(b) * c.h + iy) * c.w + ix).data();
            const T* s = src + (ky * c.k + kx) * c.cin;
            for (int ch = 0; ch < c.cin; ++ch) dst[ch] += s[ch];
          }
        }
      }
}

}  // namespace detail

/// Convolution with weights (k*k*cin x cout) and bias (1 x cout).
template <class T>
Var conv2d(Graph<T>& g, Var x, Var w, Var b, ConvGeom c) {
  const Mat<T>& xv = g.value(x);
  if (xv.rows() != Eigen::Index(c.n) * c.h * c.w || xv.cols() != c.cin) throw ArgumentError("conv2d: input layout");
  if (g.value(w).rows() != Eigen::Index(c.k) * c.k * c.cin) throw ArgumentError("conv2d: weight layout");
  const int ho = c.out_h(), wo = c.out_w();
  Mat<T> cols;
  detail::im2col(xv, c, ho, wo, cols);
  Mat<T> out(cols.rows(), g.value(w).cols());
  out.noalias() = cols * g.value(w);
  out.rowwise() += g.value(b).row(0);
  return g.record(std::move(out), {x, w, b}, [x, w, b, c, ho, wo, cols = std::move(cols)](Graph<T>& g, int self) {
    const Mat<T>& dy = g.grad(self);
    if (g.needs_grad(w)) g.grad(w).noalias() += cols.transpose() * dy;
    if (g.needs_grad(b)) g.grad(b).row(0) += dy.colwise().sum();
    if (g.needs_grad(x)) {
      Mat<T> dcols = dy * g.value(w).transpose();
      detail::col2im(dcols, c, ho, wo, g.grad(x));
    }
  });
}

/// Transposed convolution, the adjoint of conv2d with the same geometry
/// read in reverse. `c` describes the input maps (n, h, w, cin); weights are
/// (cin x k*k*cout) and bias (1 x cout).
template <class T>
Var conv_transpose2d(Graph<T>& g, Var x, Var w, Var b, ConvGeom c) {
  const Mat<T>& xv = g.value(x);
  if (xv.rows() != Eigen::Index(c.n) * c.h * c.w || xv.cols() != c.cin) throw ArgumentError("conv_t: input layout");
  const Eigen::Index kk = Eigen::Index(c.k) * c.k;
  if (g.value(w).rows() != c.cin || g.value(w).cols() % kk != 0) throw ArgumentError("conv_t: weight layout");
  const int cout = static_cast<int>(g.value(w).cols() / kk);
  // Output maps play the role of conv2d inputs, the given maps its outputs.
  const ConvGeom o{c.n, c.up_h(), c.up_w(), cout, c.k, c.stride, c.pad};
  Mat<T> cols(xv.rows(), g.value(w).cols());
  cols.noalias() = xv * g.value(w);
  Mat<T> out = Mat<T>::Zero(Eigen::Index(o.n) * o.h * o.w, cout);
  detail::col2im(cols, o, c.h, c.w, out);
  out.rowwise() += g.value(b).row(0);
  return g.record(std::move(out), {x, w, b}, [x, w, b, c, o](Graph<T>& g, int self) {
    const Mat<T>& dy = g.grad(self);
    if (g.needs_grad(b)) g.grad(b).row(0) += dy.colwise().sum();
    if (!g.needs_grad(w) && !g.needs_grad(x)) return;
    Mat<T> dcols;
    detail::im2col(dy, o, c.h, c.w, dcols);
    if (g.needs_grad(w)) g.grad(w).noalias() += g.value(x).transpose() * dcols;
    if (g.needs_grad(x)) g.grad(x).noalias() += dcols * g.value(w).transpose();
  });
}

}  // namespace ucgs::nn
