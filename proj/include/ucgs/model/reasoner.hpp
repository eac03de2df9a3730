#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ucgs/nn/layers.hpp"

namespace ucgs::model {

using nn::Graph;
using nn::Mat;
using nn::Param;
using nn::ParamList;
using nn::Var;

/// One image as codebook indices in row-major grid order.
using Codes = std::vector<int>;

struct ReasonerConfig {
  int width = 64;          // d
  int heads = 4;
  int layers = 4;          // per transformer stack
  int ff = 256;
  int concepts = 8;        // K
  int max_positions = 16;  // structural slots a context may use
  bool per_slot_target = false;
  int patches = 16;        // M, from the tokenizer
  int codebook_size = 128; // L, from the tokenizer
  int code_dim = 64;       // D_e, from the tokenizer

  void validate() const {
    if (width < 1 || heads < 1 || width % heads != 0) throw ArgumentError("reasoner: width must divide into heads");
    if (layers < 1 || ff < 1 || concepts < 1 || patches < 1) throw ArgumentError("reasoner: sizes must be positive");
    if (max_positions < 2) throw ArgumentError("reasoner: max_positions must be at least 2");
    if (codebook_size < 2 || code_dim < 1) throw ArgumentError("reasoner: bad codebook shape");
  }
};

/// One prediction problem at the code level: the context images (as indices
/// into a batch image table), their structural slots and the target slot.
struct ContextRef {
  std::vector<int> images;
  std::vector<int> slots;
  int target_slot = 0;
};

/// Everything the model needs for a batch: a table of distinct images and
/// per-example contexts into it. Identical images share one patch-encoder
/// pass, which is exact because the encoder is a deterministic function of
/// the codes.
struct CodeBatch {
  std::vector<Codes> images;
  std::vector<ContextRef> contexts;

  int add_image(const Codes& c) {
    const auto [it, inserted] = index_.try_emplace(c, static_cast<int>(images.size()));
    if (inserted) images.push_back(c);
    return it->second;
  }

 private:
  std::map<Codes, int> index_;
};

/// Conditional generator over patch codes: a patch encoder that condenses
/// each image into K concept vectors, a concept encoder that predicts the
/// target's concepts group by group, and a causal decoder over the target's
/// codes. The codebook is borrowed from the tokenizer.
template <class T>
class Reasoner {
 public:
  Reasoner(const ReasonerConfig& cfg, Param<T>& codebook, std::uint64_t seed) : cfg_(cfg), codebook_(&codebook) {
    cfg_.validate();
    if (codebook.value.rows() != cfg_.codebook_size || codebook.value.cols() != cfg_.code_dim) {
      throw ArgumentError("reasoner: codebook shape does not match the configuration");
    }
    Rng rng(seed);
    const int d = cfg_.width, m = cfg_.patches, k = cfg_.concepts;
    patch_pe_ = nn::make_param<T>("rsn.patch.pe", nn::normal_init<T>(m, cfg_.code_dim, 1.0, rng));
    patch_ln_ = nn::LayerNorm<T>("rsn.patch.ln", cfg_.code_dim);
    patch_fc1_ = nn::Linear<T>("rsn.patch.fc1", cfg_.code_dim, d, true, rng);
    patch_fc2_ = nn::Linear<T>("rsn.patch.fc2", d, d, true, rng);
    cls_ = nn::make_param<T>("rsn.patch.cls", nn::normal_init<T>(k, d, 1.0, rng));
    patch_tf_ = nn::TransformerDecoder<T>("rsn.patch.tf", cfg_.layers, d, cfg_.heads, cfg_.ff, rng);

    slot_pe_ = nn::make_param<T>("rsn.concept.slot_pe", nn::normal_init<T>(cfg_.max_positions, d, 1.0, rng));
    key_proj_ = nn::Linear<T>("rsn.concept.key", d, d, true, rng);
    target_q_ = nn::make_param<T>("rsn.concept.target",
                                  nn::normal_init<T>(cfg_.per_slot_target ? cfg_.max_positions : 1, d, 1.0, rng));
    query_proj_ = nn::Linear<T>("rsn.concept.query", d, d, true, rng);
    concept_tf_ = nn::TransformerDecoder<T>("rsn.concept.tf", cfg_.layers, d, cfg_.heads, cfg_.ff, rng);

    bos_ = nn::make_param<T>("rsn.dec.bos", nn::normal_init<T>(1, d, 1.0, rng));
    code_in_ = nn::Linear<T>("rsn.dec.in", cfg_.code_dim, d, true, rng);
    dec_pe_ = nn::make_param<T>("rsn.dec.pe", nn::normal_init<T>(m, d, 1.0, rng));
    mem_proj_ = nn::Linear<T>("rsn.dec.mem", d, d, true, rng);
    dec_tf_ = nn::TransformerDecoder<T>("rsn.dec.tf", cfg_.layers, d, cfg_.heads, cfg_.ff, rng);
    head_ = nn::Linear<T>("rsn.dec.head", d, cfg_.codebook_size, false, rng);
  }

  Reasoner(const Reasoner&) = delete;
  Reasoner& operator=(const Reasoner&) = delete;

  const ReasonerConfig& config() const noexcept { return cfg_; }
  const Param<T>& codebook() const noexcept { return *codebook_; }

  /// Trainable parameters of the reasoner itself (the codebook is not
  /// included; it belongs to the tokenizer).
  ParamList<T> params() {
    ParamList<T> out{&patch_pe_};
    patch_ln_.collect(out);
    patch_fc1_.collect(out);
    patch_fc2_.collect(out);
    out.push_back(&cls_);
    patch_tf_.collect(out);
    out.push_back(&slot_pe_);
    key_proj_.collect(out);
    out.push_back(&target_q_);
    query_proj_.collect(out);
    concept_tf_.collect(out);
    out.push_back(&bos_);
    code_in_.collect(out);
    out.push_back(&dec_pe_);
    mem_proj_.collect(out);
    dec_tf_.collect(out);
    head_.collect(out);
    return out;
  }

  // ------------------------------------------------------------ graph pieces

  /// K concept rows per image, (n*K x d), images in table order.
  Var patch_concepts(Graph<T>& g, std::span<const Codes> images) {
    const int m = cfg_.patches, k = cfg_.concepts;
    const int n = static_cast<int>(images.size());
    std::vector<int> ids;
    ids.reserve(static_cast<std::size_t>(n) * m);
    for (const Codes& c : images) {
      check_codes(c);
      ids.insert(ids.end(), c.begin(), c.end());
    }
    Var z = nn::gather_rows(g, g.param(*codebook_), std::move(ids));
    z = nn::add_tiled(g, z, g.param(patch_pe_));
    z = patch_fc2_(g, nn::relu(g, patch_fc1_(g, patch_ln_(g, z))));
    Var q = nn::add_tiled(g, g.constant(Mat<T>::Zero(Eigen::Index(n) * k, cfg_.width)), g.param(cls_));
    return patch_tf_(g, q, z, n, k, m, false);
  }

  /// Target concepts for every context, (B*K x d) ordered (example, group).
  /// Group k of an example only ever reads concept k of its context images.
  /// All contexts in one call must have the same length.
  Var target_concepts(Graph<T>& g, Var concepts, std::span<const ContextRef> contexts) {
    if (contexts.empty()) throw ArgumentError("reasoner: empty batch");
    const int k = cfg_.concepts;
    const std::size_t c = contexts.front().images.size();
    if (c == 0) throw ArgumentError("reasoner: context is empty");
    const int b = static_cast<int>(contexts.size());
    std::vector<int> rows, slots, targets;
    rows.reserve(static_cast<std::size_t>(b) * k * c);
    slots.reserve(rows.capacity());
    for (const ContextRef& ctx : contexts) {
      check_context(ctx, c);
      for (int kk = 0; kk < k; ++kk) {
        for (std::size_t i = 0; i < c; ++i) {
          rows.push_back(ctx.images[i] * k + kk);
          slots.push_back(ctx.slots[i]);
        }
        targets.push_back(cfg_.per_slot_target ? ctx.target_slot : 0);
      }
    }
    Var keys = nn::add(g, nn::gather_rows(g, concepts, std::move(rows)), nn::gather_rows(g, g.param(slot_pe_), std::move(slots)));
    keys = key_proj_(g, keys);
    Var q = query_proj_(g, nn::gather_rows(g, g.param(target_q_), std::move(targets)));
    return concept_tf_(g, q, keys, b * k, 1, static_cast<int>(c), false);
  }

  /// Next-code logits for every prefix position, (B*T x L), where each of
  /// the B sequences feeds [BOS, prefix[0..T-2]]. With T = M and the target
  /// codes as prefixes this is teacher forcing.
  Var code_logits(Graph<T>& g, Var targets, std::span<const Codes> prefixes, int steps) {
    const int m = cfg_.patches, l = cfg_.codebook_size;
    if (steps < 1 || steps > m) throw StateError("reasoner: decoder prefix overflow");
    const int b = static_cast<int>(prefixes.size());
    std::vector<int> ids, pos;
    ids.reserve(static_cast<std::size_t>(b) * steps);
    pos.reserve(ids.capacity());
    for (const Codes& p : prefixes) {
      if (static_cast<int>(p.size()) < steps - 1) throw ArgumentError("reasoner: prefix shorter than step count");
      for (int t = 0; t < steps; ++t) {
        const int id = t == 0 ? l : p[static_cast<std::size_t>(t - 1)];
        if (id < 0 || id > l) throw BoundsError("reasoner: code index " + std::to_string(id));
        ids.push_back(id);
        pos.push_back(t);
      }
    }
    // Row L of the embedding table is the begin token.
    Var table = nn::concat_rows(g, {code_in_(g, g.param(*codebook_)), g.param(bos_)});
    Var x = nn::add(g, nn::gather_rows(g, table, std::move(ids)), nn::gather_rows(g, g.param(dec_pe_), std::move(pos)));
    Var h = dec_tf_(g, x, mem_proj_(g, targets), b, steps, cfg_.concepts, true);
    return head_(g, h);
  }

  /// log p(target | context) summed over all M codes, one row per target,
  /// (T x 1). `context_of[i]` names the context of target i; when empty,
  /// target i belongs to context i. Sharing a context across several
  /// targets (the candidates of one problem) computes its concepts once.
  Var log_predictability_graph(Graph<T>& g, const CodeBatch& batch, std::span<const Codes> targets,
                               std::span<const int> context_of = {}) {
    const int m = cfg_.patches, k = cfg_.concepts;
    if (context_of.empty() ? targets.size() != batch.contexts.size() : context_of.size() != targets.size()) {
      throw ArgumentError("reasoner: targets do not line up with contexts");
    }
    Var s = target_concepts(g, patch_concepts(g, batch.images), batch.contexts);
    if (!context_of.empty()) {
      std::vector<int> rows;
      rows.reserve(context_of.size() * static_cast<std::size_t>(k));
      for (int c : context_of) {
        if (c < 0 || c >= static_cast<int>(batch.contexts.size())) throw BoundsError("reasoner: context index");
        for (int kk = 0; kk < k; ++kk) rows.push_back(c * k + kk);
      }
      s = nn::gather_rows(g, s, std::move(rows));
    }
    std::vector<int> flat;
    flat.reserve(targets.size() * static_cast<std::size_t>(m));
    for (const Codes& t : targets) {
      check_codes(t);
      flat.insert(flat.end(), t.begin(), t.end());
    }
    Var lp = nn::select_log_softmax(g, code_logits(g, s, targets, m), std::move(flat));
    // Sum each block of M rows: (T x T*M) indicator times the column.
    Mat<T> pool = Mat<T>::Zero(Eigen::Index(targets.size()), Eigen::Index(targets.size()) * m);
    for (Eigen::Index i = 0; i < pool.rows(); ++i) pool.block(i, i * m, 1, m).setOnes();
    return nn::matmul(g, g.constant(std::move(pool)), lp);
  }

  /// Mean negative log-predictability over the batch.
  Var prediction_loss(Graph<T>& g, const CodeBatch& batch, std::span<const Codes> targets) {
    Var lp = log_predictability_graph(g, batch, targets);
    return nn::scale(g, nn::sum_all(g, lp), T(-1) / static_cast<T>(targets.size()));
  }

  // ------------------------------------------------------------- inference

  std::vector<double> log_predictability(const CodeBatch& batch, std::span<const Codes> targets,
                                         std::span<const int> context_of = {}) const {
    Graph<T> g(false);
    const Mat<T>& v = g.value(self().log_predictability_graph(g, batch, targets, context_of));
    std::vector<double> out(static_cast<std::size_t>(v.rows()));
    for (Eigen::Index i = 0; i < v.rows(); ++i) out[static_cast<std::size_t>(i)] = static_cast<double>(v(i, 0));
    return out;
  }

  /// Predicted target concepts, one (K x d) block per context.
  Mat<T> predict_concepts(const CodeBatch& batch) const {
    Graph<T> g(false);
    return g.value(self().target_concepts(g, self().patch_concepts(g, batch.images), batch.contexts));
  }

  Mat<T> encode_concepts(std::span<const Codes> images) const {
    Graph<T> g(false);
    return g.value(self().patch_concepts(g, images));
  }

  /// Logits for position `prefix.size()` of every sequence, (B x L), given
  /// predicted concepts (B*K x d) and equal-length prefixes.
  Mat<T> decode_step(const Mat<T>& concepts, std::span<const Codes> prefixes) const {
    if (prefixes.empty()) throw ArgumentError("reasoner: empty batch");
    const std::size_t len = prefixes.front().size();
    for (const Codes& p : prefixes) {
      if (p.size() != len) throw ArgumentError("reasoner: prefixes must share a length");
    }
    if (static_cast<int>(len) >= cfg_.patches) throw StateError("reasoner: decoder prefix overflow");
    const int steps = static_cast<int>(len) + 1;
    Graph<T> g(false);
    const Mat<T>& all = g.value(self().code_logits(g, g.constant(concepts), prefixes, steps));
    Mat<T> out(static_cast<Eigen::Index>(prefixes.size()), cfg_.codebook_size);
    for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) = all.row(i * steps + steps - 1);
    return out;
  }

  /// Ancestral sampling of M codes per sequence. `temperature <= 0` means
  /// greedy (argmax, lowest index on ties); otherwise each sequence draws from
  /// its own generator so results do not depend on batch composition.
  std::vector<Codes> sample(const Mat<T>& concepts, double temperature, std::span<Rng> rngs) const {
    const std::size_t b = static_cast<std::size_t>(concepts.rows() / cfg_.concepts);
    if (temperature > 0 && rngs.size() != b) throw ArgumentError("reasoner: one generator per sequence");
    std::vector<Codes> out(b);
    for (int m = 0; m < cfg_.patches; ++m) {
      const Mat<T> logits = decode_step(concepts, out);
      for (std::size_t i = 0; i < b; ++i) {
        const auto row = logits.row(static_cast<Eigen::Index>(i));
        int pick = 0;
        if (temperature <= 0) {
          for (int j = 1; j < row.size(); ++j)
            if (row(j) > row(pick)) pick = j;
        } else {
          std::vector<double> w(static_cast<std::size_t>(row.size()));
          const double mx = static_cast<double>(row.maxCoeff());
          double z = 0;
          for (std::size_t j = 0; j < w.size(); ++j) {
            w[j] = std::exp((static_cast<double>(row(static_cast<Eigen::Index>(j))) - mx) / temperature);
            z += w[j];
          }
          double u = rngs[i].uniform01() * z;
          pick = static_cast<int>(w.size()) - 1;
          for (std::size_t j = 0; j < w.size(); ++j) {
            if (u < w[j]) {
              pick = static_cast<int>(j);
              break;
            }
            u -= w[j];
          }
        }
        out[i].push_back(pick);
      }
    }
    return out;
  }

 private:
  // Inference graphs do not track gradients, so reading parameters through
  // a mutable alias never writes to them.
  Reasoner& self() const { return const_cast<Reasoner&>(*this); }

  void check_codes(const Codes& c) const {
    if (static_cast<int>(c.size()) != cfg_.patches) {
      throw ArgumentError("reasoner: expected " + std::to_string(cfg_.patches) + " codes, got " + std::to_string(c.size()));
    }
    for (int v : c)
      if (v < 0 || v >= cfg_.codebook_size) throw BoundsError("reasoner: code index " + std::to_string(v));
  }

  void check_context(const ContextRef& ctx, std::size_t len) const {
    if (ctx.images.size() != len || ctx.slots.size() != len) {
      throw ArgumentError("reasoner: contexts in one call must share a length");
    }
    if (ctx.target_slot < 0 || ctx.target_slot >= cfg_.max_positions) {
      throw ArgumentError("reasoner: target slot " + std::to_string(ctx.target_slot) + " out of range");
    }
    for (std::size_t i = 0; i < len; ++i) {
      const int s = ctx.slots[i];
      if (s < 0 || s >= cfg_.max_positions) throw ArgumentError("reasoner: slot " + std::to_string(s) + " out of range");
      if (s == ctx.target_slot) throw ArgumentError("reasoner: target slot appears in the context");
      for (std::size_t j = 0; j < i; ++j)
        if (ctx.slots[j] == s) throw ArgumentError("reasoner: duplicate context slot");
    }
  }

  ReasonerConfig cfg_;
  Param<T>* codebook_;
  Param<T> patch_pe_;
  nn::LayerNorm<T> patch_ln_;
  nn::Linear<T> patch_fc1_, patch_fc2_;
  Param<T> cls_;
  nn::TransformerDecoder<T> patch_tf_;
  Param<T> slot_pe_;
  nn::Linear<T> key_proj_;
  Param<T> target_q_;
  nn::Linear<T> query_proj_;
  nn::TransformerDecoder<T> concept_tf_;
  Param<T> bos_;
  nn::Linear<T> code_in_;
  Param<T> dec_pe_;
  nn::Linear<T> mem_proj_;
  nn::TransformerDecoder<T> dec_tf_;
  nn::Linear<T> head_;
};

}  // namespace ucgs::model
