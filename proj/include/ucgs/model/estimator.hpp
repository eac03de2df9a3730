#pragma once

#include <algorithm>
#include <cstring>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ucgs/core/judgment.hpp"
#include "ucgs/core/panel.hpp"
#include "ucgs/model/reasoner.hpp"
#include "ucgs/vq/tokenizer.hpp"

namespace ucgs::model {

using CodeContext = BasicContext<Codes>;

/// PredictabilityEstimator over code items: log p(x | context) from the
/// reasoner, evaluated exactly by teacher forcing.
template <class T>
class CodeEstimator {
 public:
  explicit CodeEstimator(const Reasoner<T>& reasoner, std::size_t chunk = 256) : reasoner_(&reasoner), chunk_(chunk) {}

  double score(const CodeContext& c, const Codes& x) const {
    const ScoreQuery<Codes> q{&c, &x};
    return score_batch(std::span<const ScoreQuery<Codes>>(&q, 1)).front();
  }

  /// Queries are grouped by context length and evaluated in chunks; queries
  /// that share a context object share its concept prediction.
  std::vector<double> score_batch(std::span<const ScoreQuery<Codes>> queries) const {
    std::vector<double> out(queries.size());
    std::map<std::size_t, std::vector<std::size_t>> by_len;
    for (std::size_t i = 0; i < queries.size(); ++i) by_len[queries[i].context->size()].push_back(i);
    for (const auto& [len, idx] : by_len) {
      for (std::size_t start = 0; start < idx.size(); start += chunk_) {
        const std::size_t end = std::min(idx.size(), start + chunk_);
        CodeBatch batch;
        std::map<const CodeContext*, int> ctx_index;
        std::vector<Codes> targets;
        std::vector<int> context_of;
        for (std::size_t j = start; j < end; ++j) {
          const ScoreQuery<Codes>& q = queries[idx[j]];
          auto [it, inserted] = ctx_index.try_emplace(q.context, static_cast<int>(batch.contexts.size()));
          if (inserted) batch.contexts.push_back(to_ref(batch, *q.context));
          context_of.push_back(it->second);
          targets.push_back(*q.target);
        }
        const auto lp = reasoner_->log_predictability(batch, targets, context_of);
        for (std::size_t j = start; j < end; ++j) out[idx[j]] = lp[j - start];
      }
    }
    return out;
  }

  const Reasoner<T>& reasoner() const noexcept { return *reasoner_; }

  static ContextRef to_ref(CodeBatch& batch, const CodeContext& c) {
    ContextRef r;
    r.target_slot = static_cast<int>(c.target_slot());
    for (std::size_t i = 0; i < c.size(); ++i) {
      r.images.push_back(batch.add_image(c[i]));
      r.slots.push_back(static_cast<int>(c.slot_of(i)));
    }
    return r;
  }

 private:
  const Reasoner<T>* reasoner_;
  std::size_t chunk_;
};

/// Tokenizes images (each distinct image once per call) and hands the codes
/// to the reasoner. This is the estimator the judgment functions consume.
template <class T>
class ImageEstimator {
 public:
  ImageEstimator(const vq::Tokenizer<T>& tokenizer, const Reasoner<T>& reasoner, std::size_t chunk = 256)
      : tokenizer_(&tokenizer), codes_(reasoner, chunk) {}

  double score(const Context& c, const Image& x) const {
    const ScoreQuery<Image> q{&c, &x};
    return score_batch(std::span<const ScoreQuery<Image>>(&q, 1)).front();
  }

  std::vector<double> score_batch(std::span<const ScoreQuery<Image>> queries) const {
    CodeCache cache(*tokenizer_);
    for (const auto& q : queries) {
      for (const Image& img : q.context->items()) cache.add(img);
      cache.add(*q.target);
    }
    cache.encode();
    std::map<const Context*, std::size_t> seen;
    std::vector<CodeContext> contexts;
    contexts.reserve(queries.size());
    std::vector<std::size_t> ctx_of(queries.size());
    std::vector<Codes> targets(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i) {
      auto [it, inserted] = seen.try_emplace(queries[i].context, contexts.size());
      if (inserted) contexts.push_back(cache.context(*queries[i].context));
      ctx_of[i] = it->second;
      targets[i] = cache.codes(*queries[i].target);
    }
    std::vector<ScoreQuery<Codes>> cq(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i) cq[i] = {&contexts[ctx_of[i]], &targets[i]};
    return codes_.score_batch(cq);
  }

  /// Ancestral samples for each context; greedy when temperature <= 0.
  /// `seeds[i]` drives context i only, so results are independent of how the
  /// contexts are batched.
  std::vector<std::pair<Codes, Image>> generate(std::span<const Context> contexts, double temperature,
                                                std::span<const std::uint64_t> seeds, std::size_t chunk = 256) const {
    if (temperature > 0 && seeds.size() != contexts.size()) throw ArgumentError("generate: one seed per context");
    CodeCache cache(*tokenizer_);
    for (const Context& c : contexts)
      for (const Image& img : c.items()) cache.add(img);
    cache.encode();
    std::vector<std::pair<Codes, Image>> out(contexts.size());
    std::map<std::size_t, std::vector<std::size_t>> by_len;
    for (std::size_t i = 0; i < contexts.size(); ++i) by_len[contexts[i].size()].push_back(i);
    const Reasoner<T>& rsn = codes_.reasoner();
    for (const auto& [len, idx] : by_len) {
      for (std::size_t start = 0; start < idx.size(); start += chunk) {
        const std::size_t end = std::min(idx.size(), start + chunk);
        CodeBatch batch;
        std::vector<Rng> rngs;
        for (std::size_t j = start; j < end; ++j) {
          batch.contexts.push_back(CodeEstimator<T>::to_ref(batch, cache.context(contexts[idx[j]])));
          rngs.emplace_back(temperature > 0 ? seeds[idx[j]] : 0);
        }
        const auto codes = rsn.sample(rsn.predict_concepts(batch), temperature, rngs);
        std::vector<vq::BasicPatchCodes<T>> pc;
        pc.reserve(codes.size());
        for (const Codes& c : codes) pc.push_back(tokenizer_->codes_from_indices(c));
        auto images = tokenizer_->decode(std::span<const vq::BasicPatchCodes<T>>(pc));
        for (std::size_t j = start; j < end; ++j) out[idx[j]] = {codes[j - start], std::move(images[j - start])};
      }
    }
    return out;
  }

  const vq::Tokenizer<T>& tokenizer() const noexcept { return *tokenizer_; }

 private:
  /// Content-addressed image to code table for one call.
  class CodeCache {
   public:
    explicit CodeCache(const vq::Tokenizer<T>& tok) : tok_(&tok) {}

    void add(const Image& img) {
      if (index_.try_emplace(key(img), images_.size()).second) images_.push_back(img);
    }

    void encode() {
      for (std::size_t i = 0; i < images_.size(); i += 128) {
        const auto part = std::span<const Image>(images_).subspan(i, std::min<std::size_t>(128, images_.size() - i));
        for (auto& c : tok_->encode(part)) codes_.push_back(std::move(c.indices));
      }
    }

    const Codes& codes(const Image& img) const { return codes_.at(index_.at(key(img))); }

    CodeContext context(const Context& c) const {
      std::vector<Codes> items;
      items.reserve(c.size());
      for (const Image& img : c.items()) items.push_back(codes(img));
      return CodeContext(std::move(items), c.target_slot(), c.origin_len());
    }

   private:
    static std::string key(const Image& img) {
      std::string k(img.size() * sizeof(float) + 2 * sizeof(int), '\0');
      const int hw[2] = {img.height(), img.width()};
      std::memcpy(k.data(), hw, sizeof hw);
      std::memcpy(k.data() + sizeof hw, img.pixels().data(), img.size() * sizeof(float));
      return k;
    }

    const vq::Tokenizer<T>* tok_;
    std::vector<Image> images_;
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<Codes> codes_;
  };

  const vq::Tokenizer<T>* tokenizer_;
  CodeEstimator<T> codes_;
};

}  // namespace ucgs::model
