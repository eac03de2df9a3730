#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "ucgs/model/estimator.hpp"
#include "ucgs/nn/checkpoint.hpp"
#include "ucgs/train/config.hpp"
#include "ucgs/util/rng.hpp"

namespace ucgs::train {

inline constexpr std::uint64_t kTokenizerSalt = 0x746f6b;
inline constexpr std::uint64_t kReasonerSalt = 0x72736e;

inline std::uint64_t tokenizer_seed(const RunConfig& c) { return derive_seed(c.train.seed, 0, kTokenizerSalt); }
inline std::uint64_t reasoner_seed(const RunConfig& c) { return derive_seed(c.train.seed, 0, kReasonerSalt); }

/// Tokenizer and reasoner of one run. The reasoner borrows the tokenizer's
/// codebook, so the pair lives behind stable pointers.
struct Model {
  RunConfig config;
  std::unique_ptr<vq::Tokenizer<float>> tokenizer;
  std::unique_ptr<model::Reasoner<float>> reasoner;

  /// Freshly initialised weights.
  explicit Model(const RunConfig& cfg)
      : config(cfg),
        tokenizer(std::make_unique<vq::Tokenizer<float>>(cfg.tokenizer(), tokenizer_seed(cfg))),
        reasoner(std::make_unique<model::Reasoner<float>>(cfg.reasoner(), tokenizer->codebook(), reasoner_seed(cfg))) {}

  model::ImageEstimator<float> estimator(std::size_t chunk = 256) const {
    return model::ImageEstimator<float>(*tokenizer, *reasoner, chunk);
  }

  std::string codebook_hash() const { return nn::tensor_hash(tokenizer->codebook().value); }
};

inline constexpr const char* kTokenizerKind = "ucgs-tokenizer";
inline constexpr const char* kModelKind = "ucgs-model";

/// Run metadata shared by every checkpoint.
inline void stamp(nn::Checkpoint& c, const RunConfig& cfg) {
  c.meta["config"] = cfg.to_text();
  c.meta["config_hash"] = cfg.hash();
  c.meta["tokenizer_hash"] = cfg.tokenizer_hash();
}

inline RunConfig config_of(const nn::Checkpoint& c, const std::string& path) {
  try {
    return parse_config(c.get("config"));
  } catch (const std::exception& e) {
    throw LoadError(LoadErrorKind::kMalformed, path, std::string("embedded config: ") + e.what());
  }
}

/// Checks that the embedded config still hashes to the stamped value.
inline RunConfig checked_config(const nn::Checkpoint& c, const std::string& path) {
  RunConfig cfg = config_of(c, path);
  if (cfg.hash() != c.get("config_hash")) {
    throw LoadError(LoadErrorKind::kChecksumFailure, path, "embedded config does not match its hash");
  }
  return cfg;
}

/// Loads a stage-2 checkpoint (tokenizer and reasoner weights). The stored
/// codebook hash must match the tokenizer weights it ships with.
inline std::unique_ptr<Model> load_model(const std::filesystem::path& path) {
  const nn::Checkpoint c = nn::load_checkpoint(path);
  if (c.kind != kModelKind) {
    throw LoadError(LoadErrorKind::kMalformed, path.string(), "expected a model checkpoint, found '" + c.kind + "'");
  }
  auto m = std::make_unique<Model>(checked_config(c, path.string()));
  nn::load_params(c, m->tokenizer->params(), path.string());
  nn::load_params(c, m->reasoner->params(), path.string());
  if (m->codebook_hash() != c.get("codebook_hash")) {
    throw LoadError(LoadErrorKind::kChecksumFailure, path.string(), "codebook does not match the paired tokenizer");
  }
  return m;
}

}  // namespace ucgs::train
