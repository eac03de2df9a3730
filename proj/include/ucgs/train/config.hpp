#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ucgs/model/reasoner.hpp"
#include "ucgs/util/digest.hpp"
#include "ucgs/util/errors.hpp"
#include "ucgs/vq/tokenizer.hpp"

namespace ucgs::train {

struct DataConfig {
  std::uint64_t seed = 2024;
  std::size_t total = 10000;
  double train_frac = 0.6;
  double valid_frac = 0.2;
  int size = 32;  // square images
  std::size_t candidates = 8;
};

struct TrainConfig {
  std::uint64_t seed = 7;
  double stage1_lr = 4e-4;
  std::size_t stage1_batch = 64;
  int stage1_epochs = 30;
  double stage2_lr = 3e-4;
  std::size_t stage2_batch = 128;
  int stage2_epochs = 60;
  int patience = 10;       // stage-2 epochs without a better validation accuracy
  int valid_every = 1;     // epochs between validations
  std::size_t valid_limit = 0;  // cap on validation problems, 0 = whole split
  double lambda = 0.0;     // weight of the reconstruction loss in stage 2
  double clip = 1.0;
  std::size_t log_every = 10;  // steps between log lines

  void validate() const {
    if (!(stage1_lr > 0) || !(stage2_lr > 0)) throw ConfigError("step sizes must be positive");
    if (stage1_batch == 0 || stage2_batch == 0) throw ConfigError("batch sizes must be positive");
    if (stage1_epochs < 0 || stage2_epochs < 0) throw ConfigError("epoch counts must be non-negative");
    if (patience < 1 || valid_every < 1) throw ConfigError("patience and valid_every must be positive");
    if (!(lambda >= 0)) throw ConfigError("lambda must be non-negative");
    if (log_every == 0) throw ConfigError("log_every must be positive");
  }
};

/// Everything a run depends on. Serialised as a flat `key = value` file;
/// the hash of the canonical text is stamped into every artifact.
struct RunConfig {
  DataConfig data;
  vq::TokenizerConfig tok;
  model::ReasonerConfig rsn;
  TrainConfig train;
  double temperature = 0.0;  // generation; <= 0 is greedy
  std::string out = "run";

  /// Tokenizer geometry the reasoner inherits.
  model::ReasonerConfig reasoner() const {
    model::ReasonerConfig r = rsn;
    r.patches = tok.patches();
    r.codebook_size = tok.codebook_size;
    r.code_dim = tok.code_dim;
    return r;
  }

  vq::TokenizerConfig tokenizer() const {
    vq::TokenizerConfig t = tok;
    t.height = t.width = data.size;
    return t;
  }

  void validate() const {
    if (data.total == 0) throw ConfigError("data.total must be positive");
    if (data.train_frac <= 0 || data.valid_frac <= 0 || data.train_frac + data.valid_frac >= 1.0) {
      throw ConfigError("split fractions must be positive and leave a test split");
    }
    if (data.candidates < 2) throw ConfigError("data.candidates must be at least 2");
    try {
      tokenizer().validate();
      reasoner().validate();
    } catch (const ArgumentError& e) {
      throw ConfigError(e.what());
    }
    if (rsn.max_positions < 9) throw ConfigError("rsn.max_positions must cover the 9 panel slots");
    train.validate();
  }

  std::string to_text() const;
  std::string hash() const { return sha256_hex(to_text()); }
  /// Hash of the keys that fix the tokenizer's weights.
  std::string tokenizer_hash() const;
  /// Hash of the keys that fix the generated datasets.
  std::string data_hash() const;
};

namespace detail {

/// One binding per key: how to print it and how to parse it.
struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <class V>
std::string show(const V& v) {
  std::ostringstream os;
  os.precision(17);
  os << std::boolalpha;
  os << v;
  return os.str();
}

template <class V>
V parse_value(const std::string& key, const std::string& s) {
  std::istringstream in(s);
  V v{};
  if constexpr (std::is_same_v<V, bool>) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError("key " + key + ": expected true/false, got '" + s + "'");
  } else if constexpr (std::is_same_v<V, std::string>) {
    return s;
  } else {
    if constexpr (std::is_unsigned_v<V>) {
      if (!s.empty() && s[0] == '-') throw ConfigError("key " + key + ": expected a non-negative number");
    }
    in >> v;
    if (in.fail() || !in.eof()) throw ConfigError("key " + key + ": cannot parse '" + s + "'");
    return v;
  }
}

#define UCGS_FIELD(name, member)                                                                    \
  {                                                                                                 \
    name, Field {                                                                                   \
      [](const RunConfig& c) { return show(c.member); },                                            \
          [](RunConfig& c, const std::string& v) { c.member = parse_value<decltype(c.member)>(name, v); } \
    }                                                                                               \
  }

inline const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> f = {
      UCGS_FIELD("data.seed", data.seed),
      UCGS_FIELD("data.total", data.total),
      UCGS_FIELD("data.train_frac", data.train_frac),
      UCGS_FIELD("data.valid_frac", data.valid_frac),
      UCGS_FIELD("data.size", data.size),
      UCGS_FIELD("data.candidates", data.candidates),
      UCGS_FIELD("tok.grid", tok.grid),
      UCGS_FIELD("tok.codebook_size", tok.codebook_size),
      UCGS_FIELD("tok.code_dim", tok.code_dim),
      UCGS_FIELD("tok.channels", tok.channels),
      UCGS_FIELD("tok.first_channels", tok.first_channels),
      UCGS_FIELD("tok.res_hidden", tok.res_hidden),
      UCGS_FIELD("tok.res_blocks", tok.res_blocks),
      UCGS_FIELD("tok.beta", tok.beta),
      UCGS_FIELD("rsn.width", rsn.width),
      UCGS_FIELD("rsn.heads", rsn.heads),
      UCGS_FIELD("rsn.layers", rsn.layers),
      UCGS_FIELD("rsn.ff", rsn.ff),
      UCGS_FIELD("rsn.concepts", rsn.concepts),
      UCGS_FIELD("rsn.max_positions", rsn.max_positions),
      UCGS_FIELD("rsn.per_slot_target", rsn.per_slot_target),
      UCGS_FIELD("train.seed", train.seed),
      UCGS_FIELD("train.stage1_lr", train.stage1_lr),
      UCGS_FIELD("train.stage1_batch", train.stage1_batch),
      UCGS_FIELD("train.stage1_epochs", train.stage1_epochs),
      UCGS_FIELD("train.stage2_lr", train.stage2_lr),
      UCGS_FIELD("train.stage2_batch", train.stage2_batch),
      UCGS_FIELD("train.stage2_epochs", train.stage2_epochs),
      UCGS_FIELD("train.patience", train.patience),
      UCGS_FIELD("train.valid_every", train.valid_every),
      UCGS_FIELD("train.valid_limit", train.valid_limit),
      UCGS_FIELD("train.lambda", train.lambda),
      UCGS_FIELD("train.clip", train.clip),
      UCGS_FIELD("train.log_every", train.log_every),
      UCGS_FIELD("gen.temperature", temperature),
      UCGS_FIELD("out.dir", out),
  };
  return f;
}

#undef UCGS_FIELD

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [key, f] : detail::fields()) out += key + " = " + f.get(*this) + "\n";
  return out;
}

inline std::string RunConfig::tokenizer_hash() const {
  std::string text;
  for (const auto& [key, f] : detail::fields()) {
    if (key.starts_with("tok.") || key.starts_with("data.") || key.starts_with("train.stage1") ||
        key == "train.seed" || key == "train.clip") {
      text += key + " = " + f.get(*this) + "\n";
    }
  }
  return sha256_hex(text);
}

inline std::string RunConfig::data_hash() const {
  std::string text;
  for (const auto& [key, f] : detail::fields())
    if (key.starts_with("data.")) text += key + " = " + f.get(*this) + "\n";
  return sha256_hex(text);
}

/// Applies `key = value` lines on top of `base`. Blank lines and lines
/// starting with '#' are ignored; unknown keys and repeated keys are errors.
inline RunConfig parse_config(const std::string& text, RunConfig base = {}) {
  std::map<std::string, const detail::Field*> by_key;
  for (const auto& [key, f] : detail::fields()) by_key[key] = &f;
  std::map<std::string, int> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string value = detail::trim(t.substr(eq + 1));
    const auto it = by_key.find(key);
    if (it == by_key.end()) throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (!seen.emplace(key, lineno).second) throw ConfigError("line " + std::to_string(lineno) + ": repeated key '" + key + "'");
    it->second->set(base, value);
  }
  base.validate();
  return base;
}

/// Applies a single `key=value` override, as given on the command line.
inline void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  cfg = parse_config(assignment, cfg);
}

inline RunConfig load_config(const std::filesystem::path& path) { return parse_config(read_file_bytes(path)); }

/// The default desk-scale run.
inline RunConfig default_config() {
  RunConfig c;
  c.validate();
  return c;
}

/// The architecture widths of the published model at 128x128. Far beyond a
/// single CPU core; kept so the configuration space covers it.
inline RunConfig paper_config() {
  RunConfig c;
  c.data.size = 128;
  c.tok.grid = 4;
  c.tok.channels = 128;
  c.tok.first_channels = 64;
  c.tok.res_hidden = 32;
  c.tok.codebook_size = 128;
  c.tok.code_dim = 64;
  c.rsn.width = 128;
  c.rsn.heads = 8;
  c.rsn.layers = 12;
  c.rsn.ff = 512;
  c.rsn.concepts = 8;
  c.validate();
  return c;
}

inline RunConfig preset(const std::string& name) {
  if (name == "default") return default_config();
  if (name == "paper") return paper_config();
  throw ConfigError("unknown preset '" + name + "' (expected default or paper)");
}

}  // namespace ucgs::train
