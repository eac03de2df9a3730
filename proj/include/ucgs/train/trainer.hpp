#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ucgs/nn/checkpoint.hpp"
#include "ucgs/nn/optim.hpp"
#include "ucgs/train/data.hpp"
#include "ucgs/train/evaluate.hpp"
#include "ucgs/train/model.hpp"

namespace ucgs::train {

namespace fs = std::filesystem;
using model::Codes;

inline constexpr const char* kStage1Best = "stage1-best.ckpt";
inline constexpr const char* kStage1Last = "stage1-last.ckpt";
inline constexpr const char* kStage2Best = "stage2-best.ckpt";
inline constexpr const char* kStage2Last = "stage2-last.ckpt";
inline constexpr const char* kTrainLog = "train.jsonl";

inline constexpr std::uint64_t kStage1Salt = 0x7331;
inline constexpr std::uint64_t kStage2Salt = 0x7332;

struct LossReport {
  double pred = 0;    // mean -log p(target | context) over the batch
  double recon = 0;   // tokenizer objective on the batch images; 0 unless lambda > 0
  double lambda = 0;
  double total = 0;   // pred + lambda * recon
  vq::TokenizerLoss recon_terms;
  bool recon_evaluated = false;
  long step = 0;
};

template <class T>
struct TotalLoss {
  nn::Var var;
  LossReport report;
};

/// The stage-2 objective on one batch. With lambda > 0 the tokenizer's own
/// objective on `recon_images` joins the graph; with lambda = 0 the
/// tokenizer is not touched.
template <class T>
TotalLoss<T> compute_total_loss(nn::Graph<T>& g, model::Reasoner<T>& rsn, const model::CodeBatch& batch,
                                std::span<const Codes> targets, double lambda, vq::Tokenizer<T>* tok = nullptr,
                                std::span<const Image> recon_images = {}) {
  if (targets.empty()) throw ArgumentError("compute_total_loss: empty batch");
  if (!(lambda >= 0)) throw ArgumentError("compute_total_loss: lambda must be non-negative");
  TotalLoss<T> out;
  out.report.lambda = lambda;
  nn::Var pred = rsn.prediction_loss(g, batch, targets);
  out.report.pred = static_cast<double>(g.value(pred)(0, 0));
  out.var = pred;
  if (lambda > 0) {
    if (!tok || recon_images.empty()) throw ArgumentError("compute_total_loss: lambda > 0 needs the tokenizer and images");
    const auto& tc = tok->config();
    nn::Var x = g.constant(vq::stack_images<T>(recon_images, tc.height, tc.width));
    nn::Var rec = tok->loss_graph(g, x, static_cast<int>(recon_images.size()), &out.report.recon_terms);
    out.report.recon = out.report.recon_terms.total;
    out.report.recon_evaluated = true;
    out.var = nn::add(g, pred, nn::scale(g, rec, static_cast<T>(lambda)));
  }
  out.report.total = out.report.pred + lambda * out.report.recon;
  return out;
}

/// Where progress goes. `log` receives human-readable lines; the JSONL
/// record is always written next to the checkpoints.
struct Hooks {
  std::ostream* log = nullptr;
  bool resume = false;
  /// Called after every completed epoch with (stage, epoch); returning false
  /// stops the run there as if interrupted. Used to exercise --resume.
  std::function<bool(int, int)> keep_going;
};

namespace detail {

class RunLog {
 public:
  RunLog(const fs::path& dir, bool append, std::ostream* human) : human_(human) {
    fs::create_directories(dir);
    file_.open(dir / kTrainLog, append ? std::ios::app : std::ios::trunc);
    if (!file_) throw StateError("cannot open training log in " + dir.string());
  }

  void record(nlohmann::ordered_json j) {
    j["wall"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    file_ << j.dump() << "\n";
    file_.flush();
  }

  void say(const std::string& line) {
    if (human_) *human_ << line << std::endl;
  }

 private:
  std::ofstream file_;
  std::ostream* human_;
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(p));
  return p;
}

/// Writes the offending batch reference next to the checkpoints and throws.
[[noreturn]] inline void abort_non_finite(const fs::path& dir, int stage, int epoch, std::size_t batch,
                                          const std::vector<std::uint64_t>& ids, const std::string& what) {
  nlohmann::ordered_json j;
  j["stage"] = stage;
  j["epoch"] = epoch;
  j["batch"] = batch;
  j["problem_ids"] = ids;
  j["loss"] = what;
  const fs::path dump = dir / ("nonfinite-stage" + std::to_string(stage) + ".json");
  write_file_bytes(dump, j.dump(2) + "\n");
  throw NumericalError("non-finite loss (" + what + ") at stage " + std::to_string(stage) + " epoch " +
                       std::to_string(epoch) + " batch " + std::to_string(batch) + "; batch reference in " +
                       dump.string());
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace detail

// ------------------------------------------------------------------ stage 1

struct Stage1Result {
  fs::path best;
  fs::path last;
  int best_epoch = 0;
  double best_mse = 0;
  std::vector<double> epoch_mse;  // validation MSE per epoch run in this call
};

/// One image per training problem per epoch, drawn uniformly from its
/// panel and candidates; batches in a per-epoch shuffled order.
inline std::vector<Scene> stage1_epoch_images(const Split& train, std::uint64_t seed, int epoch) {
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(epoch), kStage1Salt));
  const auto order = detail::permutation(train.size(), rng);
  std::vector<Scene> out;
  out.reserve(order.size());
  for (std::size_t i : order) {
    const auto& r = train.records()[i];
    const std::size_t k = rng.below(r.panel.size() + r.candidates.size());
    out.push_back(k < r.panel.size() ? r.panel[k] : r.candidates[k - r.panel.size()]);
  }
  return out;
}

inline nn::Checkpoint tokenizer_checkpoint(const RunConfig& cfg, vq::Tokenizer<float>& tok) {
  nn::Checkpoint c;
  c.kind = kTokenizerKind;
  stamp(c, cfg);
  nn::store_params(c, tok.params());
  c.meta["codebook_hash"] = nn::tensor_hash(tok.codebook().value);
  return c;
}

/// Tokenizer pretraining. Keeps the checkpoint with the lowest validation
/// reconstruction MSE and the last one (with optimizer state, for resume).
inline Stage1Result pretrain_tokenizer(const RunConfig& cfg, const Split& train, const Split& valid, const fs::path& dir,
                                       const Hooks& hooks = {}) {
  cfg.validate();
  if (train.empty()) throw ArgumentError("pretrain_tokenizer: training split is empty");
  if (valid.empty()) throw ArgumentError("pretrain_tokenizer: validation split is empty");
  detail::RunLog log(dir, hooks.resume, hooks.log);
  vq::Tokenizer<float> tok(cfg.tokenizer(), tokenizer_seed(cfg));
  const auto params = tok.params();
  nn::Adam<float> opt({.lr = cfg.train.stage1_lr, .clip_norm = cfg.train.clip});

  Stage1Result res;
  res.best = dir / kStage1Best;
  res.last = dir / kStage1Last;
  int start = 1;
  double best = std::numeric_limits<double>::infinity();
  if (hooks.resume && fs::exists(res.last)) {
    const nn::Checkpoint c = nn::load_checkpoint(res.last);
    if (c.get("config_hash") != cfg.hash()) throw ConfigError("cannot resume: " + res.last.string() + " is from another config");
    nn::load_params(c, params, res.last.string());
    nn::load_adam(c, opt);
    start = std::stoi(c.get("epoch")) + 1;
    res.best_epoch = std::stoi(c.get("best_epoch"));
    best = std::stod(c.get("best_mse"));
    log.say("stage 1: resuming after epoch " + std::to_string(start - 1));
    log.record({{"stage", 1}, {"event", "resume"}, {"epoch", start - 1}});
  }

  std::vector<Image> valid_images;
  for (const Scene& s : valid.scenes()) valid_images.push_back(valid.image(s));
  const std::size_t bs = cfg.train.stage1_batch;
  const auto& tc = tok.config();

  const auto save = [&](const fs::path& path, int epoch, double mse, bool with_opt) {
    nn::Checkpoint c = tokenizer_checkpoint(cfg, tok);
    c.meta["stage"] = "1";
    c.meta["epoch"] = std::to_string(epoch);
    c.meta["valid_mse"] = detail::fmt(mse);
    c.meta["best_epoch"] = std::to_string(res.best_epoch);
    c.meta["best_mse"] = std::isfinite(best) ? detail::show(best) : "inf";
    if (with_opt) nn::store_adam(c, opt);
    nn::save_checkpoint(c, path);
  };

  if (start == 1 && cfg.train.stage1_epochs == 0) {
    const double mse = tok.reconstruction_mse(valid_images);
    best = mse;
    res.best_mse = mse;
    save(res.best, 0, mse, false);
    save(res.last, 0, mse, true);
    return res;
  }

  for (int epoch = start; epoch <= cfg.train.stage1_epochs; ++epoch) {
    const auto scenes = stage1_epoch_images(train, cfg.train.seed, epoch);
    double epoch_loss = 0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b * bs < scenes.size(); ++b) {
      const std::size_t lo = b * bs, hi = std::min(scenes.size(), lo + bs);
      std::vector<Image> imgs;
      for (std::size_t i = lo; i < hi; ++i) imgs.push_back(train.image(scenes[i]));
      nn::Graph<float> g;
      vq::TokenizerLoss rep;
      nn::Var loss = tok.loss_graph(g, g.constant(vq::stack_images<float>(imgs, tc.height, tc.width)),
                                    static_cast<int>(imgs.size()), &rep);
      if (!std::isfinite(rep.total)) {
        std::vector<std::uint64_t> ids;
        for (std::size_t i = lo; i < hi; ++i) ids.push_back(raven::scene_index(scenes[i]));
        detail::abort_non_finite(dir, 1, epoch, b, ids, detail::fmt(rep.total));
      }
      g.backward(loss);
      const double gnorm = opt.step(params);
      epoch_loss += rep.total;
      ++batches;
      if (opt.step_count() % static_cast<long>(cfg.train.log_every) == 0) {
        log.record({{"stage", 1}, {"epoch", epoch}, {"step", opt.step_count()}, {"loss", rep.total},
                    {"recon", rep.recon}, {"codebook", rep.codebook}, {"commitment", rep.commitment},
                    {"grad_norm", gnorm}});
      }
    }
    const double mse = tok.reconstruction_mse(valid_images);
    res.epoch_mse.push_back(mse);
    const bool improved = mse < best;
    if (improved) {
      best = mse;
      res.best_epoch = epoch;
    }
    log.record({{"stage", 1}, {"epoch", epoch}, {"event", "epoch"}, {"train_loss", epoch_loss / batches},
                {"valid_mse", mse}, {"best_epoch", res.best_epoch}});
    log.say("stage 1 epoch " + std::to_string(epoch) + ": loss " + detail::fmt(epoch_loss / batches) +
            " valid mse " + detail::fmt(mse) + (improved ? " *" : ""));
    if (improved) save(res.best, epoch, mse, false);
    save(res.last, epoch, mse, true);
    if (hooks.keep_going && !hooks.keep_going(1, epoch)) break;
  }
  res.best_mse = best;
  return res;
}

// ------------------------------------------------------------------ stage 2

struct Stage2Result {
  fs::path best;
  fs::path last;
  int best_epoch = 0;
  double best_accuracy = 0;
  int epochs_run = 0;
  bool stopped_early = false;
  std::vector<double> epoch_accuracy;
};

/// Training examples of one stage-2 epoch: for each problem in shuffled
/// order a target position uniform over the 9 panel cells; the other eight
/// cells form the context.
struct Stage2Example {
  std::size_t problem;
  int target;
};

inline std::vector<Stage2Example> stage2_epoch_examples(const Split& train, std::uint64_t seed, int epoch) {
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(epoch), kStage2Salt));
  const auto order = detail::permutation(train.size(), rng);
  std::vector<Stage2Example> out;
  out.reserve(order.size());
  for (std::size_t i : order) {
    out.push_back({i, static_cast<int>(rng.below(train.records()[i].panel.size()))});
  }
  return out;
}

inline nn::Checkpoint model_checkpoint(const RunConfig& cfg, Model& m) {
  nn::Checkpoint c;
  c.kind = kModelKind;
  stamp(c, cfg);
  nn::store_params(c, m.tokenizer->params());
  nn::store_params(c, m.reasoner->params());
  c.meta["codebook_hash"] = m.codebook_hash();
  return c;
}

/// Every tokenizer tensor's digest, for the freeze check.
inline std::string tokenizer_bytes_hash(vq::Tokenizer<float>& tok) {
  Sha256 h;
  for (const auto* p : tok.params()) h.update(p->name).update(nn::tensor_hash(p->value));
  return h.hex();
}

/// Reasoner training on top of a pretrained tokenizer. Refuses to start when
/// the tokenizer checkpoint was produced under a different tokenizer
/// configuration. Validation is RPM selection accuracy on `valid`; the
/// best-accuracy checkpoint is kept, and training stops after
/// `patience` epochs without improvement.
inline Stage2Result train_reasoner(const RunConfig& cfg, const Split& train, const Split& valid,
                                   const fs::path& tokenizer_ckpt, const fs::path& dir, const Hooks& hooks = {}) {
  cfg.validate();
  if (train.empty() || valid.empty()) throw ArgumentError("train_reasoner: empty split");
  const nn::Checkpoint tc = nn::load_checkpoint(tokenizer_ckpt);
  if (tc.kind != kTokenizerKind) throw ArgumentError(tokenizer_ckpt.string() + " is not a tokenizer checkpoint");
  if (tc.get("tokenizer_hash") != cfg.tokenizer_hash()) {
    throw ConfigError("tokenizer checkpoint " + tokenizer_ckpt.string() +
                      " was trained under a different configuration; refusing to start");
  }
  detail::RunLog log(dir, hooks.resume, hooks.log);
  Model m(cfg);
  nn::load_params(tc, m.tokenizer->params(), tokenizer_ckpt.string());
  const bool joint = cfg.train.lambda > 0;
  m.tokenizer->set_frozen(!joint);
  const std::string tok_before = tokenizer_bytes_hash(*m.tokenizer);

  nn::ParamList<float> params = m.reasoner->params();
  if (joint) {
    for (auto* p : m.tokenizer->params()) params.push_back(p);
  }
  nn::Adam<float> opt({.lr = cfg.train.stage2_lr, .clip_norm = cfg.train.clip});

  Stage2Result res;
  res.best = dir / kStage2Best;
  res.last = dir / kStage2Last;
  int start = 1;
  double best = -1;
  int since_best = 0;
  if (hooks.resume && fs::exists(res.last)) {
    const nn::Checkpoint c = nn::load_checkpoint(res.last);
    if (c.get("config_hash") != cfg.hash()) throw ConfigError("cannot resume: " + res.last.string() + " is from another config");
    nn::load_params(c, m.tokenizer->params(), res.last.string());
    nn::load_params(c, m.reasoner->params(), res.last.string());
    nn::load_adam(c, opt);
    start = std::stoi(c.get("epoch")) + 1;
    res.best_epoch = std::stoi(c.get("best_epoch"));
    best = std::stod(c.get("best_accuracy"));
    since_best = std::stoi(c.get("since_best"));
    if (c.get("done") == "1") start = cfg.train.stage2_epochs + 1;
    log.say("stage 2: resuming after epoch " + std::to_string(start - 1));
    log.record({{"stage", 2}, {"event", "resume"}, {"epoch", start - 1}});
  }

  // Frozen tokenizer: every scene's codes are fixed, compute them once.
  std::map<std::size_t, Codes> codes;
  const auto encode_scenes = [&](const Split& s) {
    std::vector<Scene> scenes;
    std::vector<Image> imgs;
    for (const Scene& sc : s.scenes()) {
      if (codes.count(raven::scene_index(sc))) continue;
      scenes.push_back(sc);
      imgs.push_back(s.image(sc));
    }
    for (std::size_t i = 0; i < imgs.size(); i += 128) {
      const auto part = std::span<const Image>(imgs).subspan(i, std::min<std::size_t>(128, imgs.size() - i));
      const auto pc = m.tokenizer->encode(part);
      for (std::size_t j = 0; j < pc.size(); ++j) codes[raven::scene_index(scenes[i + j])] = pc[j].indices;
    }
  };
  if (!joint) encode_scenes(train);

  const Split valid_view = valid.head(cfg.train.valid_limit);
  const auto save = [&](const fs::path& path, int epoch, double acc, bool with_opt, bool done) {
    nn::Checkpoint c = model_checkpoint(cfg, m);
    c.meta["stage"] = "2";
    c.meta["epoch"] = std::to_string(epoch);
    c.meta["valid_accuracy"] = detail::show(acc);
    c.meta["best_epoch"] = std::to_string(res.best_epoch);
    c.meta["best_accuracy"] = detail::show(best);
    c.meta["since_best"] = std::to_string(since_best);
    c.meta["done"] = done ? "1" : "0";
    c.meta["tokenizer_checkpoint_hash"] = tc.get("codebook_hash");
    if (with_opt) nn::store_adam(c, opt);
    nn::save_checkpoint(c, path);
  };
  const auto validate_now = [&] {
    return validate(m.estimator(), valid_view, TaskKind::kRpm).accuracy();
  };

  if (start == 1 && cfg.train.stage2_epochs == 0) {
    best = validate_now();
    save(res.best, 0, best, false, true);
    save(res.last, 0, best, true, true);
    res.best_accuracy = best;
    return res;
  }

  const std::size_t bs = cfg.train.stage2_batch;
  for (int epoch = start; epoch <= cfg.train.stage2_epochs; ++epoch) {
    const auto examples = stage2_epoch_examples(train, cfg.train.seed, epoch);
    double epoch_loss = 0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b * bs < examples.size(); ++b) {
      const std::size_t lo = b * bs, hi = std::min(examples.size(), lo + bs);
      if (joint) {
        // Codes follow the tokenizer as it trains.
        codes.clear();
      }
      model::CodeBatch batch;
      std::vector<Codes> targets;
      std::vector<Image> recon_images;
      std::vector<Scene> batch_scenes;
      std::vector<std::uint64_t> ids;
      std::map<std::size_t, bool> in_batch;
      const auto codes_of = [&](const Scene& s) -> const Codes& {
        const std::size_t k = raven::scene_index(s);
        if (joint && !codes.count(k)) {
          codes[k] = m.tokenizer->encode(train.image(s)).indices;
        }
        if (joint && in_batch.emplace(k, true).second) recon_images.push_back(train.image(s));
        return codes.at(k);
      };
      for (std::size_t i = lo; i < hi; ++i) {
        const auto& r = train.records()[examples[i].problem];
        ids.push_back(r.id);
        model::ContextRef ctx;
        ctx.target_slot = examples[i].target;
        for (int s = 0; s < static_cast<int>(r.panel.size()); ++s) {
          if (s == examples[i].target) continue;
          ctx.images.push_back(batch.add_image(codes_of(r.panel[static_cast<std::size_t>(s)])));
          ctx.slots.push_back(s);
        }
        batch.contexts.push_back(std::move(ctx));
        targets.push_back(codes_of(r.panel[static_cast<std::size_t>(examples[i].target)]));
      }
      nn::Graph<float> g;
      auto loss = compute_total_loss<float>(g, *m.reasoner, batch, targets, cfg.train.lambda, m.tokenizer.get(),
                                            recon_images);
      if (!std::isfinite(loss.report.total)) detail::abort_non_finite(dir, 2, epoch, b, ids, detail::fmt(loss.report.total));
      g.backward(loss.var);
      const double gnorm = opt.step(params);
      loss.report.step = opt.step_count();
      epoch_loss += loss.report.total;
      ++batches;
      if (opt.step_count() % static_cast<long>(cfg.train.log_every) == 0) {
        log.record({{"stage", 2}, {"epoch", epoch}, {"step", loss.report.step}, {"loss", loss.report.total},
                    {"pred", loss.report.pred}, {"recon", loss.report.recon}, {"lambda", loss.report.lambda},
                    {"grad_norm", gnorm}});
      }
    }
    res.epochs_run = epoch;
    const bool validate_epoch = epoch % cfg.train.valid_every == 0 || epoch == cfg.train.stage2_epochs;
    double acc = -1;
    bool improved = false;
    if (validate_epoch) {
      acc = validate_now();
      res.epoch_accuracy.push_back(acc);
      improved = acc > best;
      if (improved) {
        best = acc;
        res.best_epoch = epoch;
        since_best = 0;
      } else {
        since_best += cfg.train.valid_every;
      }
    }
    const bool stop = since_best >= cfg.train.patience;
    nlohmann::ordered_json rec{{"stage", 2}, {"epoch", epoch}, {"event", "epoch"}, {"train_loss", epoch_loss / batches}};
    if (validate_epoch) rec["valid_accuracy"] = acc;
    rec["best_epoch"] = res.best_epoch;
    log.record(rec);
    log.say("stage 2 epoch " + std::to_string(epoch) + ": loss " + detail::fmt(epoch_loss / batches) +
            (validate_epoch ? " valid acc " + detail::fmt(acc) : std::string()) + (improved ? " *" : ""));
    if (improved) save(res.best, epoch, acc, false, false);
    save(res.last, epoch, acc, true, stop || epoch == cfg.train.stage2_epochs);
    if (stop) {
      res.stopped_early = true;
      log.say("stage 2: no improvement for " + std::to_string(since_best) + " epochs, stopping");
      log.record({{"stage", 2}, {"event", "early_stop"}, {"epoch", epoch}});
      break;
    }
    if (hooks.keep_going && !hooks.keep_going(2, epoch)) break;
  }
  res.best_accuracy = best;
  if (!joint && tokenizer_bytes_hash(*m.tokenizer) != tok_before) {
    throw StateError("tokenizer weights changed during stage 2 with lambda = 0");
  }
  return res;
}

}  // namespace ucgs::train
