// ucgs: dataset generation, training, evaluation, answer generation and
// oracle checks from one binary. Exit codes: 0 ok, 1 runtime failure,
// 2 usage error.

#include <iostream>

#include <CLI11.hpp>

#include "ucgs/cli/commands.hpp"

namespace {

using namespace ucgs;
using cli::ExitCode;

struct ConfigFlags {
  std::string path;
  std::string preset = "default";
  std::vector<std::string> overrides;

  void add(CLI::App* cmd) {
    cmd->add_option("--config", path, "Run configuration file (key = value)");
    cmd->add_option("--preset", preset, "Base configuration: default or paper");
    cmd->add_option("--set", overrides, "Override one key, key=value (repeatable)");
  }

  train::RunConfig load() const {
    train::RunConfig cfg = train::preset(preset);
    if (!path.empty()) cfg = train::parse_config(read_file_bytes(path), cfg);
    for (const auto& o : overrides) train::apply_override(cfg, o);
    return cfg;
  }
};

std::optional<raven::TaskKind> task_flag(const std::string& s) {
  if (s.empty()) return std::nullopt;
  try {
    return raven::task_from_string(s);
  } catch (const std::exception&) {
    throw cli::UsageError("unknown task '" + s + "' (expected rpm, vap, o3 or svrt)");
  }
}

int run(int argc, char** argv) {
  CLI::App app{"Conditional generative solver for abstract visual reasoning"};
  app.require_subcommand(1);

  // gen-data
  ConfigFlags gen_cfg;
  std::string gen_out;
  bool gen_force = false;
  std::optional<std::uint64_t> gen_seed;
  auto* gen = app.add_subcommand("gen-data", "Generate the train/valid/test splits and the derived test sets");
  gen_cfg.add(gen);
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_flag("--force", gen_force, "Overwrite datasets in a non-empty directory");
  gen->add_option("--seed", gen_seed, "Dataset seed (overrides data.seed)");

  // train
  ConfigFlags train_cfg;
  std::string train_data, train_out;
  bool train_resume = false;
  std::optional<std::uint64_t> train_seed;
  auto* tr = app.add_subcommand("train", "Pretrain the tokenizer, then train the reasoner");
  train_cfg.add(tr);
  tr->add_option("--data", train_data, "Directory written by gen-data")->required();
  tr->add_option("--out", train_out, "Run directory (overrides out.dir)");
  tr->add_flag("--resume", train_resume, "Continue from the last checkpoints in the run directory");
  tr->add_option("--seed", train_seed, "Training seed (overrides train.seed)");

  // eval
  cli::EvalOptions ev;
  std::string ev_task, ev_ckpt, ev_data, ev_report;
  std::optional<double> ev_temp;
  auto* eval = app.add_subcommand("eval", "Accuracy of a checkpoint (or the exact oracle) on one dataset");
  eval->add_option("--checkpoint", ev_ckpt, "Model checkpoint");
  eval->add_option("--data", ev_data, "Dataset directory")->required();
  eval->add_option("--task", ev_task, "rpm, vap, o3 or svrt (default: the dataset's task)");
  eval->add_option("--estimator", ev.estimator, "model or oracle");
  eval->add_option("--mode", ev.mode, "selective or generative");
  eval->add_option("--seed", ev.seed, "Sampling seed for generative mode");
  eval->add_option("--temperature", ev_temp, "Sampling temperature; <= 0 is greedy");
  eval->add_option("--limit", ev.limit, "Evaluate the first N problems only");
  eval->add_option("--report", ev_report, "Write a JSON report here");

  // generate
  cli::GenerateOptions go;
  std::string go_ckpt, go_data, go_out;
  std::optional<double> go_temp;
  auto* generate = app.add_subcommand("generate", "Render generated answers into 3x3 grids with verdicts");
  generate->add_option("--checkpoint", go_ckpt, "Model checkpoint")->required();
  generate->add_option("--data", go_data, "RPM dataset directory")->required();
  generate->add_option("--count", go.count, "Number of problems");
  generate->add_option("--seed", go.seed, "Sampling seed");
  generate->add_option("--temperature", go_temp, "Sampling temperature; <= 0 is greedy");
  generate->add_flag("--greedy", "Same as --temperature 0")->each([&](const std::string&) { go_temp = 0.0; });
  generate->add_option("--out", go_out, "Output directory")->required();

  // oracle-check
  cli::OracleCheckOptions oc;
  std::string oc_report;
  std::optional<std::size_t> oc_sample;
  auto* check = app.add_subcommand("oracle-check", "Check the judgment functions against exact enumeration");
  check->add_option("--universe", oc.universes, "rule:A:N or left+right:A:N (repeatable; default: built-in suite)");
  check->add_option("--sample", oc_sample, "Check a uniform sample of at most this many problems per proposition");
  check->add_option("--report", oc_report, "Write a JSON report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ExitCode::kOk : ExitCode::kUsage;
  }

  if (*gen) {
    auto cfg = gen_cfg.load();
    if (gen_seed) cfg.data.seed = *gen_seed;
    cli::gen_data(cfg, gen_out, gen_force, std::cout);
    return ExitCode::kOk;
  }
  if (*tr) {
    auto cfg = train_cfg.load();
    if (train_seed) cfg.train.seed = *train_seed;
    if (!train_out.empty()) cfg.out = train_out;
    cli::run_train(cfg, train_data, cfg.out, train_resume, std::cout);
    return ExitCode::kOk;
  }
  if (*eval) {
    ev.checkpoint = ev_ckpt;
    ev.data = ev_data;
    ev.task = task_flag(ev_task);
    ev.temperature = ev_temp;
    ev.report = ev_report;
    cli::run_eval(ev, std::cout);
    return ExitCode::kOk;
  }
  if (*generate) {
    go.checkpoint = go_ckpt;
    go.data = go_data;
    go.out = go_out;
    go.temperature = go_temp;
    cli::run_generate(go, std::cout);
    return ExitCode::kOk;
  }
  oc.sample = oc_sample;
  oc.report = oc_report;
  return cli::run_oracle_check(oc, std::cout).all_pass() ? ExitCode::kOk : ExitCode::kFailure;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const cli::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return ExitCode::kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return ExitCode::kUsage;
  } catch (const ArgumentError& e) {
    std::cerr << "argument error: " << e.what() << "\n";
    return ExitCode::kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return ExitCode::kFailure;
  }
}
