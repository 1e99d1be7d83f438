#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "corella/runner.hpp"

namespace fs = std::filesystem;
using namespace corella;

namespace {

struct CommonArgs {
  std::optional<std::string> config_path;
  std::vector<std::string> overrides;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "Config file (key = value lines)");
  cmd->add_option("--set", args.overrides, "Override, KEY=VALUE (repeatable)");
  cmd->add_option("--out", args.out_dir, "Output directory (overrides out.dir)");
  cmd->add_option("--seed", args.seed, "Seed (overrides the config seed)");
  cmd->add_flag("--quiet", args.quiet, "Suppress progress output");
}

RunConfig load_config(const CommonArgs& args) {
  std::optional<fs::path> path;
  if (args.config_path) path = *args.config_path;
  RunConfig cfg = RunConfig::load(path, args.overrides);
  if (args.out_dir) cfg.out_dir = *args.out_dir;
  if (args.seed) cfg.seed = *args.seed;
  return cfg;
}

void info(const CommonArgs& args, const std::string& msg) {
  if (!args.quiet) std::cout << msg << "\n";
}

std::string eval_line(const std::string& name, const EvalResult& r) {
  const std::string auc_str = r.auc ? format_metric(*r.auc) : "NA";
  return name + ": auc=" + auc_str + " logloss=" + format_metric(r.logloss) +
         " acc=" + format_metric(r.acc) + " n=" + std::to_string(r.n);
}

int cmd_prepare_data(const CommonArgs& args) {
  const RunConfig cfg = load_config(args);
  const ProcessedDataset data = build_dataset_from_config(cfg);
  const fs::path dir = fs::path(cfg.out_dir) / "data";
  write_processed(data, dir);
  write_resolved_config(cfg, cfg.out_dir);
  info(args, "wrote processed splits to " + dir.string() + " (train " +
                 std::to_string(data.train.size()) + ", valid " + std::to_string(data.valid.size()) +
                 ", test " + std::to_string(data.test.size()) + ")");
  return 0;
}

int cmd_train(const CommonArgs& args) {
  const RunConfig cfg = load_config(args);
  const ProcessedDataset data = build_dataset_from_config(cfg);
  info(args, "training on " + std::to_string(data.train.size()) + " samples (vocab " +
                 std::to_string(data.tokenizer.vocab_size()) + " tokens)");
  TrainedModels models = train_pipeline(cfg, data);
  const fs::path out = cfg.out_dir;
  fs::create_directories(out);
  save_model_checkpoint(out / "model.ckpt", models.crm, models.llm, cfg, models.stage2);
  save_train_state(out / "train_state.ckpt", models.heads, cfg);
  write_text_file(out / "runlog.jsonl", runlog_jsonl(models.log));
  write_resolved_config(cfg, out);
  info(args, "stage-2 best validation auc " + format_metric(models.stage2.best_val_auc));
  info(args, "wrote " + (out / "model.ckpt").string());
  return 0;
}

struct LoadedModels {
  CrmModel crm;
  LlmSurrogate llm;
};

LoadedModels load_models(const RunConfig& cfg, const ProcessedDataset& data) {
  const fs::path ckpt = fs::path(cfg.out_dir) / "model.ckpt";
  if (!fs::exists(ckpt)) {
    throw DataError("no checkpoint at " + ckpt.string() + "; run `corella train` first");
  }
  const ModelSeeds seeds = cfg.model_seeds();
  CrmModel crm(data.vocab.cardinalities(), data.vocab.field_names(), cfg.crm_config(), seeds.crm);
  LlmSurrogate llm(cfg.llm_config(data.tokenizer.vocab_size()), seeds.llm);
  load_model_checkpoint(ckpt, crm, llm);
  return {std::move(crm), std::move(llm)};
}

int cmd_evaluate(const CommonArgs& args) {
  const RunConfig cfg = load_config(args);
  const ProcessedDataset data = build_dataset_from_config(cfg);
  LoadedModels models = load_models(cfg, data);
  const EvaluationReport report = evaluate_models(cfg, models.crm, models.llm, data);
  const fs::path out = cfg.out_dir;
  write_text_file(out / "evaluation.json", evaluation_json(report));
  write_resolved_config(cfg, out);
  std::cout << eval_line("crm-only", report.crm_only) << "\n";
  std::cout << eval_line("llm-on-routed", report.llm_on_routed) << "\n";
  std::cout << eval_line("corella", report.corella) << "\n";
  info(args, "routed " + std::to_string(report.routed) + "/" + std::to_string(report.n) +
                 " samples (" + std::to_string(report.llm_calls) + " llm calls)");
  return 0;
}

int cmd_route_analyze(const CommonArgs& args) {
  const RunConfig cfg = load_config(args);
  const ProcessedDataset data = build_dataset_from_config(cfg);
  LoadedModels models = load_models(cfg, data);
  const auto groups = analyze_groups(cfg, models.crm, models.llm, data);
  const fs::path out = cfg.out_dir;
  write_text_file(out / "groups.csv", groups_csv(groups));
  write_text_file(out / "groups.json", groups_json(groups));
  write_resolved_config(cfg, out);
  info(args, "wrote " + (out / "groups.csv").string());
  return 0;
}

int cmd_ablate(const CommonArgs& args) {
  const RunConfig cfg = load_config(args);
  const ProcessedDataset data = build_dataset_from_config(cfg);
  const auto rows = run_ablation(ablation_inputs(cfg, data));
  const fs::path out = cfg.out_dir;
  write_text_file(out / "ablation.csv", ablation_csv(rows));
  write_text_file(out / "ablation.json", ablation_json(rows));
  write_resolved_config(cfg, out);
  for (const auto& r : rows) std::cout << eval_line(r.variant, r.metrics) << "\n";
  return 0;
}

int fail(int code, const char* kind, const std::exception& e) {
  nlohmann::json err;
  err["error"] = {{"code", code}, {"kind", kind}, {"message", e.what()}};
  std::cerr << err.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"corella: cascaded CTR prediction with an entropy router between a cross-network "
               "recommender and a small transformer"};
  app.require_subcommand(1);

  CommonArgs args;
  int (*handler)(const CommonArgs&) = nullptr;

  auto* prepare = app.add_subcommand("prepare-data", "Write the canonical processed splits");
  add_common(prepare, args);
  prepare->callback([&] { handler = &cmd_prepare_data; });

  auto* train = app.add_subcommand("train", "Run the staged training protocol");
  add_common(train, args);
  train->callback([&] { handler = &cmd_train; });

  auto* evaluate = app.add_subcommand("evaluate", "Evaluate crm-only / llm-on-routed / corella");
  add_common(evaluate, args);
  evaluate->callback([&] { handler = &cmd_evaluate; });

  auto* analyze = app.add_subcommand("route-analyze", "Confidence-group analysis CSV/JSON");
  add_common(analyze, args);
  analyze->callback([&] { handler = &cmd_route_analyze; });

  auto* ablate = app.add_subcommand("ablate", "Run the five-variant ablation report");
  add_common(ablate, args);
  ablate->callback([&] { handler = &cmd_ablate; });

  CLI11_PARSE(app, argc, argv);

  try {
    return handler(args);
  } catch (const ConfigError& e) {
    return fail(2, "config", e);
  } catch (const DataError& e) {
    return fail(3, "data", e);
  } catch (const DivergenceError& e) {
    return fail(4, "divergence", e);
  } catch (const std::exception& e) {
    return fail(1, "internal", e);
  }
}
