#include "corella/runner.hpp"

#include <unordered_map>

namespace corella {

ProcessedDataset build_dataset_from_config(const RunConfig& cfg) {
  if (cfg.dataset == "prepared") {
    return read_processed(cfg.data_dir);
  }
  DatasetSplit split;
  if (cfg.dataset == "synthetic") {
    split = synthetic_split(cfg.synthetic_config());
  } else if (cfg.dataset == "movielens") {
    split = chronological_split(load_movielens(cfg.data_dir).interactions);
  } else if (cfg.dataset == "amazon_books") {
    split = chronological_split(load_amazon_books(cfg.data_dir).interactions);
  } else {
    throw ConfigError("unsupported dataset '" + cfg.dataset + "'");
  }
  return build_dataset(split, cfg.transform_options());
}

TrainedModels train_pipeline(const RunConfig& cfg, const ProcessedDataset& data) {
  const ModelSeeds seeds = cfg.model_seeds();
  CrmModel crm(data.vocab.cardinalities(), data.vocab.field_names(), cfg.crm_config(), seeds.crm);
  LlmSurrogate llm(cfg.llm_config(data.tokenizer.vocab_size()), seeds.llm);
  ProjectionHeads heads(cfg.alignment_config(), cfg.llm_d_model, crm.input_dim(), seeds.heads);

  TrainingPlan plan = cfg.training_plan();
  resolve_subsets(plan, data.train.size());

  std::vector<LogStep> log;
  stage1_warmup(crm, data, plan, log);
  const Stage2Result s2 = stage2_joint(crm, llm, heads, data, cfg.alignment_config(), plan, log);
  stage3_llm_continue(llm, data, plan, log);
  return TrainedModels{std::move(crm), std::move(llm), std::move(heads), std::move(log), s2};
}

RouterConfig resolve_router(const RunConfig& cfg, const CrmModel& crm,
                            const ProcessedDataset& data) {
  RouterConfig router = cfg.router_config();
  if (router.mode == RouterConfig::Mode::Absolute && router.tau < 0.0) {
    std::vector<std::vector<int>> ids;
    ids.reserve(data.valid.size());
    for (const auto& s : data.valid) ids.push_back(s.id_input);
    std::vector<double> ent;
    ent.reserve(ids.size());
    for (double p : crm.predict(ids)) ent.push_back(entropy(p));
    router.tau = calibrate_tau(std::move(ent), router.rho);
  }
  return router;
}

EvaluationReport evaluate_models(const RunConfig& cfg, const CrmModel& crm,
                                 const LlmSurrogate& llm, const ProcessedDataset& data) {
  const RouterConfig router = resolve_router(cfg, crm, data);
  const MixupResult mixed = mixup_inference(crm, llm, data.test, router);

  std::vector<int> labels;
  labels.reserve(data.test.size());
  for (const auto& s : data.test) labels.push_back(s.label);

  std::vector<double> crm_scores, final_scores;
  std::vector<int> routed_labels;
  std::vector<double> routed_scores;
  crm_scores.reserve(labels.size());
  final_scores.reserve(labels.size());
  for (std::size_t i = 0; i < mixed.predictions.size(); ++i) {
    const Prediction& p = mixed.predictions[i];
    crm_scores.push_back(p.y_crm);
    final_scores.push_back(p.y_final);
    if (p.routed) {
      routed_labels.push_back(labels[i]);
      routed_scores.push_back(*p.y_llm);
    }
  }

  EvaluationReport report;
  report.crm_only = evaluate(labels, crm_scores);
  if (!routed_labels.empty()) {
    report.llm_on_routed = evaluate(routed_labels, routed_scores);
  }
  report.corella = evaluate(labels, final_scores);
  report.n = labels.size();
  report.routed = routed_labels.size();
  report.llm_calls = mixed.llm_calls;
  report.router_mode = cfg.router_mode;
  report.rho = router.rho;
  report.tau = router.mode == RouterConfig::Mode::Absolute ? router.tau : -1.0;
  return report;
}

std::vector<GroupMetrics> analyze_groups(const RunConfig& cfg, const CrmModel& crm,
                                         const LlmSurrogate& llm, const ProcessedDataset& data,
                                         int k) {
  const RouterConfig router = resolve_router(cfg, crm, data);
  const MixupResult mixed = mixup_inference(crm, llm, data.test, router);

  std::vector<int> labels;
  labels.reserve(data.test.size());
  for (const auto& s : data.test) labels.push_back(s.label);

  // LLM scores for every sample (not only routed ones) for the llm scorer.
  std::unordered_map<int, double> llm_score;
  for (const auto& s : data.test) llm_score.emplace(s.sample_id, llm.predict_prob(s.text_tokens));

  std::vector<GroupMetrics> out;
  const auto crm_rows = confidence_groups(mixed.predictions, labels, k, "crm",
                                          [](const Prediction& p) { return p.y_crm; });
  const auto llm_rows = confidence_groups(mixed.predictions, labels, k, "llm",
                                          [&](const Prediction& p) { return llm_score.at(p.sample_id); });
  const auto mix_rows = confidence_groups(mixed.predictions, labels, k, "mixed",
                                          [](const Prediction& p) { return p.y_final; });
  out.insert(out.end(), crm_rows.begin(), crm_rows.end());
  out.insert(out.end(), llm_rows.begin(), llm_rows.end());
  out.insert(out.end(), mix_rows.begin(), mix_rows.end());
  return out;
}

void write_resolved_config(const RunConfig& cfg, const std::filesystem::path& dir) {
  write_text_file(dir / "resolved.cfg", cfg.serialize());
}

namespace {
std::string run_tag(const RunConfig& cfg, const std::string& stage) {
  return "seed-" + std::to_string(cfg.seed) + "/" + cfg.dataset + "/" + stage;
}
}  // namespace

void save_model_checkpoint(const std::filesystem::path& path, const CrmModel& crm,
                           const LlmSurrogate& llm, const RunConfig& cfg,
                           const Stage2Result& stage2) {
  std::vector<std::pair<std::string, ad::Tensor>> arrays = crm.named_params();
  const auto llm_params = llm.named_params();
  arrays.insert(arrays.end(), llm_params.begin(), llm_params.end());
  CheckpointInfo info;
  info.created = run_tag(cfg, "stage3");
  info.seed = cfg.seed;
  info.stage = "stage3";
  info.step = stage2.best_step;
  info.metrics["stage2_best_val_auc"] = stage2.best_val_auc;
  save_checkpoint(path, arrays, info);
}

void save_train_state(const std::filesystem::path& path, const ProjectionHeads& heads,
                      const RunConfig& cfg) {
  CheckpointInfo info;
  info.created = run_tag(cfg, "train-state");
  info.seed = cfg.seed;
  info.stage = "stage2";
  save_checkpoint(path, heads.named_params(), info);
}

void load_model_checkpoint(const std::filesystem::path& path, CrmModel& crm, LlmSurrogate& llm) {
  const LoadedCheckpoint ckpt = load_checkpoint(path);
  apply_arrays(crm.named_params(), ckpt);
  apply_arrays(llm.named_params(), ckpt);
}

AblationInputs ablation_inputs(const RunConfig& cfg, const ProcessedDataset& data) {
  AblationInputs in;
  in.data = &data;
  in.crm_cfg = cfg.crm_config();
  in.llm_cfg = cfg.llm_config(data.tokenizer.vocab_size());
  in.align_cfg = cfg.alignment_config();
  in.plan = cfg.training_plan();
  resolve_subsets(in.plan, data.train.size());
  in.router = cfg.router_config();
  if (in.router.mode == RouterConfig::Mode::Absolute && in.router.tau < 0.0) {
    throw ConfigError("ablation with absolute router mode needs an explicit router.tau");
  }
  in.seeds = cfg.model_seeds();
  return in;
}

}  // namespace corella
