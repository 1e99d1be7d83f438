#pragma once

#include <filesystem>
#include <vector>

#include "corella/checkpoint.hpp"
#include "corella/config.hpp"
#include "corella/reports.hpp"

namespace corella {

// Dataset resolution for every CLI command: synthetic generation, raw
// MovieLens / Amazon loading, or the canonical processed files.
ProcessedDataset build_dataset_from_config(const RunConfig& cfg);

struct TrainedModels {
  CrmModel crm;
  LlmSurrogate llm;
  ProjectionHeads heads;
  std::vector<LogStep> log;
  Stage2Result stage2;
};

// The staged protocol from a config: warm-up, joint training, continuation.
TrainedModels train_pipeline(const RunConfig& cfg, const ProcessedDataset& data);

// Router config with tau resolved from the validation split when absolute
// mode is requested without an explicit threshold.
RouterConfig resolve_router(const RunConfig& cfg, const CrmModel& crm,
                            const ProcessedDataset& data);

EvaluationReport evaluate_models(const RunConfig& cfg, const CrmModel& crm,
                                 const LlmSurrogate& llm, const ProcessedDataset& data);

// Figure-style per-tertile analysis: CRM, LLM and mixed scores per
// entropy-ranked group over the test split.
std::vector<GroupMetrics> analyze_groups(const RunConfig& cfg, const CrmModel& crm,
                                         const LlmSurrogate& llm, const ProcessedDataset& data,
                                         int k = 3);

// Artifact writers (every artifact-producing command puts resolved.cfg next
// to its outputs).
void write_resolved_config(const RunConfig& cfg, const std::filesystem::path& dir);
void save_model_checkpoint(const std::filesystem::path& path, const CrmModel& crm,
                           const LlmSurrogate& llm, const RunConfig& cfg,
                           const Stage2Result& stage2);
void save_train_state(const std::filesystem::path& path, const ProjectionHeads& heads,
                      const RunConfig& cfg);
void load_model_checkpoint(const std::filesystem::path& path, CrmModel& crm, LlmSurrogate& llm);

AblationInputs ablation_inputs(const RunConfig& cfg, const ProcessedDataset& data);

}  // namespace corella
