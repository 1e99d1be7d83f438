#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "corella/alignment.hpp"
#include "corella/crm.hpp"
#include "corella/data.hpp"
#include "corella/llm.hpp"
#include "corella/metrics.hpp"
#include "corella/router.hpp"

namespace corella {

// Training aborted on a non-finite loss; carries the last finite step.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& msg, int last_finite_step)
      : std::runtime_error(msg), last_finite_step(last_finite_step) {}
  int last_finite_step;
};

struct Stage1Plan {
  int epochs = 6;
  int batch_size = 256;
  double lr = 1e-3;
  double weight_decay = 0.0;
};

struct Stage2Plan {
  int epochs = 4;
  int batch_size = 32;
  int subset_count = 25000;
  double subset_fraction = 0.0;   // used instead of subset_count when > 0
  double subset_cap = 0.05;       // absolute counts are capped at this train share
  int patience = 3;               // validation checks without CRM improvement
  LossWeights weights{1.0, 1.0, 0.1};
  double crm_lr = 1e-4;
  double llm_lr = 1e-3;
};

struct Stage3Plan {
  int epochs = 4;
  int batch_size = 32;
  int subset_count = 25000;
  double subset_fraction = 0.0;
  double subset_cap = 0.05;
  double lr = 1e-3;
};

struct TrainingPlan {
  Stage1Plan stage1;
  Stage2Plan stage2;
  Stage3Plan stage3;
  std::uint64_t seed = 42;
  std::vector<int> subset2_ids;  // resolved train indices, disjoint from subset3
  std::vector<int> subset3_ids;
};

// Fills subset2_ids / subset3_ids as a pure function of (seed, train size):
// one seeded shuffle, the two subsets are disjoint prefixes.
void resolve_subsets(TrainingPlan& plan, std::size_t train_size);

struct LogStep {
  int stage = 0;
  int step = 0;  // global optimizer-step counter within the stage
  double l_llm = 0.0;
  double l_crm = 0.0;
  double l_cal = 0.0;
  double total = 0.0;
  std::optional<double> val_auc;
};

// Stage 1: CRM warm-up on the full train split, weights (0,1,0); the
// best-validation-AUC parameters are restored at the end.
void stage1_warmup(CrmModel& crm, const ProcessedDataset& data, const TrainingPlan& plan,
                   std::vector<LogStep>& log);

struct Stage2Result {
  double best_val_auc = 0.0;
  int best_step = 0;
};

// Stage 2: joint training of CRM, LLM and the projection heads on subset2
// under the full weighted objective. The CRM is snapshotted at every
// validation improvement; when patience runs out (or epochs end) the best
// CRM snapshot is restored while the LLM keeps its latest parameters.
Stage2Result stage2_joint(CrmModel& crm, LlmSurrogate& llm, ProjectionHeads& heads,
                          const ProcessedDataset& data, const AlignmentConfig& align,
                          const TrainingPlan& plan, std::vector<LogStep>& log);

// Stage 3: LLM continues alone on subset3 with weights (1,0,0). CRM and heads
// are never touched.
void stage3_llm_continue(LlmSurrogate& llm, const ProcessedDataset& data,
                         const TrainingPlan& plan, std::vector<LogStep>& log);

// Graph-free LLM probabilities for a set of samples.
std::vector<double> llm_predict(const LlmSurrogate& llm,
                                std::span<const DualModalitySample> samples);

double crm_validation_auc(const CrmModel& crm, std::span<const DualModalitySample> samples);

// ---- ablations -----------------------------------------------------------------

enum class AblationVariant { Full, NoS1, NoS2, NoS3, NoMix };
std::string variant_name(AblationVariant v);
const std::vector<AblationVariant>& all_variants();

struct VariantReport {
  std::string variant;
  EvalResult metrics;  // of the final (mixed or CRM-only) scores on test
};

struct ModelSeeds {
  std::uint64_t crm = 0;
  std::uint64_t llm = 0;
  std::uint64_t heads = 0;
};

struct AblationInputs {
  const ProcessedDataset* data = nullptr;
  CrmConfig crm_cfg;
  LlmConfig llm_cfg;
  AlignmentConfig align_cfg;
  TrainingPlan plan;
  RouterConfig router;
  ModelSeeds seeds;
};

// Runs one variant from freshly seeded models and returns its test metrics.
VariantReport run_variant(AblationVariant v, const AblationInputs& in,
                          std::vector<LogStep>* log = nullptr);

// All five variants with shared seeds and subsets; rows in canonical order
// full, no_s1, no_s2, no_s3, no_mix.
std::vector<VariantReport> run_ablation(const AblationInputs& in);

}  // namespace corella
