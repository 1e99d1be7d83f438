#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "corella/crm.hpp"
#include "corella/data.hpp"
#include "corella/llm.hpp"
#include "corella/metrics.hpp"

namespace corella {

// Prediction entropy of a probability (natural log), the confidence score.
// p is clamped to [1e-12, 1 - 1e-12]; NaN is rejected.
double entropy(double p);

struct Prediction {
  int sample_id = 0;
  double y_crm = 0.0;
  double entropy = 0.0;
  bool routed = false;
  std::optional<double> y_llm;  // present iff routed
  double y_final = 0.0;
};

struct RouterConfig {
  enum class Mode { Quantile, Absolute };
  Mode mode = Mode::Quantile;
  double rho = 1.0 / 3.0;  // quantile mode: fraction routed
  double tau = 0.0;        // absolute mode: entropy threshold in [0, ln 2]
};

// Marks the routed set. Quantile mode routes exactly ceil(rho * n) samples of
// highest entropy with the deterministic tie rule (entropy desc, sample_id
// asc); absolute mode routes entropy > tau. y_final is set to y_crm for
// non-routed samples and left for mixup_inference to fill on routed ones.
void route(std::vector<Prediction>& predictions, const RouterConfig& cfg);

// Entropy value at the (1 - rho) quantile of a sample of entropies; the
// deployment-style calibration for absolute mode.
double calibrate_tau(std::vector<double> entropies, double rho);

struct MixupResult {
  std::vector<Prediction> predictions;
  std::size_t llm_calls = 0;  // equals the routed count
};

// CRM scores every sample; the LLM branch is invoked only on the routed set
// and its probability replaces the CRM one there.
MixupResult mixup_inference(const CrmModel& crm, const LlmSurrogate& llm,
                            std::span<const DualModalitySample> samples,
                            const RouterConfig& cfg);

struct GroupMetrics {
  int group = 0;  // 1 = highest confidence (lowest entropy)
  std::size_t n = 0;
  double mean_entropy = 0.0;
  std::optional<double> auc;
  double acc = 0.0;
  double logloss = 0.0;
  std::string scorer;
};

// Ranks by entropy ascending and cuts into k contiguous groups whose sizes
// differ by at most one (earlier groups take the remainder). Metrics are
// computed with the supplied scorer over each group.
std::vector<GroupMetrics> confidence_groups(std::span<const Prediction> predictions,
                                            std::span<const int> labels, int k,
                                            const std::string& scorer_name,
                                            const std::function<double(const Prediction&)>& score);

}  // namespace corella
