#pragma once

#include <filesystem>
#include <span>
#include <string>

#include "corella/metrics.hpp"
#include "corella/router.hpp"
#include "corella/training.hpp"

namespace corella {

// All report emission is deterministic: fixed column order, fixed float
// formatting (shortest round-trippable via %.17g), no timestamps. Undefined
// AUC is written as the NA marker, never as a number.

std::string format_metric(double v);

std::string groups_csv(std::span<const GroupMetrics> groups);
std::string groups_json(std::span<const GroupMetrics> groups);

std::string ablation_csv(std::span<const VariantReport> rows);
std::string ablation_json(std::span<const VariantReport> rows);

struct EvaluationReport {
  EvalResult crm_only;
  EvalResult llm_on_routed;
  EvalResult corella;
  std::size_t n = 0;
  std::size_t routed = 0;
  std::size_t llm_calls = 0;
  std::string router_mode;
  double rho = 0.0;
  double tau = -1.0;  // resolved threshold when absolute mode ran
};

std::string evaluation_json(const EvaluationReport& report);

std::string runlog_jsonl(std::span<const LogStep> log);

void write_text_file(const std::filesystem::path& path, const std::string& content);

}  // namespace corella
