#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "corella/autodiff.hpp"

namespace corella {

// Which LLM blocks and CRM cross layers get aligned (1-based, equal length)
// together with the distance exponent and shared projection width.
struct AlignmentConfig {
  std::vector<int> llm_taps = {1, 2};
  std::vector<int> crm_taps = {2, 3};
  double exponent = 2.0;
  int projection_dim = 32;

  int pairs() const { return static_cast<int>(llm_taps.size()); }
  void validate(int llm_blocks, int crm_layers) const;
};

// One pair of fully-connected maps per aligned layer pair, projecting both
// hidden states into the shared space. Trained only during joint training,
// never used at inference.
class ProjectionHeads {
 public:
  ProjectionHeads(const AlignmentConfig& cfg, int llm_dim, int crm_dim, std::uint64_t seed);

  ad::Tensor project_llm(int pair, const ad::Tensor& hidden) const;  // [1,llm_dim] -> [1,P]
  ad::Tensor project_crm(int pair, const ad::Tensor& hidden) const;

  int pairs() const { return static_cast<int>(llm_w_.size()); }

  std::vector<std::pair<std::string, ad::Tensor>> named_params() const;
  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& snap);

 private:
  std::vector<ad::Tensor> llm_w_, llm_b_;
  std::vector<ad::Tensor> crm_w_, crm_b_;
};

// Sum over pairs of ||g_llm(h_llm) - g_crm(h_crm)||_2^exponent for one sample.
// Computed as (squared distance)^(exponent/2); at coincident projections the
// gradient is 0 for exponent < 2 (subgradient choice) and exact elsewhere.
ad::Tensor alignment_loss(std::span<const ad::Tensor> llm_hidden,
                          std::span<const ad::Tensor> crm_hidden, const ProjectionHeads& heads,
                          double exponent);

// Weights of the joint objective. All non-negative, at least one positive.
struct LossWeights {
  double alpha = 1.0;  // LLM loss
  double beta = 1.0;   // CRM loss
  double gamma = 0.1;  // alignment loss
  void validate() const;
};

struct LossBreakdown {
  double l_llm = 0.0;
  double l_crm = 0.0;
  double l_cal = 0.0;
  double total = 0.0;
};

// alpha*l_llm + beta*l_crm + gamma*l_cal. Zero-weighted components are not
// part of the graph (their tensors may be absent) and contribute exactly 0.
ad::Tensor total_loss(const std::optional<ad::Tensor>& l_llm,
                      const std::optional<ad::Tensor>& l_crm,
                      const std::optional<ad::Tensor>& l_cal, const LossWeights& weights,
                      LossBreakdown* breakdown = nullptr);

}  // namespace corella
