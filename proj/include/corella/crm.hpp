#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "corella/autodiff.hpp"

namespace corella {

struct CrmConfig {
  int d_emb = 16;
  int cross_layers = 3;
  std::vector<int> deep_widths = {128, 64};
};

// DCNv2-flavoured CTR model: per-field embeddings, a stacked cross network
// x_{l+1} = x_0 * (x_l W_l + b_l) + x_l, a ReLU deep tower in parallel, and a
// sigmoid head over the concatenated branches. Cross-layer outputs are the
// hidden-state taps used for alignment.
class CrmModel {
 public:
  CrmModel(std::vector<int> field_cardinalities, std::vector<std::string> field_names,
           CrmConfig cfg, std::uint64_t seed);

  struct Forward {
    ad::Tensor probs;                      // [batch], each in (0,1)
    std::vector<ad::Tensor> cross_hidden;  // per cross layer, [batch, D]
  };

  Forward forward(std::span<const std::vector<int>> id_batch) const;

  // Graph-free probabilities in batches; used for inference and evaluation.
  std::vector<double> predict(std::span<const std::vector<int>> id_batch,
                              std::size_t chunk = 1024) const;

  int input_dim() const { return input_dim_; }
  int cross_layer_count() const { return cfg_.cross_layers; }
  const CrmConfig& config() const { return cfg_; }

  std::vector<std::pair<std::string, ad::Tensor>> named_params() const;
  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& snap);

 private:
  CrmConfig cfg_;
  std::vector<int> cardinalities_;
  std::vector<std::string> field_names_;
  int input_dim_;
  std::vector<ad::Tensor> embeddings_;  // per field [card, d_emb]
  std::vector<ad::Tensor> cross_w_;     // [D, D]
  std::vector<ad::Tensor> cross_b_;     // [D]
  std::vector<ad::Tensor> deep_w_;
  std::vector<ad::Tensor> deep_b_;
  ad::Tensor head_w_;  // [D + deep_out, 1]
  ad::Tensor head_b_;  // [1]
};

// Mean binary cross-entropy over a batch of probabilities (clamped inside).
ad::Tensor crm_loss(const ad::Tensor& probs, const std::vector<double>& labels);

}  // namespace corella
