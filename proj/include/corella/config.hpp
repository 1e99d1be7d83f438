#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "corella/alignment.hpp"
#include "corella/crm.hpp"
#include "corella/data.hpp"
#include "corella/llm.hpp"
#include "corella/router.hpp"
#include "corella/training.hpp"

namespace corella {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Flat dotted-key configuration. Files are `key = value` lines with `#`
// comments; --set overrides use the same syntax. Unknown keys are rejected.
struct RunConfig {
  std::string dataset = "synthetic";  // synthetic | movielens | amazon_books | prepared
  std::string data_dir;
  std::string out_dir = "out";
  std::uint64_t seed = 42;
  int threads = 1;

  int synthetic_n = 20000;
  int synthetic_users = 400;
  int synthetic_items = 240;
  int synthetic_genres = 12;
  int synthetic_segments = 8;
  double synthetic_cue_fraction = 0.30;
  double synthetic_noise = 0.05;

  int history_k = 10;
  int max_seq_len = 96;

  int crm_d_emb = 16;
  int crm_cross_layers = 3;
  std::vector<int> crm_deep = {128, 64};
  double crm_lr = 1e-3;
  double crm_weight_decay = 0.0;

  int llm_d_model = 64;
  int llm_blocks = 2;
  int llm_heads = 4;
  int llm_ff = 256;

  std::vector<int> align_llm_taps = {1, 2};
  std::vector<int> align_crm_taps = {2, 3};
  int align_projection_dim = 32;
  double align_exponent = 2.0;

  double loss_alpha = 1.0;
  double loss_beta = 1.0;
  double loss_gamma = 0.1;

  std::string router_mode = "quantile";  // quantile | absolute
  double router_rho = 1.0 / 3.0;
  double router_tau = -1.0;  // < 0: calibrate from the validation entropies

  int stage1_epochs = 6;
  int stage1_batch = 256;
  int stage2_epochs = 4;
  int stage2_batch = 32;
  int stage2_subset_count = 25000;
  double stage2_subset_fraction = 0.0;
  int stage2_patience = 3;
  double stage2_crm_lr = 1e-4;
  double stage2_llm_lr = 1e-3;
  int stage3_epochs = 4;
  int stage3_batch = 32;
  int stage3_subset_count = 25000;
  double stage3_subset_fraction = 0.0;

  // Parses defaults, then the optional file, then the overrides, validating
  // the result. The CORELLA_THREADS environment variable seeds `threads`.
  static RunConfig load(const std::optional<std::filesystem::path>& file,
                        const std::vector<std::string>& overrides);

  void set(const std::string& key, const std::string& value);
  void validate() const;

  // Resolved key = value lines in registry order (what gets written next to
  // every artifact).
  std::string serialize() const;

  SyntheticConfig synthetic_config() const;
  TransformOptions transform_options() const;
  CrmConfig crm_config() const;
  LlmConfig llm_config(int vocab_size) const;
  AlignmentConfig alignment_config() const;
  TrainingPlan training_plan() const;
  RouterConfig router_config() const;  // tau < 0 left for calibration
  ModelSeeds model_seeds() const;
};

}  // namespace corella
