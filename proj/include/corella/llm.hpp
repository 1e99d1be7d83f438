#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "corella/autodiff.hpp"

namespace corella {

struct LlmConfig {
  int d_model = 64;
  int num_blocks = 2;
  int num_heads = 4;
  int ff_dim = 256;
  int max_seq_len = 96;
  int vocab_size = 0;
  int yes_id = 2;
  int no_id = 3;
};

// Small decoder-only transformer: learned token + position embeddings, pre-LN
// blocks with causally masked multi-head attention and a GELU feed-forward,
// final layer norm, and a linear lm head over the last position. Per-block
// hidden states at the last position are the alignment taps.
class LlmSurrogate {
 public:
  LlmSurrogate(LlmConfig cfg, std::uint64_t seed);

  struct Forward {
    ad::Tensor logits;                     // [vocab_size], next-token scores
    std::vector<ad::Tensor> block_hidden;  // per block, [1, d_model] at last position
  };

  Forward forward(std::span<const int> tokens) const;

  // Next-token logits at an arbitrary position (causality checks and probes).
  ad::Tensor logits_at(std::span<const int> tokens, int pos) const;

  // Graph-light yes/no probability for one prompt.
  double predict_prob(std::span<const int> tokens) const;

  const LlmConfig& config() const { return cfg_; }

  std::vector<std::pair<std::string, ad::Tensor>> named_params() const;
  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& snap);

 private:
  struct Block {
    ad::Tensor ln1_g, ln1_b;
    ad::Tensor wq, wk, wv, wo;  // [d, d]
    ad::Tensor ln2_g, ln2_b;
    ad::Tensor ff_w1, ff_b1, ff_w2, ff_b2;
  };

  ad::Tensor run_blocks(std::span<const int> tokens,
                        std::vector<ad::Tensor>* block_hidden) const;

  LlmConfig cfg_;
  ad::Tensor tok_emb_;  // [V, d]
  ad::Tensor pos_emb_;  // [max_seq_len, d]
  std::vector<Block> blocks_;
  ad::Tensor ln_f_g_, ln_f_b_;
  ad::Tensor lm_head_;  // [d, V]
};

// The two-way softmax over the Yes and No token scores, in shifted form.
double yes_no_prob(std::span<const double> logits, int yes_id, int no_id);

// Full-vocabulary cross-entropy of the next-token distribution against the
// answer token.
ad::Tensor llm_loss(const ad::Tensor& logits, int label_token);

}  // namespace corella
