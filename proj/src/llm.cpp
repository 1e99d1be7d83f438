#include "corella/llm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace corella {

namespace {
ad::Tensor glorot2(int rows, int cols, Rng& rng) {
  return ad::Tensor::randn({rows, cols}, rng, std::sqrt(2.0 / (rows + cols)));
}
}  // namespace

LlmSurrogate::LlmSurrogate(LlmConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg_.vocab_size <= 0) throw std::invalid_argument("LlmSurrogate: vocab_size must be positive");
  if (cfg_.d_model % cfg_.num_heads != 0) {
    throw std::invalid_argument("LlmSurrogate: d_model must be divisible by num_heads");
  }
  if (cfg_.yes_id == cfg_.no_id || cfg_.yes_id >= cfg_.vocab_size || cfg_.no_id >= cfg_.vocab_size ||
      cfg_.yes_id < 0 || cfg_.no_id < 0) {
    throw std::invalid_argument("LlmSurrogate: yes/no token ids must be distinct and inside the vocabulary");
  }

  Rng rng(seed);
  tok_emb_ = ad::Tensor::randn({cfg_.vocab_size, cfg_.d_model}, rng, 0.02);
  pos_emb_ = ad::Tensor::randn({cfg_.max_seq_len, cfg_.d_model}, rng, 0.02);
  const int d = cfg_.d_model;
  for (int b = 0; b < cfg_.num_blocks; ++b) {
    Block blk;
    blk.ln1_g = ad::Tensor::param({d}, std::vector<double>(d, 1.0));
    blk.ln1_b = ad::Tensor::zeros({d}, true);
    blk.wq = glorot2(d, d, rng);
    blk.wk = glorot2(d, d, rng);
    blk.wv = glorot2(d, d, rng);
    blk.wo = glorot2(d, d, rng);
    blk.ln2_g = ad::Tensor::param({d}, std::vector<double>(d, 1.0));
    blk.ln2_b = ad::Tensor::zeros({d}, true);
    blk.ff_w1 = glorot2(d, cfg_.ff_dim, rng);
    blk.ff_b1 = ad::Tensor::zeros({cfg_.ff_dim}, true);
    blk.ff_w2 = glorot2(cfg_.ff_dim, d, rng);
    blk.ff_b2 = ad::Tensor::zeros({d}, true);
    blocks_.push_back(std::move(blk));
  }
  ln_f_g_ = ad::Tensor::param({d}, std::vector<double>(d, 1.0));
  ln_f_b_ = ad::Tensor::zeros({d}, true);
  lm_head_ = glorot2(d, cfg_.vocab_size, rng);
}

ad::Tensor LlmSurrogate::run_blocks(std::span<const int> tokens,
                                    std::vector<ad::Tensor>* block_hidden) const {
  const int len = static_cast<int>(tokens.size());
  if (len == 0) throw std::invalid_argument("llm_forward: empty token sequence");
  if (len > cfg_.max_seq_len) {
    throw std::invalid_argument("llm_forward: sequence length " + std::to_string(len) +
                                " exceeds max_seq_len " + std::to_string(cfg_.max_seq_len));
  }
  for (int t : tokens) {
    if (t < 0 || t >= cfg_.vocab_size) {
      throw std::out_of_range("llm_forward: token id " + std::to_string(t) +
                              " outside vocabulary of size " + std::to_string(cfg_.vocab_size));
    }
  }

  std::vector<int> tok_idx(tokens.begin(), tokens.end());
  std::vector<int> pos_idx(static_cast<std::size_t>(len));
  std::iota(pos_idx.begin(), pos_idx.end(), 0);
  ad::Tensor x = ad::add(ad::gather_rows(tok_emb_, tok_idx), ad::gather_rows(pos_emb_, pos_idx));

  const int dh = cfg_.d_model / cfg_.num_heads;
  for (const Block& blk : blocks_) {
    ad::Tensor h = ad::add_rowvec(ad::mul_rowvec(ad::layer_norm_rows(x), blk.ln1_g), blk.ln1_b);
    ad::Tensor q = ad::matmul(h, blk.wq);
    ad::Tensor k = ad::matmul(h, blk.wk);
    ad::Tensor v = ad::matmul(h, blk.wv);
    ad::Tensor heads;
    for (int hd = 0; hd < cfg_.num_heads; ++hd) {
      ad::Tensor a = ad::attention(ad::slice_cols(q, hd * dh, dh), ad::slice_cols(k, hd * dh, dh),
                                   ad::slice_cols(v, hd * dh, dh), /*causal=*/true);
      heads = hd == 0 ? a : ad::concat_cols(heads, a);
    }
    x = ad::add(x, ad::matmul(heads, blk.wo));

    ad::Tensor f = ad::add_rowvec(ad::mul_rowvec(ad::layer_norm_rows(x), blk.ln2_g), blk.ln2_b);
    f = ad::gelu(ad::add_rowvec(ad::matmul(f, blk.ff_w1), blk.ff_b1));
    f = ad::add_rowvec(ad::matmul(f, blk.ff_w2), blk.ff_b2);
    x = ad::add(x, f);

    if (block_hidden) block_hidden->push_back(ad::gather_rows(x, {len - 1}));
  }
  return x;
}

LlmSurrogate::Forward LlmSurrogate::forward(std::span<const int> tokens) const {
  Forward out;
  ad::Tensor x = run_blocks(tokens, &out.block_hidden);
  const int len = static_cast<int>(tokens.size());
  ad::Tensor final_row = ad::gather_rows(x, {len - 1});
  final_row = ad::add_rowvec(ad::mul_rowvec(ad::layer_norm_rows(final_row), ln_f_g_), ln_f_b_);
  out.logits = ad::reshape(ad::matmul(final_row, lm_head_), {cfg_.vocab_size});
  return out;
}

ad::Tensor LlmSurrogate::logits_at(std::span<const int> tokens, int pos) const {
  if (pos < 0 || pos >= static_cast<int>(tokens.size())) {
    throw std::invalid_argument("logits_at: position out of range");
  }
  ad::Tensor x = run_blocks(tokens, nullptr);
  ad::Tensor row = ad::gather_rows(x, {pos});
  row = ad::add_rowvec(ad::mul_rowvec(ad::layer_norm_rows(row), ln_f_g_), ln_f_b_);
  return ad::reshape(ad::matmul(row, lm_head_), {cfg_.vocab_size});
}

double LlmSurrogate::predict_prob(std::span<const int> tokens) const {
  const Forward fwd = forward(tokens);
  return yes_no_prob(fwd.logits.value(), cfg_.yes_id, cfg_.no_id);
}

std::vector<std::pair<std::string, ad::Tensor>> LlmSurrogate::named_params() const {
  std::vector<std::pair<std::string, ad::Tensor>> out;
  out.emplace_back("llm.tok_emb", tok_emb_);
  out.emplace_back("llm.pos_emb", pos_emb_);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const std::string p = "llm.block." + std::to_string(b + 1) + ".";
    const Block& blk = blocks_[b];
    out.emplace_back(p + "ln1.g", blk.ln1_g);
    out.emplace_back(p + "ln1.b", blk.ln1_b);
    out.emplace_back(p + "attn.Wq", blk.wq);
    out.emplace_back(p + "attn.Wk", blk.wk);
    out.emplace_back(p + "attn.Wv", blk.wv);
    out.emplace_back(p + "attn.Wo", blk.wo);
    out.emplace_back(p + "ln2.g", blk.ln2_g);
    out.emplace_back(p + "ln2.b", blk.ln2_b);
    out.emplace_back(p + "ff.W1", blk.ff_w1);
    out.emplace_back(p + "ff.b1", blk.ff_b1);
    out.emplace_back(p + "ff.W2", blk.ff_w2);
    out.emplace_back(p + "ff.b2", blk.ff_b2);
  }
  out.emplace_back("llm.ln_f.g", ln_f_g_);
  out.emplace_back("llm.ln_f.b", ln_f_b_);
  out.emplace_back("llm.lm_head", lm_head_);
  return out;
}

std::vector<std::vector<double>> LlmSurrogate::snapshot() const {
  std::vector<std::vector<double>> snap;
  for (const auto& [name, t] : named_params()) snap.push_back(t.value());
  return snap;
}

void LlmSurrogate::restore(const std::vector<std::vector<double>>& snap) {
  auto params = named_params();
  if (snap.size() != params.size()) {
    throw std::invalid_argument("LlmSurrogate::restore: size mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i].second.apply_update([&](std::vector<double>& w) { w = snap[i]; });
  }
}

double yes_no_prob(std::span<const double> logits, int yes_id, int no_id) {
  if (yes_id < 0 || no_id < 0 || yes_id >= static_cast<int>(logits.size()) ||
      no_id >= static_cast<int>(logits.size())) {
    throw std::out_of_range("yes_no_prob: token id outside the logit vector");
  }
  const double a = logits[static_cast<std::size_t>(yes_id)];
  const double b = logits[static_cast<std::size_t>(no_id)];
  if (!std::isfinite(a) || !std::isfinite(b)) {
    throw std::invalid_argument("yes_no_prob: non-finite logits");
  }
  const double m = std::max(a, b);
  const double ea = std::exp(a - m);
  const double eb = std::exp(b - m);
  // keep the result inside the open interval even when one side underflows
  return std::clamp(ea / (ea + eb), std::numeric_limits<double>::min(), 1.0 - 1e-16);
}

ad::Tensor llm_loss(const ad::Tensor& logits, int label_token) {
  return ad::cross_entropy_logits(logits, label_token);
}

}  // namespace corella
