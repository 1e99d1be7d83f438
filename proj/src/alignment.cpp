#include "corella/alignment.hpp"

#include <cmath>
#include <stdexcept>

namespace corella {

void AlignmentConfig::validate(int llm_blocks, int crm_layers) const {
  if (llm_taps.empty() || llm_taps.size() != crm_taps.size()) {
    throw std::invalid_argument("alignment: tap lists must be non-empty and of equal length");
  }
  if (exponent <= 0.0) throw std::invalid_argument("alignment: exponent must be positive");
  if (projection_dim <= 0) throw std::invalid_argument("alignment: projection_dim must be positive");
  for (int s : llm_taps) {
    if (s < 1 || s > llm_blocks) {
      throw std::invalid_argument("alignment: LLM tap " + std::to_string(s) + " outside [1," +
                                  std::to_string(llm_blocks) + "]");
    }
  }
  for (int t : crm_taps) {
    if (t < 1 || t > crm_layers) {
      throw std::invalid_argument("alignment: CRM tap " + std::to_string(t) + " outside [1," +
                                  std::to_string(crm_layers) + "]");
    }
  }
}

ProjectionHeads::ProjectionHeads(const AlignmentConfig& cfg, int llm_dim, int crm_dim,
                                 std::uint64_t seed) {
  if (llm_dim <= 0 || crm_dim <= 0) throw std::invalid_argument("ProjectionHeads: bad dims");
  Rng rng(seed);
  const int p = cfg.projection_dim;
  for (int j = 0; j < cfg.pairs(); ++j) {
    llm_w_.push_back(ad::Tensor::randn({llm_dim, p}, rng, std::sqrt(2.0 / (llm_dim + p))));
    llm_b_.push_back(ad::Tensor::zeros({p}, true));
    crm_w_.push_back(ad::Tensor::randn({crm_dim, p}, rng, std::sqrt(2.0 / (crm_dim + p))));
    crm_b_.push_back(ad::Tensor::zeros({p}, true));
  }
}

ad::Tensor ProjectionHeads::project_llm(int pair, const ad::Tensor& hidden) const {
  return ad::add_rowvec(ad::matmul(hidden, llm_w_.at(static_cast<std::size_t>(pair))),
                        llm_b_[static_cast<std::size_t>(pair)]);
}

ad::Tensor ProjectionHeads::project_crm(int pair, const ad::Tensor& hidden) const {
  return ad::add_rowvec(ad::matmul(hidden, crm_w_.at(static_cast<std::size_t>(pair))),
                        crm_b_[static_cast<std::size_t>(pair)]);
}

std::vector<std::pair<std::string, ad::Tensor>> ProjectionHeads::named_params() const {
  std::vector<std::pair<std::string, ad::Tensor>> out;
  for (std::size_t j = 0; j < llm_w_.size(); ++j) {
    const std::string p = "align." + std::to_string(j + 1) + ".";
    out.emplace_back(p + "g_llm.W", llm_w_[j]);
    out.emplace_back(p + "g_llm.b", llm_b_[j]);
    out.emplace_back(p + "g_crm.W", crm_w_[j]);
    out.emplace_back(p + "g_crm.b", crm_b_[j]);
  }
  return out;
}

std::vector<std::vector<double>> ProjectionHeads::snapshot() const {
  std::vector<std::vector<double>> snap;
  for (const auto& [name, t] : named_params()) snap.push_back(t.value());
  return snap;
}

void ProjectionHeads::restore(const std::vector<std::vector<double>>& snap) {
  auto params = named_params();
  if (snap.size() != params.size()) {
    throw std::invalid_argument("ProjectionHeads::restore: size mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i].second.apply_update([&](std::vector<double>& w) { w = snap[i]; });
  }
}

ad::Tensor alignment_loss(std::span<const ad::Tensor> llm_hidden,
                          std::span<const ad::Tensor> crm_hidden, const ProjectionHeads& heads,
                          double exponent) {
  if (llm_hidden.size() != crm_hidden.size() ||
      llm_hidden.size() != static_cast<std::size_t>(heads.pairs())) {
    throw std::invalid_argument("alignment_loss: expected " + std::to_string(heads.pairs()) +
                                " hidden-state pairs");
  }
  if (exponent <= 0.0) throw std::invalid_argument("alignment_loss: exponent must be positive");

  ad::Tensor total;
  for (int j = 0; j < heads.pairs(); ++j) {
    ad::Tensor diff = ad::sub(heads.project_llm(j, llm_hidden[j]),
                              heads.project_crm(j, crm_hidden[j]));  // [1, P]
    ad::Tensor sq_dist = ad::row_sums(ad::mul(diff, diff));          // [1]
    ad::Tensor term = ad::pow_const(sq_dist, exponent / 2.0);
    total = j == 0 ? term : ad::add(total, term);
  }
  return ad::sum_all(total);
}

void LossWeights::validate() const {
  if (alpha < 0.0 || beta < 0.0 || gamma < 0.0) {
    throw std::invalid_argument("loss weights must be non-negative");
  }
  if (alpha == 0.0 && beta == 0.0 && gamma == 0.0) {
    throw std::invalid_argument("at least one loss weight must be positive");
  }
}

ad::Tensor total_loss(const std::optional<ad::Tensor>& l_llm,
                      const std::optional<ad::Tensor>& l_crm,
                      const std::optional<ad::Tensor>& l_cal, const LossWeights& weights,
                      LossBreakdown* breakdown) {
  weights.validate();
  struct Term {
    double w;
    const std::optional<ad::Tensor>* t;
    const char* name;
  };
  const Term terms[] = {{weights.alpha, &l_llm, "l_llm"},
                        {weights.beta, &l_crm, "l_crm"},
                        {weights.gamma, &l_cal, "l_cal"}};
  ad::Tensor total;
  for (const Term& term : terms) {
    if (term.w == 0.0) continue;
    if (!term.t->has_value()) {
      throw std::invalid_argument(std::string("total_loss: ") + term.name +
                                  " has positive weight but no value");
    }
    ad::Tensor weighted = ad::scale(**term.t, term.w);
    total = total.defined() ? ad::add(total, weighted) : weighted;
  }
  if (breakdown) {
    breakdown->l_llm = l_llm ? l_llm->scalar_value() : 0.0;
    breakdown->l_crm = l_crm ? l_crm->scalar_value() : 0.0;
    breakdown->l_cal = l_cal ? l_cal->scalar_value() : 0.0;
    breakdown->total = total.scalar_value();
  }
  return total;
}

}  // namespace corella
