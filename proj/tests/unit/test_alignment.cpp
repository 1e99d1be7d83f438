#include <cmath>
#include <vector>

#include <doctest.h>

#include "corella/alignment.hpp"

using namespace corella;
namespace adx = corella::ad;

namespace {

AlignmentConfig one_pair_identity() {
  AlignmentConfig cfg;
  cfg.llm_taps = {1};
  cfg.crm_taps = {1};
  cfg.projection_dim = 2;
  return cfg;
}

// heads whose maps are the 2x2 identity with zero bias
ProjectionHeads identity_heads(const AlignmentConfig& cfg) {
  ProjectionHeads heads(cfg, 2, 2, 1);
  for (auto& [name, t] : heads.named_params()) {
    t.apply_update([&](std::vector<double>& w) {
      std::fill(w.begin(), w.end(), 0.0);
      if (name.find(".W") != std::string::npos) {
        w[0] = 1.0;
        w[3] = 1.0;
      }
    });
  }
  return heads;
}

}  // namespace

TEST_CASE("coinciding projections give exactly zero loss") {
  AlignmentConfig cfg = one_pair_identity();
  ProjectionHeads heads = identity_heads(cfg);
  std::vector<adx::Tensor> h = {adx::Tensor::param({1, 2}, {0.3, -0.7})};
  CHECK(alignment_loss(h, h, heads, 2.0).scalar_value() == 0.0);
}

TEST_CASE("worked (3,4) difference vector") {
  AlignmentConfig cfg = one_pair_identity();
  ProjectionHeads heads = identity_heads(cfg);
  std::vector<adx::Tensor> hl = {adx::Tensor::param({1, 2}, {3.0, 4.0})};
  std::vector<adx::Tensor> hc = {adx::Tensor::param({1, 2}, {0.0, 0.0})};
  CHECK(alignment_loss(hl, hc, heads, 2.0).scalar_value() ==
        doctest::Approx(25.0).epsilon(1e-12));  // ||(3,4)|| squared
  CHECK(alignment_loss(hl, hc, heads, 1.0).scalar_value() ==
        doctest::Approx(5.0).epsilon(1e-12));  // plain norm
}

TEST_CASE("alignment loss is non-negative and positive off coincidence") {
  AlignmentConfig cfg;
  cfg.llm_taps = {1, 2};
  cfg.crm_taps = {1, 2};
  cfg.projection_dim = 3;
  ProjectionHeads heads(cfg, 4, 5, 33);
  Rng rng(4);
  std::vector<adx::Tensor> hl = {adx::Tensor::randn({1, 4}, rng, 1.0),
                                 adx::Tensor::randn({1, 4}, rng, 1.0)};
  std::vector<adx::Tensor> hc = {adx::Tensor::randn({1, 5}, rng, 1.0),
                                 adx::Tensor::randn({1, 5}, rng, 1.0)};
  CHECK(alignment_loss(hl, hc, heads, 2.0).scalar_value() > 0.0);
  CHECK(alignment_loss(hl, hc, heads, 1.0).scalar_value() > 0.0);
  CHECK(alignment_loss(hl, hc, heads, 0.5).scalar_value() > 0.0);
}

TEST_CASE("gradients flow into both taps and both heads and match finite differences") {
  AlignmentConfig cfg;
  cfg.llm_taps = {1};
  cfg.crm_taps = {1};
  cfg.projection_dim = 3;
  ProjectionHeads heads(cfg, 4, 5, 57);
  Rng rng(9);
  adx::Tensor hl = adx::Tensor::randn({1, 4}, rng, 1.0);
  adx::Tensor hc = adx::Tensor::randn({1, 5}, rng, 1.0);

  adx::GradCheckCase c;
  c.leaves = {hl, hc};
  for (auto& [name, t] : heads.named_params()) c.leaves.push_back(t);
  c.build = [&](const std::vector<adx::Tensor>&) {
    std::vector<adx::Tensor> l = {hl}, r = {hc};
    return alignment_loss(l, r, heads, 2.0);
  };
  Rng check(7);
  CHECK(adx::grad_check(c, 120, 1e-5, check) < 1e-4);

  std::vector<adx::Tensor> l = {hl}, r = {hc};
  adx::backward(alignment_loss(l, r, heads, 2.0));
  auto has_nonzero = [](const std::vector<double>& g) {
    for (double x : g)
      if (x != 0.0) return true;
    return false;
  };
  CHECK(has_nonzero(hl.grad()));
  CHECK(has_nonzero(hc.grad()));
  for (auto& [name, t] : heads.named_params()) {
    if (name.find(".W") != std::string::npos) CHECK(has_nonzero(t.grad()));
  }
}

TEST_CASE("exponent one has a defined zero gradient at coincidence") {
  AlignmentConfig cfg = one_pair_identity();
  ProjectionHeads heads = identity_heads(cfg);
  adx::Tensor h = adx::Tensor::param({1, 2}, {0.25, -0.5});
  std::vector<adx::Tensor> l = {h}, r = {h};
  adx::Tensor loss = alignment_loss(l, r, heads, 1.0);
  CHECK(loss.scalar_value() == 0.0);
  adx::backward(loss);
  for (double g : h.grad()) CHECK(g == 0.0);
}

TEST_CASE("tap validation") {
  AlignmentConfig cfg;
  cfg.llm_taps = {1, 3};
  cfg.crm_taps = {2, 3};
  CHECK_THROWS(cfg.validate(2, 3));  // llm tap 3 of 2 blocks
  cfg.llm_taps = {1, 2};
  CHECK_NOTHROW(cfg.validate(2, 3));
  cfg.crm_taps = {2};
  CHECK_THROWS(cfg.validate(2, 3));  // length mismatch
  cfg.crm_taps = {2, 3};
  cfg.exponent = 0.0;
  CHECK_THROWS(cfg.validate(2, 3));
}

TEST_CASE("total loss combines weighted components exactly") {
  adx::Tensor lllm = adx::Tensor::scalar(0.7);
  adx::Tensor lcrm = adx::Tensor::scalar(0.6);
  adx::Tensor lcal = adx::Tensor::scalar(2.0);

  LossBreakdown bd;
  LossWeights w{1.0, 1.0, 0.1};
  adx::Tensor total = total_loss(lllm, lcrm, lcal, w, &bd);
  CHECK(std::abs(total.scalar_value() - 1.5) < 1e-12);
  CHECK(std::abs(bd.total - (w.alpha * bd.l_llm + w.beta * bd.l_crm + w.gamma * bd.l_cal)) < 1e-12);

  // stage-1 shape: only the CRM term
  adx::Tensor s1 = total_loss(std::nullopt, lcrm, std::nullopt, {0.0, 1.0, 0.0}, &bd);
  CHECK(s1.scalar_value() == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(bd.l_llm == 0.0);
  CHECK(bd.l_cal == 0.0);

  // stage-3 shape: only the LLM term
  adx::Tensor s3 = total_loss(lllm, std::nullopt, std::nullopt, {1.0, 0.0, 0.0}, &bd);
  CHECK(s3.scalar_value() == doctest::Approx(0.7).epsilon(1e-15));
}

TEST_CASE("loss weight validation") {
  adx::Tensor x = adx::Tensor::scalar(1.0);
  CHECK_THROWS(total_loss(x, x, x, {-1.0, 1.0, 0.1}));
  CHECK_THROWS(total_loss(x, x, x, {0.0, 0.0, 0.0}));
  CHECK_THROWS(total_loss(std::nullopt, x, x, {1.0, 1.0, 0.1}));  // missing weighted term
}
