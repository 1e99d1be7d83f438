#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "corella/optim.hpp"
#include "corella/runner.hpp"

using namespace corella;
namespace adx = corella::ad;

namespace {

// One shared desk-scale dataset for the whole suite.
const ProcessedDataset& fixture() {
  static const ProcessedDataset ds = [] {
    SyntheticConfig cfg;
    cfg.n = 4000;
    cfg.num_users = 120;
    cfg.num_items = 100;
    cfg.seed = 42;
    return build_dataset(synthetic_split(cfg), TransformOptions{});
  }();
  return ds;
}

CrmModel fresh_crm(const ProcessedDataset& ds, std::uint64_t seed = 101) {
  CrmConfig cfg;
  cfg.d_emb = 8;
  cfg.cross_layers = 3;
  cfg.deep_widths = {32, 16};
  return CrmModel(ds.vocab.cardinalities(), ds.vocab.field_names(), cfg, seed);
}

LlmSurrogate fresh_llm(const ProcessedDataset& ds, std::uint64_t seed = 202) {
  LlmConfig cfg;
  cfg.d_model = 32;
  cfg.num_blocks = 2;
  cfg.num_heads = 4;
  cfg.ff_dim = 64;
  cfg.max_seq_len = ds.tokenizer.max_sequence_length();
  cfg.vocab_size = ds.tokenizer.vocab_size();
  return LlmSurrogate(cfg, seed);
}

TrainingPlan quick_plan(const ProcessedDataset& ds) {
  TrainingPlan plan;
  plan.seed = 42;
  plan.stage1 = {3, 256, 1e-3, 0.0};
  plan.stage2.epochs = 2;
  plan.stage2.batch_size = 32;
  plan.stage2.subset_count = 160;
  plan.stage2.patience = 5;
  plan.stage3.epochs = 2;
  plan.stage3.batch_size = 32;
  plan.stage3.subset_count = 160;
  resolve_subsets(plan, ds.train.size());
  return plan;
}

AlignmentConfig quick_align() {
  AlignmentConfig a;
  a.llm_taps = {1, 2};
  a.crm_taps = {2, 3};
  a.projection_dim = 16;
  return a;
}

EvalResult llm_eval(const LlmSurrogate& llm, std::span<const DualModalitySample> samples) {
  std::vector<int> labels;
  std::vector<double> probs;
  for (const auto& s : samples) {
    labels.push_back(s.label);
    probs.push_back(llm.predict_prob(s.text_tokens));
  }
  return evaluate(labels, probs);
}

}  // namespace

TEST_CASE("subset resolution is pure, disjoint and correctly sized") {
  TrainingPlan a;
  a.seed = 42;
  resolve_subsets(a, 16000);
  TrainingPlan b;
  b.seed = 42;
  resolve_subsets(b, 16000);
  CHECK(a.subset2_ids == b.subset2_ids);
  CHECK(a.subset3_ids == b.subset3_ids);
  CHECK(a.subset2_ids.size() == 800);  // 25000 capped at 5% of 16000
  CHECK(a.subset3_ids.size() == 800);
  std::vector<int> overlap;
  std::set_intersection(a.subset2_ids.begin(), a.subset2_ids.end(), a.subset3_ids.begin(),
                        a.subset3_ids.end(), std::back_inserter(overlap));
  CHECK(overlap.empty());

  TrainingPlan big;
  big.seed = 1;
  resolve_subsets(big, 800000);
  CHECK(big.subset2_ids.size() == 25000);  // the cap no longer binds

  TrainingPlan frac;
  frac.seed = 1;
  frac.stage2.subset_fraction = 0.01;
  resolve_subsets(frac, 800000);
  CHECK(frac.subset2_ids.size() == 8000);

  TrainingPlan changed = a;
  changed.seed = 43;
  changed.subset2_ids.clear();
  changed.subset3_ids.clear();
  resolve_subsets(changed, 16000);
  CHECK(changed.subset2_ids != a.subset2_ids);
}

TEST_CASE("stage 1 with zero epochs leaves the model untouched") {
  const auto& ds = fixture();
  CrmModel crm = fresh_crm(ds);
  const auto before = crm.snapshot();
  TrainingPlan plan = quick_plan(ds);
  plan.stage1.epochs = 0;
  std::vector<LogStep> log;
  stage1_warmup(crm, ds, plan, log);
  CHECK(crm.snapshot() == before);
  CHECK(log.empty());
}

TEST_CASE("stage 1 losses are finite at every logged step and val auc is tracked") {
  const auto& ds = fixture();
  CrmModel crm = fresh_crm(ds);
  TrainingPlan plan = quick_plan(ds);
  plan.stage1.epochs = 1;
  std::vector<LogStep> log;
  stage1_warmup(crm, ds, plan, log);
  REQUIRE(!log.empty());
  for (const auto& s : log) {
    CHECK(std::isfinite(s.total));
    CHECK(s.stage == 1);
    CHECK(s.l_llm == 0.0);
    CHECK(s.l_cal == 0.0);
  }
  CHECK(log.back().val_auc.has_value());
}

TEST_CASE("warm-up on a cue-free benchmark reaches the constructed accuracy floor") {
  SyntheticConfig cfg;
  cfg.n = 6000;
  cfg.num_users = 150;
  cfg.num_items = 120;
  cfg.cue_fraction = 0.0;
  cfg.noise = 0.05;
  cfg.seed = 42;
  const ProcessedDataset ds = build_dataset(synthetic_split(cfg), TransformOptions{});
  CrmModel crm = fresh_crm(ds, 7);
  TrainingPlan plan = quick_plan(ds);
  plan.stage1.epochs = 6;
  std::vector<LogStep> log;
  stage1_warmup(crm, ds, plan, log);
  CHECK(crm_validation_auc(crm, ds.valid) >= 0.95);

  std::vector<std::vector<int>> ids;
  std::vector<int> labels;
  for (const auto& s : ds.test) {
    ids.push_back(s.id_input);
    labels.push_back(s.label);
  }
  CHECK(accuracy(labels, crm.predict(ids)) >= 0.90);  // Bayes is ~0.95 at 5% noise
}

TEST_CASE("joint training with zero alignment weight equals independent updates") {
  const auto& ds = fixture();
  const std::size_t batch = 8;
  LossWeights weights{1.0, 1.0, 0.0};

  // joint path: one accumulated batch through the weighted total
  CrmModel crm_joint = fresh_crm(ds);
  LlmSurrogate llm_joint = fresh_llm(ds);
  {
    Adam opt_crm([&] {
      std::vector<adx::Tensor> t;
      for (auto& [n, p] : crm_joint.named_params()) t.push_back(p);
      return t;
    }(), 1e-3);
    Adam opt_llm([&] {
      std::vector<adx::Tensor> t;
      for (auto& [n, p] : llm_joint.named_params()) t.push_back(p);
      return t;
    }(), 1e-3);
    opt_crm.zero_grad();
    opt_llm.zero_grad();
    const double inv = 1.0 / static_cast<double>(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      const auto& s = ds.train[i];
      auto cf = crm_joint.forward(std::vector<std::vector<int>>{s.id_input});
      auto lf = llm_joint.forward(s.text_tokens);
      adx::Tensor total = total_loss(llm_loss(lf.logits, s.label_token),
                                     crm_loss(cf.probs, {double(s.label)}), std::nullopt, weights);
      adx::backward(adx::scale(total, inv));
    }
    opt_crm.step();
    opt_llm.step();
  }

  // independent path: each model alone on the same batch
  CrmModel crm_solo = fresh_crm(ds);
  LlmSurrogate llm_solo = fresh_llm(ds);
  {
    Adam opt_crm([&] {
      std::vector<adx::Tensor> t;
      for (auto& [n, p] : crm_solo.named_params()) t.push_back(p);
      return t;
    }(), 1e-3);
    opt_crm.zero_grad();
    const double inv = 1.0 / static_cast<double>(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      const auto& s = ds.train[i];
      auto cf = crm_solo.forward(std::vector<std::vector<int>>{s.id_input});
      adx::backward(adx::scale(crm_loss(cf.probs, {double(s.label)}), inv));
    }
    opt_crm.step();

    Adam opt_llm([&] {
      std::vector<adx::Tensor> t;
      for (auto& [n, p] : llm_solo.named_params()) t.push_back(p);
      return t;
    }(), 1e-3);
    opt_llm.zero_grad();
    for (std::size_t i = 0; i < batch; ++i) {
      const auto& s = ds.train[i];
      adx::backward(adx::scale(llm_loss(llm_solo.forward(s.text_tokens).logits, s.label_token), inv));
    }
    opt_llm.step();
  }

  CHECK(crm_joint.snapshot() == crm_solo.snapshot());
  CHECK(llm_joint.snapshot() == llm_solo.snapshot());
}

TEST_CASE("stage 2 logs all three loss components and restores the best crm") {
  const auto& ds = fixture();
  CrmModel crm = fresh_crm(ds);
  LlmSurrogate llm = fresh_llm(ds);
  AlignmentConfig align = quick_align();
  ProjectionHeads heads(align, llm.config().d_model, crm.input_dim(), 303);
  TrainingPlan plan = quick_plan(ds);
  std::vector<LogStep> log;
  stage1_warmup(crm, ds, plan, log);
  const Stage2Result r = stage2_joint(crm, llm, heads, ds, align, plan, log);
  bool saw_stage2 = false;
  for (const auto& s : log) {
    if (s.stage != 2) continue;
    saw_stage2 = true;
    CHECK(s.l_llm > 0.0);
    CHECK(s.l_crm > 0.0);
    CHECK(s.l_cal > 0.0);
    CHECK(std::abs(s.total - (s.l_llm + s.l_crm + 0.1 * s.l_cal)) < 1e-9);
  }
  CHECK(saw_stage2);
  // the model left behind is exactly the best snapshot (the seesaw guard)
  CHECK(crm_validation_auc(crm, ds.valid) == doctest::Approx(r.best_val_auc).epsilon(1e-15));
}

TEST_CASE("two stage-2 runs with the same seed produce identical loss curves") {
  const auto& ds = fixture();
  auto run = [&] {
    CrmModel crm = fresh_crm(ds);
    LlmSurrogate llm = fresh_llm(ds);
    AlignmentConfig align = quick_align();
    ProjectionHeads heads(align, llm.config().d_model, crm.input_dim(), 303);
    TrainingPlan plan = quick_plan(ds);
    plan.stage2.epochs = 1;
    std::vector<LogStep> log;
    stage2_joint(crm, llm, heads, ds, align, plan, log);
    return log;
  };
  const auto a = run();
  const auto b = run();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].total == b[i].total);
    CHECK(a[i].l_llm == b[i].l_llm);
    CHECK(a[i].l_crm == b[i].l_crm);
    CHECK(a[i].l_cal == b[i].l_cal);
  }
}

TEST_CASE("stage 3 never touches the crm or the heads and rejects overlap") {
  const auto& ds = fixture();
  CrmModel crm = fresh_crm(ds);
  LlmSurrogate llm = fresh_llm(ds);
  AlignmentConfig align = quick_align();
  ProjectionHeads heads(align, llm.config().d_model, crm.input_dim(), 303);
  TrainingPlan plan = quick_plan(ds);

  const auto crm_before = crm.snapshot();
  const auto heads_before = heads.snapshot();
  std::vector<LogStep> log;
  stage3_llm_continue(llm, ds, plan, log);
  CHECK(crm.snapshot() == crm_before);
  CHECK(heads.snapshot() == heads_before);
  for (const auto& s : log) {
    CHECK(s.stage == 3);
    CHECK(s.l_crm == 0.0);
    CHECK(s.l_cal == 0.0);
  }

  SUBCASE("zero epochs leave the llm untouched") {
    LlmSurrogate fresh = fresh_llm(ds, 777);
    const auto before = fresh.snapshot();
    TrainingPlan p0 = quick_plan(ds);
    p0.stage3.epochs = 0;
    std::vector<LogStep> l0;
    stage3_llm_continue(fresh, ds, p0, l0);
    CHECK(fresh.snapshot() == before);
  }
  SUBCASE("overlapping subsets are rejected") {
    TrainingPlan bad = quick_plan(ds);
    bad.subset3_ids = bad.subset2_ids;
    std::vector<LogStep> l;
    CHECK_THROWS_AS(stage3_llm_continue(llm, ds, bad, l), std::invalid_argument);
  }
}

TEST_CASE("stage 3 strictly improves the llm on cue-bearing validation samples") {
  const auto& ds = fixture();
  CrmModel crm = fresh_crm(ds);
  LlmSurrogate llm = fresh_llm(ds);
  AlignmentConfig align = quick_align();
  ProjectionHeads heads(align, llm.config().d_model, crm.input_dim(), 303);
  TrainingPlan plan = quick_plan(ds);
  std::vector<LogStep> log;
  stage1_warmup(crm, ds, plan, log);
  stage2_joint(crm, llm, heads, ds, align, plan, log);

  std::vector<DualModalitySample> cue_valid;
  for (const auto& s : ds.valid) {
    if (s.is_cue.value_or(false)) cue_valid.push_back(s);
  }
  REQUIRE(cue_valid.size() > 20);
  // Accuracy on cue samples saturates at the noise ceiling as soon as the
  // answer bias crosses one half, so the strict-improvement claim is checked
  // on the proper score (logloss); accuracy must at least not degrade.
  const EvalResult before = llm_eval(llm, cue_valid);
  stage3_llm_continue(llm, ds, plan, log);
  const EvalResult after = llm_eval(llm, cue_valid);
  CHECK(after.logloss < before.logloss);
  CHECK(after.acc >= before.acc);
}

TEST_CASE("routing with rho zero is extensionally the crm and never alters non-routed outputs") {
  const auto& ds = fixture();
  CrmModel crm = fresh_crm(ds);
  LlmSurrogate llm = fresh_llm(ds);
  RouterConfig cfg;
  cfg.rho = 0.0;
  const MixupResult none = mixup_inference(crm, llm, ds.test, cfg);
  CHECK(none.llm_calls == 0);
  std::vector<std::vector<int>> ids;
  for (const auto& s : ds.test) ids.push_back(s.id_input);
  const auto probs = crm.predict(ids);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    CHECK(none.predictions[i].y_final == probs[i]);
    CHECK_FALSE(none.predictions[i].y_llm.has_value());
  }

  cfg.rho = 0.5;
  const MixupResult half = mixup_inference(crm, llm, ds.test, cfg);
  CHECK(half.llm_calls == (ds.test.size() + 1) / 2);
  for (std::size_t i = 0; i < half.predictions.size(); ++i) {
    const auto& p = half.predictions[i];
    if (!p.routed) CHECK(p.y_final == probs[i]);
    if (p.routed) CHECK(p.y_final == *p.y_llm);
  }
}

TEST_CASE("ablation produces the five canonical rows with shared subsets") {
  SyntheticConfig small;
  small.n = 1200;
  small.num_users = 60;
  small.num_items = 50;
  small.seed = 42;
  const ProcessedDataset ds = build_dataset(synthetic_split(small), TransformOptions{});

  AblationInputs in;
  in.data = &ds;
  in.crm_cfg = CrmConfig{8, 2, {16, 8}};
  LlmConfig lc;
  lc.d_model = 16;
  lc.num_blocks = 2;
  lc.num_heads = 2;
  lc.ff_dim = 32;
  lc.max_seq_len = ds.tokenizer.max_sequence_length();
  lc.vocab_size = ds.tokenizer.vocab_size();
  in.llm_cfg = lc;
  in.align_cfg = quick_align();
  in.align_cfg.projection_dim = 8;
  in.plan.seed = 42;
  in.plan.stage1 = {2, 128, 1e-3, 0.0};
  in.plan.stage2.epochs = 1;
  in.plan.stage2.subset_count = 48;
  in.plan.stage3.epochs = 1;
  in.plan.stage3.subset_count = 48;
  resolve_subsets(in.plan, ds.train.size());
  in.router.rho = 1.0 / 3.0;
  in.seeds = {11, 22, 33};

  const auto rows = run_ablation(in);
  REQUIRE(rows.size() == 5);
  CHECK(rows[0].variant == "full");
  CHECK(rows[1].variant == "no_s1");
  CHECK(rows[2].variant == "no_s2");
  CHECK(rows[3].variant == "no_s3");
  CHECK(rows[4].variant == "no_mix");
  for (const auto& r : rows) {
    CHECK(r.metrics.n == ds.test.size());
    CHECK(r.metrics.auc.has_value());
    CHECK(std::isfinite(r.metrics.logloss));
  }

  // no_mix is by definition the crm-only evaluation of the post-stage-2 crm
  const auto again = run_variant(AblationVariant::NoMix, in);
  CHECK(again.metrics.acc == rows[4].metrics.acc);
  CHECK(*again.metrics.auc == *rows[4].metrics.auc);
}
