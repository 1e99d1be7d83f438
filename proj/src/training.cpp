#include "corella/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "corella/optim.hpp"

namespace corella {

namespace {

std::vector<ad::Tensor> tensors_of(const std::vector<std::pair<std::string, ad::Tensor>>& named) {
  std::vector<ad::Tensor> out;
  out.reserve(named.size());
  for (const auto& [name, t] : named) out.push_back(t);
  return out;
}

std::size_t subset_size(double fraction, int count, double cap, std::size_t train_size) {
  if (fraction > 0.0) {
    return static_cast<std::size_t>(std::lround(fraction * static_cast<double>(train_size)));
  }
  const auto capped = static_cast<std::size_t>(
      std::floor(cap * static_cast<double>(train_size)));
  return std::min<std::size_t>(static_cast<std::size_t>(count), std::max<std::size_t>(capped, 1));
}

}  // namespace

void resolve_subsets(TrainingPlan& plan, std::size_t train_size) {
  if (train_size == 0) throw std::invalid_argument("resolve_subsets: empty train split");
  const std::size_t m2 =
      subset_size(plan.stage2.subset_fraction, plan.stage2.subset_count, plan.stage2.subset_cap,
                  train_size);
  const std::size_t m3 =
      subset_size(plan.stage3.subset_fraction, plan.stage3.subset_count, plan.stage3.subset_cap,
                  train_size);
  if (m2 + m3 > train_size) {
    throw std::invalid_argument("resolve_subsets: subsets (" + std::to_string(m2) + "+" +
                                std::to_string(m3) + ") exceed the train split of " +
                                std::to_string(train_size));
  }
  std::vector<int> perm(train_size);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(plan.seed ^ 0x5ab5e7e5d15701c7ULL);
  rng.shuffle(perm);
  plan.subset2_ids.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(m2));
  plan.subset3_ids.assign(perm.begin() + static_cast<std::ptrdiff_t>(m2),
                          perm.begin() + static_cast<std::ptrdiff_t>(m2 + m3));
  std::sort(plan.subset2_ids.begin(), plan.subset2_ids.end());
  std::sort(plan.subset3_ids.begin(), plan.subset3_ids.end());
}

double crm_validation_auc(const CrmModel& crm, std::span<const DualModalitySample> samples) {
  std::vector<std::vector<int>> ids;
  std::vector<int> labels;
  ids.reserve(samples.size());
  labels.reserve(samples.size());
  for (const auto& s : samples) {
    ids.push_back(s.id_input);
    labels.push_back(s.label);
  }
  const auto probs = crm.predict(ids);
  const auto a = auc(labels, probs);
  return a.value_or(0.5);
}

std::vector<double> llm_predict(const LlmSurrogate& llm,
                                std::span<const DualModalitySample> samples) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(llm.predict_prob(s.text_tokens));
  return out;
}

void stage1_warmup(CrmModel& crm, const ProcessedDataset& data, const TrainingPlan& plan,
                   std::vector<LogStep>& log) {
  const auto& train = data.train;
  if (train.empty()) throw std::invalid_argument("stage1: empty train split");
  Adam opt(tensors_of(crm.named_params()), plan.stage1.lr, plan.stage1.weight_decay);

  auto best = crm.snapshot();
  double best_auc = -1.0;
  int step = 0;
  const int bs = std::max(plan.stage1.batch_size, 1);

  for (int epoch = 0; epoch < plan.stage1.epochs; ++epoch) {
    for (std::size_t start = 0; start < train.size(); start += static_cast<std::size_t>(bs)) {
      const std::size_t len = std::min<std::size_t>(bs, train.size() - start);
      std::vector<std::vector<int>> ids;
      std::vector<double> labels;
      ids.reserve(len);
      labels.reserve(len);
      for (std::size_t i = start; i < start + len; ++i) {
        ids.push_back(train[i].id_input);
        labels.push_back(train[i].label);
      }
      double loss;
      try {
        auto fwd = crm.forward(ids);
        ad::Tensor l = crm_loss(fwd.probs, labels);
        loss = l.scalar_value();
        opt.zero_grad();
        ad::backward(l);
        opt.step();
      } catch (const ad::AutodiffError& e) {
        throw DivergenceError("stage1 diverged: " + std::string(e.what()) +
                                  " (last finite step " + std::to_string(step) + ")",
                              step);
      }
      ++step;
      log.push_back({1, step, 0.0, loss, 0.0, loss, std::nullopt});
    }
    const double val = crm_validation_auc(crm, data.valid);
    log.back().val_auc = val;
    if (val > best_auc) {
      best_auc = val;
      best = crm.snapshot();
    }
  }
  if (plan.stage1.epochs > 0) crm.restore(best);
}

Stage2Result stage2_joint(CrmModel& crm, LlmSurrogate& llm, ProjectionHeads& heads,
                          const ProcessedDataset& data, const AlignmentConfig& align,
                          const TrainingPlan& plan, std::vector<LogStep>& log) {
  const auto& weights = plan.stage2.weights;
  weights.validate();
  if (!(weights.alpha > 0.0 && weights.beta > 0.0)) {
    // gamma may be zero (reduces to independent updates on the shared batch)
    throw std::invalid_argument("stage2: alpha and beta must be positive");
  }
  if (plan.subset2_ids.empty()) throw std::invalid_argument("stage2: empty subset");
  align.validate(llm.config().num_blocks, crm.cross_layer_count());

  Adam opt_crm(tensors_of(crm.named_params()), plan.stage2.crm_lr);
  Adam opt_llm(tensors_of(llm.named_params()), plan.stage2.llm_lr);
  Adam opt_heads(tensors_of(heads.named_params()), plan.stage2.llm_lr);

  auto best = crm.snapshot();
  Stage2Result result;
  result.best_val_auc = crm_validation_auc(crm, data.valid);
  int stale = 0;
  int step = 0;
  const int bs = std::max(plan.stage2.batch_size, 1);
  bool stop = false;

  for (int epoch = 0; epoch < plan.stage2.epochs && !stop; ++epoch) {
    for (std::size_t start = 0; start < plan.subset2_ids.size() && !stop;
         start += static_cast<std::size_t>(bs)) {
      const std::size_t len = std::min<std::size_t>(bs, plan.subset2_ids.size() - start);
      const double inv = 1.0 / static_cast<double>(len);
      double sum_llm = 0.0, sum_crm = 0.0, sum_cal = 0.0, sum_total = 0.0;
      opt_crm.zero_grad();
      opt_llm.zero_grad();
      opt_heads.zero_grad();
      try {
        for (std::size_t i = start; i < start + len; ++i) {
          const DualModalitySample& s = data.train[static_cast<std::size_t>(plan.subset2_ids[i])];
          const std::vector<std::vector<int>> one = {s.id_input};
          auto crm_fwd = crm.forward(one);
          auto llm_fwd = llm.forward(s.text_tokens);

          std::optional<ad::Tensor> l_crm = crm_loss(crm_fwd.probs, {double(s.label)});
          std::optional<ad::Tensor> l_llm = llm_loss(llm_fwd.logits, s.label_token);
          std::optional<ad::Tensor> l_cal;
          if (weights.gamma > 0.0) {
            std::vector<ad::Tensor> hl, hc;
            for (int tap : align.llm_taps) hl.push_back(llm_fwd.block_hidden[tap - 1]);
            for (int tap : align.crm_taps) hc.push_back(crm_fwd.cross_hidden[tap - 1]);
            l_cal = alignment_loss(hl, hc, heads, align.exponent);
          }
          LossBreakdown bd;
          ad::Tensor total = total_loss(l_llm, l_crm, l_cal, weights, &bd);
          ad::backward(ad::scale(total, inv));
          sum_llm += bd.l_llm;
          sum_crm += bd.l_crm;
          sum_cal += bd.l_cal;
          sum_total += bd.total;
        }
        opt_crm.step();
        opt_llm.step();
        opt_heads.step();
      } catch (const ad::AutodiffError& e) {
        throw DivergenceError("stage2 diverged: " + std::string(e.what()) +
                                  " (last finite step " + std::to_string(step) + ")",
                              step);
      }
      ++step;
      log.push_back(
          {2, step, sum_llm * inv, sum_crm * inv, sum_cal * inv, sum_total * inv, std::nullopt});
    }
    const double val = crm_validation_auc(crm, data.valid);
    if (!log.empty()) log.back().val_auc = val;
    if (val > result.best_val_auc) {
      result.best_val_auc = val;
      result.best_step = step;
      best = crm.snapshot();
      stale = 0;
    } else {
      ++stale;
      if (stale >= plan.stage2.patience) stop = true;  // the seesaw guard
    }
  }
  crm.restore(best);
  return result;
}

void stage3_llm_continue(LlmSurrogate& llm, const ProcessedDataset& data,
                         const TrainingPlan& plan, std::vector<LogStep>& log) {
  if (plan.subset3_ids.empty()) throw std::invalid_argument("stage3: empty subset");
  {
    std::vector<int> overlap;
    std::set_intersection(plan.subset2_ids.begin(), plan.subset2_ids.end(),
                          plan.subset3_ids.begin(), plan.subset3_ids.end(),
                          std::back_inserter(overlap));
    if (!overlap.empty()) {
      throw std::invalid_argument("stage3: subset overlaps stage-2 subset (" +
                                  std::to_string(overlap.size()) + " shared samples)");
    }
  }

  Adam opt(tensors_of(llm.named_params()), plan.stage3.lr);
  int step = 0;
  const int bs = std::max(plan.stage3.batch_size, 1);
  for (int epoch = 0; epoch < plan.stage3.epochs; ++epoch) {
    for (std::size_t start = 0; start < plan.subset3_ids.size();
         start += static_cast<std::size_t>(bs)) {
      const std::size_t len = std::min<std::size_t>(bs, plan.subset3_ids.size() - start);
      const double inv = 1.0 / static_cast<double>(len);
      double sum_llm = 0.0;
      opt.zero_grad();
      try {
        for (std::size_t i = start; i < start + len; ++i) {
          const DualModalitySample& s = data.train[static_cast<std::size_t>(plan.subset3_ids[i])];
          ad::Tensor l = llm_loss(llm.forward(s.text_tokens).logits, s.label_token);
          sum_llm += l.scalar_value();
          ad::backward(ad::scale(l, inv));
        }
        opt.step();
      } catch (const ad::AutodiffError& e) {
        throw DivergenceError("stage3 diverged: " + std::string(e.what()) +
                                  " (last finite step " + std::to_string(step) + ")",
                              step);
      }
      ++step;
      log.push_back({3, step, sum_llm * inv, 0.0, 0.0, sum_llm * inv, std::nullopt});
    }
  }
}

// ---- ablations --------------------------------------------------------------------

std::string variant_name(AblationVariant v) {
  switch (v) {
    case AblationVariant::Full: return "full";
    case AblationVariant::NoS1: return "no_s1";
    case AblationVariant::NoS2: return "no_s2";
    case AblationVariant::NoS3: return "no_s3";
    case AblationVariant::NoMix: return "no_mix";
  }
  return "?";
}

const std::vector<AblationVariant>& all_variants() {
  static const std::vector<AblationVariant> v = {AblationVariant::Full, AblationVariant::NoS1,
                                                 AblationVariant::NoS2, AblationVariant::NoS3,
                                                 AblationVariant::NoMix};
  return v;
}

VariantReport run_variant(AblationVariant v, const AblationInputs& in,
                          std::vector<LogStep>* log) {
  const ProcessedDataset& data = *in.data;
  TrainingPlan plan = in.plan;
  if (plan.subset2_ids.empty() && plan.subset3_ids.empty()) {
    resolve_subsets(plan, data.train.size());
  }

  CrmModel crm(data.vocab.cardinalities(), data.vocab.field_names(), in.crm_cfg, in.seeds.crm);
  LlmSurrogate llm(in.llm_cfg, in.seeds.llm);
  ProjectionHeads heads(in.align_cfg, in.llm_cfg.d_model, crm.input_dim(), in.seeds.heads);

  std::vector<LogStep> local;
  std::vector<LogStep>& steps = log ? *log : local;

  const bool s1 = v != AblationVariant::NoS1;
  const bool s2 = v != AblationVariant::NoS2;
  const bool s3 = v != AblationVariant::NoS3 && v != AblationVariant::NoMix;

  if (s1) stage1_warmup(crm, data, plan, steps);
  if (s2) stage2_joint(crm, llm, heads, data, in.align_cfg, plan, steps);
  if (s3) stage3_llm_continue(llm, data, plan, steps);

  std::vector<int> labels;
  labels.reserve(data.test.size());
  for (const auto& s : data.test) labels.push_back(s.label);

  VariantReport report;
  report.variant = variant_name(v);
  if (v == AblationVariant::NoMix) {
    std::vector<std::vector<int>> ids;
    ids.reserve(data.test.size());
    for (const auto& s : data.test) ids.push_back(s.id_input);
    report.metrics = evaluate(labels, crm.predict(ids));
  } else {
    const MixupResult mixed = mixup_inference(crm, llm, data.test, in.router);
    std::vector<double> finals;
    finals.reserve(mixed.predictions.size());
    for (const auto& p : mixed.predictions) finals.push_back(p.y_final);
    report.metrics = evaluate(labels, finals);
  }
  return report;
}

std::vector<VariantReport> run_ablation(const AblationInputs& in) {
  AblationInputs shared = in;
  TrainingPlan plan = in.plan;
  if (plan.subset2_ids.empty() && plan.subset3_ids.empty()) {
    resolve_subsets(plan, in.data->train.size());
  }
  shared.plan = plan;
  std::vector<VariantReport> rows;
  for (AblationVariant v : all_variants()) rows.push_back(run_variant(v, shared));
  return rows;
}

}  // namespace corella
