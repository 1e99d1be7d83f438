#include "corella/router.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace corella {

double entropy(double p) {
  if (std::isnan(p)) throw std::invalid_argument("entropy: NaN probability");
  if (p < 0.0 || p > 1.0) {
    throw std::invalid_argument("entropy: probability " + std::to_string(p) + " outside [0,1]");
  }
  constexpr double kEps = 1e-12;
  p = std::clamp(p, kEps, 1.0 - kEps);
  return -p * std::log(p) - (1.0 - p) * std::log(1.0 - p);
}

void route(std::vector<Prediction>& predictions, const RouterConfig& cfg) {
  const double ln2 = std::log(2.0);
  for (Prediction& p : predictions) {
    p.routed = false;
    p.y_llm.reset();
    p.y_final = p.y_crm;
  }
  if (cfg.mode == RouterConfig::Mode::Quantile) {
    if (cfg.rho < 0.0 || cfg.rho > 1.0) {
      throw std::invalid_argument("route: rho " + std::to_string(cfg.rho) + " outside [0,1]");
    }
    const std::size_t n = predictions.size();
    const std::size_t count =
        static_cast<std::size_t>(std::ceil(cfg.rho * static_cast<double>(n)));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (predictions[a].entropy != predictions[b].entropy) {
        return predictions[a].entropy > predictions[b].entropy;
      }
      return predictions[a].sample_id < predictions[b].sample_id;
    });
    for (std::size_t i = 0; i < std::min(count, n); ++i) predictions[order[i]].routed = true;
  } else {
    if (cfg.tau < 0.0 || cfg.tau > ln2) {
      throw std::invalid_argument("route: tau " + std::to_string(cfg.tau) + " outside [0, ln 2]");
    }
    for (Prediction& p : predictions) p.routed = p.entropy > cfg.tau;
  }
}

double calibrate_tau(std::vector<double> entropies, double rho) {
  if (entropies.empty()) throw std::invalid_argument("calibrate_tau: empty sample");
  if (rho < 0.0 || rho > 1.0) throw std::invalid_argument("calibrate_tau: rho outside [0,1]");
  std::sort(entropies.begin(), entropies.end());
  const std::size_t n = entropies.size();
  const double pos = (1.0 - rho) * static_cast<double>(n - 1);
  const std::size_t idx = std::min<std::size_t>(static_cast<std::size_t>(std::floor(pos)), n - 1);
  return entropies[idx];
}

MixupResult mixup_inference(const CrmModel& crm, const LlmSurrogate& llm,
                            std::span<const DualModalitySample> samples,
                            const RouterConfig& cfg) {
  std::vector<std::vector<int>> ids;
  ids.reserve(samples.size());
  for (const auto& s : samples) ids.push_back(s.id_input);
  const std::vector<double> probs = crm.predict(ids);

  MixupResult result;
  result.predictions.resize(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Prediction& p = result.predictions[i];
    p.sample_id = samples[i].sample_id;
    p.y_crm = probs[i];
    p.entropy = entropy(probs[i]);
  }
  route(result.predictions, cfg);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Prediction& p = result.predictions[i];
    if (p.routed) {
      p.y_llm = llm.predict_prob(samples[i].text_tokens);
      p.y_final = *p.y_llm;
      ++result.llm_calls;
    }
  }
  return result;
}

std::vector<GroupMetrics> confidence_groups(
    std::span<const Prediction> predictions, std::span<const int> labels, int k,
    const std::string& scorer_name, const std::function<double(const Prediction&)>& score) {
  if (k < 2) throw std::invalid_argument("confidence_groups: k must be >= 2");
  if (predictions.size() < static_cast<std::size_t>(k)) {
    throw std::invalid_argument("confidence_groups: need at least k predictions");
  }
  if (predictions.size() != labels.size()) {
    throw std::invalid_argument("confidence_groups: predictions/labels size mismatch");
  }

  const std::size_t n = predictions.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (predictions[a].entropy != predictions[b].entropy) {
      return predictions[a].entropy < predictions[b].entropy;
    }
    return predictions[a].sample_id < predictions[b].sample_id;
  });

  const std::size_t base = n / static_cast<std::size_t>(k);
  const std::size_t rem = n % static_cast<std::size_t>(k);
  std::vector<GroupMetrics> out;
  std::size_t start = 0;
  for (int g = 0; g < k; ++g) {
    const std::size_t size = base + (static_cast<std::size_t>(g) < rem ? 1 : 0);
    GroupMetrics gm;
    gm.group = g + 1;
    gm.n = size;
    gm.scorer = scorer_name;
    std::vector<int> yl;
    std::vector<double> ys;
    yl.reserve(size);
    ys.reserve(size);
    double ent = 0.0;
    for (std::size_t i = start; i < start + size; ++i) {
      const Prediction& p = predictions[order[i]];
      ent += p.entropy;
      yl.push_back(labels[order[i]]);
      ys.push_back(score(p));
    }
    gm.mean_entropy = size ? ent / static_cast<double>(size) : 0.0;
    if (size) {
      gm.auc = auc(yl, ys);
      gm.acc = accuracy(yl, ys);
      gm.logloss = logloss(yl, ys);
    }
    out.push_back(std::move(gm));
    start += size;
  }
  return out;
}

}  // namespace corella
