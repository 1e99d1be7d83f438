#include "corella/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace corella {

namespace {
void require_aligned(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw std::invalid_argument(std::string(what) + ": " + std::to_string(a) + " labels vs " +
                                std::to_string(b) + " scores");
  }
}
}  // namespace

std::optional<double> auc(std::span<const int> labels, std::span<const double> scores) {
  require_aligned(labels.size(), scores.size(), "auc");
  const std::size_t n = labels.size();
  std::size_t pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw std::invalid_argument("auc: labels must be 0/1");
    pos += static_cast<std::size_t>(y);
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) return std::nullopt;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Average ranks over tied scores, then the Mann-Whitney statistic.
  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j + 1);
    for (std::size_t t = i; t <= j; ++t) {
      if (labels[order[t]] == 1) pos_rank_sum += avg_rank;
    }
    i = j + 1;
  }
  const double u = pos_rank_sum - static_cast<double>(pos) * (static_cast<double>(pos) + 1.0) / 2.0;
  return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

double logloss(std::span<const int> labels, std::span<const double> probs) {
  require_aligned(labels.size(), probs.size(), "logloss");
  if (labels.empty()) throw std::invalid_argument("logloss: empty input");
  constexpr double kEps = 1e-12;
  double acc = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = std::clamp(probs[i], kEps, 1.0 - kEps);
    acc += labels[i] == 1 ? -std::log(p) : -std::log(1.0 - p);
  }
  return acc / static_cast<double>(labels.size());
}

double accuracy(std::span<const int> labels, std::span<const double> probs, double threshold) {
  require_aligned(labels.size(), probs.size(), "accuracy");
  if (labels.empty()) throw std::invalid_argument("accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int pred = probs[i] >= threshold ? 1 : 0;
    if (pred == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

EvalResult evaluate(std::span<const int> labels, std::span<const double> probs) {
  EvalResult r;
  r.auc = auc(labels, probs);
  r.logloss = logloss(labels, probs);
  r.acc = accuracy(labels, probs);
  r.n = labels.size();
  for (int y : labels) r.positives += static_cast<std::size_t>(y);
  return r;
}

}  // namespace corella
