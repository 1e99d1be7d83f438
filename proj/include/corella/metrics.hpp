#pragma once

#include <cstddef>
#include <optional>
#include <span>

namespace corella {

struct EvalResult {
  std::optional<double> auc;  // absent when only one class is present
  double logloss = 0.0;
  double acc = 0.0;
  std::size_t n = 0;
  std::size_t positives = 0;
};

// Rank-based (Mann-Whitney) AUC; tied positive/negative score pairs count 1/2.
// Returns nullopt when labels contain a single class.
std::optional<double> auc(std::span<const int> labels, std::span<const double> scores);

// Mean binary cross-entropy, natural log, probabilities clamped to
// [1e-12, 1 - 1e-12].
double logloss(std::span<const int> labels, std::span<const double> probs);

// Fraction of samples where (prob >= threshold) equals the label.
double accuracy(std::span<const int> labels, std::span<const double> probs,
                double threshold = 0.5);

EvalResult evaluate(std::span<const int> labels, std::span<const double> probs);

}  // namespace corella
