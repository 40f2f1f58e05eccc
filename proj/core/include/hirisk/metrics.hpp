#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace hirisk {

struct EvaluationReport {
  double auc = 0.0;
  double lambda_woe = 0.0;  // expected weight of evidence
  double log_lik = 0.0;
  std::size_t n = 0;
  std::size_t n_pos = 0;
  double prior = 0.0;
};

enum class LogBase { Nats, Bits };

/// Mann-Whitney statistic: fraction of concordant positive-negative pairs,
/// ties counted one half. Rank-sum formulation, O(n log n).
double auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

/// One point per distinct score (descending), anchored at (0,0) with an
/// infinite threshold; the final point is (1,1). Trapezoid area over the
/// points equals auc() to within accumulated rounding.
std::vector<RocPoint> roc_curve(std::span<const double> scores,
                                std::span<const std::uint8_t> labels);
double roc_trapezoid_area(std::span<const RocPoint> points);

/// Mean of (2y_i - 1) [logit(p_i) - logit(prior)]; nats unless Bits is asked.
double expected_weight_of_evidence(std::span<const double> probs,
                                   std::span<const std::uint8_t> labels, double prior,
                                   LogBase base = LogBase::Nats);

/// sum_i [y_i ln p_i + (1-y_i) ln(1-p_i)], probabilities clamped away from {0,1}.
double log_likelihood(std::span<const double> probs, std::span<const std::uint8_t> labels);

struct PrevalenceAdjustment {
  std::vector<double> logits;
  double delta = 0.0;
};

/// Finds delta with mean_i sigmoid(l_i + delta) = target by bisection on
/// [-40, 40], tolerance 1e-10 on the mean. Adding a constant at logit scale
/// preserves score order, so ranking metrics are unaffected.
PrevalenceAdjustment prevalence_adjust(std::span<const double> logits, double target);

/// Convenience bundle: AUC, weight of evidence, and log-likelihood over
/// logit-scale scores. Prior defaults to the observed prevalence.
EvaluationReport evaluate_predictions(std::span<const double> logits,
                                      std::span<const std::uint8_t> labels,
                                      std::optional<double> prior = std::nullopt,
                                      LogBase base = LogBase::Nats);

}  // namespace hirisk
