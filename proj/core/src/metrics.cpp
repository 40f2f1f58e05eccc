#include "hirisk/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hirisk/common.hpp"

namespace hirisk {
namespace {

void check_two_classes(std::span<const double> scores, std::span<const std::uint8_t> labels,
                       std::size_t& n_pos) {
  if (scores.size() != labels.size()) fail("metrics: score and label lengths differ");
  if (scores.empty()) fail("metrics: empty input");
  n_pos = 0;
  for (std::uint8_t y : labels) n_pos += y;
  if (n_pos == 0 || n_pos == labels.size())
    fail("metrics: both classes are required");
  for (double s : scores)
    if (!std::isfinite(s)) fail("metrics: non-finite score");
}

}  // namespace

double auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  std::size_t n_pos = 0;
  check_two_classes(scores, labels, n_pos);
  const std::size_t n = scores.size();
  const std::size_t n_neg = n - n_pos;

  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(),
            [&](std::uint32_t a, std::uint32_t b) { return scores[a] < scores[b]; });

  // Average ranks within tied groups; rank sums stay exact in doubles
  // (integers and halves well below 2^53).
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) rank_sum_pos += avg_rank;
    i = j;
  }
  const double u = rank_sum_pos -
                   0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

std::vector<RocPoint> roc_curve(std::span<const double> scores,
                                std::span<const std::uint8_t> labels) {
  std::size_t n_pos = 0;
  check_two_classes(scores, labels, n_pos);
  const std::size_t n = scores.size();
  const std::size_t n_neg = n - n_pos;

  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(),
            [&](std::uint32_t a, std::uint32_t b) { return scores[a] > scores[b]; });

  std::vector<RocPoint> points;
  points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::size_t tp = 0, fp = 0, i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]])
        ++tp;
      else
        ++fp;
      ++j;
    }
    points.push_back({scores[order[i]], static_cast<double>(fp) / static_cast<double>(n_neg),
                      static_cast<double>(tp) / static_cast<double>(n_pos)});
    i = j;
  }
  return points;
}

double roc_trapezoid_area(std::span<const RocPoint> points) {
  double area = 0.0;
  for (std::size_t k = 1; k < points.size(); ++k)
    area += (points[k].fpr - points[k - 1].fpr) * 0.5 * (points[k].tpr + points[k - 1].tpr);
  return area;
}

double expected_weight_of_evidence(std::span<const double> probs,
                                   std::span<const std::uint8_t> labels, double prior,
                                   LogBase base) {
  if (probs.size() != labels.size()) fail("metrics: probability and label lengths differ");
  if (probs.empty()) fail("metrics: empty input");
  if (!(prior > 0.0 && prior < 1.0)) fail("metrics: prior must lie in (0,1)");
  const double prior_logit = logit(prior);
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double li = logit(clamp_prob(probs[i]));
    total += (labels[i] ? 1.0 : -1.0) * (li - prior_logit);
  }
  double lambda = total / static_cast<double>(probs.size());
  if (base == LogBase::Bits) lambda /= std::log(2.0);
  return lambda;
}

double log_likelihood(std::span<const double> probs, std::span<const std::uint8_t> labels) {
  if (probs.size() != labels.size()) fail("metrics: probability and label lengths differ");
  if (probs.empty()) fail("metrics: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = clamp_prob(probs[i]);
    total += labels[i] ? std::log(p) : std::log1p(-p);
  }
  return total;
}

PrevalenceAdjustment prevalence_adjust(std::span<const double> logits, double target) {
  if (logits.empty()) fail("metrics: empty input");
  if (!(target > 0.0 && target < 1.0)) fail("metrics: target prevalence must lie in (0,1)");
  for (double l : logits)
    if (!std::isfinite(l)) fail("metrics: non-finite logit");

  auto mean_prob = [&](double delta) {
    double total = 0.0;
    for (double l : logits) total += sigmoid(l + delta);
    return total / static_cast<double>(logits.size());
  };

  PrevalenceAdjustment out;
  double delta = 0.0;
  if (mean_prob(0.0) != target) {
    double lo = -40.0, hi = 40.0;
    if (mean_prob(lo) > target || mean_prob(hi) < target)
      fail("metrics: target prevalence unreachable within the adjustment bracket");
    for (int it = 0; it < 200; ++it) {
      delta = 0.5 * (lo + hi);
      const double m = mean_prob(delta);
      if (std::abs(m - target) <= 1e-10) break;
      if (m < target)
        lo = delta;
      else
        hi = delta;
    }
  }
  out.delta = delta;
  out.logits.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out.logits[i] = logits[i] + delta;
  return out;
}

EvaluationReport evaluate_predictions(std::span<const double> logits,
                                      std::span<const std::uint8_t> labels,
                                      std::optional<double> prior, LogBase base) {
  std::size_t n_pos = 0;
  check_two_classes(logits, labels, n_pos);
  EvaluationReport rep;
  rep.n = labels.size();
  rep.n_pos = n_pos;
  rep.prior = prior ? *prior
                    : static_cast<double>(n_pos) / static_cast<double>(labels.size());
  std::vector<double> probs(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) probs[i] = sigmoid(logits[i]);
  rep.auc = auc(logits, labels);
  rep.lambda_woe = expected_weight_of_evidence(probs, labels, rep.prior, base);
  rep.log_lik = log_likelihood(probs, labels);
  return rep;
}

}  // namespace hirisk
