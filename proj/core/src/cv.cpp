#include "hirisk/cv.hpp"

#include <algorithm>
#include <string>

#include "hirisk/common.hpp"
#include "hirisk/metrics.hpp"

namespace hirisk {

FoldAssignment make_folds(std::span<const std::uint8_t> y, int k, std::uint64_t seed) {
  if (k < 2) fail("folds: k must be at least 2");
  if (y.empty()) fail("folds: empty outcome vector");

  std::vector<std::uint32_t> pos, neg;
  for (std::size_t i = 0; i < y.size(); ++i)
    (y[i] ? pos : neg).push_back(static_cast<std::uint32_t>(i));
  if (pos.size() < static_cast<std::size_t>(k))
    fail("folds: only " + std::to_string(pos.size()) + " positives for k=" + std::to_string(k));
  if (neg.size() < static_cast<std::size_t>(k))
    fail("folds: only " + std::to_string(neg.size()) + " negatives for k=" + std::to_string(k));

  Rng rng(seed);
  rng.shuffle(pos);
  rng.shuffle(neg);

  FoldAssignment fa;
  fa.k = k;
  fa.seed = seed;
  fa.fold_of.assign(y.size(), 0);
  for (std::size_t i = 0; i < pos.size(); ++i) fa.fold_of[pos[i]] = static_cast<int>(i % k);
  for (std::size_t i = 0; i < neg.size(); ++i) fa.fold_of[neg[i]] = static_cast<int>(i % k);
  return fa;
}

CvResult cv_select_lambda(const SparseDesignMatrix& design, std::span<const std::uint8_t> y,
                          std::span<const double> penalty_factors,
                          std::span<const double> lambdas, const FoldAssignment& folds,
                          const CvOptions& options) {
  if (folds.fold_of.size() != design.n_rows) fail("cv: fold assignment does not match design");
  if (y.size() != design.n_rows) fail("cv: outcome length does not match design");
  if (lambdas.empty()) fail("cv: empty lambda grid");
  const int k = folds.k;
  const std::size_t n_lambda = lambdas.size();

  CvResult result;
  result.lambdas.assign(lambdas.begin(), lambdas.end());
  result.folds = folds;
  result.per_fold_auc.assign(static_cast<std::size_t>(k), std::vector<double>(n_lambda, 0.0));
  result.fold_paths.resize(static_cast<std::size_t>(k));
  result.oof_logit.assign(design.n_rows, 0.0);

  // Per-fold holdout logits at every lambda, kept until selection.
  std::vector<std::vector<std::vector<double>>> holdout_logits(static_cast<std::size_t>(k));
  std::vector<std::vector<std::uint32_t>> holdout_rows(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < design.n_rows; ++i)
    holdout_rows[static_cast<std::size_t>(folds.fold_of[i])].push_back(
        static_cast<std::uint32_t>(i));
  for (int f = 0; f < k; ++f)
    if (holdout_rows[static_cast<std::size_t>(f)].empty())
      fail("cv: fold " + std::to_string(f) + " is empty");

  parallel_for(static_cast<std::size_t>(k), options.threads, [&](std::size_t f) {
    std::vector<std::uint32_t> train_rows;
    train_rows.reserve(design.n_rows - holdout_rows[f].size());
    for (std::size_t i = 0; i < design.n_rows; ++i)
      if (folds.fold_of[i] != static_cast<int>(f))
        train_rows.push_back(static_cast<std::uint32_t>(i));

    SparseDesignMatrix train = subset_rows(design, train_rows);
    std::vector<std::uint8_t> y_train(train_rows.size());
    for (std::size_t i = 0; i < train_rows.size(); ++i) y_train[i] = y[train_rows[i]];

    FitOptions fit_opts = options.fit;
    fit_opts.log = nullptr;
    LambdaPath path;
    try {
      path = fit_path(train, y_train, penalty_factors, lambdas, fit_opts);
    } catch (const Error& e) {
      fail("cv: fold " + std::to_string(f) + ": " + e.what());
    }

    SparseDesignMatrix held = subset_rows(design, holdout_rows[f]);
    std::vector<std::uint8_t> y_held(holdout_rows[f].size());
    for (std::size_t i = 0; i < holdout_rows[f].size(); ++i) y_held[i] = y[holdout_rows[f][i]];

    holdout_logits[f].resize(n_lambda);
    for (std::size_t l = 0; l < n_lambda; ++l) {
      holdout_logits[f][l] = predict_logit(path.fits[l], held);
      result.per_fold_auc[f][l] = auc(holdout_logits[f][l], y_held);
    }
    result.fold_paths[f] = std::move(path);
  });

  result.mean_auc.assign(n_lambda, 0.0);
  for (std::size_t l = 0; l < n_lambda; ++l) {
    double total = 0.0;
    for (int f = 0; f < k; ++f) total += result.per_fold_auc[static_cast<std::size_t>(f)][l];
    result.mean_auc[l] = total / static_cast<double>(k);
  }

  // Grid is decreasing, so the first argmax is the largest lambda.
  std::size_t best = 0;
  for (std::size_t l = 1; l < n_lambda; ++l)
    if (result.mean_auc[l] > result.mean_auc[best]) best = l;
  result.selected_index = best;
  result.selected_lambda = result.lambdas[best];

  for (int f = 0; f < k; ++f) {
    const auto& rows = holdout_rows[static_cast<std::size_t>(f)];
    const auto& scores = holdout_logits[static_cast<std::size_t>(f)][best];
    for (std::size_t i = 0; i < rows.size(); ++i) result.oof_logit[rows[i]] = scores[i];
  }
  return result;
}

std::vector<double> cross_fitted_predictions(const CvResult& result,
                                             const SparseDesignMatrix& design) {
  if (result.folds.fold_of.size() != design.n_rows)
    fail("cv: fold assignment does not match design");
  std::vector<double> oof(design.n_rows, 0.0);
  for (int f = 0; f < result.folds.k; ++f) {
    std::vector<std::uint32_t> rows;
    for (std::size_t i = 0; i < design.n_rows; ++i)
      if (result.folds.fold_of[i] == f) rows.push_back(static_cast<std::uint32_t>(i));
    SparseDesignMatrix held = subset_rows(design, rows);
    const LassoFit& fit = result.fold_paths[static_cast<std::size_t>(f)]
                              .fits[result.selected_index];
    std::vector<double> scores = predict_logit(fit, held);
    for (std::size_t i = 0; i < rows.size(); ++i) oof[rows[i]] = scores[i];
  }
  return oof;
}

}  // namespace hirisk
