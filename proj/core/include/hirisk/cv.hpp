#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hirisk/featurize.hpp"
#include "hirisk/solver.hpp"

namespace hirisk {

struct FoldAssignment {
  int k = 0;
  std::vector<int> fold_of;  // row -> fold id in [0,k)
  std::uint64_t seed = 0;
};

/// Positives and negatives are shuffled independently (seeded) and dealt
/// round-robin, so per-fold class counts differ by at most one.
FoldAssignment make_folds(std::span<const std::uint8_t> y, int k, std::uint64_t seed);

struct CvOptions {
  FitOptions fit;
  int threads = 1;
};

struct CvResult {
  std::vector<double> lambdas;
  std::vector<std::vector<double>> per_fold_auc;  // [fold][lambda]
  std::vector<double> mean_auc;
  std::size_t selected_index = 0;
  double selected_lambda = 0.0;
  std::vector<LambdaPath> fold_paths;  // one warm-started path per fold
  std::vector<double> oof_logit;       // row scored by the model that excluded its fold
  FoldAssignment folds;
};

/// Fits each fold's complement over the grid, scores held-out rows at every
/// lambda, and selects the lambda maximizing the mean per-fold AUC. Ties go
/// to the larger lambda (the sparser model).
CvResult cv_select_lambda(const SparseDesignMatrix& design, std::span<const std::uint8_t> y,
                          std::span<const double> penalty_factors,
                          std::span<const double> lambdas, const FoldAssignment& folds,
                          const CvOptions& options = {});

/// Rebuilds the out-of-fold logits at the selected lambda from the stored
/// fold models; equals CvResult::oof_logit by construction.
std::vector<double> cross_fitted_predictions(const CvResult& result,
                                             const SparseDesignMatrix& design);

}  // namespace hirisk
