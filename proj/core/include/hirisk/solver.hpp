#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "hirisk/featurize.hpp"

namespace hirisk {

/// One fitted L1-penalized logistic model at a single shrinkage value.
struct LassoFit {
  double intercept = 0.0;
  std::vector<std::pair<std::uint32_t, double>> coefficients;  // position -> value, sorted
  double lambda = 0.0;
  int n_nonzero = 0;
  bool converged = false;
  int iterations = 0;  // coordinate sweeps
  double objective = 0.0;
  double max_kkt = 0.0;

  std::vector<double> dense_coefficients(std::size_t n_cols) const;
};

struct LambdaPath {
  std::vector<double> lambdas;  // strictly decreasing
  std::vector<LassoFit> fits;   // aligned with lambdas
};

struct IterationLog {
  int outer = 0;
  double objective = 0.0;
  int n_nonzero = 0;
  double max_kkt = 0.0;
};

struct WarmStart {
  double intercept = 0.0;
  std::vector<double> beta;  // dense, one per column
};

struct FitOptions {
  double tol = 1e-7;       // relative objective change
  int max_iter = 10000;    // coordinate sweep budget
  double kkt_tol = 1e-6;   // stationarity certificate
  const WarmStart* warm_start = nullptr;
  std::function<void(const IterationLog&)> log;  // per outer iteration when set
};

/// Smallest lambda at which every penalized coefficient is zero at the
/// optimum: max over penalized j of |(1/N) sum_i x_ij (y_i - p_i)| / v_j,
/// with p from the base model on intercept plus all unpenalized columns.
double lambda_max(const SparseDesignMatrix& design, std::span<const std::uint8_t> y,
                  std::span<const double> penalty_factors);

/// Minimizes -(1/N) sum_i [y_i eta_i - log(1+e^eta_i)] + lambda sum_j v_j |beta_j|
/// by IRLS with cyclic coordinate descent and an active-set strategy
/// (full sweep, iterate over nonzeros until stable, full sweep to verify).
/// The intercept is unpenalized. Non-convergence is reported, never silent.
LassoFit fit_logistic_lasso(const SparseDesignMatrix& design, std::span<const std::uint8_t> y,
                            std::span<const double> penalty_factors, double lambda,
                            const FitOptions& options = {});

/// Warm-started path over a strictly decreasing lambda sequence.
LambdaPath fit_path(const SparseDesignMatrix& design, std::span<const std::uint8_t> y,
                    std::span<const double> penalty_factors, std::span<const double> lambdas,
                    const FitOptions& options = {});

/// 50 log-spaced values from lambda_max down to lambda_max * min_ratio.
std::vector<double> default_lambda_grid(double lambda_max_value, int count = 50,
                                        double min_ratio = 1e-4);

/// eta_i = intercept + x_i . beta for every row.
std::vector<double> predict_logit(const LassoFit& fit, const SparseDesignMatrix& design);

/// Objective and stationarity residual recomputed from scratch; used by
/// diagnostics and tests rather than the solver's internal bookkeeping.
double logistic_lasso_objective(const SparseDesignMatrix& design, std::span<const std::uint8_t> y,
                                std::span<const double> penalty_factors, double lambda,
                                const LassoFit& fit);
double max_kkt_residual(const SparseDesignMatrix& design, std::span<const std::uint8_t> y,
                        std::span<const double> penalty_factors, double lambda,
                        const LassoFit& fit);

}  // namespace hirisk
