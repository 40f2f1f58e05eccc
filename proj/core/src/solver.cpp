#include "hirisk/solver.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>

#include <Eigen/Dense>

#include "hirisk/common.hpp"

namespace hirisk {
namespace {

constexpr double kWeightFloor = 1e-5;
constexpr double kCoefSnap = 1e-12;
constexpr double kInnerEpsStart = 1e-5;  // absolute coefficient change per sweep
constexpr double kInnerEpsFloor = 1e-10;
constexpr double kDivergedCoef = 1e3;  // log-odds magnitude no real model reaches

double soft_threshold(double z, double gamma) {
  if (z > gamma) return z - gamma;
  if (z < -gamma) return z + gamma;
  return 0.0;
}

void check_inputs(const SparseDesignMatrix& design, std::span<const std::uint8_t> y,
                  std::span<const double> penalty_factors) {
  if (design.n_rows == 0) fail("solver: empty design matrix");
  if (y.size() != design.n_rows)
    fail("solver: outcome length " + std::to_string(y.size()) + " does not match " +
         std::to_string(design.n_rows) + " rows");
  if (penalty_factors.size() != design.columns.size())
    fail("solver: penalty factor count does not match column count");
  for (double v : penalty_factors)
    if (!(v >= 0.0)) fail("solver: penalty factors must be finite and non-negative");
  std::size_t pos = 0;
  for (std::uint8_t yi : y) pos += yi;
  if (pos == 0 || pos == y.size())
    fail("solver: outcome is constant; both classes are required");
}

// -(1/N) sum [y eta - log(1+e^eta)] given eta.
double smooth_loss(std::span<const double> eta, std::span<const std::uint8_t> y) {
  double total = 0.0;
  for (std::size_t i = 0; i < eta.size(); ++i)
    total += log1pexp(eta[i]) - (y[i] ? eta[i] : 0.0);
  return total / static_cast<double>(eta.size());
}

double penalty_term(std::span<const double> beta, std::span<const double> v, double lambda) {
  double total = 0.0;
  for (std::size_t j = 0; j < beta.size(); ++j)
    if (beta[j] != 0.0) total += v[j] * std::abs(beta[j]);
  return lambda * total;
}

// (1/N) sum_i x_ij (y_i - p_i) for every column, plus the intercept slot at the end.
std::vector<double> score_vector(const SparseDesignMatrix& design, std::span<const std::uint8_t> y,
                                 std::span<const double> p) {
  const double n = static_cast<double>(design.n_rows);
  std::vector<double> g(design.columns.size() + 1, 0.0);
  for (std::size_t j = 0; j < design.columns.size(); ++j) {
    const DesignColumn& col = design.columns[j];
    double acc = 0.0;
    if (col.binary) {
      for (std::uint32_t i : col.rows) acc += (y[i] ? 1.0 : 0.0) - p[i];
    } else {
      for (std::size_t i = 0; i < design.n_rows; ++i)
        acc += col.values[i] * ((y[i] ? 1.0 : 0.0) - p[i]);
    }
    g[j] = acc / n;
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < design.n_rows; ++i) acc += (y[i] ? 1.0 : 0.0) - p[i];
  g.back() = acc / n;
  return g;
}

double kkt_from_score(std::span<const double> g, std::span<const double> beta,
                      std::span<const double> v, double lambda) {
  double worst = std::abs(g.back());  // intercept
  for (std::size_t j = 0; j + 1 < g.size(); ++j) {
    const double bound = lambda * v[j];
    double r;
    if (bound == 0.0)
      r = std::abs(g[j]);
    else if (beta[j] == 0.0)
      r = std::max(0.0, std::abs(g[j]) - bound);
    else
      r = std::abs(g[j] - bound * (beta[j] > 0.0 ? 1.0 : -1.0));
    worst = std::max(worst, r);
  }
  return worst;
}

struct SolverState {
  std::vector<double> beta;
  double b0 = 0.0;
  std::vector<double> eta;
};

// One coordinate update against the current working residual r (z - eta).
// Returns the coefficient change.
double update_coordinate(const DesignColumn& col, std::span<const double> w,
                         std::span<double> r, double& beta_j, double threshold, double n) {
  double num = 0.0, denom = 0.0;
  if (col.binary) {
    for (std::uint32_t i : col.rows) {
      num += w[i] * r[i];
      denom += w[i];
    }
  } else {
    for (std::size_t i = 0; i < r.size(); ++i) {
      const double x = col.values[i];
      num += w[i] * x * r[i];
      denom += w[i] * x * x;
    }
  }
  num = num / n + (denom / n) * beta_j;
  denom /= n;
  if (denom <= 0.0) {  // column identically zero; penalized optimum is zero
    if (beta_j != 0.0) beta_j = 0.0;
    return 0.0;
  }
  const double updated = soft_threshold(num, threshold) / denom;
  const double delta = updated - beta_j;
  if (delta != 0.0) {
    if (col.binary) {
      for (std::uint32_t i : col.rows) r[i] -= delta;
    } else {
      for (std::size_t i = 0; i < r.size(); ++i) r[i] -= delta * col.values[i];
    }
    beta_j = updated;
  }
  return delta;
}

double update_intercept(std::span<const double> w, std::span<double> r, double& b0) {
  double num = 0.0, denom = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    num += w[i] * r[i];
    denom += w[i];
  }
  const double delta = num / denom;
  if (delta != 0.0) {
    for (double& ri : r) ri -= delta;
    b0 += delta;
  }
  return delta;
}

void fit_impl(const SparseDesignMatrix& design, std::span<const std::uint8_t> y,
              std::span<const double> v, double lambda, const FitOptions& opts,
              SolverState& st, LassoFit& out) {
  const std::size_t n = design.n_rows;
  const std::size_t p = design.columns.size();
  const double dn = static_cast<double>(n);

  std::vector<double> prob(n), w(n), r(n), r0(n);
  std::vector<std::uint8_t> in_active(p, 0);
  std::vector<std::uint32_t> active;
  active.reserve(64);

  auto refresh_prob = [&] {
    for (std::size_t i = 0; i < n; ++i) prob[i] = sigmoid(st.eta[i]);
  };

  refresh_prob();
  double f = smooth_loss(st.eta, y) + penalty_term(st.beta, v, lambda);
  int sweeps = 0;
  bool converged = false;
  double kkt = std::numeric_limits<double>::infinity();
  int outer = 0;

  // Each quadratic subproblem is solved only as precisely as the outer checks
  // demand. Polishing starts loose and tightens when the objective has settled
  // while the stationarity residual still exceeds its tolerance.
  double inner_eps = kInnerEpsStart;

  std::vector<double> eta_old(n), beta_old;
  double b0_old = 0.0;

  for (; sweeps < opts.max_iter; ++outer) {
    // Quadratic approximation at the current iterate.
    for (std::size_t i = 0; i < n; ++i) {
      const double wi = std::max(prob[i] * (1.0 - prob[i]), kWeightFloor);
      w[i] = wi;
      r[i] = ((y[i] ? 1.0 : 0.0) - prob[i]) / wi;
      r0[i] = r[i];
    }
    eta_old = st.eta;
    beta_old = st.beta;
    b0_old = st.b0;

    auto sweep = [&](bool full) {
      double max_delta = std::abs(update_intercept(w, r, st.b0));
      bool activated = false;
      if (full) {
        for (std::size_t j = 0; j < p; ++j) {
          const bool was_zero = st.beta[j] == 0.0;
          const double d =
              update_coordinate(design.columns[j], w, r, st.beta[j], lambda * v[j], dn);
          max_delta = std::max(max_delta, std::abs(d));
          if (was_zero && st.beta[j] != 0.0 && !in_active[j]) {
            in_active[j] = 1;
            active.push_back(static_cast<std::uint32_t>(j));
            activated = true;
          }
        }
      } else {
        for (std::uint32_t j : active) {
          const double d =
              update_coordinate(design.columns[j], w, r, st.beta[j], lambda * v[j], dn);
          max_delta = std::max(max_delta, std::abs(d));
        }
      }
      ++sweeps;
      return std::pair<double, bool>(max_delta, activated);
    };

    // Seed the active set from the warm start before the first full sweep.
    if (outer == 0) {
      for (std::size_t j = 0; j < p; ++j)
        if (st.beta[j] != 0.0) {
          in_active[j] = 1;
          active.push_back(static_cast<std::uint32_t>(j));
        }
    }

    // Full sweep, then cycle the active set until stable, then verify with
    // another full sweep; repeat if the verification activates anything.
    bool inner_done = false;
    sweep(true);
    while (!inner_done && sweeps < opts.max_iter) {
      while (sweeps < opts.max_iter) {
        if (sweep(false).first <= inner_eps) break;
      }
      auto [delta, activated] = sweep(true);
      inner_done = !activated && delta <= inner_eps;
    }

    // eta moved by (r0 - r); reconstruct it without per-update writes.
    for (std::size_t i = 0; i < n; ++i) st.eta[i] += r0[i] - r[i];

    refresh_prob();
    double f_new = smooth_loss(st.eta, y) + penalty_term(st.beta, v, lambda);

    // The quadratic model can overshoot; back off toward the previous iterate.
    if (f_new > f + 1e-12) {
      double t = 1.0;
      std::vector<double> eta_full = st.eta;
      std::vector<double> beta_full = st.beta;
      const double b0_full = st.b0;
      for (int h = 0; h < 60 && f_new > f + 1e-12; ++h) {
        t *= 0.5;
        for (std::size_t i = 0; i < n; ++i)
          st.eta[i] = eta_old[i] + t * (eta_full[i] - eta_old[i]);
        for (std::size_t j = 0; j < p; ++j)
          st.beta[j] = beta_old[j] + t * (beta_full[j] - beta_old[j]);
        st.b0 = b0_old + t * (b0_full - b0_old);
        f_new = smooth_loss(st.eta, y) + penalty_term(st.beta, v, lambda);
      }
      refresh_prob();
    }

    for (double b : st.beta)
      if (std::abs(b) > kDivergedCoef)
        fail("solver: coefficients are diverging; the data look separable along an "
             "unpenalized column (remove it or increase lambda)");

    std::vector<double> g = score_vector(design, y, prob);
    kkt = kkt_from_score(g, st.beta, v, lambda);

    int nnz = 0;
    for (double b : st.beta)
      if (b != 0.0) ++nnz;
    if (opts.log) opts.log(IterationLog{outer, f_new, nnz, kkt});

    const bool objective_settled = std::abs(f - f_new) <= opts.tol * (std::abs(f) + 1e-10);
    f = f_new;
    if (objective_settled && kkt <= opts.kkt_tol) {
      converged = true;
      break;
    }
    if (objective_settled && kkt > opts.kkt_tol)
      inner_eps = std::max(inner_eps * 0.01, kInnerEpsFloor);
  }

  // A saturated fit classifies every row perfectly, so the unpenalized part
  // of the likelihood has no finite maximizer. The coefficient guard above
  // misses this when growth stalls under the floored IRLS weights. Residuals
  // below 1e-5 on every row need |eta| > 11.5 everywhere, out of reach for
  // any non-separable problem.
  bool saturated = true;
  for (std::size_t i = 0; i < n; ++i)
    if (std::abs((y[i] ? 1.0 : 0.0) - prob[i]) >= 1e-5) {
      saturated = false;
      break;
    }
  if (saturated)
    fail("solver: data are perfectly separated; no finite optimum exists at this lambda "
         "(increase lambda or remove the separating unpenalized column)");

  for (double& b : st.beta)
    if (std::abs(b) < kCoefSnap) b = 0.0;

  out.intercept = st.b0;
  out.coefficients.clear();
  for (std::size_t j = 0; j < p; ++j)
    if (st.beta[j] != 0.0)
      out.coefficients.emplace_back(static_cast<std::uint32_t>(j), st.beta[j]);
  out.lambda = lambda;
  out.n_nonzero = static_cast<int>(out.coefficients.size());
  out.converged = converged;
  out.iterations = sweeps;
  out.objective = f;
  out.max_kkt = kkt;
}

SolverState initial_state(const SparseDesignMatrix& design, std::span<const std::uint8_t> y,
                          const WarmStart* warm) {
  SolverState st;
  const std::size_t n = design.n_rows;
  const std::size_t p = design.columns.size();
  if (warm) {
    if (warm->beta.size() != p) fail("solver: warm start has wrong coefficient count");
    st.beta = warm->beta;
    st.b0 = warm->intercept;
  } else {
    st.beta.assign(p, 0.0);
    double ybar = 0.0;
    for (std::uint8_t yi : y) ybar += yi;
    ybar /= static_cast<double>(n);
    st.b0 = logit(ybar);
  }
  st.eta.assign(n, st.b0);
  for (std::size_t j = 0; j < p; ++j) {
    const double b = st.beta[j];
    if (b == 0.0) continue;
    const DesignColumn& col = design.columns[j];
    if (col.binary) {
      for (std::uint32_t i : col.rows) st.eta[i] += b;
    } else {
      for (std::size_t i = 0; i < n; ++i) st.eta[i] += b * col.values[i];
    }
  }
  return st;
}

}  // namespace

std::vector<double> LassoFit::dense_coefficients(std::size_t n_cols) const {
  std::vector<double> beta(n_cols, 0.0);
  for (const auto& [j, b] : coefficients) {
    if (j >= n_cols) fail("fit references column " + std::to_string(j) + " outside the design");
    beta[j] = b;
  }
  return beta;
}

double lambda_max(const SparseDesignMatrix& design, std::span<const std::uint8_t> y,
                  std::span<const double> penalty_factors) {
  check_inputs(design, y, penalty_factors);
  const std::size_t n = design.n_rows;
  const std::size_t p = design.columns.size();

  std::vector<std::uint32_t> unpenalized;
  bool any_penalized = false;
  for (std::size_t j = 0; j < p; ++j) {
    if (penalty_factors[j] == 0.0)
      unpenalized.push_back(static_cast<std::uint32_t>(j));
    else
      any_penalized = true;
  }
  if (!any_penalized) fail("lambda_max: no penalized columns");

  // Base model: intercept plus unpenalized columns, plain Newton.
  std::vector<double> prob(n);
  double ybar = 0.0;
  for (std::uint8_t yi : y) ybar += yi;
  ybar /= static_cast<double>(n);

  if (unpenalized.empty()) {
    std::fill(prob.begin(), prob.end(), ybar);
  } else {
    const std::size_t d = unpenalized.size() + 1;
    Eigen::MatrixXd x(n, d);
    for (std::size_t i = 0; i < n; ++i) x(static_cast<Eigen::Index>(i), 0) = 1.0;
    for (std::size_t k = 0; k < unpenalized.size(); ++k) {
      const DesignColumn& col = design.columns[unpenalized[k]];
      const auto c = static_cast<Eigen::Index>(k + 1);
      if (col.binary) {
        x.col(c).setZero();
        for (std::uint32_t i : col.rows) x(static_cast<Eigen::Index>(i), c) = 1.0;
      } else {
        for (std::size_t i = 0; i < n; ++i)
          x(static_cast<Eigen::Index>(i), c) = col.values[i];
      }
    }
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
    theta(0) = logit(ybar);
    Eigen::VectorXd eta = x * theta;
    auto neg_loglik = [&](const Eigen::VectorXd& e) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        total += log1pexp(e(ii)) - (y[i] ? e(ii) : 0.0);
      }
      return total / static_cast<double>(n);
    };
    double f = neg_loglik(eta);
    bool done = false;
    for (int it = 0; it < 100 && !done; ++it) {
      Eigen::VectorXd pv(static_cast<Eigen::Index>(n)), wv(static_cast<Eigen::Index>(n));
      for (std::size_t i = 0; i < n; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        const double pi = sigmoid(eta(ii));
        pv(ii) = pi;
        wv(ii) = std::max(pi * (1.0 - pi), kWeightFloor);
      }
      Eigen::VectorXd resid(static_cast<Eigen::Index>(n));
      for (std::size_t i = 0; i < n; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        resid(ii) = (y[i] ? 1.0 : 0.0) - pv(ii);
      }
      Eigen::VectorXd grad = x.transpose() * resid / static_cast<double>(n);
      if (grad.lpNorm<Eigen::Infinity>() <= 1e-12) {
        done = true;
        break;
      }
      Eigen::MatrixXd h = x.transpose() * wv.asDiagonal() * x / static_cast<double>(n);
      Eigen::VectorXd step = h.ldlt().solve(grad);
      double t = 1.0;
      for (int half = 0; half < 60; ++half) {
        Eigen::VectorXd cand = theta + t * step;
        Eigen::VectorXd cand_eta = x * cand;
        const double f_cand = neg_loglik(cand_eta);
        if (f_cand <= f + 1e-14) {
          theta = cand;
          eta = cand_eta;
          f = f_cand;
          break;
        }
        t *= 0.5;
      }
      if (theta.lpNorm<Eigen::Infinity>() > kDivergedCoef)
        fail("lambda_max: base model is separable; remove the offending unpenalized column");
    }
    if (!done) fail("lambda_max: base model did not converge");
    for (std::size_t i = 0; i < n; ++i) prob[i] = sigmoid(eta(static_cast<Eigen::Index>(i)));
  }

  std::vector<double> g = score_vector(design, y, prob);
  double best = 0.0;
  for (std::size_t j = 0; j < p; ++j)
    if (penalty_factors[j] > 0.0) best = std::max(best, std::abs(g[j]) / penalty_factors[j]);
  if (!(best > 0.0)) fail("lambda_max: every penalized column has zero score");
  return best;
}

LassoFit fit_logistic_lasso(const SparseDesignMatrix& design, std::span<const std::uint8_t> y,
                            std::span<const double> penalty_factors, double lambda,
                            const FitOptions& options) {
  check_inputs(design, y, penalty_factors);
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail("solver: lambda must be finite and >= 0");
  SolverState st = initial_state(design, y, options.warm_start);
  LassoFit fit;
  fit_impl(design, y, penalty_factors, lambda, options, st, fit);
  return fit;
}

LambdaPath fit_path(const SparseDesignMatrix& design, std::span<const std::uint8_t> y,
                    std::span<const double> penalty_factors, std::span<const double> lambdas,
                    const FitOptions& options) {
  check_inputs(design, y, penalty_factors);
  if (lambdas.empty()) fail("fit_path: empty lambda grid");
  for (std::size_t k = 0; k < lambdas.size(); ++k) {
    if (!(lambdas[k] >= 0.0) || !std::isfinite(lambdas[k]))
      fail("fit_path: lambda must be finite and >= 0");
    if (k > 0 && !(lambdas[k] < lambdas[k - 1]))
      fail("fit_path: lambda grid must be strictly decreasing");
  }

  LambdaPath path;
  path.lambdas.assign(lambdas.begin(), lambdas.end());
  path.fits.reserve(lambdas.size());

  SolverState st = initial_state(design, y, options.warm_start);
  FitOptions opts = options;
  opts.warm_start = nullptr;
  for (std::size_t k = 0; k < lambdas.size(); ++k) {
    LassoFit fit;
    try {
      fit_impl(design, y, penalty_factors, lambdas[k], opts, st, fit);
    } catch (const Error& e) {
      fail("fit_path: position " + std::to_string(k) + " (lambda=" + format_g(lambdas[k], 6) +
           "): " + e.what());
    }
    path.fits.push_back(std::move(fit));
  }
  return path;
}

std::vector<double> default_lambda_grid(double lambda_max_value, int count, double min_ratio) {
  if (!(lambda_max_value > 0.0)) fail("lambda grid: lambda_max must be positive");
  if (count < 2) fail("lambda grid: need at least two values");
  if (!(min_ratio > 0.0 && min_ratio < 1.0)) fail("lambda grid: min_ratio must be in (0,1)");
  std::vector<double> grid(static_cast<std::size_t>(count));
  const double log_ratio = std::log(min_ratio);
  for (int i = 0; i < count; ++i)
    grid[static_cast<std::size_t>(i)] =
        lambda_max_value * std::exp(log_ratio * static_cast<double>(i) / (count - 1));
  grid.front() = lambda_max_value;
  return grid;
}

std::vector<double> predict_logit(const LassoFit& fit, const SparseDesignMatrix& design) {
  std::vector<double> eta(design.n_rows, fit.intercept);
  for (const auto& [j, b] : fit.coefficients) {
    if (j >= design.columns.size())
      fail("predict: fit references column " + std::to_string(j) + " outside the design");
    const DesignColumn& col = design.columns[j];
    if (col.binary) {
      for (std::uint32_t i : col.rows) eta[i] += b;
    } else {
      for (std::size_t i = 0; i < design.n_rows; ++i) eta[i] += b * col.values[i];
    }
  }
  return eta;
}

double logistic_lasso_objective(const SparseDesignMatrix& design, std::span<const std::uint8_t> y,
                                std::span<const double> penalty_factors, double lambda,
                                const LassoFit& fit) {
  std::vector<double> eta = predict_logit(fit, design);
  double pen = 0.0;
  for (const auto& [j, b] : fit.coefficients) pen += penalty_factors[j] * std::abs(b);
  return smooth_loss(eta, y) + lambda * pen;
}

double max_kkt_residual(const SparseDesignMatrix& design, std::span<const std::uint8_t> y,
                        std::span<const double> penalty_factors, double lambda,
                        const LassoFit& fit) {
  std::vector<double> eta = predict_logit(fit, design);
  std::vector<double> prob(eta.size());
  for (std::size_t i = 0; i < eta.size(); ++i) prob[i] = sigmoid(eta[i]);
  std::vector<double> beta = fit.dense_coefficients(design.columns.size());
  std::vector<double> g = score_vector(design, y, prob);
  return kkt_from_score(g, beta, penalty_factors, lambda);
}

}  // namespace hirisk
