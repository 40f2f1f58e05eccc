#include "hirisk/riskindex.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <Eigen/Dense>

#include "hirisk/common.hpp"

namespace hirisk {
namespace {

constexpr double kWeightFloor = 1e-5;

// Plain Newton for unpenalized logistic regression; the bases here are small.
Eigen::VectorXd newton_logistic(const Eigen::MatrixXd& x, std::span<const std::uint8_t> y,
                                const std::string& what) {
  const Eigen::Index n = x.rows(), d = x.cols();
  double ybar = 0.0;
  for (std::uint8_t yi : y) ybar += yi;
  ybar /= static_cast<double>(n);
  if (ybar <= 0.0 || ybar >= 1.0) fail(what + ": outcome is constant");

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(d);
  theta(0) = logit(ybar);
  Eigen::VectorXd eta = x * theta;
  auto neg_loglik = [&](const Eigen::VectorXd& e) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      total += log1pexp(e(i)) - (y[static_cast<std::size_t>(i)] ? e(i) : 0.0);
    return total / static_cast<double>(n);
  };
  double f = neg_loglik(eta);

  for (int it = 0; it < 200; ++it) {
    Eigen::VectorXd resid(n), w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double p = sigmoid(eta(i));
      resid(i) = (y[static_cast<std::size_t>(i)] ? 1.0 : 0.0) - p;
      w(i) = std::max(p * (1.0 - p), kWeightFloor);
    }
    Eigen::VectorXd grad = x.transpose() * resid / static_cast<double>(n);
    if (grad.lpNorm<Eigen::Infinity>() <= 1e-9) return theta;

    Eigen::MatrixXd h = x.transpose() * w.asDiagonal() * x / static_cast<double>(n);
    Eigen::VectorXd step = h.ldlt().solve(grad);
    if (!step.allFinite()) fail(what + ": singular design (degenerate columns)");
    double t = 1.0;
    bool moved = false;
    for (int half = 0; half < 60; ++half) {
      Eigen::VectorXd cand = theta + t * step;
      Eigen::VectorXd cand_eta = x * cand;
      const double f_cand = neg_loglik(cand_eta);
      if (f_cand <= f + 1e-14) {
        theta = cand;
        eta = cand_eta;
        f = f_cand;
        moved = true;
        break;
      }
      t *= 0.5;
    }
    if (!moved) return theta;  // at numerical floor of the objective
    if (theta.lpNorm<Eigen::Infinity>() > 1e3)
      fail(what + ": coefficients are diverging; the data look separable");
  }
  fail(what + ": no convergence in 200 iterations");
}

std::vector<double> gender_knots(std::vector<double> ages,
                                 std::span<const double> quantiles) {
  std::sort(ages.begin(), ages.end());
  std::vector<double> knots;
  for (double q : quantiles) {
    const auto idx = static_cast<std::size_t>(
        std::llround(q * static_cast<double>(ages.size() - 1)));
    knots.push_back(ages[idx]);
  }
  knots.erase(std::unique(knots.begin(), knots.end()), knots.end());
  return knots;
}

}  // namespace

RiskIndex build_risk_index(const CvResult& cv, const SparseDesignMatrix& design,
                           const FeatureSpace& space,
                           const std::vector<std::string>& cancel) {
  if (cv.folds.fold_of.size() != design.n_rows)
    fail("risk index: fold assignment does not match design");
  if (space.size() != design.columns.size())
    fail("risk index: feature space does not match design");

  std::set<std::uint32_t> cancel_pos;
  for (const std::string& name : cancel) {
    const auto pos = space.find(name);
    if (!pos) fail("risk index: unknown cancel column \"" + name + "\"");
    cancel_pos.insert(*pos);
  }

  RiskIndex idx;
  idx.scores.assign(design.n_rows, 0.0);
  idx.fold_of = cv.folds.fold_of;
  idx.cancelled = cancel;
  idx.lambda = cv.selected_lambda;

  for (int f = 0; f < cv.folds.k; ++f) {
    LassoFit fit = cv.fold_paths[static_cast<std::size_t>(f)].fits[cv.selected_index];
    std::erase_if(fit.coefficients,
                  [&](const auto& c) { return cancel_pos.count(c.first) > 0; });
    fit.n_nonzero = static_cast<int>(fit.coefficients.size());

    std::vector<std::uint32_t> rows;
    for (std::size_t i = 0; i < design.n_rows; ++i)
      if (cv.folds.fold_of[i] == f) rows.push_back(static_cast<std::uint32_t>(i));
    SparseDesignMatrix held = subset_rows(design, rows);
    std::vector<double> scores = predict_logit(fit, held);
    for (std::size_t i = 0; i < rows.size(); ++i) idx.scores[rows[i]] = scores[i];
  }
  return idx;
}

DenseMatrix natural_cubic_basis(std::span<const double> ages, std::span<const double> knots) {
  const std::size_t k = knots.size();
  if (k < 4) fail("spline basis: need at least 4 knots");
  for (std::size_t i = 1; i < k; ++i)
    if (!(knots[i] > knots[i - 1])) fail("spline basis: knots must be strictly ascending");

  // N1 = 1, N2 = x, N_{j+2} = d_j - d_{K-1} with
  // d_j(x) = [(x - k_j)_+^3 - (x - k_K)_+^3] / (k_K - k_j); linear beyond the
  // boundary knots by construction.
  auto cube_plus = [](double v) { return v > 0.0 ? v * v * v : 0.0; };
  auto d = [&](std::size_t j, double x) {
    return (cube_plus(x - knots[j]) - cube_plus(x - knots[k - 1])) / (knots[k - 1] - knots[j]);
  };

  DenseMatrix basis(ages.size(), k);
  for (std::size_t i = 0; i < ages.size(); ++i) {
    const double x = ages[i];
    basis(i, 0) = 1.0;
    basis(i, 1) = x;
    const double d_last = d(k - 2, x);
    for (std::size_t j = 0; j + 2 < k; ++j) basis(i, j + 2) = d(j, x) - d_last;
  }
  return basis;
}

double SplineProfile::evaluate(double age, double index_value) const {
  const double ages[1] = {age};
  DenseMatrix basis = natural_cubic_basis(ages, knots);
  double value = intercept + index_coef * index_value;
  for (std::size_t j = 0; j < coefficients.size(); ++j)
    value += coefficients[j] * basis(0, j + 1);
  return value;
}

double parse_age_midpoint(const std::string& label) {
  const auto dash = label.find('-', 1);  // skip a leading sign position
  if (dash == std::string::npos) return parse_double(label, "age category");
  const double lo = parse_double(label.substr(0, dash), "age category");
  const double hi = parse_double(label.substr(dash + 1), "age category");
  if (hi < lo) fail("age category \"" + label + "\" has hi < lo");
  return 0.5 * (lo + hi);
}

ConditionalProfile fit_conditional_profile(const Cohort& cohort, const RiskIndex& index,
                                           const ProfileOptions& options) {
  const std::size_t n = cohort.records().size();
  if (n == 0) fail("profile: empty cohort");
  if (index.scores.size() != n) fail("profile: index does not match cohort");

  std::vector<double> ages(n);
  std::vector<std::string> gender(n);
  for (std::size_t i = 0; i < n; ++i) {
    const PersonRecord& rec = cohort.records()[i];
    const auto age_it = rec.categorical.find(options.age_feature);
    if (age_it == rec.categorical.end())
      fail("profile: record " + rec.id + " lacks feature \"" + options.age_feature + "\"");
    ages[i] = parse_age_midpoint(age_it->second);
    const auto g_it = rec.categorical.find(options.gender_feature);
    if (g_it == rec.categorical.end())
      fail("profile: record " + rec.id + " lacks feature \"" + options.gender_feature + "\"");
    gender[i] = g_it->second;
  }

  std::vector<std::string> genders;
  for (const std::string& g : gender)
    if (std::find(genders.begin(), genders.end(), g) == genders.end()) genders.push_back(g);
  std::sort(genders.begin(), genders.end());

  std::vector<std::vector<double>> knots(genders.size());
  for (std::size_t g = 0; g < genders.size(); ++g) {
    if (!options.explicit_knots.empty()) {
      knots[g] = options.explicit_knots;
    } else {
      std::vector<double> own;
      for (std::size_t i = 0; i < n; ++i)
        if (gender[i] == genders[g]) own.push_back(ages[i]);
      knots[g] = gender_knots(std::move(own), options.knot_quantiles);
    }
    if (knots[g].size() < 4)
      fail("profile: gender \"" + genders[g] + "\" has fewer than 4 distinct age knots");
  }

  // Columns: intercept | gender dummies (first gender is reference) |
  // per-gender basis without its constant | index (conditional fit only).
  std::vector<DenseMatrix> bases;
  std::size_t basis_cols = 0;
  for (std::size_t g = 0; g < genders.size(); ++g) {
    bases.push_back(natural_cubic_basis(ages, knots[g]));
    basis_cols += knots[g].size() - 1;
  }
  const bool constant_index =
      std::all_of(index.scores.begin(), index.scores.end(),
                  [&](double s) { return s == index.scores[0]; });
  const std::size_t d_uncond = 1 + (genders.size() - 1) + basis_cols;
  const std::size_t d_cond = d_uncond + (constant_index ? 0 : 1);

  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n),
                                            static_cast<Eigen::Index>(d_cond));
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    x(row, 0) = 1.0;
    std::size_t g =
        static_cast<std::size_t>(std::find(genders.begin(), genders.end(), gender[i]) -
                                 genders.begin());
    if (g > 0) x(row, static_cast<Eigen::Index>(g)) = 1.0;
    std::size_t col = genders.size();
    for (std::size_t gg = 0; gg < genders.size(); ++gg) {
      const std::size_t width = knots[gg].size() - 1;
      if (gg == g)
        for (std::size_t j = 0; j < width; ++j)
          x(row, static_cast<Eigen::Index>(col + j)) = bases[gg](i, j + 1);
      col += width;
    }
    if (!constant_index) x(row, static_cast<Eigen::Index>(d_cond - 1)) = index.scores[i];
  }

  const std::vector<std::uint8_t> y = cohort.outcomes(options.outcome);
  Eigen::VectorXd theta_c = newton_logistic(x, y, "profile (conditional)");
  Eigen::VectorXd theta_u =
      newton_logistic(x.leftCols(static_cast<Eigen::Index>(d_uncond)), y,
                      "profile (unconditional)");

  ConditionalProfile out;
  out.index_coef = constant_index ? 0.0 : theta_c(static_cast<Eigen::Index>(d_cond - 1));
  double mean = 0.0;
  for (double s : index.scores) mean += s;
  out.index_mean = mean / static_cast<double>(n);

  std::size_t col = genders.size();
  for (std::size_t g = 0; g < genders.size(); ++g) {
    const std::size_t width = knots[g].size() - 1;
    SplineProfile cond, uncond;
    cond.gender = uncond.gender = genders[g];
    cond.knots = uncond.knots = knots[g];
    cond.intercept = theta_c(0) + (g > 0 ? theta_c(static_cast<Eigen::Index>(g)) : 0.0);
    uncond.intercept = theta_u(0) + (g > 0 ? theta_u(static_cast<Eigen::Index>(g)) : 0.0);
    for (std::size_t j = 0; j < width; ++j) {
      cond.coefficients.push_back(theta_c(static_cast<Eigen::Index>(col + j)));
      uncond.coefficients.push_back(theta_u(static_cast<Eigen::Index>(col + j)));
    }
    cond.index_coef = out.index_coef;
    uncond.index_coef = 0.0;
    out.conditional.push_back(std::move(cond));
    out.unconditional.push_back(std::move(uncond));
    col += width;
  }

  for (std::size_t g = 0; g < genders.size(); ++g) {
    const double lo = knots[g].front(), hi = knots[g].back();
    const int m = std::max(2, options.grid_points);
    for (int t = 0; t < m; ++t) {
      const double age = lo + (hi - lo) * static_cast<double>(t) / (m - 1);
      ProfilePoint pt;
      pt.gender = genders[g];
      pt.age = age;
      pt.logit_conditional = out.conditional[g].evaluate(age, out.index_mean);
      pt.logit_unconditional = out.unconditional[g].evaluate(age, 0.0);
      out.grid.push_back(pt);
    }
  }
  return out;
}

std::vector<HistogramRow> score_distribution(const RiskIndex& index,
                                             std::span<const std::string> group_labels,
                                             std::vector<double> bin_edges) {
  if (group_labels.size() != index.scores.size())
    fail("histogram: group labels do not match scores");
  if (index.scores.empty()) fail("histogram: empty index");

  if (bin_edges.empty()) {
    const auto [lo_it, hi_it] = std::minmax_element(index.scores.begin(), index.scores.end());
    double lo = *lo_it, hi = *hi_it;
    if (lo == hi) hi = lo + 1.0;
    for (int e = 0; e <= 20; ++e)
      bin_edges.push_back(lo + (hi - lo) * static_cast<double>(e) / 20.0);
    bin_edges.back() = hi;  // the arithmetic can land one ulp short of the max
  }
  if (bin_edges.size() < 2) fail("histogram: need at least 2 bin edges");
  for (std::size_t i = 1; i < bin_edges.size(); ++i)
    if (!(bin_edges[i] > bin_edges[i - 1])) fail("histogram: edges must be ascending");

  const std::size_t n_bins = bin_edges.size() - 1;
  std::map<std::string, std::vector<std::uint64_t>> counts;
  for (std::size_t i = 0; i < index.scores.size(); ++i) {
    const double s = index.scores[i];
    if (s < bin_edges.front() || s > bin_edges.back()) continue;
    auto it = std::upper_bound(bin_edges.begin(), bin_edges.end(), s);
    std::size_t bin = static_cast<std::size_t>(it - bin_edges.begin());
    bin = bin == 0 ? 0 : bin - 1;
    if (bin >= n_bins) bin = n_bins - 1;  // top edge closes the last bin
    auto& row = counts[group_labels[i]];
    if (row.empty()) row.assign(n_bins, 0);
    ++row[bin];
  }

  std::vector<HistogramRow> out;
  for (const auto& [group, row] : counts)
    for (std::size_t b = 0; b < n_bins; ++b)
      out.push_back({group, bin_edges[b], bin_edges[b + 1], row[b]});
  return out;
}

}  // namespace hirisk
