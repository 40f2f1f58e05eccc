#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hirisk/cohort.hpp"
#include "hirisk/common.hpp"
#include "hirisk/cv.hpp"
#include "hirisk/featurize.hpp"

namespace hirisk {

/// Cross-fitted logit scores: row r is scored by the fold model that never
/// saw r's outcome, with the cancelled columns' coefficients set to zero.
struct RiskIndex {
  std::vector<double> scores;
  std::vector<int> fold_of;
  std::vector<std::string> cancelled;
  double lambda = 0.0;
};

RiskIndex build_risk_index(const CvResult& cv, const SparseDesignMatrix& design,
                           const FeatureSpace& space,
                           const std::vector<std::string>& cancel);

/// Natural cubic spline basis (linear beyond the boundary knots), one row per
/// age, K columns for K knots; the first column is constant 1.
DenseMatrix natural_cubic_basis(std::span<const double> ages, std::span<const double> knots);

struct SplineProfile {
  std::string gender;
  std::vector<double> knots;
  std::vector<double> coefficients;  // basis columns after the constant
  double intercept = 0.0;            // global intercept plus this gender's offset
  double index_coef = 0.0;           // zero in the unconditional variant

  double evaluate(double age, double index_value) const;
};

struct ProfilePoint {
  std::string gender;
  double age = 0.0;
  double logit_conditional = 0.0;
  double logit_unconditional = 0.0;
};

struct ProfileOptions {
  std::string age_feature = "age_group";
  std::string gender_feature = "gender";
  Outcome outcome = Outcome::Y2;
  std::vector<double> knot_quantiles = {0.05, 0.275, 0.5, 0.725, 0.95};  // per gender
  std::vector<double> explicit_knots;  // overrides quantiles when non-empty
  int grid_points = 41;
};

struct ConditionalProfile {
  std::vector<SplineProfile> conditional;    // per gender, index entering linearly
  std::vector<SplineProfile> unconditional;  // per gender, no index term
  double index_coef = 0.0;
  double index_mean = 0.0;
  std::vector<ProfilePoint> grid;  // evaluated with the index fixed at its mean
};

/// Unpenalized logistic fit of the outcome on per-gender spline bases of age
/// plus a single linear index term; the unconditional variant drops the index.
/// Ages are the midpoints of the age-group category labels ("60-64" -> 62).
ConditionalProfile fit_conditional_profile(const Cohort& cohort, const RiskIndex& index,
                                           const ProfileOptions& options = {});

/// Midpoint of a "lo-hi" category label; plain numbers pass through.
double parse_age_midpoint(const std::string& label);

struct HistogramRow {
  std::string group;
  double lo = 0.0;
  double hi = 0.0;
  std::uint64_t count = 0;
};

/// Binned logit-score counts per group. With empty edges, 20 equal-width bins
/// spanning the observed score range are used; the last bin is closed.
std::vector<HistogramRow> score_distribution(const RiskIndex& index,
                                             std::span<const std::string> group_labels,
                                             std::vector<double> bin_edges = {});

}  // namespace hirisk
