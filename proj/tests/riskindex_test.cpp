#include "hirisk/riskindex.hpp"

#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "hirisk/metrics.hpp"

using namespace hirisk;

namespace {

struct IndexInstance {
  SparseDesignMatrix design;
  FeatureSpace space;
  std::vector<std::uint8_t> y;
  std::vector<double> v;

  explicit IndexInstance(std::uint64_t seed = 13) {
    const std::size_t n = 400;
    const double effects[5] = {1.4, -1.1, 0.8, 0.6, 0.0};
    design.n_rows = n;
    design.columns.resize(5);
    v.assign(5, 1.0);
    Rng rng(seed);
    std::vector<double> eta(n, -0.5);
    for (std::size_t j = 0; j < 5; ++j) {
      FeatureColumn col;
      col.name = "ICD:C" + std::to_string(j);
      col.kind = ColumnKind::CodeDummy;
      col.system = CodeSystemId::ICD;
      col.level = 3;
      space.add(std::move(col));
      for (std::uint32_t i = 0; i < n; ++i)
        if (rng.next_bernoulli(0.3)) {
          design.columns[j].rows.push_back(i);
          eta[i] += effects[j];
        }
    }
    y.resize(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = rng.next_bernoulli(sigmoid(eta[i])) ? 1 : 0;
  }
};

CvResult run_cv(const IndexInstance& inst, int k = 3) {
  FoldAssignment folds = make_folds(inst.y, k, 5);
  const double edge = lambda_max(inst.design, inst.y, inst.v);
  auto grid = default_lambda_grid(edge, 10, 0.02);
  return cv_select_lambda(inst.design, inst.y, inst.v, grid, folds);
}

double column_value(const SparseDesignMatrix& design, std::uint32_t col, std::uint32_t row) {
  const DesignColumn& c = design.columns[col];
  if (!c.binary) return c.values[row];
  return std::binary_search(c.rows.begin(), c.rows.end(), row) ? 1.0 : 0.0;
}

// Age-banded cohort whose outcome follows 0.05 * age + index.
struct ProfileData {
  Cohort cohort;
  RiskIndex index;

  explicit ProfileData(std::size_t n = 20000, double index_weight = 1.0,
                       std::uint64_t seed = 2024) {
    static const char* bands[8] = {"40-44", "45-49", "50-54", "55-59",
                                   "60-64", "65-69", "70-74", "75-79"};
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
      PersonRecord person;
      person.id = "p" + std::to_string(i);
      const std::size_t band = rng.next_below(8);
      person.categorical["age_group"] = bands[band];
      person.categorical["gender"] = rng.next_bernoulli(0.5) ? "f" : "m";
      const double age = parse_age_midpoint(bands[band]);
      const double score = rng.next_range(-1.5, 1.5);
      const double eta = -4.2 + 0.05 * age + index_weight * score;
      person.y1 = person.y2 = rng.next_bernoulli(sigmoid(eta));
      cohort.add(person);
      index.scores.push_back(score);
      index.fold_of.push_back(static_cast<int>(i % 3));
    }
  }
};

}  // namespace

TEST_SUITE("riskindex") {

TEST_CASE("risk index scores rows with their own fold model") {
  IndexInstance inst;
  CvResult cv = run_cv(inst);
  RiskIndex index = build_risk_index(cv, inst.design, inst.space, {});

  REQUIRE(index.scores.size() == inst.design.n_rows);
  CHECK(index.fold_of == cv.folds.fold_of);
  CHECK(index.lambda == cv.selected_lambda);
  CHECK(index.cancelled.empty());
  // No cancellation: the index is exactly the out-of-fold prediction.
  CHECK(index.scores == cv.oof_logit);
}

TEST_CASE("cancellation subtracts exactly the cancelled contributions") {
  IndexInstance inst;
  CvResult cv = run_cv(inst);
  RiskIndex full = build_risk_index(cv, inst.design, inst.space, {});
  const std::vector<std::string> cancel = {"ICD:C1", "ICD:C3"};
  RiskIndex partial = build_risk_index(cv, inst.design, inst.space, cancel);

  CHECK(partial.cancelled == cancel);
  for (std::uint32_t r = 0; r < inst.design.n_rows; ++r) {
    const auto f = static_cast<std::size_t>(cv.folds.fold_of[r]);
    const LassoFit& model = cv.fold_paths[f].fits[cv.selected_index];
    double removed = 0.0;
    for (const auto& [j, b] : model.coefficients)
      if (j == 1 || j == 3) removed += b * column_value(inst.design, j, r);
    CHECK(std::abs(partial.scores[r] - (full.scores[r] - removed)) < 1e-10);
  }
}

TEST_CASE("cancelling everything leaves the fold intercepts") {
  IndexInstance inst;
  CvResult cv = run_cv(inst);
  RiskIndex index = build_risk_index(
      cv, inst.design, inst.space,
      {"ICD:C0", "ICD:C1", "ICD:C2", "ICD:C3", "ICD:C4"});
  for (std::uint32_t r = 0; r < inst.design.n_rows; ++r) {
    const auto f = static_cast<std::size_t>(cv.folds.fold_of[r]);
    CHECK(index.scores[r] == cv.fold_paths[f].fits[cv.selected_index].intercept);
  }
}

TEST_CASE("unknown cancel columns are rejected by name") {
  IndexInstance inst;
  CvResult cv = run_cv(inst);
  CHECK_THROWS_WITH_AS(build_risk_index(cv, inst.design, inst.space, {"ICD:NOPE"}),
                       doctest::Contains("ICD:NOPE"), Error);
}

TEST_CASE("natural cubic basis is linear outside the boundary knots") {
  const std::vector<double> knots = {40.0, 50.0, 60.0, 70.0, 80.0};
  std::vector<double> ages;
  for (double a = 20.0; a <= 100.0; a += 0.5) ages.push_back(a);
  DenseMatrix basis = natural_cubic_basis(ages, knots);
  REQUIRE(basis.rows == ages.size());
  REQUIRE(basis.cols == 5);

  auto col = [&](std::size_t j, double age) {
    const std::vector<double> one = {age};
    return natural_cubic_basis(one, knots)(0, j);
  };

  for (std::size_t i = 0; i < ages.size(); ++i) {
    CHECK(basis(i, 0) == 1.0);        // constant column
    CHECK(basis(i, 1) == ages[i]);    // identity column
    if (ages[i] <= 40.0) {
      CHECK(basis(i, 2) == 0.0);      // curvature terms vanish left of the knots
      CHECK(basis(i, 3) == 0.0);
      CHECK(basis(i, 4) == 0.0);
    }
  }

  // Beyond the last knot every column is affine: midpoint equals the mean of
  // the endpoints.
  for (std::size_t j = 2; j < 5; ++j) {
    const double left = col(j, 85.0), mid = col(j, 90.0), right = col(j, 95.0);
    CHECK(std::abs(mid - 0.5 * (left + right)) < 1e-9);
  }

  // Curvature is continuous at an interior knot (second differences match).
  const double h = 1e-3;
  for (std::size_t j = 2; j < 5; ++j) {
    const double knot = 60.0;
    const double left2 = (col(j, knot - h) - 2.0 * col(j, knot - 2.0 * h) + col(j, knot - 3.0 * h)) / (h * h);
    const double right2 = (col(j, knot + 3.0 * h) - 2.0 * col(j, knot + 2.0 * h) + col(j, knot + h)) / (h * h);
    CHECK(std::abs(left2 - right2) < 1e-2);
  }

  CHECK_THROWS_WITH_AS(natural_cubic_basis(ages, std::vector<double>{40.0, 50.0, 60.0}),
                       doctest::Contains("at least 4"), Error);
  CHECK_THROWS_WITH_AS(natural_cubic_basis(ages, std::vector<double>{40.0, 50.0, 50.0, 60.0}),
                       doctest::Contains("ascending"), Error);
}

TEST_CASE("age labels map to midpoints") {
  CHECK(parse_age_midpoint("60-64") == 62.0);
  CHECK(parse_age_midpoint("40-44") == 42.0);
  CHECK(parse_age_midpoint("75") == 75.0);
  CHECK(parse_age_midpoint("62.5") == 62.5);
  CHECK_THROWS_WITH_AS(parse_age_midpoint("64-60"), doctest::Contains("hi < lo"), Error);
  CHECK_THROWS_AS(parse_age_midpoint("x-y"), Error);
}

TEST_CASE("conditional profile recovers the planted index weight and age slope") {
  ProfileData data;
  ConditionalProfile profile = fit_conditional_profile(data.cohort, data.index);

  CHECK(profile.index_coef >= 0.8);
  CHECK(profile.index_coef <= 1.2);
  REQUIRE(profile.conditional.size() == 2);
  REQUIRE(profile.unconditional.size() == 2);
  CHECK(profile.conditional[0].gender == "f");
  CHECK(profile.conditional[1].gender == "m");
  CHECK(std::abs(profile.index_mean) < 0.1);

  // Both genders share the generating process: profiles agree within 0.1.
  for (double age : {45.0, 55.0, 65.0, 75.0}) {
    const double f = profile.conditional[0].evaluate(age, profile.index_mean);
    const double m = profile.conditional[1].evaluate(age, profile.index_mean);
    CHECK(std::abs(f - m) < 0.1);
  }

  // The planted slope of 0.05 per year over 35 years is 1.75.
  for (const SplineProfile& sp : profile.conditional) {
    const double rise = sp.evaluate(77.0, profile.index_mean) -
                        sp.evaluate(42.0, profile.index_mean);
    CHECK(rise == doctest::Approx(1.75).epsilon(0.25));
  }

  // Grid rows cover both genders and carry both profile variants.
  REQUIRE(!profile.grid.empty());
  bool saw_f = false, saw_m = false;
  for (const ProfilePoint& pt : profile.grid) {
    (pt.gender == "f" ? saw_f : saw_m) = true;
    const auto& cond = profile.conditional[pt.gender == "f" ? 0 : 1];
    CHECK(pt.logit_conditional ==
          doctest::Approx(cond.evaluate(pt.age, profile.index_mean)).epsilon(1e-12));
  }
  CHECK(saw_f);
  CHECK(saw_m);
}

TEST_CASE("a constant index is dropped and both variants coincide") {
  ProfileData data(2000, 0.0);
  std::fill(data.index.scores.begin(), data.index.scores.end(), 0.0);
  ConditionalProfile profile = fit_conditional_profile(data.cohort, data.index);

  CHECK(profile.index_coef == 0.0);
  REQUIRE(profile.conditional.size() == profile.unconditional.size());
  for (std::size_t g = 0; g < profile.conditional.size(); ++g) {
    CHECK(profile.conditional[g].intercept == profile.unconditional[g].intercept);
    CHECK(profile.conditional[g].coefficients == profile.unconditional[g].coefficients);
  }
  for (const ProfilePoint& pt : profile.grid)
    CHECK(pt.logit_conditional == pt.logit_unconditional);
}

TEST_CASE("explicit knots override the quantile rule") {
  ProfileData data(1500);
  ProfileOptions options;
  options.explicit_knots = {42.0, 52.0, 62.0, 72.0};
  ConditionalProfile profile = fit_conditional_profile(data.cohort, data.index, options);
  for (const SplineProfile& sp : profile.conditional)
    CHECK(sp.knots == options.explicit_knots);
}

TEST_CASE("too few distinct ages for the knot rule is an error") {
  Cohort cohort;
  Rng rng(3);
  RiskIndex index;
  for (int i = 0; i < 200; ++i) {
    PersonRecord person;
    person.id = "p" + std::to_string(i);
    person.categorical["age_group"] = i % 2 ? "40-44" : "45-49";
    person.categorical["gender"] = "f";
    person.y1 = person.y2 = rng.next_bernoulli(0.3);
    cohort.add(person);
    index.scores.push_back(rng.next_range(-1.0, 1.0));
    index.fold_of.push_back(0);
  }
  CHECK_THROWS_WITH_AS(fit_conditional_profile(cohort, index),
                       doctest::Contains("4 distinct age knots"), Error);
}

TEST_CASE("profile validates its inputs") {
  ProfileData data(300);
  RiskIndex short_index = data.index;
  short_index.scores.pop_back();
  CHECK_THROWS_WITH_AS(fit_conditional_profile(data.cohort, short_index),
                       doctest::Contains("does not match"), Error);

  ProfileOptions bad;
  bad.gender_feature = "sex";
  CHECK_THROWS_WITH_AS(fit_conditional_profile(data.cohort, data.index, bad),
                       doctest::Contains("sex"), Error);
}

TEST_CASE("score histogram bins per group with a closed last bin") {
  RiskIndex index;
  index.scores = {0.0, 0.5, 1.0, 2.0, 3.99, 4.0};
  const std::vector<std::string> groups = {"a", "b", "a", "b", "a", "b"};

  auto rows = score_distribution(index, groups);
  REQUIRE(rows.size() == 40);  // 20 bins x 2 groups, zero bins included
  std::uint64_t total = 0;
  double width_sum = 0.0;
  for (const HistogramRow& r : rows) {
    total += r.count;
    width_sum += r.hi - r.lo;
    CHECK(r.hi > r.lo);
  }
  CHECK(total == 6);
  CHECK(width_sum == doctest::Approx(2.0 * 4.0).epsilon(1e-12));

  // The maximum score lands in the last bin, not outside it.
  const HistogramRow& last_b = *std::find_if(rows.begin(), rows.end(), [](const HistogramRow& r) {
    return r.group == "b" && r.hi == 4.0;
  });
  CHECK(last_b.count == 1);

  auto custom = score_distribution(index, groups, {0.0, 1.0, 2.0});
  REQUIRE(custom.size() == 4);  // 2 bins x 2 groups
  std::uint64_t kept = 0;
  for (const HistogramRow& r : custom) kept += r.count;
  CHECK(kept == 4);  // 3.99 and 4.0 fall outside the explicit edges

  CHECK_THROWS_WITH_AS(score_distribution(index, groups, {1.0, 0.5}),
                       doctest::Contains("ascending"), Error);
  CHECK_THROWS_AS(score_distribution(index, std::vector<std::string>{"a"}), Error);
}

TEST_CASE("degenerate constant scores still bin") {
  RiskIndex index;
  index.scores = {1.5, 1.5, 1.5};
  const std::vector<std::string> groups = {"a", "a", "a"};
  auto rows = score_distribution(index, groups);
  REQUIRE(rows.size() == 20);
  std::uint64_t total = 0;
  for (const HistogramRow& r : rows) total += r.count;
  CHECK(total == 3);
  CHECK(rows.front().lo == 1.5);
  CHECK(rows.back().hi == 2.5);
}

}  // TEST_SUITE
