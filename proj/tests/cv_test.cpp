#include "hirisk/cv.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "hirisk/common.hpp"
#include "hirisk/metrics.hpp"

using namespace hirisk;

namespace {

// 300 rows, three informative binary columns and two noise columns.
struct CvInstance {
  SparseDesignMatrix design;
  std::vector<std::uint8_t> y;
  std::vector<double> v;

  explicit CvInstance(std::uint64_t seed = 11) {
    const std::size_t n = 300;
    const double effects[5] = {1.6, -1.2, 0.9, 0.0, 0.0};
    design.n_rows = n;
    design.columns.resize(5);
    v.assign(5, 1.0);
    Rng rng(seed);
    std::vector<double> eta(n, -0.4);
    for (std::size_t j = 0; j < 5; ++j)
      for (std::uint32_t i = 0; i < n; ++i)
        if (rng.next_bernoulli(0.35)) {
          design.columns[j].rows.push_back(i);
          eta[i] += effects[j];
        }
    y.resize(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = rng.next_bernoulli(sigmoid(eta[i])) ? 1 : 0;
  }
};

std::vector<std::uint32_t> fold_rows(const FoldAssignment& folds, int f, bool complement) {
  std::vector<std::uint32_t> rows;
  for (std::uint32_t i = 0; i < folds.fold_of.size(); ++i)
    if ((folds.fold_of[i] == f) != complement) rows.push_back(i);
  return rows;
}

}  // namespace

TEST_SUITE("cv") {

TEST_CASE("folds are stratified with class counts differing by at most one") {
  // 401 positives dealt over 5 folds: one fold gets 81, the rest get 80.
  const std::size_t n = 1000003;
  std::vector<std::uint8_t> y(n, 0);
  Rng rng(3);
  std::size_t placed = 0;
  while (placed < 401) {
    std::size_t i = rng.next_below(n);
    if (!y[i]) {
      y[i] = 1;
      ++placed;
    }
  }

  FoldAssignment folds = make_folds(y, 5, 17);
  REQUIRE(folds.fold_of.size() == n);
  CHECK(folds.k == 5);
  CHECK(folds.seed == 17);

  std::vector<std::size_t> pos(5, 0), neg(5, 0);
  for (std::size_t i = 0; i < n; ++i) {
    REQUIRE(folds.fold_of[i] >= 0);
    REQUIRE(folds.fold_of[i] < 5);
    ++(y[i] ? pos : neg)[static_cast<std::size_t>(folds.fold_of[i])];
  }
  std::size_t pos81 = 0;
  for (std::size_t f = 0; f < 5; ++f) {
    CHECK((pos[f] == 80 || pos[f] == 81));
    pos81 += pos[f] == 81;
    CHECK(neg[f] >= 200000 / 5 * 5 / 5);  // sanity: near n/5
    CHECK(std::llabs(static_cast<long long>(neg[f]) -
                     static_cast<long long>(neg[0])) <= 1);
  }
  CHECK(pos81 == 1);
}

TEST_CASE("fold assignment is deterministic in the seed") {
  std::vector<std::uint8_t> y(200);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = i % 3 == 0;
  FoldAssignment a = make_folds(y, 4, 5);
  FoldAssignment b = make_folds(y, 4, 5);
  FoldAssignment c = make_folds(y, 4, 6);
  CHECK(a.fold_of == b.fold_of);
  CHECK(a.fold_of != c.fold_of);
}

TEST_CASE("folds require enough members of each class") {
  std::vector<std::uint8_t> y = {1, 1, 0, 0, 0, 0, 0, 0};
  CHECK_THROWS_WITH_AS(make_folds(y, 3, 1), doctest::Contains("only 2 positives"), Error);
  CHECK_THROWS_AS(make_folds(y, 1, 1), Error);
  CHECK_THROWS_AS(make_folds(std::vector<std::uint8_t>{}, 2, 1), Error);
  std::vector<std::uint8_t> few_neg = {1, 1, 1, 1, 0};
  CHECK_THROWS_WITH_AS(make_folds(few_neg, 2, 1), doctest::Contains("negatives"), Error);
}

TEST_CASE("cv selects an informative lambda and reports coherent tables") {
  CvInstance inst;
  FoldAssignment folds = make_folds(inst.y, 3, 7);
  const double edge = lambda_max(inst.design, inst.y, inst.v);
  auto grid = default_lambda_grid(edge, 12, 0.02);

  CvResult result = cv_select_lambda(inst.design, inst.y, inst.v, grid, folds);
  REQUIRE(result.lambdas.size() == grid.size());
  REQUIRE(result.per_fold_auc.size() == 3);
  REQUIRE(result.mean_auc.size() == grid.size());
  REQUIRE(result.fold_paths.size() == 3);
  REQUIRE(result.oof_logit.size() == inst.design.n_rows);

  for (std::size_t k = 0; k < grid.size(); ++k) {
    double mean = 0.0;
    for (int f = 0; f < 3; ++f) mean += result.per_fold_auc[static_cast<std::size_t>(f)][k];
    mean /= 3.0;
    CHECK(result.mean_auc[k] == doctest::Approx(mean).epsilon(1e-15));
  }

  CHECK(result.selected_lambda == grid[result.selected_index]);
  for (double m : result.mean_auc) CHECK(result.mean_auc[result.selected_index] >= m);

  // Planted effects are strong; out-of-fold predictions must rank well.
  CHECK(auc(result.oof_logit, inst.y) > 0.65);
  CHECK(result.mean_auc[result.selected_index] > 0.65);
}

TEST_CASE("out-of-fold logits come from the complement model, bit for bit") {
  CvInstance inst;
  FoldAssignment folds = make_folds(inst.y, 3, 19);
  const double edge = lambda_max(inst.design, inst.y, inst.v);
  auto grid = default_lambda_grid(edge, 8, 0.05);
  CvResult result = cv_select_lambda(inst.design, inst.y, inst.v, grid, folds);

  for (int f = 0; f < 3; ++f) {
    auto train_rows = fold_rows(folds, f, true);
    auto hold_rows = fold_rows(folds, f, false);
    SparseDesignMatrix train = subset_rows(inst.design, train_rows);
    std::vector<std::uint8_t> train_y;
    for (std::uint32_t i : train_rows) train_y.push_back(inst.y[i]);

    // Refit the complement independently; determinism makes this bitwise.
    LambdaPath path = fit_path(train, train_y, inst.v, grid);
    const LassoFit& selected = path.fits[result.selected_index];
    const LassoFit& stored = result.fold_paths[static_cast<std::size_t>(f)]
                                 .fits[result.selected_index];
    CHECK(selected.intercept == stored.intercept);
    CHECK(selected.coefficients == stored.coefficients);

    SparseDesignMatrix held = subset_rows(inst.design, hold_rows);
    std::vector<double> scores = predict_logit(selected, held);
    for (std::size_t r = 0; r < hold_rows.size(); ++r)
      CHECK(result.oof_logit[hold_rows[r]] == scores[r]);
  }

  // The rebuild helper reproduces the same vector.
  CHECK(cross_fitted_predictions(result, inst.design) == result.oof_logit);
}

TEST_CASE("auc ties resolve to the larger lambda") {
  CvInstance inst;
  FoldAssignment folds = make_folds(inst.y, 3, 23);
  const double edge = lambda_max(inst.design, inst.y, inst.v);
  // Every grid point sits at or above lambda_max, so each fold model is the
  // bare intercept and every AUC is exactly one half.
  const std::vector<double> grid = {edge * 2.0, edge * 1.5, edge * 1.2};
  CvResult result = cv_select_lambda(inst.design, inst.y, inst.v, grid, folds);
  for (const auto& per_fold : result.per_fold_auc)
    for (double a : per_fold) CHECK(a == 0.5);
  CHECK(result.selected_index == 0);
  CHECK(result.selected_lambda == grid[0]);
}

TEST_CASE("thread count does not change any result") {
  CvInstance inst;
  FoldAssignment folds = make_folds(inst.y, 4, 29);
  const double edge = lambda_max(inst.design, inst.y, inst.v);
  auto grid = default_lambda_grid(edge, 10, 0.05);

  CvOptions serial;
  serial.threads = 1;
  CvOptions parallel;
  parallel.threads = 4;
  CvResult a = cv_select_lambda(inst.design, inst.y, inst.v, grid, folds, serial);
  CvResult b = cv_select_lambda(inst.design, inst.y, inst.v, grid, folds, parallel);

  CHECK(a.selected_index == b.selected_index);
  CHECK(a.per_fold_auc == b.per_fold_auc);
  CHECK(a.mean_auc == b.mean_auc);
  CHECK(a.oof_logit == b.oof_logit);
}

TEST_CASE("cv input validation") {
  CvInstance inst;
  FoldAssignment folds = make_folds(inst.y, 3, 1);
  const std::vector<double> grid = {0.1, 0.05};

  FoldAssignment wrong = folds;
  wrong.fold_of.pop_back();
  CHECK_THROWS_WITH_AS(cv_select_lambda(inst.design, inst.y, inst.v, grid, wrong),
                       doctest::Contains("fold assignment"), Error);

  CHECK_THROWS_AS(cv_select_lambda(inst.design, inst.y, inst.v, std::vector<double>{}, folds),
                  Error);

  const std::vector<double> bad_grid = {0.05, 0.1};
  CHECK_THROWS_WITH_AS(cv_select_lambda(inst.design, inst.y, inst.v, bad_grid, folds),
                       doctest::Contains("fold 0"), Error);
}

}  // TEST_SUITE
