#include <exception>
#include <iostream>
#include <string>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "pipeline.hpp"

using hirisk::cli::GlobalOptions;

int main(int argc, char** argv) {
  CLI::App app{"hierarchical claims risk modeling pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", hirisk::cli::kToolVersion);

  GlobalOptions g;
  app.add_option("--taxonomy", g.taxonomy_path, "taxonomy TSV");
  app.add_option("--cohort", g.cohort_path, "cohort JSONL");
  app.add_option("--outcome", g.outcome, "outcome column")
      ->check(CLI::IsMember({"y1", "y2", "y3"}));
  app.add_option("--config", g.config_path, "feature config JSON");
  app.add_option("--design", g.design_cache,
                 "design cache from `featurize`; skips featurization and ignores --config");
  app.add_option("--incidence", g.incidence_path,
                 "incidence series CSV; fills missing per-person incidence values");
  app.add_option("--default", g.category_defaults,
                 "categorical default as feature=value (repeatable)");
  app.add_option("--seed", g.seed, "seed for folds, simulation and imputation");
  app.add_option("--folds", g.folds, "cross-validation fold count")
      ->check(CLI::PositiveNumber);
  app.add_option("--lambda-grid", g.lambda_grid,
                 "COUNT, COUNT:MIN_RATIO or explicit comma-separated values");
  app.add_option("--threads", g.threads, "worker pool size")->check(CLI::PositiveNumber);
  app.add_option("--out-dir", g.out_dir, "artifact directory");

  std::string active = "parse";
  const auto enter = [&](const char* name) {
    active = name;
    g.outcome_explicit = app.count("--outcome") > 0;
  };

  auto* validate = app.add_subcommand("validate-taxonomy",
                                      "check a taxonomy file; with --cohort, count unknown codes");
  validate->fallthrough();
  validate->callback([&] {
    enter("validate-taxonomy");
    hirisk::cli::cmd_validate_taxonomy(g);
  });

  hirisk::cli::SimulateOptions sim;
  auto* simulate = app.add_subcommand("simulate", "generate a synthetic taxonomy and cohort");
  simulate->fallthrough();
  simulate->add_option("--persons", sim.persons, "cohort size");
  simulate->add_option("--mean-codes", sim.mean_codes, "mean leaf codes per person");
  simulate->add_option("--age-correlation", sim.age_correlation,
                       "strength of the age gradient in code assignment");
  simulate->add_option("--intercept", sim.intercept, "outcome model intercept (logit scale)");
  simulate->add_option("--incidence-coef", sim.incidence_coef, "incidence effect per unit");
  simulate->add_option("--y2-fraction", sim.y2_fraction, "P(y2 | y1)");
  simulate->add_option("--y3-fraction", sim.y3_fraction, "P(y3 | y2)");
  simulate->add_option("--age-groups", sim.age_groups, "number of 5-year age bands");
  simulate->add_option("--system", sim.system, "code system to generate");
  simulate->add_option("--branching", sim.branching, "per-level fanout, e.g. 3,4,4");
  simulate->add_option("--effects", sim.effects_path,
                       "JSON with code_effects and categorical_effects");
  simulate->callback([&] {
    enter("simulate");
    hirisk::cli::cmd_simulate(g, sim);
  });

  hirisk::cli::FeaturizeOptions feat;
  auto* featurize = app.add_subcommand("featurize", "build and cache the design matrix");
  featurize->fallthrough();
  featurize->add_option("--design-out", feat.design_out, "cache path (default <out-dir>/design.bin)");
  featurize->callback([&] {
    enter("featurize");
    hirisk::cli::cmd_featurize(g, feat);
  });

  auto* cv_fit = app.add_subcommand(
      "cv-fit", "cross-validate the shrinkage path, refit at the selected value");
  cv_fit->fallthrough();
  cv_fit->callback([&] {
    enter("cv-fit");
    hirisk::cli::cmd_cv_fit(g);
  });

  hirisk::cli::FitOptionsCli fit;
  auto* fit_cmd = app.add_subcommand("fit", "fit once at a fixed shrinkage value");
  fit_cmd->fallthrough();
  fit_cmd->add_option("--lambda", fit.lambda, "shrinkage value")->required();
  fit_cmd->add_flag("--verbose", fit.verbose, "write convergence.jsonl (one line per outer step)");
  fit_cmd->callback([&] {
    enter("fit");
    hirisk::cli::cmd_fit(g, fit);
  });

  hirisk::cli::PredictOptions pred;
  auto* predict = app.add_subcommand("predict", "score a cohort with a frozen model");
  predict->fallthrough();
  predict->add_option("--model", pred.model_path, "model.json from fit or cv-fit");
  predict->add_option("--predictions-out", pred.predictions_out,
                      "output path (default <out-dir>/predictions.csv)");
  predict->callback([&] {
    enter("predict");
    hirisk::cli::cmd_predict(g, pred);
  });

  hirisk::cli::MetricsOptions met;
  auto* metrics = app.add_subcommand("metrics", "evaluate prediction files against outcomes");
  metrics->fallthrough();
  metrics->add_option("--predictions", met.predictions_path, "id,logit CSV");
  metrics->add_option("--prior", met.prior, "reference prevalence for the evidence weight");
  metrics->callback([&] {
    enter("metrics");
    hirisk::cli::cmd_metrics(g, met);
  });

  hirisk::cli::AggregateOptions agg;
  auto* aggregate =
      app.add_subcommand("aggregate", "export odds ratios and group rankings for a model");
  aggregate->fallthrough();
  aggregate->add_option("--model", agg.model_path, "model.json from fit or cv-fit");
  aggregate->add_option("--min-group-size", agg.min_group_size,
                        "flag codes whose group has fewer persons");
  aggregate->callback([&] {
    enter("aggregate");
    hirisk::cli::cmd_aggregate(g, agg);
  });

  hirisk::cli::RiskIndexOptions ridx;
  auto* risk_index = app.add_subcommand(
      "risk-index", "cross-fitted scores with selected coefficients cancelled");
  risk_index->fallthrough();
  risk_index->add_option("--cv-models", ridx.cv_models_path, "cv_models.json from cv-fit");
  risk_index->add_option("--cancel", ridx.cancel, "column names to cancel")->delimiter(',');
  risk_index->add_option("--cancel-file", ridx.cancel_file, "file with one column name per line");
  risk_index->callback([&] {
    enter("risk-index");
    hirisk::cli::cmd_risk_index(g, ridx);
  });

  hirisk::cli::ProfileCliOptions prof;
  auto* profile =
      app.add_subcommand("profile", "conditional and unconditional age profiles of an index");
  profile->fallthrough();
  profile->add_option("--index", prof.index_path, "index.csv from risk-index");
  profile->add_option("--age-feature", prof.age_feature, "categorical age feature name");
  profile->add_option("--gender-feature", prof.gender_feature, "categorical gender feature name");
  profile->add_option("--knots", prof.knots, "explicit spline knots (ages)")->delimiter(',');
  profile->add_option("--grid-points", prof.grid_points, "evaluation grid size")
      ->check(CLI::PositiveNumber);
  profile->callback([&] {
    enter("profile");
    hirisk::cli::cmd_profile(g, prof);
  });

  hirisk::cli::BenchmarkOptions bench;
  auto* benchmark = app.add_subcommand(
      "benchmark", "compare feature configs and external predictions across outcomes");
  benchmark->fallthrough();
  benchmark->add_option("--model-config", bench.configs,
                        "feature config as NAME=PATH or PATH (repeatable)");
  benchmark->add_option("--external", bench.externals,
                        "external id,logit predictions as NAME=PATH or PATH (repeatable)");
  benchmark->callback([&] {
    enter("benchmark");
    hirisk::cli::cmd_benchmark(g, bench);
  });

  hirisk::cli::HoldoutOptions hold;
  auto* holdout = app.add_subcommand(
      "holdout-eval", "score a frozen model on a later cohort wave");
  holdout->fallthrough();
  holdout->add_option("--model", hold.model_path, "model.json from fit or cv-fit");
  holdout->add_option("--exclude-ids", hold.exclude_ids_path,
                      "file with one person id per line to drop before scoring");
  holdout->callback([&] {
    enter("holdout-eval");
    hirisk::cli::cmd_holdout_eval(g, hold);
  });

  hirisk::cli::ReportOptions rep;
  auto* report = app.add_subcommand("report", "emit plot-ready CSV bundles from artifacts");
  report->fallthrough();
  report->add_option("--predictions", rep.predictions,
                     "id,logit CSV as NAME=PATH or PATH (repeatable); emits roc_NAME.csv");
  report->add_option("--effects-a", rep.effects_a, "effects.csv for the scatter x axis");
  report->add_option("--effects-b", rep.effects_b, "effects.csv for the scatter y axis");
  report->add_option("--index", rep.index_path, "index.csv; emits histogram and profile");
  report->callback([&] {
    enter("report");
    hirisk::cli::cmd_report(g, rep);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << nlohmann::json{{"command", active}, {"error", e.what()}}.dump() << "\n";
    return e.get_exit_code();
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"command", active}, {"error", e.what()}}.dump() << "\n";
    return 1;
  }
  return 0;
}
