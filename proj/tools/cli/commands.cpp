#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hirisk/common.hpp"
#include "pipeline.hpp"

namespace hirisk::cli {

using json = nlohmann::json;

namespace {

std::ofstream open_artifact(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write " + path.string());
  return out;
}

void close_artifact(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) fail("write failed: " + path.string());
}

void write_json_artifact(const std::filesystem::path& path, const json& j) {
  auto out = open_artifact(path);
  out << j.dump(2) << '\n';
  close_artifact(out, path);
}

/// "NAME=PATH" pairs; a bare path is named by its stem.
std::pair<std::string, std::string> parse_named_path(const std::string& arg) {
  const auto eq = arg.find('=');
  if (eq != std::string::npos && eq > 0) return {arg.substr(0, eq), arg.substr(eq + 1)};
  return {std::filesystem::path(arg).stem().string(), arg};
}

std::uint64_t count_ones(const std::vector<std::uint8_t>& y) {
  std::uint64_t n = 0;
  for (std::uint8_t v : y) n += v;
  return n;
}

/// Warm-started refit on the full data, stopping at the selected lambda.
LassoFit refit_at_selected(const SparseDesignMatrix& design,
                           const std::vector<std::uint8_t>& y,
                           const std::vector<double>& penalties,
                           const std::vector<double>& grid, std::size_t selected_index) {
  const std::vector<double> prefix(grid.begin(),
                                   grid.begin() + static_cast<std::ptrdiff_t>(selected_index) + 1);
  LambdaPath path = fit_path(design, y, penalties, prefix);
  return std::move(path.fits.back());
}

}  // namespace

// ---------------------------------------------------------------------------
// validate-taxonomy
// ---------------------------------------------------------------------------

void cmd_validate_taxonomy(const GlobalOptions& g) {
  RunManifest manifest("validate-taxonomy");
  note_globals(manifest, g);
  const auto out_dir = ensure_out_dir(g);

  const Taxonomy taxonomy = load_taxonomy_input(g, manifest);
  manifest.phase_done("load");

  json summary;
  summary["nodes"] = taxonomy.size();
  json levels = json::array();
  for (const auto& [key, count] : taxonomy.level_counts())
    levels.push_back({{"system", to_string(key.first)}, {"level", key.second}, {"count", count}});
  summary["levels"] = std::move(levels);

  std::uint64_t unknown = 0;
  if (!g.cohort_path.empty()) {
    const Cohort cohort = load_cohort_input(g, manifest);
    for (const PersonRecord& rec : cohort.records()) {
      std::uint64_t skipped = 0;
      expand_codes(taxonomy, rec.codes, UnknownCodePolicy::Skip, &skipped);
      unknown += skipped;
    }
    summary["cohort_records"] = cohort.size();
    summary["unknown_code_entries"] = unknown;
  }
  manifest.phase_done("check");

  write_json_artifact(out_dir / "validation.json", summary);
  manifest.write(out_dir);
  std::cout << "validate-taxonomy: " << taxonomy.size() << " nodes";
  if (!g.cohort_path.empty()) std::cout << ", " << unknown << " unknown code entries";
  std::cout << "\n";
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

void cmd_simulate(const GlobalOptions& g, const SimulateOptions& opt) {
  RunManifest manifest("simulate");
  note_globals(manifest, g);
  manifest.flag("persons", std::to_string(opt.persons));
  manifest.flag("system", opt.system);
  manifest.flag("branching", opt.branching);
  const auto out_dir = ensure_out_dir(g);

  GeneratorSpec spec;
  const auto system = parse_code_system(opt.system);
  if (!system) fail("--system must be ICD, ATC or OPS, not \"" + opt.system + "\"");
  std::vector<int> branching;
  for (const std::string& token : split(opt.branching, ','))
    branching.push_back(static_cast<int>(parse_int(token, "--branching factor")));
  spec.systems = {{*system, std::move(branching)}};
  spec.n_persons = opt.persons;
  spec.mean_codes_per_person = opt.mean_codes;
  spec.age_correlation = opt.age_correlation;
  spec.intercept = opt.intercept;
  spec.incidence_coef = opt.incidence_coef;
  spec.y2_fraction = opt.y2_fraction;
  spec.y3_fraction = opt.y3_fraction;
  spec.n_age_groups = opt.age_groups;
  spec.seed = g.seed;

  if (!opt.effects_path.empty()) {
    manifest.input(opt.effects_path);
    std::ifstream in(opt.effects_path);
    if (!in) fail("cannot open " + opt.effects_path);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      fail(opt.effects_path + ": " + e.what());
    }
    try {
      for (const json& e : j.value("code_effects", json::array())) {
        const auto effect_system = parse_code_system(e.at("system").get<std::string>());
        if (!effect_system)
          fail(opt.effects_path + ": unknown code system in code_effects");
        spec.effects.push_back(
            {*effect_system, e.at("code").get<std::string>(), e.at("coef").get<double>()});
      }
      for (const json& e : j.value("categorical_effects", json::array()))
        spec.categorical_effects.push_back({e.at("feature").get<std::string>(),
                                            e.at("category").get<std::string>(),
                                            e.at("coef").get<double>()});
    } catch (const json::exception& e) {
      fail(opt.effects_path + ": " + e.what());
    }
  }

  const Taxonomy taxonomy = generate_taxonomy(spec);
  manifest.phase_done("taxonomy");
  SyntheticCohort synth = generate_cohort(taxonomy, spec, g.threads);
  manifest.phase_done("cohort");

  write_taxonomy_tsv(taxonomy, out_dir / "taxonomy.tsv");
  write_cohort_jsonl(synth.cohort, out_dir / "cohort.jsonl");
  write_sidecar_csv(out_dir / "sidecar.csv", synth.cohort, synth.true_logit);

  std::size_t leaves = 0;
  for (const CodeNode& node : taxonomy.nodes())
    if (taxonomy.children(node.system, node.code).empty()) ++leaves;
  double y1 = 0, y2 = 0, y3 = 0, codes = 0;
  for (const PersonRecord& rec : synth.cohort.records()) {
    y1 += rec.y1;
    y2 += rec.y2;
    y3 += rec.y3;
    codes += static_cast<double>(rec.codes.size());
  }
  const double n = static_cast<double>(synth.cohort.size());
  write_json_artifact(out_dir / "simulation.json",
                      json{{"persons", synth.cohort.size()},
                           {"taxonomy_nodes", taxonomy.size()},
                           {"leaves", leaves},
                           {"mean_codes", codes / n},
                           {"prevalence", json{{"y1", y1 / n}, {"y2", y2 / n}, {"y3", y3 / n}}}});
  manifest.phase_done("write");
  manifest.write(out_dir);
  std::cout << "simulate: " << synth.cohort.size() << " persons over " << taxonomy.size()
            << " taxonomy nodes\n";
}

// ---------------------------------------------------------------------------
// featurize
// ---------------------------------------------------------------------------

void cmd_featurize(const GlobalOptions& g, const FeaturizeOptions& opt) {
  RunManifest manifest("featurize");
  note_globals(manifest, g);
  const auto out_dir = ensure_out_dir(g);

  const Taxonomy taxonomy = load_taxonomy_input(g, manifest);
  const Cohort cohort = load_cohort_input(g, manifest);
  const FeatureConfig config = load_config_input(g, manifest);
  manifest.phase_done("load");

  const DesignBuild build = build_design(cohort, taxonomy, config);
  manifest.phase_done("featurize");

  const std::filesystem::path design_path =
      opt.design_out.empty() ? out_dir / "design.bin" : std::filesystem::path(opt.design_out);
  save_design(design_path, build.space, build.matrix);

  std::size_t code_cols = 0, categorical_cols = 0, continuous_cols = 0;
  for (const FeatureColumn& col : build.space.columns()) {
    switch (col.kind) {
      case ColumnKind::CodeDummy: ++code_cols; break;
      case ColumnKind::CategoricalDummy: ++categorical_cols; break;
      case ColumnKind::Continuous: ++continuous_cols; break;
    }
  }
  write_json_artifact(out_dir / "featurize.json",
                      json{{"rows", build.matrix.n_rows},
                           {"columns", build.matrix.n_cols()},
                           {"binary_nnz", build.matrix.binary_nnz()},
                           {"code_columns", code_cols},
                           {"categorical_columns", categorical_cols},
                           {"continuous_columns", continuous_cols},
                           {"unknown_codes_skipped", build.unknown_codes_skipped},
                           {"design", design_path.string()}});
  manifest.phase_done("write");
  manifest.write(out_dir);
  std::cout << "featurize: " << build.matrix.n_rows << " rows, " << build.matrix.n_cols()
            << " columns, " << build.matrix.binary_nnz() << " nonzeros -> "
            << design_path.string() << "\n";
}

// ---------------------------------------------------------------------------
// cv-fit
// ---------------------------------------------------------------------------

void cmd_cv_fit(const GlobalOptions& g) {
  RunManifest manifest("cv-fit");
  note_globals(manifest, g);
  const auto out_dir = ensure_out_dir(g);

  const Taxonomy taxonomy = load_taxonomy_input(g, manifest);
  const Cohort cohort = load_cohort_input(g, manifest);
  const DesignBuild build = obtain_design(g, taxonomy, cohort, manifest);
  manifest.phase_done("featurize");

  const std::vector<std::uint8_t> y = cohort.outcomes(parse_outcome_flag(g.outcome));
  const std::vector<double> penalties = build.space.penalty_factors();
  const double edge = lambda_max(build.matrix, y, penalties);
  const std::vector<double> grid = resolve_lambda_grid(g.lambda_grid, edge);

  const FoldAssignment folds = make_folds(y, g.folds, g.seed);
  CvOptions options;
  options.threads = g.threads;
  const CvResult cv = cv_select_lambda(build.matrix, y, penalties, grid, folds, options);
  manifest.phase_done("cv");

  const LassoFit full = refit_at_selected(build.matrix, y, penalties, grid, cv.selected_index);
  manifest.phase_done("refit");

  const ModelArtifact model = make_model_artifact(full, build.space, g.outcome, cohort.size());
  write_model_json(out_dir / "model.json", model);
  write_cv_models_json(out_dir / "cv_models.json", make_cv_artifact(cv, build.space, g.outcome));
  write_cv_report_csv(out_dir / "cv_report.csv", cv);
  write_predictions_csv(out_dir / "oof_predictions.csv", cohort.ids(), cv.oof_logit);
  manifest.set_selected_lambda(cv.selected_lambda);
  manifest.phase_done("write");
  manifest.write(out_dir);

  std::cout << "cv-fit: selected lambda " << format_g(cv.selected_lambda, 6) << " (index "
            << cv.selected_index << " of " << grid.size() << "), mean oof auc "
            << format_g(cv.mean_auc[cv.selected_index], 6) << ", refit nonzero "
            << full.n_nonzero << "\n";
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

void cmd_fit(const GlobalOptions& g, const FitOptionsCli& opt) {
  RunManifest manifest("fit");
  note_globals(manifest, g);
  manifest.flag("lambda", format_g(opt.lambda));
  const auto out_dir = ensure_out_dir(g);

  const Taxonomy taxonomy = load_taxonomy_input(g, manifest);
  const Cohort cohort = load_cohort_input(g, manifest);
  const DesignBuild build = obtain_design(g, taxonomy, cohort, manifest);
  manifest.phase_done("featurize");

  const std::vector<std::uint8_t> y = cohort.outcomes(parse_outcome_flag(g.outcome));
  const std::vector<double> penalties = build.space.penalty_factors();

  FitOptions options;
  std::ofstream log_out;
  const auto log_path = out_dir / "convergence.jsonl";
  if (opt.verbose) {
    log_out = open_artifact(log_path);
    options.log = [&log_out](const IterationLog& it) {
      log_out << json{{"outer", it.outer},
                      {"objective", it.objective},
                      {"n_nonzero", it.n_nonzero},
                      {"max_kkt", it.max_kkt}}
                     .dump()
              << '\n';
    };
  }

  const LassoFit fit = fit_logistic_lasso(build.matrix, y, penalties, opt.lambda, options);
  if (opt.verbose) close_artifact(log_out, log_path);
  manifest.phase_done("fit");

  write_model_json(out_dir / "model.json",
                   make_model_artifact(fit, build.space, g.outcome, cohort.size()));
  manifest.set_selected_lambda(opt.lambda);
  manifest.phase_done("write");
  manifest.write(out_dir);
  std::cout << "fit: lambda " << format_g(opt.lambda, 6) << ", nonzero " << fit.n_nonzero
            << ", objective " << format_g(fit.objective, 6) << "\n";
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

void cmd_predict(const GlobalOptions& g, const PredictOptions& opt) {
  RunManifest manifest("predict");
  note_globals(manifest, g);
  const auto out_dir = ensure_out_dir(g);

  require_flag(opt.model_path, "--model", "predict");
  manifest.input(opt.model_path);
  const ModelArtifact model = load_model_json(opt.model_path);
  const Taxonomy taxonomy = load_taxonomy_input(g, manifest);
  const Cohort cohort = load_cohort_input(g, manifest);
  manifest.phase_done("load");

  std::uint64_t unknown = 0;
  const std::vector<double> logits = score_cohort(model, taxonomy, cohort, &unknown);
  manifest.phase_done("score");

  const std::filesystem::path pred_path = opt.predictions_out.empty()
                                              ? out_dir / "predictions.csv"
                                              : std::filesystem::path(opt.predictions_out);
  write_predictions_csv(pred_path, cohort.ids(), logits);
  manifest.phase_done("write");
  manifest.write(out_dir);

  if (unknown > 0)
    std::cerr << json{{"warning", "code entries absent from the taxonomy were ignored"},
                      {"unknown_code_entries", unknown}}
                     .dump()
              << "\n";
  std::cout << "predict: scored " << cohort.size() << " records -> " << pred_path.string()
            << "\n";
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

void cmd_metrics(const GlobalOptions& g, const MetricsOptions& opt) {
  RunManifest manifest("metrics");
  note_globals(manifest, g);
  const auto out_dir = ensure_out_dir(g);

  const Cohort cohort = load_cohort_input(g, manifest);
  require_flag(opt.predictions_path, "--predictions", "metrics");
  manifest.input(opt.predictions_path);
  const std::vector<double> logits = read_predictions_csv(opt.predictions_path, cohort);
  const std::vector<std::uint8_t> y = cohort.outcomes(parse_outcome_flag(g.outcome));
  manifest.phase_done("load");

  const EvaluationReport report = evaluate_predictions(logits, y, opt.prior);
  write_evaluation_json(out_dir / "evaluation.json", report, {{"outcome", g.outcome}});
  write_roc_csv(out_dir / "roc.csv", roc_curve(logits, y));
  manifest.phase_done("write");
  manifest.write(out_dir);
  std::cout << "metrics: auc " << format_g(report.auc, 6) << ", lambda_woe "
            << format_g(report.lambda_woe, 6) << ", log_lik " << format_g(report.log_lik, 6)
            << "\n";
}

// ---------------------------------------------------------------------------
// aggregate
// ---------------------------------------------------------------------------

void cmd_aggregate(const GlobalOptions& g, const AggregateOptions& opt) {
  RunManifest manifest("aggregate");
  note_globals(manifest, g);
  manifest.flag("min_group_size", std::to_string(opt.min_group_size));
  const auto out_dir = ensure_out_dir(g);

  require_flag(opt.model_path, "--model", "aggregate");
  manifest.input(opt.model_path);
  const ModelArtifact model = load_model_json(opt.model_path);
  const Taxonomy taxonomy = load_taxonomy_input(g, manifest);
  const Cohort cohort = load_cohort_input(g, manifest);
  const DesignBuild build = obtain_design(g, taxonomy, cohort, manifest);
  manifest.phase_done("featurize");

  const LassoFit fit = fit_from_artifact(model, build.space);
  const std::vector<EffectsRow> rows =
      export_coefficients(fit, build.space, taxonomy, build.matrix, opt.min_group_size);
  const std::vector<GroupSummary> groups =
      population_importance(all_group_summaries(fit, build.space, taxonomy, build.matrix));
  manifest.phase_done("aggregate");

  write_effects_csv((out_dir / "effects.csv").string(), rows);
  write_groups_csv((out_dir / "groups.csv").string(), groups);

  json by_level = json::object();
  for (const auto& [level, count] : nonzero_counts_by_level(fit, build.space))
    by_level[std::to_string(level)] = count;
  write_json_artifact(out_dir / "aggregate_summary.json",
                      json{{"effect_rows", rows.size()},
                           {"groups", groups.size()},
                           {"nonzero_by_level", std::move(by_level)},
                           {"min_group_size", opt.min_group_size}});
  manifest.phase_done("write");
  manifest.write(out_dir);
  std::cout << "aggregate: " << rows.size() << " effect rows, " << groups.size()
            << " groups\n";
}

// ---------------------------------------------------------------------------
// risk-index
// ---------------------------------------------------------------------------

void cmd_risk_index(const GlobalOptions& g, const RiskIndexOptions& opt) {
  RunManifest manifest("risk-index");
  note_globals(manifest, g);
  const auto out_dir = ensure_out_dir(g);

  require_flag(opt.cv_models_path, "--cv-models", "risk-index");
  manifest.input(opt.cv_models_path);
  const CvArtifact artifact = load_cv_models_json(opt.cv_models_path);
  const Taxonomy taxonomy = load_taxonomy_input(g, manifest);
  const Cohort cohort = load_cohort_input(g, manifest);
  const DesignBuild build = obtain_design(g, taxonomy, cohort, manifest);
  manifest.phase_done("featurize");

  std::vector<std::string> cancel = opt.cancel;
  if (!opt.cancel_file.empty()) {
    manifest.input(opt.cancel_file);
    std::ifstream in(opt.cancel_file);
    if (!in) fail("cannot open " + opt.cancel_file);
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) cancel.push_back(line);
  }
  manifest.flag("cancel", std::to_string(cancel.size()) + " columns");

  const CvResult cv = cv_from_artifact(artifact, build.space);
  const RiskIndex index = build_risk_index(cv, build.matrix, build.space, cancel);
  manifest.phase_done("index");

  write_index_csv(out_dir / "index.csv", cohort.ids(), index);
  manifest.set_selected_lambda(artifact.selected_lambda);
  manifest.phase_done("write");
  manifest.write(out_dir);
  std::cout << "risk-index: " << index.scores.size() << " scores, " << cancel.size()
            << " cancelled columns\n";
}

// ---------------------------------------------------------------------------
// profile
// ---------------------------------------------------------------------------

void cmd_profile(const GlobalOptions& g, const ProfileCliOptions& opt) {
  RunManifest manifest("profile");
  note_globals(manifest, g);
  const auto out_dir = ensure_out_dir(g);

  const Cohort cohort = load_cohort_input(g, manifest);
  require_flag(opt.index_path, "--index", "profile");
  manifest.input(opt.index_path);
  const RiskIndex index = read_index_csv(opt.index_path, cohort);
  manifest.phase_done("load");

  ProfileOptions options;
  options.age_feature = opt.age_feature;
  options.gender_feature = opt.gender_feature;
  options.outcome = parse_outcome_flag(g.outcome);
  options.explicit_knots = opt.knots;
  options.grid_points = opt.grid_points;
  const ConditionalProfile profile = fit_conditional_profile(cohort, index, options);
  manifest.phase_done("fit");

  write_profile_csv(out_dir / "profile.csv", profile.grid);

  std::vector<std::string> groups;
  groups.reserve(cohort.size());
  for (const PersonRecord& rec : cohort.records()) {
    const auto it = rec.categorical.find(opt.gender_feature);
    if (it == rec.categorical.end())
      fail("record " + rec.id + " lacks feature \"" + opt.gender_feature + "\"");
    groups.push_back(it->second);
  }
  write_histogram_csv(out_dir / "histogram.csv", score_distribution(index, groups));

  json knots = json::object();
  for (const SplineProfile& p : profile.conditional) knots[p.gender] = p.knots;
  write_json_artifact(out_dir / "profile_summary.json",
                      json{{"index_coef", profile.index_coef},
                           {"index_mean", profile.index_mean},
                           {"knots", std::move(knots)},
                           {"outcome", g.outcome}});
  manifest.phase_done("write");
  manifest.write(out_dir);
  std::cout << "profile: index coefficient " << format_g(profile.index_coef, 6)
            << ", index mean " << format_g(profile.index_mean, 6) << "\n";
}

// ---------------------------------------------------------------------------
// benchmark
// ---------------------------------------------------------------------------

namespace {

struct BenchmarkRow {
  std::string model;
  std::string outcome;
  std::size_t n = 0;
  std::size_t n_pos = 0;
  double auc_value = 0.0;
  double lambda_woe = 0.0;
  double log_lik = 0.0;
  std::optional<double> selected_lambda;
  std::optional<int> n_nonzero;
};

BenchmarkRow evaluate_adjusted(const std::string& model, const std::string& outcome,
                               const std::vector<double>& logits,
                               const std::vector<std::uint8_t>& y) {
  const double prevalence =
      static_cast<double>(count_ones(y)) / static_cast<double>(y.size());
  const PrevalenceAdjustment adjusted = prevalence_adjust(logits, prevalence);
  const EvaluationReport report = evaluate_predictions(adjusted.logits, y, prevalence);
  BenchmarkRow row;
  row.model = model;
  row.outcome = outcome;
  row.n = report.n;
  row.n_pos = report.n_pos;
  row.auc_value = report.auc;
  row.lambda_woe = report.lambda_woe;
  row.log_lik = report.log_lik;
  return row;
}

}  // namespace

void cmd_benchmark(const GlobalOptions& g, const BenchmarkOptions& opt) {
  RunManifest manifest("benchmark");
  note_globals(manifest, g);
  const auto out_dir = ensure_out_dir(g);

  if (opt.configs.empty() && opt.externals.empty())
    fail("benchmark: pass at least one --model-config or --external");

  const Taxonomy taxonomy = load_taxonomy_input(g, manifest);
  const Cohort cohort = load_cohort_input(g, manifest);
  manifest.phase_done("load");

  std::vector<std::string> outcomes;
  if (g.outcome_explicit)
    outcomes = {g.outcome};
  else
    outcomes = {"y1", "y2", "y3"};

  std::vector<BenchmarkRow> rows;
  for (const std::string& arg : opt.configs) {
    const auto [name, path] = parse_named_path(arg);
    try {
      manifest.input(path);
      const FeatureConfig config = load_feature_config(path);
      const DesignBuild build = build_design(cohort, taxonomy, config);
      const std::vector<double> penalties = build.space.penalty_factors();

      for (const std::string& outcome_name : outcomes) {
        const std::vector<std::uint8_t> y = cohort.outcomes(parse_outcome_flag(outcome_name));
        const std::uint64_t n_pos = count_ones(y);
        if (n_pos == 0 || n_pos == y.size())
          fail("outcome " + outcome_name + " is constant in the cohort");

        const double edge = lambda_max(build.matrix, y, penalties);
        const std::vector<double> grid = resolve_lambda_grid(g.lambda_grid, edge);
        const FoldAssignment folds = make_folds(y, g.folds, g.seed);
        CvOptions options;
        options.threads = g.threads;
        const CvResult cv = cv_select_lambda(build.matrix, y, penalties, grid, folds, options);
        const LassoFit full =
            refit_at_selected(build.matrix, y, penalties, grid, cv.selected_index);

        BenchmarkRow row = evaluate_adjusted(name, outcome_name, cv.oof_logit, y);
        row.selected_lambda = cv.selected_lambda;
        row.n_nonzero = full.n_nonzero;
        rows.push_back(std::move(row));
      }
      manifest.phase_done("config " + name);
    } catch (const Error& e) {
      fail("config " + name + ": " + e.what());
    }
  }

  for (const std::string& arg : opt.externals) {
    const auto [name, path] = parse_named_path(arg);
    manifest.input(path);
    const std::vector<double> logits = read_predictions_csv(path, cohort);
    for (const std::string& outcome_name : outcomes) {
      const std::vector<std::uint8_t> y = cohort.outcomes(parse_outcome_flag(outcome_name));
      const std::uint64_t n_pos = count_ones(y);
      if (n_pos == 0 || n_pos == y.size())
        fail("outcome " + outcome_name + " is constant in the cohort");
      rows.push_back(evaluate_adjusted(name, outcome_name, logits, y));
    }
    manifest.phase_done("external " + name);
  }

  const auto table_path = out_dir / "benchmark.csv";
  auto out = open_artifact(table_path);
  out << "model,outcome,n,n_pos,auc,lambda_woe,log_lik,selected_lambda,n_nonzero\n";
  for (const BenchmarkRow& row : rows) {
    out << row.model << ',' << row.outcome << ',' << row.n << ',' << row.n_pos << ','
        << format_g(row.auc_value) << ',' << format_g(row.lambda_woe) << ','
        << format_g(row.log_lik) << ',';
    if (row.selected_lambda) out << format_g(*row.selected_lambda);
    out << ',';
    if (row.n_nonzero) out << *row.n_nonzero;
    out << '\n';
  }
  close_artifact(out, table_path);
  manifest.phase_done("write");
  manifest.write(out_dir);
  std::cout << "benchmark: " << rows.size() << " rows -> " << table_path.string() << "\n";
}

// ---------------------------------------------------------------------------
// holdout-eval
// ---------------------------------------------------------------------------

void cmd_holdout_eval(const GlobalOptions& g, const HoldoutOptions& opt) {
  RunManifest manifest("holdout-eval");
  note_globals(manifest, g);
  const auto out_dir = ensure_out_dir(g);

  require_flag(opt.model_path, "--model", "holdout-eval");
  manifest.input(opt.model_path);
  const ModelArtifact model = load_model_json(opt.model_path);
  const Taxonomy taxonomy = load_taxonomy_input(g, manifest);
  const Cohort full_cohort = load_cohort_input(g, manifest);
  manifest.phase_done("load");

  std::set<std::string> excluded_ids;
  if (!opt.exclude_ids_path.empty()) {
    manifest.input(opt.exclude_ids_path);
    std::ifstream in(opt.exclude_ids_path);
    if (!in) fail("cannot open " + opt.exclude_ids_path);
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) excluded_ids.insert(line);
  }

  Cohort cohort;
  std::size_t n_excluded = 0;
  for (const PersonRecord& rec : full_cohort.records()) {
    if (excluded_ids.count(rec.id)) {
      ++n_excluded;
      continue;
    }
    cohort.add(rec);
  }
  if (cohort.empty()) fail("holdout-eval: no records left after exclusions");

  const std::string outcome_name = g.outcome_explicit ? g.outcome : model.outcome;
  const std::vector<std::uint8_t> y = cohort.outcomes(parse_outcome_flag(outcome_name));
  const std::uint64_t n_pos = count_ones(y);
  if (n_pos == 0 || n_pos == y.size())
    fail("holdout-eval: outcome " + outcome_name + " is constant after exclusions");

  std::uint64_t unknown = 0;
  const std::vector<double> scores = score_cohort(model, taxonomy, cohort, &unknown);
  manifest.phase_done("score");

  const double prevalence = static_cast<double>(n_pos) / static_cast<double>(y.size());
  const PrevalenceAdjustment adjusted = prevalence_adjust(scores, prevalence);
  const EvaluationReport report = evaluate_predictions(adjusted.logits, y, prevalence);

  write_evaluation_json(out_dir / "holdout_evaluation.json", report,
                        {{"outcome", outcome_name},
                         {"excluded", std::to_string(n_excluded)},
                         {"unknown_code_entries", std::to_string(unknown)}});
  manifest.phase_done("write");
  manifest.write(out_dir);

  if (unknown > 0)
    std::cerr << json{{"warning", "code entries absent from the taxonomy were ignored"},
                      {"unknown_code_entries", unknown}}
                     .dump()
              << "\n";
  std::cout << "holdout-eval: auc " << format_g(report.auc, 6) << " on " << report.n
            << " records (" << n_excluded << " excluded)\n";
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

namespace {

struct EffectsFileRow {
  std::string code;
  int level = 0;
  double total_logor = 0.0;
};

/// Code rows of an effects CSV, keyed by (system tag, code).
std::map<std::pair<std::string, std::string>, EffectsFileRow> read_effects_csv(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open " + path.string());
  std::string line;
  const char* header = "system,code,level,coef,total_logor,total_or,prevalence,below_min_size";
  if (!std::getline(in, line) || line != header)
    fail(path.string() + ": expected effects CSV header");

  std::map<std::pair<std::string, std::string>, EffectsFileRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() != 8)
      fail(path.string() + ":" + std::to_string(line_no) + ": expected 8 fields");
    if (fields[0].empty()) continue;  // categorical and incidence rows
    EffectsFileRow row;
    row.code = fields[1];
    row.level = static_cast<int>(parse_int(fields[2], "level"));
    row.total_logor = parse_double(fields[4], "total_logor");
    rows[{fields[0], fields[1]}] = std::move(row);
  }
  return rows;
}

}  // namespace

void cmd_report(const GlobalOptions& g, const ReportOptions& opt) {
  RunManifest manifest("report");
  note_globals(manifest, g);
  const auto out_dir = ensure_out_dir(g);

  if (opt.predictions.empty() && opt.effects_a.empty() && opt.index_path.empty())
    fail("report: nothing to do; pass --predictions, --effects-a/--effects-b or --index");
  if (opt.effects_a.empty() != opt.effects_b.empty())
    fail("report: --effects-a and --effects-b must be given together");

  std::vector<std::string> written;

  if (!opt.predictions.empty() || !opt.index_path.empty()) {
    const Cohort cohort = load_cohort_input(g, manifest);
    manifest.phase_done("load");

    if (!opt.predictions.empty()) {
      const std::vector<std::uint8_t> y = cohort.outcomes(parse_outcome_flag(g.outcome));
      const auto metrics_path = out_dir / "report_metrics.csv";
      auto metrics_out = open_artifact(metrics_path);
      metrics_out << "model,auc,lambda_woe,log_lik\n";
      for (const std::string& arg : opt.predictions) {
        const auto [name, path] = parse_named_path(arg);
        manifest.input(path);
        const std::vector<double> logits = read_predictions_csv(path, cohort);
        const auto roc_path = out_dir / ("roc_" + name + ".csv");
        write_roc_csv(roc_path, roc_curve(logits, y));
        written.push_back(roc_path.string());
        const EvaluationReport report = evaluate_predictions(logits, y);
        metrics_out << name << ',' << format_g(report.auc) << ','
                    << format_g(report.lambda_woe) << ',' << format_g(report.log_lik) << '\n';
      }
      close_artifact(metrics_out, metrics_path);
      written.push_back(metrics_path.string());
      manifest.phase_done("roc");
    }

    if (!opt.index_path.empty()) {
      manifest.input(opt.index_path);
      const RiskIndex index = read_index_csv(opt.index_path, cohort);

      std::vector<std::string> groups;
      groups.reserve(cohort.size());
      for (const PersonRecord& rec : cohort.records()) {
        const auto it = rec.categorical.find("gender");
        if (it == rec.categorical.end())
          fail("record " + rec.id + " lacks feature \"gender\"");
        groups.push_back(it->second);
      }
      const auto hist_path = out_dir / "histogram.csv";
      write_histogram_csv(hist_path, score_distribution(index, groups));
      written.push_back(hist_path.string());

      ProfileOptions options;
      options.outcome = parse_outcome_flag(g.outcome);
      const ConditionalProfile profile = fit_conditional_profile(cohort, index, options);
      const auto profile_path = out_dir / "report_profile.csv";
      write_profile_csv(profile_path, profile.grid);
      written.push_back(profile_path.string());
      manifest.phase_done("index");
    }
  }

  if (!opt.effects_a.empty()) {
    manifest.input(opt.effects_a);
    manifest.input(opt.effects_b);
    const auto a = read_effects_csv(opt.effects_a);
    const auto b = read_effects_csv(opt.effects_b);
    const auto scatter_path = out_dir / "scatter.csv";
    auto out = open_artifact(scatter_path);
    out << "system,code,level,logor_a,logor_b\n";
    for (const auto& [key, row_a] : a) {
      const auto it = b.find(key);
      if (it == b.end()) continue;
      out << key.first << ',' << key.second << ',' << row_a.level << ','
          << format_g(row_a.total_logor) << ',' << format_g(it->second.total_logor) << '\n';
    }
    close_artifact(out, scatter_path);
    written.push_back(scatter_path.string());
    manifest.phase_done("scatter");
  }

  manifest.write(out_dir);
  std::cout << "report: wrote " << written.size() << " files\n";
}

}  // namespace hirisk::cli
