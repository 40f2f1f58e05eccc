#pragma once

// Shared plumbing for the hirisk command-line tool: flag containers, input
// loading, artifact serialization, and the per-run manifest.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hirisk/aggregate.hpp"
#include "hirisk/cohort.hpp"
#include "hirisk/cv.hpp"
#include "hirisk/featurize.hpp"
#include "hirisk/metrics.hpp"
#include "hirisk/riskindex.hpp"
#include "hirisk/solver.hpp"
#include "hirisk/synth.hpp"
#include "hirisk/taxonomy.hpp"

namespace hirisk::cli {

extern const char* kToolVersion;

struct GlobalOptions {
  std::string taxonomy_path;
  std::string cohort_path;
  std::string outcome = "y2";
  bool outcome_explicit = false;  // set when --outcome was passed
  std::string config_path;
  std::string design_cache;                   // skips featurization when set
  std::string incidence_path;                 // enables reference-date imputation
  std::vector<std::string> category_defaults;  // "feature=value" pairs
  std::uint64_t seed = 1;
  int folds = 5;
  std::string lambda_grid = "50:1e-4";
  int threads = 1;
  std::string out_dir = ".";
};

/// Provenance record written by every command. Inputs are digested so a rerun
/// can be checked against the exact bytes that produced an artifact.
class RunManifest {
 public:
  explicit RunManifest(std::string command);

  void input(const std::filesystem::path& path);
  void flag(const std::string& name, const std::string& value);
  void set_seed(std::uint64_t seed);
  void set_selected_lambda(double lambda);
  void phase_done(const std::string& name);
  void write(const std::filesystem::path& out_dir) const;

 private:
  std::string command_;
  std::map<std::string, std::string> inputs_;
  std::map<std::string, std::string> flags_;
  std::uint64_t seed_ = 0;
  std::optional<double> selected_lambda_;
  std::vector<std::pair<std::string, double>> timings_ms_;
  std::chrono::steady_clock::time_point mark_;
};

// ---------------------------------------------------------------------------
// Input loading
// ---------------------------------------------------------------------------

Outcome parse_outcome_flag(const std::string& text);

/// Records every global flag (and the seed) into the manifest.
void note_globals(RunManifest& manifest, const GlobalOptions& g);

/// Creates the artifact directory if needed and returns it.
std::filesystem::path ensure_out_dir(const GlobalOptions& g);

/// Errors with the flag name when `value` is empty.
const std::string& require_flag(const std::string& value, const char* flag,
                                const char* command);

Taxonomy load_taxonomy_input(const GlobalOptions& g, RunManifest& manifest);

/// Applies --default pairs and, when --incidence is given, fills missing
/// incidence values from the series before returning.
Cohort load_cohort_input(const GlobalOptions& g, RunManifest& manifest);

FeatureConfig load_config_input(const GlobalOptions& g, RunManifest& manifest);

/// Builds the design from the cohort, or loads the --design cache instead.
DesignBuild obtain_design(const GlobalOptions& g, const Taxonomy& taxonomy,
                          const Cohort& cohort, RunManifest& manifest);

/// `--lambda-grid` forms: "COUNT", "COUNT:MIN_RATIO", or explicit
/// comma-separated decreasing values. The first two scale from lambda_max.
std::vector<double> resolve_lambda_grid(const std::string& spec, double lambda_max_value);

// ---------------------------------------------------------------------------
// Model artifacts
// ---------------------------------------------------------------------------

/// A fitted model detached from any design: nonzero coefficients are keyed by
/// column name so they can be re-attached to a rebuilt feature space or
/// scored directly against raw records.
struct ModelArtifact {
  std::string outcome = "y2";
  double lambda = 0.0;
  double intercept = 0.0;
  int n_nonzero = 0;
  bool converged = false;
  int iterations = 0;
  double objective = 0.0;
  double max_kkt = 0.0;
  std::uint64_t n_rows = 0;
  std::vector<std::pair<std::string, double>> coefficients;  // column name -> value
};

ModelArtifact make_model_artifact(const LassoFit& fit, const FeatureSpace& space,
                                  const std::string& outcome, std::uint64_t n_rows);
void write_model_json(const std::filesystem::path& path, const ModelArtifact& model);
ModelArtifact load_model_json(const std::filesystem::path& path);

/// Re-attaches named coefficients to a rebuilt space; errors on unknown names.
LassoFit fit_from_artifact(const ModelArtifact& model, const FeatureSpace& space);

/// Scores raw records against a frozen model without building a design.
/// Codes the model has never seen are ignored; their count lands in
/// *unknown_codes. A categorical feature missing from a record is an error.
std::vector<double> score_cohort(const ModelArtifact& model, const Taxonomy& taxonomy,
                                 const Cohort& cohort, std::uint64_t* unknown_codes);

/// Fold models at the selected lambda, enough to rebuild a risk index.
struct CvArtifact {
  std::string outcome = "y2";
  std::uint64_t seed = 0;
  int k = 0;
  std::vector<double> lambdas;
  std::size_t selected_index = 0;
  double selected_lambda = 0.0;
  std::vector<int> fold_of;
  std::vector<ModelArtifact> fold_models;
};

CvArtifact make_cv_artifact(const CvResult& cv, const FeatureSpace& space,
                            const std::string& outcome);
void write_cv_models_json(const std::filesystem::path& path, const CvArtifact& artifact);
CvArtifact load_cv_models_json(const std::filesystem::path& path);

/// Minimal CvResult view over the artifact: one lambda, one fit per fold.
CvResult cv_from_artifact(const CvArtifact& artifact, const FeatureSpace& space);

// ---------------------------------------------------------------------------
// CSV emission and ingestion
// ---------------------------------------------------------------------------

void write_predictions_csv(const std::filesystem::path& path,
                           const std::vector<std::string>& ids,
                           const std::vector<double>& logits);

/// `id,logit` aligned to cohort order; every cohort id must appear.
std::vector<double> read_predictions_csv(const std::filesystem::path& path,
                                         const Cohort& cohort);

void write_cv_report_csv(const std::filesystem::path& path, const CvResult& cv);
void write_roc_csv(const std::filesystem::path& path, const std::vector<RocPoint>& points);
void write_index_csv(const std::filesystem::path& path, const std::vector<std::string>& ids,
                     const RiskIndex& index);

/// `id,fold,score_logit` aligned to cohort order; only scores and folds are
/// recoverable, which is all the downstream consumers read.
RiskIndex read_index_csv(const std::filesystem::path& path, const Cohort& cohort);

void write_profile_csv(const std::filesystem::path& path,
                       const std::vector<ProfilePoint>& grid);
void write_histogram_csv(const std::filesystem::path& path,
                         const std::vector<HistogramRow>& rows);

void write_evaluation_json(const std::filesystem::path& path, const EvaluationReport& report,
                           const std::map<std::string, std::string>& extra = {});

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

void cmd_validate_taxonomy(const GlobalOptions& g);

struct SimulateOptions {
  std::uint64_t persons = 1000;
  double mean_codes = 4.0;
  double age_correlation = 0.0;
  double intercept = -4.6;
  double incidence_coef = 0.0;
  double y2_fraction = 0.5;
  double y3_fraction = 0.5;
  int age_groups = 8;
  std::string system = "ICD";
  std::string branching = "2,2,2,2,2";
  std::string effects_path;  // JSON with code_effects / categorical_effects
};
void cmd_simulate(const GlobalOptions& g, const SimulateOptions& opt);

struct FeaturizeOptions {
  std::string design_out;  // defaults to <out-dir>/design.bin
};
void cmd_featurize(const GlobalOptions& g, const FeaturizeOptions& opt);

void cmd_cv_fit(const GlobalOptions& g);

struct FitOptionsCli {
  double lambda = 0.0;
  bool verbose = false;  // emits convergence.jsonl
};
void cmd_fit(const GlobalOptions& g, const FitOptionsCli& opt);

struct PredictOptions {
  std::string model_path;
  std::string predictions_out;  // defaults to <out-dir>/predictions.csv
};
void cmd_predict(const GlobalOptions& g, const PredictOptions& opt);

struct MetricsOptions {
  std::string predictions_path;
  std::optional<double> prior;
};
void cmd_metrics(const GlobalOptions& g, const MetricsOptions& opt);

struct AggregateOptions {
  std::string model_path;
  std::uint64_t min_group_size = 0;
};
void cmd_aggregate(const GlobalOptions& g, const AggregateOptions& opt);

struct RiskIndexOptions {
  std::string cv_models_path;
  std::vector<std::string> cancel;
  std::string cancel_file;  // one column name per line
};
void cmd_risk_index(const GlobalOptions& g, const RiskIndexOptions& opt);

struct ProfileCliOptions {
  std::string index_path;
  std::string age_feature = "age_group";
  std::string gender_feature = "gender";
  std::vector<double> knots;  // explicit, overrides quantiles
  int grid_points = 41;
};
void cmd_profile(const GlobalOptions& g, const ProfileCliOptions& opt);

struct BenchmarkOptions {
  std::vector<std::string> configs;    // NAME=PATH or PATH (stem names it)
  std::vector<std::string> externals;  // NAME=PATH or PATH, format id,logit
};
void cmd_benchmark(const GlobalOptions& g, const BenchmarkOptions& opt);

struct HoldoutOptions {
  std::string model_path;
  std::string exclude_ids_path;  // one id per line
};
void cmd_holdout_eval(const GlobalOptions& g, const HoldoutOptions& opt);

struct ReportOptions {
  std::vector<std::string> predictions;  // NAME=PATH or PATH
  std::string effects_a;
  std::string effects_b;
  std::string index_path;
};
void cmd_report(const GlobalOptions& g, const ReportOptions& opt);

}  // namespace hirisk::cli
