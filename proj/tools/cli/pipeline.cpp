#include "pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hirisk/common.hpp"

namespace hirisk::cli {

using json = nlohmann::json;

const char* kToolVersion = "0.1.0";

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write " + path.string());
  return out;
}

void finish_out(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) fail("write failed: " + path.string());
}

json model_to_json(const ModelArtifact& model) {
  json coefs = json::array();
  for (const auto& [name, value] : model.coefficients)
    coefs.push_back({{"name", name}, {"coef", value}});
  return json{{"outcome", model.outcome},
              {"lambda", model.lambda},
              {"intercept", model.intercept},
              {"n_nonzero", model.n_nonzero},
              {"converged", model.converged},
              {"iterations", model.iterations},
              {"objective", model.objective},
              {"max_kkt", model.max_kkt},
              {"n_rows", model.n_rows},
              {"coefficients", std::move(coefs)}};
}

ModelArtifact model_from_json(const json& j, const std::string& where) {
  ModelArtifact model;
  try {
    model.outcome = j.at("outcome").get<std::string>();
    model.lambda = j.at("lambda").get<double>();
    model.intercept = j.at("intercept").get<double>();
    model.n_nonzero = j.at("n_nonzero").get<int>();
    model.converged = j.at("converged").get<bool>();
    model.iterations = j.at("iterations").get<int>();
    model.objective = j.at("objective").get<double>();
    model.max_kkt = j.at("max_kkt").get<double>();
    model.n_rows = j.at("n_rows").get<std::uint64_t>();
    for (const json& c : j.at("coefficients"))
      model.coefficients.emplace_back(c.at("name").get<std::string>(),
                                      c.at("coef").get<double>());
  } catch (const json::exception& e) {
    fail(where + ": " + e.what());
  }
  return model;
}

json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(path.string() + ": " + e.what());
  }
  return j;
}

}  // namespace

// ---------------------------------------------------------------------------
// RunManifest
// ---------------------------------------------------------------------------

RunManifest::RunManifest(std::string command)
    : command_(std::move(command)), mark_(std::chrono::steady_clock::now()) {}

void RunManifest::input(const std::filesystem::path& path) {
  inputs_[path.string()] = digest_file(path);
}

void RunManifest::flag(const std::string& name, const std::string& value) {
  flags_[name] = value;
}

void RunManifest::set_seed(std::uint64_t seed) { seed_ = seed; }

void RunManifest::set_selected_lambda(double lambda) { selected_lambda_ = lambda; }

void RunManifest::phase_done(const std::string& name) {
  const auto now = std::chrono::steady_clock::now();
  const double ms = std::chrono::duration<double, std::milli>(now - mark_).count();
  timings_ms_.emplace_back(name, ms);
  mark_ = now;
}

void RunManifest::write(const std::filesystem::path& out_dir) const {
  json j;
  j["command"] = command_;
  j["tool_version"] = kToolVersion;
  j["inputs"] = inputs_;
  j["flags"] = flags_;
  j["seed"] = seed_;
  if (selected_lambda_) j["selected_lambda"] = *selected_lambda_;
  json timings = json::array();
  for (const auto& [phase, ms] : timings_ms_) timings.push_back({{"phase", phase}, {"ms", ms}});
  j["timings"] = std::move(timings);

  const auto path = out_dir / "manifest.json";
  auto out = open_out(path);
  out << j.dump(2) << '\n';
  finish_out(out, path);
}

// ---------------------------------------------------------------------------
// Input loading
// ---------------------------------------------------------------------------

Outcome parse_outcome_flag(const std::string& text) {
  const auto outcome = parse_outcome(text);
  if (!outcome) fail("--outcome must be y1, y2 or y3, not \"" + text + "\"");
  return *outcome;
}

const std::string& require_flag(const std::string& value, const char* flag,
                                const char* command) {
  if (value.empty()) fail(std::string(command) + ": " + flag + " is required");
  return value;
}

void note_globals(RunManifest& manifest, const GlobalOptions& g) {
  manifest.set_seed(g.seed);
  manifest.flag("outcome", g.outcome);
  manifest.flag("folds", std::to_string(g.folds));
  manifest.flag("lambda_grid", g.lambda_grid);
  manifest.flag("threads", std::to_string(g.threads));
  manifest.flag("out_dir", g.out_dir);
  if (!g.taxonomy_path.empty()) manifest.flag("taxonomy", g.taxonomy_path);
  if (!g.cohort_path.empty()) manifest.flag("cohort", g.cohort_path);
  if (!g.config_path.empty()) manifest.flag("config", g.config_path);
  if (!g.design_cache.empty()) manifest.flag("design", g.design_cache);
  if (!g.incidence_path.empty()) manifest.flag("incidence", g.incidence_path);
  if (!g.category_defaults.empty()) {
    std::string joined;
    for (const std::string& d : g.category_defaults) {
      if (!joined.empty()) joined += ';';
      joined += d;
    }
    manifest.flag("defaults", joined);
  }
}

std::filesystem::path ensure_out_dir(const GlobalOptions& g) {
  std::filesystem::path dir = g.out_dir.empty() ? "." : g.out_dir;
  std::filesystem::create_directories(dir);
  return dir;
}

Taxonomy load_taxonomy_input(const GlobalOptions& g, RunManifest& manifest) {
  require_flag(g.taxonomy_path, "--taxonomy", "input");
  manifest.input(g.taxonomy_path);
  return load_taxonomy(g.taxonomy_path);
}

Cohort load_cohort_input(const GlobalOptions& g, RunManifest& manifest) {
  require_flag(g.cohort_path, "--cohort", "input");
  manifest.input(g.cohort_path);

  std::map<std::string, std::string> defaults;
  for (const std::string& pair : g.category_defaults) {
    const auto eq = pair.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == pair.size())
      fail("--default expects feature=value, not \"" + pair + "\"");
    defaults[pair.substr(0, eq)] = pair.substr(eq + 1);
  }

  Cohort cohort = load_cohort(g.cohort_path, defaults);
  if (!g.incidence_path.empty()) {
    manifest.input(g.incidence_path);
    IncidenceSeries series = load_incidence_series(g.incidence_path);
    impute_reference_incidence(cohort, series, g.seed, parse_outcome_flag(g.outcome));
  }
  return cohort;
}

FeatureConfig load_config_input(const GlobalOptions& g, RunManifest& manifest) {
  if (g.config_path.empty()) return FeatureConfig{};
  manifest.input(g.config_path);
  return load_feature_config(g.config_path);
}

DesignBuild obtain_design(const GlobalOptions& g, const Taxonomy& taxonomy,
                          const Cohort& cohort, RunManifest& manifest) {
  if (!g.design_cache.empty()) {
    manifest.input(g.design_cache);
    DesignBuild build = load_design(g.design_cache);
    if (build.matrix.n_rows != cohort.size())
      fail("design cache has " + std::to_string(build.matrix.n_rows) + " rows but the cohort has " +
           std::to_string(cohort.size()));
    return build;
  }
  return build_design(cohort, taxonomy, load_config_input(g, manifest));
}

std::vector<double> resolve_lambda_grid(const std::string& spec, double lambda_max_value) {
  if (spec.empty()) return default_lambda_grid(lambda_max_value);

  if (spec.find(',') != std::string::npos) {
    std::vector<double> values;
    for (const std::string& token : split(spec, ','))
      values.push_back(parse_double(token, "--lambda-grid value"));
    return values;
  }
  if (const auto colon = spec.find(':'); colon != std::string::npos) {
    const long long count = parse_int(spec.substr(0, colon), "--lambda-grid count");
    const double ratio = parse_double(spec.substr(colon + 1), "--lambda-grid ratio");
    return default_lambda_grid(lambda_max_value, static_cast<int>(count), ratio);
  }
  if (spec.find('.') == std::string::npos && spec.find('e') == std::string::npos &&
      spec.find('E') == std::string::npos)
    return default_lambda_grid(lambda_max_value,
                               static_cast<int>(parse_int(spec, "--lambda-grid count")));
  return {parse_double(spec, "--lambda-grid value")};
}

// ---------------------------------------------------------------------------
// Model artifacts
// ---------------------------------------------------------------------------

ModelArtifact make_model_artifact(const LassoFit& fit, const FeatureSpace& space,
                                  const std::string& outcome, std::uint64_t n_rows) {
  ModelArtifact model;
  model.outcome = outcome;
  model.lambda = fit.lambda;
  model.intercept = fit.intercept;
  model.n_nonzero = fit.n_nonzero;
  model.converged = fit.converged;
  model.iterations = fit.iterations;
  model.objective = fit.objective;
  model.max_kkt = fit.max_kkt;
  model.n_rows = n_rows;
  for (const auto& [pos, value] : fit.coefficients)
    model.coefficients.emplace_back(space.at(pos).name, value);
  return model;
}

void write_model_json(const std::filesystem::path& path, const ModelArtifact& model) {
  json j = model_to_json(model);
  j["format"] = "hirisk-model-v1";
  auto out = open_out(path);
  out << j.dump(2) << '\n';
  finish_out(out, path);
}

ModelArtifact load_model_json(const std::filesystem::path& path) {
  const json j = load_json_file(path);
  if (j.value("format", "") != "hirisk-model-v1")
    fail(path.string() + ": not a model file (format tag mismatch)");
  return model_from_json(j, path.string());
}

LassoFit fit_from_artifact(const ModelArtifact& model, const FeatureSpace& space) {
  LassoFit fit;
  fit.intercept = model.intercept;
  fit.lambda = model.lambda;
  fit.n_nonzero = model.n_nonzero;
  fit.converged = model.converged;
  fit.iterations = model.iterations;
  fit.objective = model.objective;
  fit.max_kkt = model.max_kkt;
  for (const auto& [name, value] : model.coefficients) {
    const auto pos = space.find(name);
    if (!pos)
      fail("model column \"" + name +
           "\" is absent from the rebuilt design; taxonomy, cohort or config do not match "
           "the fit");
    fit.coefficients.emplace_back(*pos, value);
  }
  std::sort(fit.coefficients.begin(), fit.coefficients.end());
  return fit;
}

std::vector<double> score_cohort(const ModelArtifact& model, const Taxonomy& taxonomy,
                                 const Cohort& cohort, std::uint64_t* unknown_codes) {
  enum class Kind { Code, Categorical, Incidence };
  struct Entry {
    Kind kind = Kind::Code;
    SystemCode sc;
    std::string feature, category;
    double coef = 0.0;
  };

  std::vector<Entry> entries;
  for (const auto& [name, coef] : model.coefficients) {
    Entry e;
    e.coef = coef;
    if (name == FeatureSpace::kIncidenceColumn) {
      e.kind = Kind::Incidence;
    } else if (const auto eq = name.find('='); eq != std::string::npos) {
      e.kind = Kind::Categorical;
      e.feature = name.substr(0, eq);
      e.category = name.substr(eq + 1);
    } else if (const auto colon = name.find(':'); colon != std::string::npos) {
      const auto system = parse_code_system(name.substr(0, colon));
      if (!system) fail("model column \"" + name + "\" names an unknown code system");
      e.kind = Kind::Code;
      e.sc = {*system, name.substr(colon + 1)};
    } else {
      fail("model column \"" + name + "\" is not a code, categorical or incidence column");
    }
    entries.push_back(std::move(e));
  }

  std::uint64_t skipped_total = 0;
  std::vector<double> logits;
  logits.reserve(cohort.size());
  for (const PersonRecord& rec : cohort.records()) {
    std::uint64_t skipped = 0;
    const std::vector<SystemCode> expanded =
        expand_codes(taxonomy, rec.codes, UnknownCodePolicy::Skip, &skipped);
    skipped_total += skipped;

    double eta = model.intercept;
    for (const Entry& e : entries) {
      switch (e.kind) {
        case Kind::Code:
          if (std::binary_search(expanded.begin(), expanded.end(), e.sc)) eta += e.coef;
          break;
        case Kind::Categorical: {
          const auto it = rec.categorical.find(e.feature);
          if (it == rec.categorical.end())
            fail("record " + rec.id + " lacks feature \"" + e.feature +
                 "\" required by the model");
          if (it->second == e.category) eta += e.coef;
          break;
        }
        case Kind::Incidence:
          if (!rec.incidence)
            fail("record " + rec.id +
                 " has no incidence value; pass --incidence or refit without it");
          eta += e.coef * *rec.incidence;
          break;
      }
    }
    logits.push_back(eta);
  }
  if (unknown_codes) *unknown_codes = skipped_total;
  return logits;
}

CvArtifact make_cv_artifact(const CvResult& cv, const FeatureSpace& space,
                            const std::string& outcome) {
  CvArtifact artifact;
  artifact.outcome = outcome;
  artifact.seed = cv.folds.seed;
  artifact.k = cv.folds.k;
  artifact.lambdas = cv.lambdas;
  artifact.selected_index = cv.selected_index;
  artifact.selected_lambda = cv.selected_lambda;
  artifact.fold_of = cv.folds.fold_of;

  std::vector<std::uint64_t> held_out(static_cast<std::size_t>(cv.folds.k), 0);
  for (int f : cv.folds.fold_of) ++held_out[static_cast<std::size_t>(f)];
  for (int f = 0; f < cv.folds.k; ++f) {
    const LassoFit& fit = cv.fold_paths[static_cast<std::size_t>(f)].fits[cv.selected_index];
    artifact.fold_models.push_back(make_model_artifact(
        fit, space, outcome, cv.folds.fold_of.size() - held_out[static_cast<std::size_t>(f)]));
  }
  return artifact;
}

void write_cv_models_json(const std::filesystem::path& path, const CvArtifact& artifact) {
  json folds = json::array();
  for (const ModelArtifact& model : artifact.fold_models) folds.push_back(model_to_json(model));
  json j{{"format", "hirisk-cv-v1"},
         {"outcome", artifact.outcome},
         {"seed", artifact.seed},
         {"k", artifact.k},
         {"lambdas", artifact.lambdas},
         {"selected_index", artifact.selected_index},
         {"selected_lambda", artifact.selected_lambda},
         {"fold_of", artifact.fold_of},
         {"fold_models", std::move(folds)}};
  auto out = open_out(path);
  out << j.dump(2) << '\n';
  finish_out(out, path);
}

CvArtifact load_cv_models_json(const std::filesystem::path& path) {
  const json j = load_json_file(path);
  if (j.value("format", "") != "hirisk-cv-v1")
    fail(path.string() + ": not a cv-models file (format tag mismatch)");
  CvArtifact artifact;
  try {
    artifact.outcome = j.at("outcome").get<std::string>();
    artifact.seed = j.at("seed").get<std::uint64_t>();
    artifact.k = j.at("k").get<int>();
    artifact.lambdas = j.at("lambdas").get<std::vector<double>>();
    artifact.selected_index = j.at("selected_index").get<std::size_t>();
    artifact.selected_lambda = j.at("selected_lambda").get<double>();
    artifact.fold_of = j.at("fold_of").get<std::vector<int>>();
    for (const json& m : j.at("fold_models"))
      artifact.fold_models.push_back(model_from_json(m, path.string()));
  } catch (const json::exception& e) {
    fail(path.string() + ": " + e.what());
  }
  if (artifact.fold_models.size() != static_cast<std::size_t>(artifact.k))
    fail(path.string() + ": fold model count does not match k");
  return artifact;
}

CvResult cv_from_artifact(const CvArtifact& artifact, const FeatureSpace& space) {
  CvResult cv;
  cv.lambdas = {artifact.selected_lambda};
  cv.selected_index = 0;
  cv.selected_lambda = artifact.selected_lambda;
  cv.folds.k = artifact.k;
  cv.folds.seed = artifact.seed;
  cv.folds.fold_of = artifact.fold_of;
  for (const ModelArtifact& model : artifact.fold_models) {
    LambdaPath path;
    path.lambdas = {artifact.selected_lambda};
    LassoFit fit = fit_from_artifact(model, space);
    fit.lambda = artifact.selected_lambda;
    path.fits.push_back(std::move(fit));
    cv.fold_paths.push_back(std::move(path));
  }
  return cv;
}

// ---------------------------------------------------------------------------
// CSV emission and ingestion
// ---------------------------------------------------------------------------

void write_predictions_csv(const std::filesystem::path& path,
                           const std::vector<std::string>& ids,
                           const std::vector<double>& logits) {
  if (ids.size() != logits.size()) fail("predictions: id/score length mismatch");
  auto out = open_out(path);
  out << "id,logit\n";
  for (std::size_t i = 0; i < ids.size(); ++i)
    out << ids[i] << ',' << format_g(logits[i]) << '\n';
  finish_out(out, path);
}

std::vector<double> read_predictions_csv(const std::filesystem::path& path,
                                         const Cohort& cohort) {
  std::ifstream in(path);
  if (!in) fail("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "id,logit")
    fail(path.string() + ": expected header id,logit");

  std::map<std::string, double> by_id;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() != 2)
      fail(path.string() + ":" + std::to_string(line_no) + ": expected 2 fields");
    if (!by_id.emplace(fields[0], parse_double(fields[1], "logit")).second)
      fail(path.string() + ":" + std::to_string(line_no) + ": duplicate id " + fields[0]);
  }

  std::set<std::string> cohort_ids;
  std::vector<double> aligned;
  aligned.reserve(cohort.size());
  for (const PersonRecord& rec : cohort.records()) {
    cohort_ids.insert(rec.id);
    const auto it = by_id.find(rec.id);
    if (it == by_id.end()) fail(path.string() + ": no prediction for id " + rec.id);
    aligned.push_back(it->second);
  }
  for (const auto& [id, value] : by_id)
    if (!cohort_ids.count(id)) fail(path.string() + ": id " + id + " is not in the cohort");
  return aligned;
}

void write_cv_report_csv(const std::filesystem::path& path, const CvResult& cv) {
  auto out = open_out(path);
  out << "lambda,fold,auc\n";
  for (std::size_t li = 0; li < cv.lambdas.size(); ++li) {
    for (std::size_t f = 0; f < cv.per_fold_auc.size(); ++f)
      out << format_g(cv.lambdas[li]) << ',' << f << ','
          << format_g(cv.per_fold_auc[f][li]) << '\n';
    out << format_g(cv.lambdas[li]) << ",mean," << format_g(cv.mean_auc[li]) << '\n';
  }
  finish_out(out, path);
}

void write_roc_csv(const std::filesystem::path& path, const std::vector<RocPoint>& points) {
  auto out = open_out(path);
  out << "threshold,fpr,tpr\n";
  for (const RocPoint& p : points)
    out << format_g(p.threshold) << ',' << format_g(p.fpr) << ',' << format_g(p.tpr) << '\n';
  finish_out(out, path);
}

void write_index_csv(const std::filesystem::path& path, const std::vector<std::string>& ids,
                     const RiskIndex& index) {
  if (ids.size() != index.scores.size()) fail("index: id/score length mismatch");
  auto out = open_out(path);
  out << "id,fold,score_logit\n";
  for (std::size_t i = 0; i < ids.size(); ++i)
    out << ids[i] << ',' << index.fold_of[i] << ',' << format_g(index.scores[i]) << '\n';
  finish_out(out, path);
}

RiskIndex read_index_csv(const std::filesystem::path& path, const Cohort& cohort) {
  std::ifstream in(path);
  if (!in) fail("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "id,fold,score_logit")
    fail(path.string() + ": expected header id,fold,score_logit");

  std::map<std::string, std::pair<int, double>> by_id;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() != 3)
      fail(path.string() + ":" + std::to_string(line_no) + ": expected 3 fields");
    by_id[fields[0]] = {static_cast<int>(parse_int(fields[1], "fold")),
                        parse_double(fields[2], "score_logit")};
  }

  RiskIndex index;
  index.scores.reserve(cohort.size());
  index.fold_of.reserve(cohort.size());
  for (const PersonRecord& rec : cohort.records()) {
    const auto it = by_id.find(rec.id);
    if (it == by_id.end()) fail(path.string() + ": no index score for id " + rec.id);
    index.fold_of.push_back(it->second.first);
    index.scores.push_back(it->second.second);
  }
  return index;
}

void write_profile_csv(const std::filesystem::path& path,
                       const std::vector<ProfilePoint>& grid) {
  auto out = open_out(path);
  out << "gender,age,logit_conditional,logit_unconditional\n";
  for (const ProfilePoint& p : grid)
    out << p.gender << ',' << format_g(p.age) << ',' << format_g(p.logit_conditional) << ','
        << format_g(p.logit_unconditional) << '\n';
  finish_out(out, path);
}

void write_histogram_csv(const std::filesystem::path& path,
                         const std::vector<HistogramRow>& rows) {
  auto out = open_out(path);
  out << "group,bin_lo,bin_hi,count\n";
  for (const HistogramRow& r : rows)
    out << r.group << ',' << format_g(r.lo) << ',' << format_g(r.hi) << ',' << r.count << '\n';
  finish_out(out, path);
}

void write_evaluation_json(const std::filesystem::path& path, const EvaluationReport& report,
                           const std::map<std::string, std::string>& extra) {
  json j{{"auc", report.auc},
         {"lambda_woe", report.lambda_woe},
         {"log_lik", report.log_lik},
         {"n", report.n},
         {"n_pos", report.n_pos},
         {"prior", report.prior},
         {"clamp", kProbClamp}};
  for (const auto& [key, value] : extra) j[key] = value;
  auto out = open_out(path);
  out << j.dump(2) << '\n';
  finish_out(out, path);
}

}  // namespace hirisk::cli
