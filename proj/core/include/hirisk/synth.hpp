#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hirisk/cohort.hpp"
#include "hirisk/taxonomy.hpp"

namespace hirisk {

/// Tree shape for one system: branching[0] roots, each node at depth d having
/// branching[d] children. Depth is bounded by the system's level range.
struct SystemShape {
  CodeSystemId system = CodeSystemId::ICD;
  std::vector<int> branching;
};

struct CodeEffectSpec {
  CodeSystemId system = CodeSystemId::ICD;
  std::string code;
  double coef = 0.0;
};

struct CategoricalEffectSpec {
  std::string feature;
  std::string category;
  double coef = 0.0;
};

/// Everything needed to plant a known truth: taxonomy shape, code assignment
/// model, and the true coefficients the pipeline is expected to recover.
struct GeneratorSpec {
  std::vector<SystemShape> systems = {{CodeSystemId::ICD, {2, 2, 2, 2, 2}}};
  std::size_t n_persons = 1000;
  double mean_codes_per_person = 4.0;  // expected leaf activations
  double age_correlation = 0.0;        // leaf log-odds shift across the age span
  double intercept = -4.6;             // true logit intercept (~1% prevalence)
  std::vector<CodeEffectSpec> effects;
  std::vector<CategoricalEffectSpec> categorical_effects;  // age_group / gender
  double incidence_coef = 0.0;
  int n_age_groups = 8;  // 5-year bands from 40, labels "40-44", ...
  double y2_fraction = 0.5;  // thinning: P(y2 | y1)
  double y3_fraction = 0.5;  // thinning: P(y3 | y2)
  std::uint64_t seed = 1;
};

/// Deterministic taxonomy with depth-encoded codes ("1", "1.2", "1.2.1", ...;
/// OPS roots cycle chapters 5/6/8 as "5-1", "6-2", "8-3", ...).
Taxonomy generate_taxonomy(const GeneratorSpec& spec);

struct SyntheticCohort {
  Cohort cohort;
  std::vector<double> true_logit;  // sidecar, aligned with cohort rows
};

/// Assigns leaf codes per person from an age-shifted Bernoulli model, computes
/// the true logit through the same ancestor expansion the featurizer applies,
/// and draws nested outcomes. Generation is sharded with derived seeds, so
/// results are identical for any thread count.
SyntheticCohort generate_cohort(const Taxonomy& taxonomy, const GeneratorSpec& spec,
                                int threads = 1);

/// Sidecar CSV `id,true_logit`.
void write_sidecar_csv(const std::filesystem::path& path, const Cohort& cohort,
                       const std::vector<double>& true_logit);
std::vector<double> load_sidecar_csv(const std::filesystem::path& path,
                                     const Cohort& cohort);

}  // namespace hirisk
