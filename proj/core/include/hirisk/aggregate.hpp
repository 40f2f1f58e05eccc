#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hirisk/featurize.hpp"
#include "hirisk/solver.hpp"
#include "hirisk/taxonomy.hpp"

namespace hirisk {

struct CodeEffect {
  CodeSystemId system = CodeSystemId::ICD;
  std::string code;
  int level = 0;
  double own_coef = 0.0;
  double total_logor = 0.0;  // own coefficient plus all ancestor coefficients
  double total_or = 1.0;
  std::uint64_t prevalence = 0;  // persons with the code active after expansion
};

struct GroupSummary {
  CodeSystemId system = CodeSystemId::ICD;
  std::string group;  // level-2 code
  double logor = 0.0;
  std::uint64_t size = 0;
  double importance = 0.0;  // logor * size
  int rank = 0;
};

/// Sums the fitted coefficients along the code's ancestor chain (columns
/// absent from the feature space contribute zero) and reads prevalence off
/// the design.
CodeEffect total_code_effect(const LassoFit& fit, const FeatureSpace& space,
                             const Taxonomy& taxonomy, const SparseDesignMatrix& design,
                             CodeSystemId system, const std::string& code);

/// Prevalence-weighted mean of total effects over the group's observed leaf
/// descendants (a leaf is an observed code with no observed descendant);
/// size counts persons with any code in the group.
GroupSummary group_logor(const LassoFit& fit, const FeatureSpace& space,
                         const Taxonomy& taxonomy, const SparseDesignMatrix& design,
                         CodeSystemId system, const std::string& group);

/// Every level-2 node with at least one observed descendant, unranked.
std::vector<GroupSummary> all_group_summaries(const LassoFit& fit, const FeatureSpace& space,
                                              const Taxonomy& taxonomy,
                                              const SparseDesignMatrix& design);

/// importance = logor * size; descending rank, ties broken by group code.
std::vector<GroupSummary> population_importance(std::vector<GroupSummary> groups);

struct EffectsRow {
  bool is_code = false;  // categorical dummies and incidence carry name only
  CodeSystemId system = CodeSystemId::ICD;
  std::string name;  // code for code rows, column name otherwise
  int level = 0;     // 0 for non-code rows
  double coef = 0.0;
  double total_logor = 0.0;
  double total_or = 1.0;
  std::uint64_t prevalence = 0;
  bool below_min_size = false;
};

/// One row per feature column, plus taxonomy codes never observed whose
/// ancestor chain still carries a nonzero total effect.
std::vector<EffectsRow> export_coefficients(const LassoFit& fit, const FeatureSpace& space,
                                            const Taxonomy& taxonomy,
                                            const SparseDesignMatrix& design,
                                            std::uint64_t min_group_size);

void write_effects_csv(const std::string& path, const std::vector<EffectsRow>& rows);
void write_groups_csv(const std::string& path, const std::vector<GroupSummary>& groups);

/// Nonzero coefficient counts keyed by code level (0 = non-code columns).
std::map<int, std::size_t> nonzero_counts_by_level(const LassoFit& fit,
                                                   const FeatureSpace& space);

}  // namespace hirisk
