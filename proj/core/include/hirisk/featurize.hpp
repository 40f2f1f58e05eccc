#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hirisk/cohort.hpp"
#include "hirisk/taxonomy.hpp"

namespace hirisk {

enum class ColumnKind { CodeDummy, CategoricalDummy, Continuous };

struct FeatureColumn {
  std::string name;
  ColumnKind kind = ColumnKind::CodeDummy;
  std::optional<CodeSystemId> system;  // code dummies only
  std::optional<int> level;            // code dummies only
  double penalty_factor = 1.0;
};

/// Ordered column metadata; order is stable given (taxonomy, cohort, config).
class FeatureSpace {
 public:
  std::uint32_t add(FeatureColumn column);

  const std::vector<FeatureColumn>& columns() const { return columns_; }
  const FeatureColumn& at(std::uint32_t position) const { return columns_[position]; }
  std::optional<std::uint32_t> find(const std::string& name) const;
  std::size_t size() const { return columns_.size(); }

  std::vector<double> penalty_factors() const;

  static std::string code_column_name(CodeSystemId system, std::string_view code);
  static std::string categorical_column_name(std::string_view feature, std::string_view category);
  static constexpr const char* kIncidenceColumn = "incidence";

 private:
  std::vector<FeatureColumn> columns_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

/// Column-compressed storage: binary columns hold sorted row indices, the
/// continuous incidence column is dense.
struct DesignColumn {
  bool binary = true;
  std::vector<std::uint32_t> rows;  // binary part, sorted unique
  std::vector<double> values;       // continuous part, size n_rows
};

struct SparseDesignMatrix {
  std::uint32_t n_rows = 0;
  std::vector<DesignColumn> columns;

  std::size_t n_cols() const { return columns.size(); }
  std::size_t binary_nnz() const;
};

/// New matrix containing only `rows` (sorted, unique), reindexed from 0.
SparseDesignMatrix subset_rows(const SparseDesignMatrix& design,
                               std::span<const std::uint32_t> rows);

enum class PenaltyMode { Level, Uniform };
enum class UnknownCodePolicy { Error, Skip };

struct CategoricalConfig {
  std::string name;
  std::optional<std::string> reference;  // default: most frequent category
};

struct FeatureConfig {
  std::vector<CategoricalConfig> categorical;
  std::set<CodeSystemId> systems = {CodeSystemId::ICD, CodeSystemId::ATC, CodeSystemId::OPS};
  int max_level = kMaxLevel;
  std::optional<std::vector<SystemCode>> explicit_codes;  // restricts code columns
  PenaltyMode penalty_mode = PenaltyMode::Level;
  UnknownCodePolicy unknown_codes = UnknownCodePolicy::Error;
  bool include_incidence = true;
};

FeatureConfig load_feature_config(const std::filesystem::path& path);
FeatureConfig parse_feature_config(const std::string& text, const std::string& source_name);

/// Union of the ancestor chains of all inputs, sorted by (system, code).
/// Idempotent. Unknown codes either throw or are counted into *skipped.
std::vector<SystemCode> expand_codes(const Taxonomy& taxonomy, std::span<const SystemCode> codes,
                                     UnknownCodePolicy policy = UnknownCodePolicy::Error,
                                     std::uint64_t* skipped = nullptr);

struct DesignBuild {
  FeatureSpace space;
  SparseDesignMatrix matrix;
  std::uint64_t unknown_codes_skipped = 0;
};

/// Assembles the design: one dummy per observed expanded code (never-observed
/// columns are omitted), reference-encoded categorical dummies, and the
/// unpenalized incidence column. Rows align with cohort order.
DesignBuild build_design(const Cohort& cohort, const Taxonomy& taxonomy,
                         const FeatureConfig& config);

/// Per-column count of rows with value 1 (binary) or nonzero (continuous).
std::vector<std::uint64_t> column_prevalence(const SparseDesignMatrix& design);

/// Design cache, binary layout: magic "HIRISKD1", column table, index arrays.
void save_design(const std::filesystem::path& path, const FeatureSpace& space,
                 const SparseDesignMatrix& matrix);
DesignBuild load_design(const std::filesystem::path& path);

}  // namespace hirisk
