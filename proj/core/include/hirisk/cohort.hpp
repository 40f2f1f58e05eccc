#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hirisk/taxonomy.hpp"

namespace hirisk {

enum class Outcome { Y1, Y2, Y3 };

const char* to_string(Outcome outcome);
std::optional<Outcome> parse_outcome(std::string_view text);

/// One insured person. Outcomes are nested: y3 implies y2 implies y1.
struct PersonRecord {
  std::string id;
  std::map<std::string, std::string> categorical;
  std::optional<std::string> region;
  std::optional<std::string> event_date;  // ISO "YYYY-MM-DD"
  std::optional<double> incidence;        // 7-day incidence per 100k
  std::vector<SystemCode> codes;
  bool y1 = false;
  bool y2 = false;
  bool y3 = false;

  bool outcome(Outcome o) const {
    switch (o) {
      case Outcome::Y1: return y1;
      case Outcome::Y2: return y2;
      case Outcome::Y3: return y3;
    }
    return false;
  }
};

class Cohort {
 public:
  void add(PersonRecord record);

  const std::vector<PersonRecord>& records() const { return records_; }
  std::vector<PersonRecord>& records() { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  /// Observed categories with person counts, per categorical feature.
  const std::map<std::string, std::map<std::string, std::size_t>>& feature_categories() const {
    return feature_categories_;
  }

  std::vector<std::uint8_t> outcomes(Outcome o) const;
  std::vector<std::string> ids() const;

 private:
  std::vector<PersonRecord> records_;
  std::map<std::string, std::map<std::string, std::size_t>> feature_categories_;
};

/// Reads cohort JSONL. Missing categorical values (key absent or null, while
/// the feature occurs elsewhere in the file) are replaced by the configured
/// default; records missing a feature with no default are rejected.
Cohort load_cohort(const std::filesystem::path& path,
                   const std::map<std::string, std::string>& defaults = {});
Cohort parse_cohort(std::istream& in, const std::string& source_name,
                    const std::map<std::string, std::string>& defaults = {});

void write_cohort_jsonl(const Cohort& cohort, const std::filesystem::path& path);

/// (region, date) -> 7-day incidence lookup table.
class IncidenceSeries {
 public:
  void set(const std::string& region, const std::string& date, double incidence);
  std::optional<double> find(const std::string& region, const std::string& date) const;
  std::size_t size() const { return values_.size(); }

 private:
  std::map<std::pair<std::string, std::string>, double> values_;
};

/// CSV `region,date,incidence` with header.
IncidenceSeries load_incidence_series(const std::filesystem::path& path);

/// Fills missing incidence values. Outcome persons are looked up at their own
/// (region, event_date); everyone else receives a reference date drawn from
/// the empirical distribution of the outcome persons' event dates. Records
/// whose incidence is already present are left unchanged.
void impute_reference_incidence(Cohort& cohort, const IncidenceSeries& series,
                                std::uint64_t seed, Outcome outcome = Outcome::Y2);

}  // namespace hirisk
