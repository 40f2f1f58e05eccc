#include "hirisk/cohort.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace hirisk {

using nlohmann::json;

const char* to_string(Outcome outcome) {
  switch (outcome) {
    case Outcome::Y1: return "y1";
    case Outcome::Y2: return "y2";
    case Outcome::Y3: return "y3";
  }
  return "?";
}

std::optional<Outcome> parse_outcome(std::string_view text) {
  if (text == "y1") return Outcome::Y1;
  if (text == "y2") return Outcome::Y2;
  if (text == "y3") return Outcome::Y3;
  return std::nullopt;
}

void Cohort::add(PersonRecord record) {
  for (const auto& [feature, category] : record.categorical)
    ++feature_categories_[feature][category];
  records_.push_back(std::move(record));
}

std::vector<std::uint8_t> Cohort::outcomes(Outcome o) const {
  std::vector<std::uint8_t> y;
  y.reserve(records_.size());
  for (const PersonRecord& r : records_) y.push_back(r.outcome(o) ? 1 : 0);
  return y;
}

std::vector<std::string> Cohort::ids() const {
  std::vector<std::string> out;
  out.reserve(records_.size());
  for (const PersonRecord& r : records_) out.push_back(r.id);
  return out;
}

namespace {

bool valid_iso_date(const std::string& s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
  for (std::size_t i : {0u, 1u, 2u, 3u, 5u, 6u, 8u, 9u})
    if (s[i] < '0' || s[i] > '9') return false;
  int month = (s[5] - '0') * 10 + (s[6] - '0');
  int day = (s[8] - '0') * 10 + (s[9] - '0');
  return month >= 1 && month <= 12 && day >= 1 && day <= 31;
}

bool parse_binary_flag(const json& j, const std::string& where, const char* field) {
  if (!j.contains(field)) fail(where + ": missing field '" + std::string(field) + "'");
  const json& v = j.at(field);
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_number_integer()) {
    auto i = v.get<long long>();
    if (i == 0 || i == 1) return i == 1;
  }
  fail(where + ": field '" + std::string(field) + "' must be 0 or 1");
  return false;
}

struct RawRecord {
  PersonRecord person;
  std::size_t line_no;
};

}  // namespace

Cohort parse_cohort(std::istream& in, const std::string& source_name,
                    const std::map<std::string, std::string>& defaults) {
  std::vector<RawRecord> raw;
  std::unordered_set<std::string> seen_ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::string where = source_name + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail(where + ": malformed record: " + e.what());
    }
    if (!j.is_object()) fail(where + ": record must be a JSON object");

    PersonRecord person;
    if (!j.contains("id") || !j.at("id").is_string()) fail(where + ": missing string 'id'");
    person.id = j.at("id").get<std::string>();
    if (!seen_ids.insert(person.id).second) fail(where + ": duplicate id '" + person.id + "'");

    if (j.contains("categorical") && !j.at("categorical").is_null()) {
      const json& cats = j.at("categorical");
      if (!cats.is_object()) fail(where + ": 'categorical' must be an object");
      for (const auto& [feature, value] : cats.items()) {
        if (value.is_null()) continue;  // null counts as missing
        if (!value.is_string()) fail(where + ": category for '" + feature + "' must be a string");
        person.categorical[feature] = value.get<std::string>();
      }
    }
    if (j.contains("region") && !j.at("region").is_null()) {
      if (!j.at("region").is_string()) fail(where + ": 'region' must be a string or null");
      person.region = j.at("region").get<std::string>();
    }
    if (j.contains("event_date") && !j.at("event_date").is_null()) {
      if (!j.at("event_date").is_string()) fail(where + ": 'event_date' must be a string or null");
      std::string date = j.at("event_date").get<std::string>();
      if (!valid_iso_date(date)) fail(where + ": bad event_date '" + date + "', want YYYY-MM-DD");
      person.event_date = std::move(date);
    }
    if (j.contains("incidence") && !j.at("incidence").is_null()) {
      if (!j.at("incidence").is_number()) fail(where + ": 'incidence' must be a number or null");
      double value = j.at("incidence").get<double>();
      if (!std::isfinite(value) || value < 0.0)
        fail(where + ": incidence must be finite and >= 0");
      person.incidence = value;
    }
    if (j.contains("codes") && !j.at("codes").is_null()) {
      const json& codes = j.at("codes");
      if (!codes.is_array()) fail(where + ": 'codes' must be an array");
      for (const json& entry : codes) {
        if (!entry.is_array() || entry.size() != 2 || !entry[0].is_string() ||
            !entry[1].is_string())
          fail(where + ": each code must be a [system, code] pair of strings");
        auto system = parse_code_system(entry[0].get<std::string>());
        if (!system) fail(where + ": unknown code system tag '" + entry[0].get<std::string>() + "'");
        person.codes.push_back({*system, entry[1].get<std::string>()});
      }
    }
    person.y1 = parse_binary_flag(j, where, "y1");
    person.y2 = parse_binary_flag(j, where, "y2");
    person.y3 = parse_binary_flag(j, where, "y3");
    if (person.y3 && !person.y2)
      fail(where + ": outcome nesting violated: y3=1 requires y2=1");
    if (person.y2 && !person.y1)
      fail(where + ": outcome nesting violated: y2=1 requires y1=1");
    raw.push_back({std::move(person), line_no});
  }

  // A value is missing when the feature occurs anywhere in the file but not
  // in this record; fill from defaults or reject.
  std::unordered_set<std::string> all_features;
  for (const RawRecord& r : raw)
    for (const auto& [feature, _] : r.person.categorical) all_features.insert(feature);
  for (const auto& [feature, _] : defaults) all_features.insert(feature);

  Cohort cohort;
  for (RawRecord& r : raw) {
    for (const std::string& feature : all_features) {
      if (r.person.categorical.contains(feature)) continue;
      auto it = defaults.find(feature);
      if (it == defaults.end())
        fail(source_name + ":" + std::to_string(r.line_no) + ": missing value for '" + feature +
             "' and no default configured");
      r.person.categorical[feature] = it->second;
    }
    cohort.add(std::move(r.person));
  }
  return cohort;
}

Cohort load_cohort(const std::filesystem::path& path,
                   const std::map<std::string, std::string>& defaults) {
  std::ifstream in(path);
  if (!in) fail("cannot open cohort file: " + path.string());
  return parse_cohort(in, path.filename().string(), defaults);
}

void write_cohort_jsonl(const Cohort& cohort, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write cohort file: " + path.string());
  for (const PersonRecord& person : cohort.records()) {
    json j;
    j["id"] = person.id;
    j["categorical"] = json::object();
    for (const auto& [feature, category] : person.categorical)
      j["categorical"][feature] = category;
    j["region"] = person.region ? json(*person.region) : json(nullptr);
    j["event_date"] = person.event_date ? json(*person.event_date) : json(nullptr);
    j["incidence"] = person.incidence ? json(*person.incidence) : json(nullptr);
    json codes = json::array();
    for (const SystemCode& sc : person.codes)
      codes.push_back(json::array({to_string(sc.system), sc.code}));
    j["codes"] = std::move(codes);
    j["y1"] = person.y1 ? 1 : 0;
    j["y2"] = person.y2 ? 1 : 0;
    j["y3"] = person.y3 ? 1 : 0;
    out << j.dump() << '\n';
  }
  if (!out) fail("failed writing cohort file: " + path.string());
}

void IncidenceSeries::set(const std::string& region, const std::string& date, double incidence) {
  values_[{region, date}] = incidence;
}

std::optional<double> IncidenceSeries::find(const std::string& region,
                                            const std::string& date) const {
  auto it = values_.find({region, date});
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

IncidenceSeries load_incidence_series(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open incidence series: " + path.string());
  IncidenceSeries series;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1) {
      if (line != "region,date,incidence")
        fail(path.string() + ":1: expected header 'region,date,incidence'");
      continue;
    }
    std::vector<std::string> fields = split(line, ',');
    std::string where = path.string() + ":" + std::to_string(line_no);
    if (fields.size() != 3) fail(where + ": expected 3 fields");
    if (!valid_iso_date(fields[1])) fail(where + ": bad date '" + fields[1] + "'");
    series.set(fields[0], fields[1], parse_double(fields[2], where + " incidence"));
  }
  return series;
}

void impute_reference_incidence(Cohort& cohort, const IncidenceSeries& series,
                                std::uint64_t seed, Outcome outcome) {
  // Empirical reference-date distribution from outcome persons.
  std::vector<std::string> outcome_dates;
  for (const PersonRecord& person : cohort.records()) {
    if (!person.outcome(outcome)) continue;
    if (!person.event_date)
      fail("outcome person '" + person.id + "' has no event_date");
    if (!person.region) fail("outcome person '" + person.id + "' has no region");
    if (!series.find(*person.region, *person.event_date))
      fail("incidence series has no entry for (" + *person.region + ", " + *person.event_date +
           ") needed by '" + person.id + "'");
    outcome_dates.push_back(*person.event_date);
  }

  Rng rng(seed);
  for (PersonRecord& person : cohort.records()) {
    if (person.incidence) continue;
    if (!person.region) fail("person '" + person.id + "' has no region for incidence lookup");
    std::string date;
    if (person.outcome(outcome)) {
      date = *person.event_date;
    } else {
      if (outcome_dates.empty())
        fail("no outcome event dates available to sample a reference date for '" + person.id +
             "'");
      date = outcome_dates[rng.next_below(outcome_dates.size())];
    }
    auto value = series.find(*person.region, date);
    if (!value)
      fail("incidence series has no entry for (" + *person.region + ", " + date +
           ") needed by '" + person.id + "'");
    person.incidence = *value;
  }
}

}  // namespace hirisk
