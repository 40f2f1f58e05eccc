#include "hirisk/featurize.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace hirisk {

using nlohmann::json;

std::string FeatureSpace::code_column_name(CodeSystemId system, std::string_view code) {
  std::string name = to_string(system);
  name.push_back(':');
  name.append(code);
  return name;
}

std::string FeatureSpace::categorical_column_name(std::string_view feature,
                                                  std::string_view category) {
  std::string name(feature);
  name.push_back('=');
  name.append(category);
  return name;
}

std::uint32_t FeatureSpace::add(FeatureColumn column) {
  auto position = static_cast<std::uint32_t>(columns_.size());
  auto [it, inserted] = index_.emplace(column.name, position);
  if (!inserted) fail("duplicate feature column name '" + column.name + "'");
  columns_.push_back(std::move(column));
  return position;
}

std::optional<std::uint32_t> FeatureSpace::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<double> FeatureSpace::penalty_factors() const {
  std::vector<double> v;
  v.reserve(columns_.size());
  for (const FeatureColumn& c : columns_) v.push_back(c.penalty_factor);
  return v;
}

std::size_t SparseDesignMatrix::binary_nnz() const {
  std::size_t total = 0;
  for (const DesignColumn& c : columns)
    if (c.binary) total += c.rows.size();
  return total;
}

SparseDesignMatrix subset_rows(const SparseDesignMatrix& design,
                               std::span<const std::uint32_t> rows) {
  std::vector<std::uint32_t> remap(design.n_rows, UINT32_MAX);
  for (std::uint32_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= design.n_rows) fail("subset_rows: row index out of range");
    remap[rows[i]] = i;
  }
  SparseDesignMatrix out;
  out.n_rows = static_cast<std::uint32_t>(rows.size());
  out.columns.resize(design.columns.size());
  for (std::size_t j = 0; j < design.columns.size(); ++j) {
    const DesignColumn& src = design.columns[j];
    DesignColumn& dst = out.columns[j];
    dst.binary = src.binary;
    if (src.binary) {
      for (std::uint32_t r : src.rows)
        if (remap[r] != UINT32_MAX) dst.rows.push_back(remap[r]);
      std::sort(dst.rows.begin(), dst.rows.end());
    } else {
      dst.values.resize(rows.size());
      for (std::uint32_t i = 0; i < rows.size(); ++i) dst.values[i] = src.values[rows[i]];
    }
  }
  return out;
}

FeatureConfig parse_feature_config(const std::string& text, const std::string& source_name) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(source_name + ": malformed feature config: " + e.what());
  }
  FeatureConfig config;
  if (j.contains("categorical")) {
    for (const json& entry : j.at("categorical")) {
      CategoricalConfig cat;
      if (entry.is_string()) {
        cat.name = entry.get<std::string>();
      } else {
        cat.name = entry.at("name").get<std::string>();
        if (entry.contains("reference") && !entry.at("reference").is_null())
          cat.reference = entry.at("reference").get<std::string>();
      }
      config.categorical.push_back(std::move(cat));
    }
  }
  if (j.contains("systems")) {
    config.systems.clear();
    for (const json& entry : j.at("systems")) {
      auto system = parse_code_system(entry.get<std::string>());
      if (!system) fail(source_name + ": unknown code system '" + entry.get<std::string>() + "'");
      config.systems.insert(*system);
    }
  }
  if (j.contains("max_level")) {
    config.max_level = j.at("max_level").get<int>();
    if (config.max_level < 1 || config.max_level > kMaxLevel)
      fail(source_name + ": max_level out of range [1,5]");
  }
  if (j.contains("explicit_codes") && !j.at("explicit_codes").is_null()) {
    std::vector<SystemCode> codes;
    for (const json& entry : j.at("explicit_codes")) {
      auto system = parse_code_system(entry.at(0).get<std::string>());
      if (!system) fail(source_name + ": unknown code system in explicit_codes");
      codes.push_back({*system, entry.at(1).get<std::string>()});
    }
    config.explicit_codes = std::move(codes);
  }
  if (j.contains("penalty_mode")) {
    std::string mode = j.at("penalty_mode").get<std::string>();
    if (mode == "level")
      config.penalty_mode = PenaltyMode::Level;
    else if (mode == "uniform")
      config.penalty_mode = PenaltyMode::Uniform;
    else
      fail(source_name + ": penalty_mode must be 'level' or 'uniform'");
  }
  if (j.contains("unknown_codes")) {
    std::string policy = j.at("unknown_codes").get<std::string>();
    if (policy == "error")
      config.unknown_codes = UnknownCodePolicy::Error;
    else if (policy == "skip")
      config.unknown_codes = UnknownCodePolicy::Skip;
    else
      fail(source_name + ": unknown_codes must be 'error' or 'skip'");
  }
  if (j.contains("include_incidence")) config.include_incidence = j.at("include_incidence").get<bool>();
  return config;
}

FeatureConfig load_feature_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open feature config: " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_feature_config(text, path.filename().string());
}

std::vector<SystemCode> expand_codes(const Taxonomy& taxonomy, std::span<const SystemCode> codes,
                                     UnknownCodePolicy policy, std::uint64_t* skipped) {
  std::vector<SystemCode> out;
  for (const SystemCode& sc : codes) {
    const CodeNode* node = taxonomy.find(sc.system, sc.code);
    if (node == nullptr) {
      if (policy == UnknownCodePolicy::Error)
        fail(std::string("unknown code (") + to_string(sc.system) + ", " + sc.code + ")");
      if (skipped != nullptr) ++*skipped;
      continue;
    }
    while (true) {
      out.push_back({node->system, node->code});
      if (node->parent.empty()) break;
      node = &taxonomy.at(node->system, node->parent);
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

namespace {

struct CodeColumnKey {
  CodeSystemId system;
  int level;
  std::string code;

  friend auto operator<=>(const CodeColumnKey&, const CodeColumnKey&) = default;
};

}  // namespace

DesignBuild build_design(const Cohort& cohort, const Taxonomy& taxonomy,
                         const FeatureConfig& config) {
  if (cohort.empty()) fail("build_design: empty cohort");
  const auto& dictionary = cohort.feature_categories();
  for (const CategoricalConfig& cat : config.categorical) {
    if (!dictionary.contains(cat.name))
      fail("feature config references unknown categorical feature '" + cat.name + "'");
  }
  if (config.include_incidence) {
    for (const PersonRecord& person : cohort.records())
      if (!person.incidence)
        fail("person '" + person.id + "' has no incidence; impute the cohort first");
  }

  std::optional<std::set<SystemCode>> explicit_filter;
  if (config.explicit_codes)
    explicit_filter.emplace(config.explicit_codes->begin(), config.explicit_codes->end());

  // Pass 1: expand every person's codes, collect the observed column set.
  std::uint64_t skipped = 0;
  std::vector<std::vector<const CodeNode*>> activations(cohort.size());
  std::set<CodeColumnKey> observed;
  for (std::size_t row = 0; row < cohort.size(); ++row) {
    const PersonRecord& person = cohort.records()[row];
    std::vector<const CodeNode*>& active = activations[row];
    for (const SystemCode& sc : person.codes) {
      if (!config.systems.contains(sc.system)) continue;
      const CodeNode* node = taxonomy.find(sc.system, sc.code);
      if (node == nullptr) {
        if (config.unknown_codes == UnknownCodePolicy::Error)
          fail(std::string("unknown code (") + to_string(sc.system) + ", " + sc.code +
               ") for person '" + person.id + "'");
        ++skipped;
        continue;
      }
      while (true) {
        if (node->level <= config.max_level &&
            (!explicit_filter || explicit_filter->contains({node->system, node->code})))
          active.push_back(node);
        if (node->parent.empty()) break;
        node = &taxonomy.at(node->system, node->parent);
      }
    }
    std::sort(active.begin(), active.end());
    active.erase(std::unique(active.begin(), active.end()), active.end());
    for (const CodeNode* node : active) observed.insert({node->system, node->level, node->code});
  }

  DesignBuild build;
  build.unknown_codes_skipped = skipped;
  FeatureSpace& space = build.space;
  SparseDesignMatrix& matrix = build.matrix;
  matrix.n_rows = static_cast<std::uint32_t>(cohort.size());

  // Categorical dummies, reference category omitted.
  struct CategoricalBlock {
    std::string feature;
    std::unordered_map<std::string, std::uint32_t> category_column;
  };
  std::vector<CategoricalBlock> cat_blocks;
  for (const CategoricalConfig& cat : config.categorical) {
    const auto& counts = dictionary.at(cat.name);
    std::string reference;
    if (cat.reference) {
      if (!counts.contains(*cat.reference))
        fail("reference category '" + *cat.reference + "' never observed for feature '" +
             cat.name + "'");
      reference = *cat.reference;
    } else {
      std::size_t best = 0;
      for (const auto& [category, count] : counts) {
        if (count > best) {
          best = count;
          reference = category;
        }
      }
    }
    CategoricalBlock block;
    block.feature = cat.name;
    for (const auto& [category, count] : counts) {
      if (category == reference) continue;
      FeatureColumn column;
      column.name = FeatureSpace::categorical_column_name(cat.name, category);
      column.kind = ColumnKind::CategoricalDummy;
      column.penalty_factor = 1.0;
      block.category_column.emplace(category, space.add(std::move(column)));
    }
    cat_blocks.push_back(std::move(block));
  }

  // Code dummies in (system, level, code) order.
  std::unordered_map<std::string, std::uint32_t> code_column;
  for (const CodeColumnKey& key : observed) {
    const std::string name = FeatureSpace::code_column_name(key.system, key.code);
    FeatureColumn column;
    column.name = name;
    column.kind = ColumnKind::CodeDummy;
    column.system = key.system;
    column.level = key.level;
    column.penalty_factor =
        config.penalty_mode == PenaltyMode::Level ? static_cast<double>(key.level) : 1.0;
    code_column.emplace(name, space.add(std::move(column)));
  }

  std::optional<std::uint32_t> incidence_col;
  if (config.include_incidence) {
    FeatureColumn column;
    column.name = FeatureSpace::kIncidenceColumn;
    column.kind = ColumnKind::Continuous;
    column.penalty_factor = 0.0;
    incidence_col = space.add(std::move(column));
  }

  matrix.columns.resize(space.size());
  if (incidence_col) {
    matrix.columns[*incidence_col].binary = false;
    matrix.columns[*incidence_col].values.resize(cohort.size());
  }

  // Pass 2: fill row indices; persons are visited in order, so lists sort themselves.
  for (std::uint32_t row = 0; row < cohort.size(); ++row) {
    const PersonRecord& person = cohort.records()[row];
    for (const CategoricalBlock& block : cat_blocks) {
      auto value = person.categorical.find(block.feature);
      if (value == person.categorical.end()) continue;
      auto col = block.category_column.find(value->second);
      if (col != block.category_column.end()) matrix.columns[col->second].rows.push_back(row);
    }
    for (const CodeNode* node : activations[row]) {
      auto col = code_column.find(FeatureSpace::code_column_name(node->system, node->code));
      matrix.columns[col->second].rows.push_back(row);
    }
    if (incidence_col) matrix.columns[*incidence_col].values[row] = *person.incidence;
  }
  return build;
}

std::vector<std::uint64_t> column_prevalence(const SparseDesignMatrix& design) {
  std::vector<std::uint64_t> counts;
  counts.reserve(design.columns.size());
  for (const DesignColumn& column : design.columns) {
    if (column.binary) {
      counts.push_back(column.rows.size());
    } else {
      std::uint64_t nonzero = 0;
      for (double v : column.values)
        if (v != 0.0) ++nonzero;
      counts.push_back(nonzero);
    }
  }
  return counts;
}

// ---------------------------------------------------------------------------
// Design cache
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'H', 'I', 'R', 'I', 'S', 'K', 'D', '1'};

template <class T>
void write_raw(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T read_raw(std::istream& in, const char* what) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) fail(std::string("design cache truncated while reading ") + what);
  return value;
}

void write_string(std::ostream& out, const std::string& s) {
  write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in, const char* what) {
  auto len = read_raw<std::uint32_t>(in, what);
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) fail(std::string("design cache truncated while reading ") + what);
  return s;
}

}  // namespace

void save_design(const std::filesystem::path& path, const FeatureSpace& space,
                 const SparseDesignMatrix& matrix) {
  if (space.size() != matrix.n_cols()) fail("save_design: space/matrix column mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write design cache: " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_raw<std::uint64_t>(out, matrix.n_rows);
  write_raw<std::uint64_t>(out, matrix.n_cols());
  for (std::size_t j = 0; j < space.size(); ++j) {
    const FeatureColumn& column = space.at(static_cast<std::uint32_t>(j));
    write_raw<std::uint8_t>(out, static_cast<std::uint8_t>(column.kind));
    write_raw<std::int8_t>(out,
                           column.system ? static_cast<std::int8_t>(*column.system) : std::int8_t{-1});
    write_raw<std::int32_t>(out, column.level ? *column.level : -1);
    write_raw<double>(out, column.penalty_factor);
    write_string(out, column.name);
  }
  for (const DesignColumn& column : matrix.columns) {
    write_raw<std::uint8_t>(out, column.binary ? 1 : 0);
    if (column.binary) {
      write_raw<std::uint64_t>(out, column.rows.size());
      out.write(reinterpret_cast<const char*>(column.rows.data()),
                static_cast<std::streamsize>(column.rows.size() * sizeof(std::uint32_t)));
    } else {
      out.write(reinterpret_cast<const char*>(column.values.data()),
                static_cast<std::streamsize>(column.values.size() * sizeof(double)));
    }
  }
  if (!out) fail("failed writing design cache: " + path.string());
}

DesignBuild load_design(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open design cache: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    fail("not a design cache (bad magic): " + path.string());
  DesignBuild build;
  build.matrix.n_rows = static_cast<std::uint32_t>(read_raw<std::uint64_t>(in, "n_rows"));
  auto n_cols = read_raw<std::uint64_t>(in, "n_cols");
  for (std::uint64_t j = 0; j < n_cols; ++j) {
    FeatureColumn column;
    column.kind = static_cast<ColumnKind>(read_raw<std::uint8_t>(in, "kind"));
    auto system = read_raw<std::int8_t>(in, "system");
    if (system >= 0) column.system = static_cast<CodeSystemId>(system);
    auto level = read_raw<std::int32_t>(in, "level");
    if (level >= 0) column.level = level;
    column.penalty_factor = read_raw<double>(in, "penalty");
    column.name = read_string(in, "name");
    build.space.add(std::move(column));
  }
  build.matrix.columns.resize(n_cols);
  for (std::uint64_t j = 0; j < n_cols; ++j) {
    DesignColumn& column = build.matrix.columns[j];
    column.binary = read_raw<std::uint8_t>(in, "column tag") != 0;
    if (column.binary) {
      auto count = read_raw<std::uint64_t>(in, "row count");
      column.rows.resize(count);
      in.read(reinterpret_cast<char*>(column.rows.data()),
              static_cast<std::streamsize>(count * sizeof(std::uint32_t)));
      if (!in) fail("design cache truncated in row data");
    } else {
      column.values.resize(build.matrix.n_rows);
      in.read(reinterpret_cast<char*>(column.values.data()),
              static_cast<std::streamsize>(column.values.size() * sizeof(double)));
      if (!in) fail("design cache truncated in continuous data");
    }
  }
  return build;
}

}  // namespace hirisk
