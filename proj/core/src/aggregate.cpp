#include "hirisk/aggregate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "hirisk/common.hpp"

namespace hirisk {
namespace {

double column_coef(const std::vector<double>& beta, const FeatureSpace& space,
                   CodeSystemId system, const std::string& code) {
  const auto pos = space.find(FeatureSpace::code_column_name(system, code));
  return pos ? beta[*pos] : 0.0;
}

std::uint64_t column_count(const FeatureSpace& space, const SparseDesignMatrix& design,
                           CodeSystemId system, const std::string& code) {
  const auto pos = space.find(FeatureSpace::code_column_name(system, code));
  return pos ? design.columns[*pos].rows.size() : 0;
}

bool observed(const FeatureSpace& space, CodeSystemId system, const std::string& code) {
  return space.find(FeatureSpace::code_column_name(system, code)).has_value();
}

// Column names are "SYS:code"; recover the code part.
std::string code_of(const FeatureColumn& col) {
  return col.name.substr(col.name.find(':') + 1);
}

CodeEffect effect_from_chain(const std::vector<double>& beta, const FeatureSpace& space,
                             const Taxonomy& taxonomy, const SparseDesignMatrix& design,
                             CodeSystemId system, const std::string& code) {
  const CodeNode& node = taxonomy.at(system, code);
  CodeEffect eff;
  eff.system = system;
  eff.code = code;
  eff.level = node.level;
  eff.own_coef = column_coef(beta, space, system, code);
  double total = 0.0;
  for (const CodeNode* anc : taxonomy.ancestors(system, code))
    total += column_coef(beta, space, system, anc->code);
  eff.total_logor = total;
  eff.total_or = std::exp(total);
  eff.prevalence = column_count(space, design, system, code);
  return eff;
}

// Observed codes under (and including) `code` with no observed descendant.
void collect_observed_leaves(const Taxonomy& taxonomy, const FeatureSpace& space,
                             CodeSystemId system, const std::string& code,
                             std::vector<std::string>& leaves) {
  const std::size_t before = leaves.size();
  for (const CodeNode* child : taxonomy.children(system, code))
    collect_observed_leaves(taxonomy, space, system, child->code, leaves);
  if (leaves.size() == before && observed(space, system, code)) leaves.push_back(code);
}

}  // namespace

CodeEffect total_code_effect(const LassoFit& fit, const FeatureSpace& space,
                             const Taxonomy& taxonomy, const SparseDesignMatrix& design,
                             CodeSystemId system, const std::string& code) {
  std::vector<double> beta = fit.dense_coefficients(space.size());
  return effect_from_chain(beta, space, taxonomy, design, system, code);
}

GroupSummary group_logor(const LassoFit& fit, const FeatureSpace& space,
                         const Taxonomy& taxonomy, const SparseDesignMatrix& design,
                         CodeSystemId system, const std::string& group) {
  const CodeNode& node = taxonomy.at(system, group);
  if (node.level != 2)
    fail("aggregate: " + std::string(to_string(system)) + " " + group + " is level " +
         std::to_string(node.level) + ", groups are level-2 codes");

  std::vector<std::string> leaves;
  collect_observed_leaves(taxonomy, space, system, group, leaves);
  if (leaves.empty())
    fail("aggregate: group " + std::string(to_string(system)) + " " + group +
         " has no observed codes");

  std::vector<double> beta = fit.dense_coefficients(space.size());
  double weighted = 0.0, weight = 0.0;
  for (const std::string& leaf : leaves) {
    CodeEffect eff = effect_from_chain(beta, space, taxonomy, design, system, leaf);
    weighted += static_cast<double>(eff.prevalence) * eff.total_logor;
    weight += static_cast<double>(eff.prevalence);
  }

  GroupSummary gs;
  gs.system = system;
  gs.group = group;
  gs.logor = weighted / weight;
  gs.size = column_count(space, design, system, group);
  gs.importance = gs.logor * static_cast<double>(gs.size);
  return gs;
}

std::vector<GroupSummary> all_group_summaries(const LassoFit& fit, const FeatureSpace& space,
                                              const Taxonomy& taxonomy,
                                              const SparseDesignMatrix& design) {
  std::vector<GroupSummary> out;
  for (const CodeNode& node : taxonomy.nodes()) {
    if (node.level != 2) continue;
    if (!observed(space, node.system, node.code)) continue;
    out.push_back(group_logor(fit, space, taxonomy, design, node.system, node.code));
  }
  std::sort(out.begin(), out.end(), [](const GroupSummary& a, const GroupSummary& b) {
    if (a.system != b.system) return a.system < b.system;
    return a.group < b.group;
  });
  return out;
}

std::vector<GroupSummary> population_importance(std::vector<GroupSummary> groups) {
  for (GroupSummary& g : groups) g.importance = g.logor * static_cast<double>(g.size);
  std::sort(groups.begin(), groups.end(), [](const GroupSummary& a, const GroupSummary& b) {
    if (a.importance != b.importance) return a.importance > b.importance;
    if (a.system != b.system) return a.system < b.system;
    return a.group < b.group;
  });
  for (std::size_t i = 0; i < groups.size(); ++i) groups[i].rank = static_cast<int>(i + 1);
  return groups;
}

std::vector<EffectsRow> export_coefficients(const LassoFit& fit, const FeatureSpace& space,
                                            const Taxonomy& taxonomy,
                                            const SparseDesignMatrix& design,
                                            std::uint64_t min_group_size) {
  std::vector<double> beta = fit.dense_coefficients(space.size());
  std::vector<EffectsRow> rows;
  rows.reserve(space.size());

  std::set<std::pair<CodeSystemId, std::string>> exported;
  for (std::uint32_t j = 0; j < space.size(); ++j) {
    const FeatureColumn& col = space.at(j);
    EffectsRow row;
    if (col.kind == ColumnKind::CodeDummy) {
      CodeEffect eff =
          effect_from_chain(beta, space, taxonomy, design, *col.system, code_of(col));
      row.is_code = true;
      row.system = eff.system;
      row.name = eff.code;
      row.level = eff.level;
      row.coef = eff.own_coef;
      row.total_logor = eff.total_logor;
      row.total_or = eff.total_or;
      row.prevalence = eff.prevalence;
      exported.emplace(eff.system, eff.code);
    } else {
      row.is_code = false;
      row.name = col.name;
      row.coef = beta[j];
      row.total_logor = beta[j];
      row.total_or = std::exp(beta[j]);
      const DesignColumn& dc = design.columns[j];
      row.prevalence = dc.binary
                           ? dc.rows.size()
                           : static_cast<std::uint64_t>(
                                 std::count_if(dc.values.begin(), dc.values.end(),
                                               [](double v) { return v != 0.0; }));
    }
    row.below_min_size = row.prevalence < min_group_size;
    rows.push_back(std::move(row));
  }

  // Unobserved codes still inherit ancestor effects; export the nonzero ones.
  std::vector<const CodeNode*> extra;
  for (const CodeNode& node : taxonomy.nodes()) {
    if (exported.count({node.system, node.code})) continue;
    double total = 0.0;
    for (const CodeNode* anc : taxonomy.ancestors(node.system, node.code))
      total += column_coef(beta, space, node.system, anc->code);
    if (total != 0.0) extra.push_back(&node);
  }
  std::sort(extra.begin(), extra.end(), [](const CodeNode* a, const CodeNode* b) {
    if (a->system != b->system) return a->system < b->system;
    if (a->level != b->level) return a->level < b->level;
    return a->code < b->code;
  });
  for (const CodeNode* node : extra) {
    CodeEffect eff =
        effect_from_chain(beta, space, taxonomy, design, node->system, node->code);
    EffectsRow row;
    row.is_code = true;
    row.system = eff.system;
    row.name = eff.code;
    row.level = eff.level;
    row.coef = 0.0;
    row.total_logor = eff.total_logor;
    row.total_or = eff.total_or;
    row.prevalence = 0;
    row.below_min_size = true;
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_effects_csv(const std::string& path, const std::vector<EffectsRow>& rows) {
  std::ofstream out(path);
  if (!out) fail("cannot write " + path);
  out << "system,code,level,coef,total_logor,total_or,prevalence,below_min_size\n";
  for (const EffectsRow& r : rows) {
    if (r.is_code)
      out << to_string(r.system) << ',' << r.name << ',' << r.level;
    else
      out << ',' << r.name << ',';
    out << ',' << format_g(r.coef) << ',' << format_g(r.total_logor) << ','
        << format_g(r.total_or) << ',' << r.prevalence << ',' << (r.below_min_size ? 1 : 0)
        << '\n';
  }
  if (!out) fail("write failed: " + path);
}

void write_groups_csv(const std::string& path, const std::vector<GroupSummary>& groups) {
  std::ofstream out(path);
  if (!out) fail("cannot write " + path);
  out << "group,logor,size,importance,rank\n";
  for (const GroupSummary& g : groups)
    out << to_string(g.system) << ':' << g.group << ',' << format_g(g.logor) << ',' << g.size
        << ',' << format_g(g.importance) << ',' << g.rank << '\n';
  if (!out) fail("write failed: " + path);
}

std::map<int, std::size_t> nonzero_counts_by_level(const LassoFit& fit,
                                                   const FeatureSpace& space) {
  std::map<int, std::size_t> counts;
  for (const auto& [j, b] : fit.coefficients) {
    if (b == 0.0) continue;
    const FeatureColumn& col = space.at(j);
    counts[col.kind == ColumnKind::CodeDummy ? *col.level : 0] += 1;
  }
  return counts;
}

}  // namespace hirisk
