#include "hirisk/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "hirisk/common.hpp"
#include "hirisk/featurize.hpp"

namespace hirisk {
namespace {

constexpr std::size_t kShard = 8192;

std::string age_label(int group) {
  const int lo = 40 + 5 * group;
  return std::to_string(lo) + "-" + std::to_string(lo + 4);
}

// Fixed per-leaf prevalence multiplier in [0.5, 1.5); structural, not seeded.
double leaf_multiplier(std::size_t leaf_index) {
  return 0.5 + static_cast<double>((leaf_index * 2654435761ULL) % 4096) / 4096.0;
}

void check_spec(const GeneratorSpec& spec) {
  if (spec.systems.empty()) fail("generator: no systems configured");
  if (spec.n_persons == 0) fail("generator: n_persons must be positive");
  if (!(spec.mean_codes_per_person > 0.0)) fail("generator: mean codes must be positive");
  if (spec.n_age_groups < 1) fail("generator: need at least one age group");
  if (!(spec.y2_fraction >= 0.0 && spec.y2_fraction <= 1.0) ||
      !(spec.y3_fraction >= 0.0 && spec.y3_fraction <= 1.0))
    fail("generator: outcome thinning fractions must lie in [0,1]");
  for (const SystemShape& shape : spec.systems) {
    const int max_depth = kMaxLevel - root_level(shape.system) + 1;
    if (shape.branching.empty() || static_cast<int>(shape.branching.size()) > max_depth)
      fail("generator: " + std::string(to_string(shape.system)) + " branching depth must be 1.." +
           std::to_string(max_depth));
    for (int b : shape.branching)
      if (b < 1) fail("generator: branching factors must be >= 1");
  }
}

}  // namespace

Taxonomy generate_taxonomy(const GeneratorSpec& spec) {
  check_spec(spec);
  Taxonomy tax;
  for (const SystemShape& shape : spec.systems) {
    const int base_level = root_level(shape.system);
    std::vector<std::string> frontier;
    static const int kOpsChapters[3] = {5, 6, 8};
    for (int r = 0; r < shape.branching[0]; ++r) {
      std::string code = shape.system == CodeSystemId::OPS
                             ? std::to_string(kOpsChapters[r % 3]) + "-" + std::to_string(r + 1)
                             : std::to_string(r + 1);
      tax.add_node({code, shape.system, base_level, "", ""});
      frontier.push_back(std::move(code));
    }
    for (std::size_t depth = 1; depth < shape.branching.size(); ++depth) {
      std::vector<std::string> next;
      next.reserve(frontier.size() * static_cast<std::size_t>(shape.branching[depth]));
      for (const std::string& parent : frontier) {
        for (int c = 0; c < shape.branching[depth]; ++c) {
          std::string code = parent + "." + std::to_string(c + 1);
          tax.add_node({code, shape.system, base_level + static_cast<int>(depth), parent, ""});
          next.push_back(std::move(code));
        }
      }
      frontier = std::move(next);
    }
  }
  tax.validate();
  tax.finalize();
  return tax;
}

SyntheticCohort generate_cohort(const Taxonomy& taxonomy, const GeneratorSpec& spec,
                                int threads) {
  check_spec(spec);

  std::vector<const CodeNode*> leaves;
  for (const CodeNode& node : taxonomy.nodes())
    if (taxonomy.children(node.system, node.code).empty()) leaves.push_back(&node);
  if (leaves.empty()) fail("generator: taxonomy has no leaves");

  const double base_prev = spec.mean_codes_per_person / static_cast<double>(leaves.size());
  std::vector<double> leaf_logit(leaves.size());
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    const double prev = base_prev * leaf_multiplier(l);
    if (!(prev > 0.0 && prev < 1.0))
      fail("generator: leaf prevalence " + format_g(prev, 6) + " outside (0,1); lower "
           "mean_codes_per_person or grow the taxonomy");
    leaf_logit[l] = logit(prev);
  }

  std::map<SystemCode, double> planted;
  for (const CodeEffectSpec& e : spec.effects) {
    if (!taxonomy.find(e.system, e.code))
      fail("generator: planted code " + std::string(to_string(e.system)) + " " + e.code +
           " not in taxonomy");
    planted[{e.system, e.code}] += e.coef;
  }
  for (const CategoricalEffectSpec& e : spec.categorical_effects) {
    if (e.feature == "gender") {
      if (e.category != "m" && e.category != "f")
        fail("generator: gender category must be m or f");
    } else if (e.feature == "age_group") {
      bool known = false;
      for (int g = 0; g < spec.n_age_groups; ++g)
        if (age_label(g) == e.category) known = true;
      if (!known) fail("generator: unknown age_group category \"" + e.category + "\"");
    } else {
      fail("generator: categorical effects support age_group and gender, not \"" +
           e.feature + "\"");
    }
  }

  const std::size_t n_shards = (spec.n_persons + kShard - 1) / kShard;
  std::vector<std::vector<PersonRecord>> shard_records(n_shards);
  std::vector<std::vector<double>> shard_logits(n_shards);

  const int id_width = static_cast<int>(std::to_string(spec.n_persons - 1).size());

  parallel_for(n_shards, threads, [&](std::size_t s) {
    Rng rng(Rng::derive_seed(spec.seed, s));
    const std::size_t begin = s * kShard;
    const std::size_t end = std::min(spec.n_persons, begin + kShard);
    shard_records[s].reserve(end - begin);
    shard_logits[s].reserve(end - begin);

    for (std::size_t i = begin; i < end; ++i) {
      PersonRecord rec;
      std::string digits = std::to_string(i);
      rec.id = "p" + std::string(static_cast<std::size_t>(id_width) - digits.size(), '0') +
               digits;

      const double u_age = rng.next_unit();
      const int group = std::min(spec.n_age_groups - 1,
                                 static_cast<int>(u_age * spec.n_age_groups));
      rec.categorical["age_group"] = age_label(group);
      rec.categorical["gender"] = rng.next_bernoulli(0.5) ? "f" : "m";
      rec.incidence = std::round(rng.next_range(20.0, 200.0) * 10.0) / 10.0;

      const double age_shift = spec.age_correlation * (2.0 * u_age - 1.0);
      for (std::size_t l = 0; l < leaves.size(); ++l)
        if (rng.next_unit() < sigmoid(leaf_logit[l] + age_shift))
          rec.codes.push_back({leaves[l]->system, leaves[l]->code});

      double true_logit = spec.intercept + spec.incidence_coef * *rec.incidence;
      if (!planted.empty()) {
        std::vector<SystemCode> expanded = expand_codes(taxonomy, rec.codes);
        for (const SystemCode& sc : expanded) {
          const auto it = planted.find(sc);
          if (it != planted.end()) true_logit += it->second;
        }
      }
      for (const CategoricalEffectSpec& e : spec.categorical_effects)
        if (rec.categorical.at(e.feature) == e.category) true_logit += e.coef;

      const double u1 = rng.next_unit();
      const double u2 = rng.next_unit();
      const double u3 = rng.next_unit();
      rec.y1 = u1 < sigmoid(true_logit);
      rec.y2 = rec.y1 && u2 < spec.y2_fraction;
      rec.y3 = rec.y2 && u3 < spec.y3_fraction;

      shard_logits[s].push_back(true_logit);
      shard_records[s].push_back(std::move(rec));
    }
  });

  SyntheticCohort out;
  out.true_logit.reserve(spec.n_persons);
  for (std::size_t s = 0; s < n_shards; ++s) {
    for (PersonRecord& rec : shard_records[s]) out.cohort.add(std::move(rec));
    out.true_logit.insert(out.true_logit.end(), shard_logits[s].begin(),
                          shard_logits[s].end());
  }
  return out;
}

void write_sidecar_csv(const std::filesystem::path& path, const Cohort& cohort,
                       const std::vector<double>& true_logit) {
  if (cohort.size() != true_logit.size()) fail("sidecar: length mismatch");
  std::ofstream out(path);
  if (!out) fail("cannot write " + path.string());
  out << "id,true_logit\n";
  for (std::size_t i = 0; i < cohort.size(); ++i)
    out << cohort.records()[i].id << ',' << format_g(true_logit[i]) << '\n';
  if (!out) fail("write failed: " + path.string());
}

std::vector<double> load_sidecar_csv(const std::filesystem::path& path,
                                     const Cohort& cohort) {
  std::ifstream in(path);
  if (!in) fail("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "id,true_logit")
    fail(path.string() + ": expected header id,true_logit");
  std::map<std::string, double> by_id;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() != 2)
      fail(path.string() + ":" + std::to_string(line_no) + ": expected 2 fields");
    by_id[fields[0]] = parse_double(fields[1], "true_logit");
  }
  std::vector<double> out;
  out.reserve(cohort.size());
  for (const PersonRecord& rec : cohort.records()) {
    const auto it = by_id.find(rec.id);
    if (it == by_id.end()) fail(path.string() + ": no true_logit for id " + rec.id);
    out.push_back(it->second);
  }
  return out;
}

}  // namespace hirisk
