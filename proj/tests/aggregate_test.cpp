#include "hirisk/aggregate.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"

using namespace hirisk;

namespace {

Taxonomy two_system_taxonomy() {
  Taxonomy tax;
  tax.add_node({"R", CodeSystemId::ICD, 1, "", ""});
  tax.add_node({"G", CodeSystemId::ICD, 2, "R", ""});
  tax.add_node({"H", CodeSystemId::ICD, 2, "R", ""});
  tax.add_node({"U", CodeSystemId::ICD, 2, "R", ""});  // never observed
  tax.add_node({"A", CodeSystemId::ICD, 3, "G", ""});
  tax.add_node({"B", CodeSystemId::ICD, 3, "G", ""});
  tax.add_node({"C", CodeSystemId::ICD, 3, "H", ""});
  tax.add_node({"B1", CodeSystemId::ICD, 4, "B", ""});  // never observed
  tax.add_node({"X", CodeSystemId::ATC, 1, "", ""});
  tax.add_node({"X1", CodeSystemId::ATC, 2, "X", ""});
  tax.add_node({"X1A", CodeSystemId::ATC, 3, "X1", ""});
  tax.validate();
  tax.finalize();
  return tax;
}

// 600 persons: 100 with A, 300 with B, 100 with C, 100 with the ATC leaf.
Cohort grouped_cohort() {
  Cohort cohort;
  for (int i = 0; i < 600; ++i) {
    PersonRecord person;
    person.id = "p" + std::to_string(i);
    person.categorical["gender"] = i % 2 ? "m" : "f";
    if (i < 100)
      person.codes = {{CodeSystemId::ICD, "A"}};
    else if (i < 400)
      person.codes = {{CodeSystemId::ICD, "B"}};
    else if (i < 500)
      person.codes = {{CodeSystemId::ICD, "C"}};
    else
      person.codes = {{CodeSystemId::ATC, "X1A"}};
    cohort.add(person);
  }
  return cohort;
}

FeatureConfig plain_config() {
  FeatureConfig config;
  config.categorical = {{"gender", std::nullopt}};
  config.include_incidence = false;
  return config;
}

LassoFit fit_with(const FeatureSpace& space,
                  const std::vector<std::pair<std::string, double>>& coefs,
                  double intercept = -2.0) {
  LassoFit fit;
  fit.intercept = intercept;
  for (const auto& [name, value] : coefs) {
    auto pos = space.find(name);
    REQUIRE(pos.has_value());
    fit.coefficients.emplace_back(*pos, value);
  }
  std::sort(fit.coefficients.begin(), fit.coefficients.end());
  fit.n_nonzero = static_cast<int>(fit.coefficients.size());
  return fit;
}

}  // namespace

TEST_SUITE("aggregate") {

TEST_CASE("total effect sums the coefficients along the ancestor chain") {
  Taxonomy tax = load_taxonomy(HIRISK_FIXTURE_DIR "/mini_taxonomy.tsv");
  Cohort cohort = load_cohort(HIRISK_FIXTURE_DIR "/mini_cohort.jsonl");
  FeatureConfig config;
  config.categorical = {{"gender", std::nullopt}};
  DesignBuild build = build_design(cohort, tax, config);

  // Chain coefficients 0.1, 0.05, 0, 0.2, 0.15 from the root down.
  LassoFit fit = fit_with(build.space, {{"ICD:IX", 0.1},
                                        {"ICD:I20-I25", 0.05},
                                        {"ICD:I25.2", 0.2},
                                        {"ICD:I25.22", 0.15}});

  CodeEffect leaf =
      total_code_effect(fit, build.space, tax, build.matrix, CodeSystemId::ICD, "I25.22");
  CHECK(leaf.total_logor == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(leaf.total_or == doctest::Approx(1.6487212707001282).epsilon(1e-12));
  CHECK(leaf.own_coef == 0.15);
  CHECK(leaf.level == 5);
  CHECK(leaf.prevalence == 2);

  CodeEffect mid =
      total_code_effect(fit, build.space, tax, build.matrix, CodeSystemId::ICD, "I25");
  CHECK(mid.total_logor == doctest::Approx(0.15).epsilon(1e-15));
  CHECK(mid.own_coef == 0.0);

  CodeEffect unrelated =
      total_code_effect(fit, build.space, tax, build.matrix, CodeSystemId::ICD, "G43");
  CHECK(unrelated.total_logor == 0.0);
  CHECK(unrelated.total_or == 1.0);
}

TEST_CASE("group effect is the prevalence-weighted mean over observed leaves") {
  Taxonomy tax = two_system_taxonomy();
  DesignBuild build = build_design(grouped_cohort(), tax, plain_config());
  LassoFit fit = fit_with(build.space, {{"ICD:A", 0.4}, {"ICD:B", 0.8}});

  GroupSummary group = group_logor(fit, build.space, tax, build.matrix, CodeSystemId::ICD, "G");
  // (100 * 0.4 + 300 * 0.8) / 400
  CHECK(group.logor == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(group.size == 400);
  CHECK(group.importance == doctest::Approx(0.7 * 400.0).epsilon(1e-12));
}

TEST_CASE("a code with an observed descendant is not a leaf") {
  Taxonomy tax;
  tax.add_node({"R", CodeSystemId::ICD, 1, "", ""});
  tax.add_node({"G", CodeSystemId::ICD, 2, "R", ""});
  tax.add_node({"A", CodeSystemId::ICD, 3, "G", ""});
  tax.add_node({"B", CodeSystemId::ICD, 3, "G", ""});
  tax.add_node({"A1", CodeSystemId::ICD, 4, "A", ""});
  tax.validate();
  tax.finalize();

  Cohort cohort;
  for (int i = 0; i < 400; ++i) {
    PersonRecord person;
    person.id = "p" + std::to_string(i);
    if (i < 100) {
      person.codes = {{CodeSystemId::ICD, "A"}};
      if (i < 60) person.codes.push_back({CodeSystemId::ICD, "A1"});
    } else {
      person.codes = {{CodeSystemId::ICD, "B"}};
    }
    cohort.add(person);
  }
  FeatureConfig config;
  config.include_incidence = false;
  DesignBuild build = build_design(cohort, tax, config);
  LassoFit fit = fit_with(build.space, {{"ICD:A", 0.4}, {"ICD:B", 0.8}});

  // Leaves are A1 (60 persons) and B (300); A is interior now.
  GroupSummary group = group_logor(fit, build.space, tax, build.matrix, CodeSystemId::ICD, "G");
  CHECK(group.logor == doctest::Approx((60.0 * 0.4 + 300.0 * 0.8) / 360.0).epsilon(1e-12));
  CHECK(group.size == 400);
}

TEST_CASE("group_logor validates its group argument") {
  Taxonomy tax = two_system_taxonomy();
  DesignBuild build = build_design(grouped_cohort(), tax, plain_config());
  LassoFit fit = fit_with(build.space, {{"ICD:A", 0.4}});

  CHECK_THROWS_WITH_AS(group_logor(fit, build.space, tax, build.matrix, CodeSystemId::ICD, "A"),
                       doctest::Contains("level"), Error);
  CHECK_THROWS_WITH_AS(group_logor(fit, build.space, tax, build.matrix, CodeSystemId::ICD, "U"),
                       doctest::Contains("no observed"), Error);
}

TEST_CASE("importance ranking is descending with deterministic tie breaks") {
  Taxonomy tax = two_system_taxonomy();
  DesignBuild build = build_design(grouped_cohort(), tax, plain_config());
  LassoFit fit = fit_with(build.space, {{"ICD:R", 0.05},
                                        {"ICD:A", 0.4},
                                        {"ICD:B", 0.8},
                                        {"ICD:C", 0.45},
                                        {"ATC:X", 0.05},
                                        {"ATC:X1A", 0.45},
                                        {"gender=m", -0.3}});

  std::vector<GroupSummary> groups = all_group_summaries(fit, build.space, tax, build.matrix);
  REQUIRE(groups.size() == 3);  // G, H and X1; U has nothing observed
  CHECK(groups[0].group == "G");
  CHECK(groups[1].group == "H");
  CHECK(groups[2].group == "X1");

  std::vector<GroupSummary> ranked = population_importance(groups);
  REQUIRE(ranked.size() == 3);
  // G: (100*0.45 + 300*0.85)/400 = 0.75 over 400 persons.
  CHECK(ranked[0].group == "G");
  CHECK(ranked[0].importance == doctest::Approx(300.0).epsilon(1e-12));
  CHECK(ranked[0].rank == 1);
  // H and X1 tie at 100 * 0.5; ICD sorts ahead of ATC.
  CHECK(ranked[1].group == "H");
  CHECK(ranked[1].system == CodeSystemId::ICD);
  CHECK(ranked[1].rank == 2);
  CHECK(ranked[2].group == "X1");
  CHECK(ranked[2].rank == 3);
  CHECK(ranked[1].importance == doctest::Approx(ranked[2].importance).epsilon(1e-12));
}

TEST_CASE("export covers every column and inherits effects to unobserved codes") {
  Taxonomy tax = two_system_taxonomy();
  DesignBuild build = build_design(grouped_cohort(), tax, plain_config());
  LassoFit fit = fit_with(build.space, {{"ICD:R", 0.05},
                                        {"ICD:A", 0.4},
                                        {"ICD:B", 0.8},
                                        {"gender=m", -0.3}});

  auto rows = export_coefficients(fit, build.space, tax, build.matrix, 150);
  // 10 feature columns plus unobserved U and B1 with inherited totals.
  REQUIRE(rows.size() == 12);

  CHECK(rows[0].name == "gender=m");
  CHECK(!rows[0].is_code);
  CHECK(rows[0].coef == -0.3);
  CHECK(rows[0].total_logor == -0.3);
  CHECK(rows[0].prevalence == 300);
  CHECK(!rows[0].below_min_size);

  CHECK(rows[1].name == "R");
  CHECK(rows[1].is_code);
  CHECK(rows[1].level == 1);
  CHECK(rows[1].prevalence == 500);

  // ICD:A at position 4: own 0.4 plus root 0.05.
  CHECK(rows[4].name == "A");
  CHECK(rows[4].coef == 0.4);
  CHECK(rows[4].total_logor == doctest::Approx(0.45).epsilon(1e-15));
  CHECK(rows[4].prevalence == 100);
  CHECK(rows[4].below_min_size);  // 100 < 150

  CHECK(rows[5].name == "B");
  CHECK(rows[5].prevalence == 300);
  CHECK(!rows[5].below_min_size);

  // Unobserved extras, sorted by (system, level, code).
  CHECK(rows[10].name == "U");
  CHECK(rows[10].level == 2);
  CHECK(rows[10].coef == 0.0);
  CHECK(rows[10].total_logor == doctest::Approx(0.05).epsilon(1e-15));
  CHECK(rows[10].prevalence == 0);
  CHECK(rows[10].below_min_size);
  CHECK(rows[11].name == "B1");
  CHECK(rows[11].total_logor == doctest::Approx(0.85).epsilon(1e-15));

  // Zero-total unobserved codes stay out: with the root coefficient dropped,
  // U inherits nothing.
  LassoFit no_root = fit_with(build.space, {{"ICD:A", 0.4}, {"ICD:B", 0.8}});
  auto trimmed = export_coefficients(no_root, build.space, tax, build.matrix, 150);
  REQUIRE(trimmed.size() == 11);  // only B1 remains as an extra
  CHECK(trimmed[10].name == "B1");
}

TEST_CASE("effects and groups serialize as csv") {
  Taxonomy tax = two_system_taxonomy();
  DesignBuild build = build_design(grouped_cohort(), tax, plain_config());
  LassoFit fit = fit_with(build.space, {{"ICD:A", 0.4}, {"ICD:B", 0.8}});

  auto dir = std::filesystem::temp_directory_path();
  auto effects_path = (dir / "hirisk_effects.csv").string();
  auto groups_path = (dir / "hirisk_groups.csv").string();

  write_effects_csv(effects_path, export_coefficients(fit, build.space, tax, build.matrix, 150));
  write_groups_csv(groups_path,
                   population_importance(all_group_summaries(fit, build.space, tax, build.matrix)));

  std::ifstream effects(effects_path);
  std::string line;
  std::getline(effects, line);
  CHECK(line == "system,code,level,coef,total_logor,total_or,prevalence,below_min_size");
  std::getline(effects, line);
  CHECK(line == ",gender=m,,0,0,1,300,0");  // non-code rows leave system and level blank
  bool saw_a = false;
  while (std::getline(effects, line)) {
    if (line.rfind("ICD,A,3,", 0) == 0) {
      saw_a = true;
      CHECK(line == "ICD,A,3,0.40000000000000002,0.40000000000000002,1.4918246976412703,100,1");
    }
  }
  CHECK(saw_a);

  std::ifstream groups(groups_path);
  std::getline(groups, line);
  CHECK(line == "group,logor,size,importance,rank");
  std::getline(groups, line);
  CHECK(line == "ICD:G,0.69999999999999996,400,280,1");

  std::filesystem::remove(effects_path);
  std::filesystem::remove(groups_path);
}

TEST_CASE("nonzero counts bucket by code level") {
  Taxonomy tax = two_system_taxonomy();
  DesignBuild build = build_design(grouped_cohort(), tax, plain_config());
  LassoFit fit = fit_with(build.space, {{"ICD:R", 0.05},
                                        {"ICD:A", 0.4},
                                        {"ICD:B", 0.8},
                                        {"ATC:X1A", 0.45},
                                        {"gender=m", -0.3}});
  auto counts = nonzero_counts_by_level(fit, build.space);
  CHECK(counts[0] == 1);  // the categorical dummy
  CHECK(counts[1] == 1);  // ICD root
  CHECK(counts[3] == 3);  // A, B and the ATC leaf
  CHECK(counts.count(2) == 0);
}

}  // TEST_SUITE
