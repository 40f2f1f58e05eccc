#include "hirisk/featurize.hpp"

#include <filesystem>
#include <fstream>

#include "doctest.h"

using namespace hirisk;

namespace {

Taxonomy fixture_taxonomy() {
  return load_taxonomy(HIRISK_FIXTURE_DIR "/mini_taxonomy.tsv");
}

Cohort fixture_cohort() {
  return load_cohort(HIRISK_FIXTURE_DIR "/mini_cohort.jsonl");
}

FeatureConfig fixture_config() {
  FeatureConfig config;
  config.categorical = {{"gender", std::nullopt}, {"age_group", std::nullopt}};
  return config;
}

std::vector<std::uint32_t> rows_of(const DesignBuild& build, const std::string& column) {
  auto pos = build.space.find(column);
  REQUIRE(pos.has_value());
  return build.matrix.columns[*pos].rows;
}

}  // namespace

TEST_SUITE("featurize") {

TEST_CASE("expand_codes closes over ancestors and sorts") {
  Taxonomy tax = fixture_taxonomy();
  std::vector<SystemCode> input = {{CodeSystemId::ICD, "I25.22"}};
  auto expanded = expand_codes(tax, input);
  REQUIRE(expanded.size() == 5);
  CHECK(expanded[0].code == "I20-I25");
  CHECK(expanded[1].code == "I25");
  CHECK(expanded[2].code == "I25.2");
  CHECK(expanded[3].code == "I25.22");
  CHECK(expanded[4].code == "IX");

  SUBCASE("union of overlapping chains has no duplicates") {
    input.push_back({CodeSystemId::ICD, "I21"});
    auto both = expand_codes(tax, input);
    CHECK(both.size() == 6);  // shared IX and I20-I25 counted once
  }

  SUBCASE("idempotent") {
    auto again = expand_codes(tax, expanded);
    CHECK(again == expanded);
  }
}

TEST_CASE("expand_codes unknown code policies") {
  Taxonomy tax = fixture_taxonomy();
  std::vector<SystemCode> input = {{CodeSystemId::ICD, "I25"}, {CodeSystemId::ICD, "Z99"}};
  CHECK_THROWS_WITH_AS(expand_codes(tax, input), doctest::Contains("Z99"), Error);

  std::uint64_t skipped = 0;
  auto expanded = expand_codes(tax, input, UnknownCodePolicy::Skip, &skipped);
  CHECK(skipped == 1);
  REQUIRE(expanded.size() == 3);
  CHECK(expanded[2].code == "IX");
}

TEST_CASE("build_design lays out categoricals, code dummies and incidence") {
  DesignBuild build = build_design(fixture_cohort(), fixture_taxonomy(), fixture_config());
  const FeatureSpace& space = build.space;

  // 3 categorical dummies + 19 observed code dummies + incidence.
  REQUIRE(space.size() == 23);
  REQUIRE(build.matrix.n_cols() == 23);
  CHECK(build.matrix.n_rows == 6);
  CHECK(build.unknown_codes_skipped == 0);

  // Reference categories dropped: gender tie resolves to 'f', age_group
  // majority is '60-64'.
  CHECK(space.at(0).name == "gender=m");
  CHECK(space.at(1).name == "age_group=55-59");
  CHECK(space.at(2).name == "age_group=70-74");
  CHECK(!space.find("gender=f").has_value());
  CHECK(!space.find("age_group=60-64").has_value());

  // Code dummies ordered by (system, level, code).
  CHECK(space.at(3).name == "ICD:IX");
  CHECK(space.at(4).name == "ICD:VI");
  CHECK(space.at(5).name == "ICD:G40-G47");
  CHECK(space.at(6).name == "ICD:I20-I25");
  CHECK(space.at(7).name == "ICD:G43");
  CHECK(space.at(8).name == "ICD:I21");
  CHECK(space.at(9).name == "ICD:I25");
  CHECK(space.at(10).name == "ICD:I25.2");
  CHECK(space.at(11).name == "ICD:I25.22");
  CHECK(space.at(12).name == "ATC:C");
  CHECK(space.at(16).name == "ATC:C07AB02");
  CHECK(space.at(17).name == "OPS:5-56");
  CHECK(space.at(21).name == "OPS:8-0102.0");
  CHECK(space.at(22).name == std::string(FeatureSpace::kIncidenceColumn));

  // Hierarchy closure: a leaf activates its whole chain.
  CHECK(rows_of(build, "ICD:I25.22") == std::vector<std::uint32_t>{0, 3});
  CHECK(rows_of(build, "ICD:I25") == std::vector<std::uint32_t>{0, 3});
  CHECK(rows_of(build, "ICD:IX") == std::vector<std::uint32_t>{0, 1, 3});
  CHECK(rows_of(build, "ATC:C") == std::vector<std::uint32_t>{0, 5});
  CHECK(rows_of(build, "OPS:5-56") == std::vector<std::uint32_t>{3});
  CHECK(rows_of(build, "gender=m") == std::vector<std::uint32_t>{1, 3, 5});

  // Incidence is dense and unpenalized.
  const DesignColumn& incidence = build.matrix.columns[22];
  CHECK(!incidence.binary);
  CHECK(incidence.values ==
        std::vector<double>{42.5, 38.0, 61.0, 45.1, 61.0, 42.5});
  CHECK(space.at(22).penalty_factor == 0.0);

  // Level penalties on code dummies, unit penalty on categoricals.
  CHECK(space.at(0).penalty_factor == 1.0);
  CHECK(space.at(3).penalty_factor == 1.0);
  CHECK(space.at(6).penalty_factor == 2.0);
  CHECK(space.at(11).penalty_factor == 5.0);
  CHECK(space.at(17).penalty_factor == 2.0);

  auto prevalence = column_prevalence(build.matrix);
  CHECK(prevalence[3] == 3);   // ICD:IX
  CHECK(prevalence[12] == 2);  // ATC:C
  CHECK(prevalence[22] == 6);  // incidence nonzero everywhere
  CHECK(build.matrix.binary_nnz() > 0);
}

TEST_CASE("uniform penalty mode flattens code penalties") {
  FeatureConfig config = fixture_config();
  config.penalty_mode = PenaltyMode::Uniform;
  DesignBuild build = build_design(fixture_cohort(), fixture_taxonomy(), config);
  for (const FeatureColumn& column : build.space.columns()) {
    if (column.kind == ColumnKind::CodeDummy) CHECK(column.penalty_factor == 1.0);
  }
}

TEST_CASE("max_level caps the expansion depth") {
  FeatureConfig config = fixture_config();
  config.max_level = 3;
  DesignBuild build = build_design(fixture_cohort(), fixture_taxonomy(), config);
  CHECK(!build.space.find("ICD:I25.2").has_value());
  CHECK(!build.space.find("ICD:I25.22").has_value());
  // The deep observation still activates its shallow ancestors.
  CHECK(rows_of(build, "ICD:I25") == std::vector<std::uint32_t>{0, 3});
}

TEST_CASE("explicit code list restricts the column set") {
  FeatureConfig config = fixture_config();
  config.explicit_codes = std::vector<SystemCode>{{CodeSystemId::ICD, "I20-I25"},
                                                  {CodeSystemId::ICD, "I25"},
                                                  {CodeSystemId::ICD, "G43"}};
  DesignBuild build = build_design(fixture_cohort(), fixture_taxonomy(), config);
  CHECK(build.space.size() == 3 + 3 + 1);
  CHECK(build.space.find("ICD:I20-I25").has_value());
  CHECK(!build.space.find("ICD:IX").has_value());
  CHECK(rows_of(build, "ICD:I25") == std::vector<std::uint32_t>{0, 3});
}

TEST_CASE("system filter drops foreign systems before lookup") {
  FeatureConfig config = fixture_config();
  config.systems = {CodeSystemId::ICD};
  DesignBuild build = build_design(fixture_cohort(), fixture_taxonomy(), config);
  for (const FeatureColumn& column : build.space.columns())
    if (column.kind == ColumnKind::CodeDummy) CHECK(column.system == CodeSystemId::ICD);
  CHECK(!build.space.find("ATC:C").has_value());
}

TEST_CASE("never-observed taxonomy codes get no column") {
  Cohort cohort = fixture_cohort();
  cohort.records()[2].codes.clear();  // drop the only OPS 8-x observations
  cohort.records()[3].codes.pop_back();
  DesignBuild build = build_design(cohort, fixture_taxonomy(), fixture_config());
  CHECK(!build.space.find("OPS:8-01").has_value());
  CHECK(!build.space.find("OPS:5-56").has_value());
}

TEST_CASE("unknown observed codes follow the configured policy") {
  Cohort cohort = fixture_cohort();
  cohort.records()[0].codes.push_back({CodeSystemId::ICD, "Q99.9"});

  FeatureConfig strict = fixture_config();
  CHECK_THROWS_WITH_AS(build_design(cohort, fixture_taxonomy(), strict),
                       doctest::Contains("Q99.9"), Error);

  FeatureConfig lenient = fixture_config();
  lenient.unknown_codes = UnknownCodePolicy::Skip;
  DesignBuild build = build_design(cohort, fixture_taxonomy(), lenient);
  CHECK(build.unknown_codes_skipped == 1);
  CHECK(rows_of(build, "ICD:I25.22") == std::vector<std::uint32_t>{0, 3});
}

TEST_CASE("missing incidence is an error unless the column is disabled") {
  Cohort cohort = fixture_cohort();
  cohort.records()[4].incidence.reset();
  CHECK_THROWS_WITH_AS(build_design(cohort, fixture_taxonomy(), fixture_config()),
                       doctest::Contains("impute"), Error);

  FeatureConfig config = fixture_config();
  config.include_incidence = false;
  DesignBuild build = build_design(cohort, fixture_taxonomy(), config);
  CHECK(!build.space.find(FeatureSpace::kIncidenceColumn).has_value());
}

TEST_CASE("explicit reference category wins; unknown reference is an error") {
  FeatureConfig config = fixture_config();
  config.categorical[0].reference = "m";
  DesignBuild build = build_design(fixture_cohort(), fixture_taxonomy(), config);
  CHECK(build.space.find("gender=f").has_value());
  CHECK(!build.space.find("gender=m").has_value());

  config.categorical[0].reference = "x";
  CHECK_THROWS_WITH_AS(build_design(fixture_cohort(), fixture_taxonomy(), config),
                       doctest::Contains("never observed"), Error);
}

TEST_CASE("unknown categorical feature in the config is an error") {
  FeatureConfig config;
  config.categorical = {{"smoker", std::nullopt}};
  CHECK_THROWS_WITH_AS(build_design(fixture_cohort(), fixture_taxonomy(), config),
                       doctest::Contains("smoker"), Error);
}

TEST_CASE("empty cohort is an error") {
  CHECK_THROWS_AS(build_design(Cohort{}, fixture_taxonomy(), fixture_config()), Error);
}

TEST_CASE("subset_rows reindexes from zero") {
  DesignBuild build = build_design(fixture_cohort(), fixture_taxonomy(), fixture_config());
  const std::vector<std::uint32_t> keep = {0, 3, 5};
  SparseDesignMatrix sub = subset_rows(build.matrix, keep);
  REQUIRE(sub.n_rows == 3);
  REQUIRE(sub.n_cols() == build.matrix.n_cols());

  auto pos = build.space.find("ICD:I25.22");
  CHECK(sub.columns[*pos].rows == std::vector<std::uint32_t>{0, 1});
  pos = build.space.find("ATC:C");
  CHECK(sub.columns[*pos].rows == std::vector<std::uint32_t>{0, 2});
  pos = build.space.find(FeatureSpace::kIncidenceColumn);
  CHECK(sub.columns[*pos].values == std::vector<double>{42.5, 45.1, 42.5});
}

TEST_CASE("design cache round-trips bit for bit") {
  DesignBuild build = build_design(fixture_cohort(), fixture_taxonomy(), fixture_config());
  auto tmp = std::filesystem::temp_directory_path() / "hirisk_design_roundtrip.bin";
  save_design(tmp, build.space, build.matrix);
  DesignBuild back = load_design(tmp);

  REQUIRE(back.space.size() == build.space.size());
  REQUIRE(back.matrix.n_rows == build.matrix.n_rows);
  for (std::uint32_t j = 0; j < build.space.size(); ++j) {
    CHECK(back.space.at(j).name == build.space.at(j).name);
    CHECK(back.space.at(j).kind == build.space.at(j).kind);
    CHECK(back.space.at(j).system == build.space.at(j).system);
    CHECK(back.space.at(j).level == build.space.at(j).level);
    CHECK(back.space.at(j).penalty_factor == build.space.at(j).penalty_factor);
    CHECK(back.matrix.columns[j].binary == build.matrix.columns[j].binary);
    CHECK(back.matrix.columns[j].rows == build.matrix.columns[j].rows);
    CHECK(back.matrix.columns[j].values == build.matrix.columns[j].values);
  }
  CHECK(back.space.penalty_factors() == build.space.penalty_factors());
  std::filesystem::remove(tmp);
}

TEST_CASE("corrupt design cache is rejected") {
  auto tmp = std::filesystem::temp_directory_path() / "hirisk_design_bad.bin";
  {
    std::ofstream out(tmp, std::ios::binary);
    out << "NOTADESIGN";
  }
  CHECK_THROWS_AS(load_design(tmp), Error);
  std::filesystem::remove(tmp);
}

TEST_CASE("feature config parses from JSON") {
  FeatureConfig config = parse_feature_config(R"({
    "categorical": ["gender", {"name": "age_group", "reference": "60-64"}],
    "systems": ["ICD", "ATC"],
    "max_level": 4,
    "penalty_mode": "uniform",
    "unknown_codes": "skip",
    "include_incidence": false,
    "explicit_codes": [["ICD", "I25"]]
  })", "inline");
  REQUIRE(config.categorical.size() == 2);
  CHECK(config.categorical[0].name == "gender");
  CHECK(!config.categorical[0].reference.has_value());
  CHECK(config.categorical[1].reference == "60-64");
  CHECK(config.systems == std::set<CodeSystemId>{CodeSystemId::ICD, CodeSystemId::ATC});
  CHECK(config.max_level == 4);
  CHECK(config.penalty_mode == PenaltyMode::Uniform);
  CHECK(config.unknown_codes == UnknownCodePolicy::Skip);
  CHECK(!config.include_incidence);
  REQUIRE(config.explicit_codes.has_value());
  CHECK(config.explicit_codes->at(0).code == "I25");

  CHECK_THROWS_AS(parse_feature_config("{ not json", "inline"), Error);
  CHECK_THROWS_WITH_AS(parse_feature_config(R"({"max_level": 9})", "inline"),
                       doctest::Contains("max_level"), Error);
  CHECK_THROWS_WITH_AS(parse_feature_config(R"({"penalty_mode": "x"})", "inline"),
                       doctest::Contains("penalty_mode"), Error);
}

}  // TEST_SUITE
