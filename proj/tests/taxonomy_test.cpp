#include "hirisk/taxonomy.hpp"

#include <sstream>

#include "doctest.h"

using namespace hirisk;

namespace {

Taxonomy fixture_taxonomy() {
  return load_taxonomy(HIRISK_FIXTURE_DIR "/mini_taxonomy.tsv");
}

Taxonomy parse_tsv(const std::string& body) {
  std::istringstream in("system\tcode\tlevel\tparent\tname\n" + body);
  return parse_taxonomy(in, "inline");
}

}  // namespace

TEST_SUITE("taxonomy") {

TEST_CASE("ancestor chain runs root to leaf in level order") {
  Taxonomy tax = fixture_taxonomy();
  auto chain = tax.ancestors(CodeSystemId::ICD, "I25.22");
  REQUIRE(chain.size() == 5);
  CHECK(chain[0]->code == "IX");
  CHECK(chain[1]->code == "I20-I25");
  CHECK(chain[2]->code == "I25");
  CHECK(chain[3]->code == "I25.2");
  CHECK(chain[4]->code == "I25.22");
  for (int k = 0; k < 5; ++k) CHECK(chain[static_cast<std::size_t>(k)]->level == k + 1);
}

TEST_CASE("ancestors of a root is the root itself") {
  Taxonomy tax = fixture_taxonomy();
  auto chain = tax.ancestors(CodeSystemId::ICD, "IX");
  REQUIRE(chain.size() == 1);
  CHECK(chain[0]->code == "IX");
}

TEST_CASE("OPS chains start at level 2") {
  Taxonomy tax = fixture_taxonomy();
  CHECK(root_level(CodeSystemId::OPS) == 2);
  auto chain = tax.ancestors(CodeSystemId::OPS, "8-0102.0");
  REQUIRE(chain.size() == 4);
  CHECK(chain[0]->code == "8-01");
  CHECK(chain[0]->level == 2);
  CHECK(chain[3]->code == "8-0102.0");
}

TEST_CASE("ancestors throws on unknown code") {
  Taxonomy tax = fixture_taxonomy();
  CHECK_THROWS_WITH_AS(tax.ancestors(CodeSystemId::ICD, "Z99"),
                       doctest::Contains("Z99"), Error);
}

TEST_CASE("find and at distinguish systems") {
  Taxonomy tax = fixture_taxonomy();
  CHECK(tax.find(CodeSystemId::ATC, "C07AB02") != nullptr);
  CHECK(tax.find(CodeSystemId::ICD, "C07AB02") == nullptr);
  CHECK(tax.at(CodeSystemId::ATC, "C07").level == 2);
  CHECK_THROWS_AS(tax.at(CodeSystemId::ICD, "C07"), Error);
}

TEST_CASE("children are indexed after finalize") {
  Taxonomy tax = fixture_taxonomy();
  auto kids = tax.children(CodeSystemId::ICD, "I20-I25");
  REQUIRE(kids.size() == 2);
  CHECK(((kids[0]->code == "I21" && kids[1]->code == "I25") ||
         (kids[0]->code == "I25" && kids[1]->code == "I21")));
  CHECK(tax.children(CodeSystemId::ICD, "I25.22").empty());
}

TEST_CASE("level_counts reports exact per-system totals") {
  Taxonomy tax = fixture_taxonomy();
  auto counts = tax.level_counts();
  CHECK(counts[{CodeSystemId::ICD, 1}] == 2);
  CHECK(counts[{CodeSystemId::ICD, 2}] == 2);
  CHECK(counts[{CodeSystemId::ICD, 3}] == 3);
  CHECK(counts[{CodeSystemId::ICD, 5}] == 1);
  CHECK(counts[{CodeSystemId::ATC, 1}] == 1);
  CHECK(counts[{CodeSystemId::OPS, 2}] == 2);
  CHECK(tax.size() == 19);
}

TEST_CASE("missing parent is rejected with its line") {
  CHECK_THROWS_WITH_AS(parse_tsv("ICD\tI25\t3\tI20-I25\tx\n"),
                       doctest::Contains("I20-I25"), Error);
}

TEST_CASE("level gap is rejected") {
  CHECK_THROWS_WITH_AS(
      parse_tsv("ICD\tIX\t1\t\tx\nICD\tI25\t3\tIX\tx\n"),
      doctest::Contains("level gap"), Error);
}

TEST_CASE("root node with a parent is rejected") {
  CHECK_THROWS_AS(parse_tsv("ICD\tIX\t1\tVI\tx\nICD\tVI\t1\t\tx\n"), Error);
}

TEST_CASE("OPS code outside chapters 5, 6 and 8 is rejected") {
  CHECK_THROWS_WITH_AS(parse_tsv("OPS\t3-20\t2\t\tx\n"),
                       doctest::Contains("chapters 5/6/8"), Error);
}

TEST_CASE("duplicate (system, code) is rejected") {
  CHECK_THROWS_WITH_AS(parse_tsv("ICD\tIX\t1\t\tx\nICD\tIX\t1\t\ty\n"),
                       doctest::Contains("duplicate"), Error);
}

TEST_CASE("same code in two systems is allowed") {
  Taxonomy tax = parse_tsv("ICD\tC\t1\t\tx\nATC\tC\t1\t\ty\n");
  CHECK(tax.find(CodeSystemId::ICD, "C") != nullptr);
  CHECK(tax.find(CodeSystemId::ATC, "C") != nullptr);
}

TEST_CASE("level outside the allowed range is rejected") {
  CHECK_THROWS_AS(parse_tsv("ICD\tIX\t0\t\tx\n"), Error);
  CHECK_THROWS_AS(parse_tsv("OPS\t5-56\t1\t\tx\n"), Error);
  CHECK_THROWS_AS(
      parse_tsv("ICD\tA\t1\t\tx\nICD\tB\t2\tA\tx\nICD\tC\t3\tB\tx\nICD\tD\t4\tC\tx\n"
                "ICD\tE\t5\tD\tx\nICD\tF\t6\tE\tx\n"),
      Error);
}

TEST_CASE("bad header is rejected") {
  std::istringstream in("code\tsystem\n");
  CHECK_THROWS_WITH_AS(parse_taxonomy(in, "inline"), doctest::Contains("header"), Error);
}

TEST_CASE("write then load round-trips every node") {
  Taxonomy tax = fixture_taxonomy();
  auto tmp = std::filesystem::temp_directory_path() / "hirisk_tax_roundtrip.tsv";
  write_taxonomy_tsv(tax, tmp);
  Taxonomy back = load_taxonomy(tmp);
  REQUIRE(back.size() == tax.size());
  for (const CodeNode& node : tax.nodes()) {
    const CodeNode* other = back.find(node.system, node.code);
    REQUIRE(other != nullptr);
    CHECK(other->level == node.level);
    CHECK(other->parent == node.parent);
    CHECK(other->name == node.name);
  }
  std::filesystem::remove(tmp);
}

TEST_CASE("system tags parse and print") {
  CHECK(parse_code_system("ICD") == CodeSystemId::ICD);
  CHECK(parse_code_system("ATC") == CodeSystemId::ATC);
  CHECK(parse_code_system("OPS") == CodeSystemId::OPS);
  CHECK(!parse_code_system("icd").has_value());
  CHECK(std::string(to_string(CodeSystemId::OPS)) == "OPS");
}

}  // TEST_SUITE
