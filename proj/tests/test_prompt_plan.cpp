#include <doctest.h>

#include <fstream>

#include "attnseg/error.hpp"
#include "attnseg/prompt_plan.hpp"
#include "helpers.hpp"

using namespace attnseg;

TEST_CASE("compose_query sentences") {
  CHECK(compose_query({"bottle", "chair", "sofa"}).sentence() == "a photo including bottle, chair, and sofa.");
  CHECK(compose_query({"sofa", "bottle", "chair"}).sentence() == "a photo including bottle, chair, and sofa.");
  CHECK(compose_query({"person"}, {{"person", "person with clothes"}}).sentence() ==
        "a photo including person with clothes.");
  CHECK(compose_query({"train"}, {}, {"railway", "track"}).sentence() == "a photo including train, railway, track.");
  CHECK(compose_query({"cat", "dog"}).sentence() == "a photo including cat and dog.");
  CHECK(compose_query({"bottle", "chair", "sofa"}, {}, {"tree"}).sentence() ==
        "a photo including bottle, chair, and sofa, tree.");
}

TEST_CASE("compose_query structure") {
  const auto plan = compose_query({"train", "bird"}, default_synonyms(), {"railway"});
  REQUIRE(plan.parts.size() == 3);
  CHECK(plan.parts[0].label == "bird");
  CHECK(plan.parts[0].surface_text == "bird avian");
  CHECK(plan.parts[1].surface_text == "train");  // no synonym: raw name
  CHECK(plan.parts[2].kind == TokenKind::background);
  CHECK(plan.foreground_parts().size() == 2);
  CHECK(compose_query({"train", "bird"}, default_synonyms(), {"railway"}) == plan);
  CHECK_THROWS_AS(compose_query({}), ValidationError);
}

TEST_CASE("identifier query substitutes '<new1> <class>'") {
  const auto plan = compose_identifier_query("mug", "<new1>");
  CHECK(plan.sentence() == "a photo including <new1> mug.");
  CHECK(plan.parts.front().kind == TokenKind::identifier);
}

TEST_CASE("validate_manifest") {
  const auto plan = compose_query({"bottle", "chair", "sofa"}, {}, {"tree"});
  TokenManifest m;
  m.entries = {{"bottle", TokenKind::category, {4, 4}},
               {"chair", TokenKind::category, {6, 7}},
               {"sofa", TokenKind::category, {9, 9}},
               {"tree", TokenKind::background, {11, 11}}};
  CHECK(validate_manifest(plan, m).ok());

  SUBCASE("missing category") {
    auto bad = m;
    bad.entries.erase(bad.entries.begin() + 2);
    const auto r = validate_manifest(plan, bad);
    CHECK(r.missing == std::vector<std::string>{"sofa"});
    CHECK(r.describe() == "missing: {sofa}");
    CHECK_THROWS_WITH_AS(require_valid_manifest(plan, bad), doctest::Contains("sofa"), ValidationError);
  }
  SUBCASE("overlapping category spans") {
    auto bad = m;
    bad.entries[1].span = {4, 6};
    CHECK_FALSE(validate_manifest(plan, bad).invalid.empty());
  }
  SUBCASE("background recorded as category") {
    auto bad = m;
    bad.entries[3].kind = TokenKind::category;
    CHECK(validate_manifest(plan, bad).wrong_kind == std::vector<std::string>{"tree"});
  }
  SUBCASE("unplanned label") {
    auto bad = m;
    bad.entries.push_back({"dog", TokenKind::category, {13, 13}});
    CHECK(validate_manifest(plan, bad).extra == std::vector<std::string>{"dog"});
  }
  SUBCASE("identifier must be tagged as identifier") {
    const auto id_plan = compose_identifier_query("mug", "<new1>");
    TokenManifest im;
    im.entries = {{"<new1>", TokenKind::identifier, {4, 4}}, {"mug", TokenKind::category, {5, 5}}};
    CHECK(validate_manifest(id_plan, im).ok());
    im.entries[0].kind = TokenKind::other;
    CHECK(validate_manifest(id_plan, im).wrong_kind == std::vector<std::string>{"<new1>"});
  }
}

TEST_CASE("shipped synonym and background files match the built-in defaults") {
  CHECK(load_synonyms(std::string(ATTNSEG_DATA_DIR) + "/voc_synonyms.txt") == default_synonyms());
  CHECK(load_backgrounds(std::string(ATTNSEG_DATA_DIR) + "/backgrounds.txt") == default_backgrounds());
  CHECK(default_backgrounds().size() == 10);
  CHECK(default_synonyms().at("person") == "person with clothes");
}

TEST_CASE("synonym file parse errors") {
  testing::TempDir tmp("pp_syn");
  {
    std::ofstream(tmp / "bad.txt") << "cat\n";
  }
  CHECK_THROWS_AS(load_synonyms(tmp / "bad.txt"), ValidationError);
  CHECK_THROWS_AS(load_synonyms(tmp / "absent.txt"), IoError);
}
