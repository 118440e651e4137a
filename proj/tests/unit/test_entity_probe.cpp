#include <functional>

#include "doctest.h"
#include "generators.hpp"
#include "sceneqa/entity_probe.hpp"
#include "sceneqa/error.hpp"
#include "sceneqa/io.hpp"
#include "test_util.hpp"

using namespace sceneqa;
using namespace sceneqa::probe;

namespace {

std::vector<std::string> surfaces(std::string_view situation) {
  std::vector<std::string> out;
  for (const auto& e : extract_entities(situation)) out.push_back(e.surface);
  return out;
}

using S = std::vector<std::string>;

}  // namespace

TEST_CASE("extract_entities examples") {
  CHECK(surfaces("I got sick the last time I ate there, so I recommend a different restaurant to my in-laws.") ==
        S{"I (myself)", "in-laws"});
  CHECK(surfaces("The woman and her daughter were happily strolling through the park.") == S{"woman", "daughter"});
  CHECK(surfaces("This winter is very cold.").empty());
}

TEST_CASE("extract_entities rules") {
  SUBCASE("first person forms collapse") {
    auto e = extract_entities("We think my friend and I'm sure me too.");
    REQUIRE(e.size() == 2);
    CHECK(e[0].surface == "I (myself)");
    CHECK(e[0].is_first_person);
    CHECK(e[1].surface == "friend");
  }
  SUBCASE("names, possessives and multiword names") {
    CHECK(surfaces("Rick's dog barked at Mary Jane.") == S{"Rick", "Mary Jane"});
  }
  SUBCASE("case-insensitive dedup keeps first mention") {
    CHECK(surfaces("The Teacher smiled and the teacher left.") == S{"Teacher"});
  }
  SUBCASE("sentence-initial gerund is not a name") {
    CHECK(surfaces("Smacking an airplane seat to intimidate a child.") == S{"child"});
  }
  SUBCASE("US is not first person") {
    CHECK(surfaces("He moved to the US.") == S{"US"});
    CHECK(surfaces("They told us.") == S{"I (myself)"});
  }
  SUBCASE("title before a name") { CHECK(surfaces("Aunt Clara met the aunt.") == S{"Aunt Clara", "aunt"}); }
  SUBCASE("curly apostrophe") { CHECK(surfaces("Rick\xe2\x80\x99s mom called.") == S{"Rick", "mom"}); }
}

TEST_CASE("lexicon config") {
  auto lex = LexiconConfig::from_json({{"extra_role_nouns", {"wizard"}}});
  RuleBasedExtractor ex(lex);
  auto e = ex.extract("", "the wizard met the woman.");
  REQUIRE(e.size() == 2);
  CHECK(e[0].surface == "wizard");
  auto only = LexiconConfig::from_json({{"role_nouns", {"wizard"}}});
  CHECK(RuleBasedExtractor(only).extract("", "the wizard met the woman.").size() == 1);
}

TEST_CASE("sidecar extractor") {
  testutil::TempDir tmp;
  io::write_file(tmp / "ents.jsonl",
                 R"({"id": "a", "entities": [{"surface": "Rick", "person": true}, {"surface": "the dog", "person": false}]})"
                 "\n");
  SidecarExtractor ex(tmp / "ents.jsonl");
  auto e = ex.extract("a", "ignored");
  REQUIRE(e.size() == 2);
  CHECK(e[1].surface == "the dog");
  CHECK_FALSE(e[1].is_person);
  CHECK(ex.extract("missing", "Rick ran.").empty());
  CHECK(generate_probe_queries("whatever", ex, "a").size() == 6);
}

TEST_CASE("generate_probe_queries") {
  SUBCASE("two entities") {
    auto q = generate_probe_queries("The woman and her daughter were happily strolling through the park.");
    REQUIRE(q.size() == 6);
    CHECK(q[0].question == "What is woman's motivation?");
    CHECK(q[0].dimension == Dimension::kMotivation);
    CHECK(q[1].question == "What is woman's emotion?");
    CHECK(q[2].question == "What is daughter's motivation?");
    CHECK(q[4].question == "What is a rule of thumb relevant here?");
    CHECK_FALSE(q[4].entity);
    CHECK(q[5].question == "What is likely to happen next?");
  }
  SUBCASE("no entities") {
    auto q = generate_probe_queries("This winter is very cold.");
    REQUIRE(q.size() == 2);
    CHECK(q[0].dimension == Dimension::kRuleOfThumb);
    CHECK(q[1].dimension == Dimension::kConsequence);
  }
  SUBCASE("first person") {
    CHECK(motivation_question("I (myself)") == "What is I (myself)'s motivation?");
  }
}

TEST_CASE("generated situations: entities and query-count law") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 300; ++i) {
    auto g = testutil::generate_situation(rng);
    CAPTURE(g.text);
    CHECK(surfaces(g.text) == g.expected);
    auto q = generate_probe_queries(g.text);
    CHECK(q.size() == 2 * g.expected.size() + 2);
    CHECK(q == generate_probe_queries(g.text));
    for (const auto& query : q) {
      if (query.dimension == Dimension::kEmotion) {
        REQUIRE(query.entity);
        CHECK(query.question == "What is " + query.entity->surface + "'s emotion?");
      }
    }
  }
}

TEST_CASE("templatize_answer") {
  CHECK(templatize_answer({"John"}, Dimension::kMotivation, "greed") == "John's motivation is greed.");
  CHECK(templatize_answer({"woman"}, Dimension::kEmotion, "joy") == "woman's emotion is joy.");
  CHECK(templatize_answer({"A"}, Dimension::kEmotion, "calm.") == "A's emotion is calm.");
  CHECK_THROWS_AS(templatize_answer({"A"}, Dimension::kConsequence, "x"), Error);
}

TEST_CASE("assemble_probed_se") {
  auto queries = generate_probe_queries("The woman and her daughter were happily strolling through the park.");
  SUBCASE("two-entity emotions") {
    std::vector<std::pair<ProbeQuery, std::string>> answers;
    for (const auto& q : queries) {
      std::string a = q.dimension == Dimension::kEmotion ? "joy" : "";
      answers.emplace_back(q, a);
    }
    auto se = assemble_probed_se(answers);
    CHECK(se.size() == 1);
    CHECK(*se.get(Dimension::kEmotion) == "woman's emotion is joy. daughter's emotion is joy.");
  }
  SUBCASE("zero entities") {
    std::vector<std::pair<ProbeQuery, std::string>> answers;
    for (const auto& q : generate_probe_queries("This winter is very cold.")) answers.emplace_back(q, "x");
    auto se = assemble_probed_se(answers);
    CHECK(se.size() == 2);
    CHECK(se.has(Dimension::kRuleOfThumb));
    CHECK(se.has(Dimension::kConsequence));
  }
  SUBCASE("all empty") {
    std::vector<std::pair<ProbeQuery, std::string>> answers;
    for (const auto& q : queries) answers.emplace_back(q, "  ");
    CHECK(assemble_probed_se(answers).empty());
  }
}
