#include <functional>
#include <random>

#include "doctest.h"
#include "sceneqa/error.hpp"
#include "sceneqa/io.hpp"
#include "sceneqa/qa_harness.hpp"
#include "test_util.hpp"

using namespace sceneqa;
using namespace sceneqa::qa;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kInvalidArgument;
}

std::filesystem::path qa_fixture(const std::string& name) { return testutil::fixtures() / "qa" / name; }

BenchmarkConfig config(DatasetTag tag, std::vector<std::string> files, bool exclude_long = false) {
  BenchmarkConfig cfg;
  cfg.tag = tag;
  for (auto& f : files) cfg.paths.push_back(qa_fixture(f));
  cfg.exclude_long_context = exclude_long;
  return cfg;
}

SceneElaboration in_laws_se() {
  SceneElaboration se;
  se.set(Dimension::kRuleOfThumb, "It's good to make recommendations to others.");
  se.set(Dimension::kEmotion, "I (myself)'s emotion is responsible.");
  se.set(Dimension::kMotivation, "I (myself)'s motivation is to protect others.");
  se.set(Dimension::kConsequence, "My in-laws have a great meal at the new restaurant I recommended.");
  return se;
}

// Returns fixed SEs by id and counts calls.
class CountingProvider : public SeProvider {
 public:
  std::optional<SceneElaboration> get(const SituatedExample& ex) override {
    ++calls;
    if (ex.id.ends_with(":1")) return std::nullopt;
    return in_laws_se();
  }
  std::string id() const override { return "counting"; }
  int calls = 0;
};

// Backend that echoes a fixed answer and fails on a marked question.
class ScriptedBackend : public gateway::GenerationBackend {
 public:
  std::string complete(const std::string& prompt, const gateway::GenerationRequest& req) override {
    std::lock_guard lock(mu);
    prompts.push_back(prompt);
    if (req.question.find("FAIL") != std::string::npos) {
      throw Error(ErrorCode::kMalformedResponse, "scripted failure", prompt);
    }
    return "(B) not wrong";
  }
  std::string id() const override { return "scripted"; }
  std::mutex mu;
  std::vector<std::string> prompts;
};

}  // namespace

TEST_CASE("load ETHICS") {
  auto all = load_benchmark(config(DatasetTag::kEthicsCsTest, {"ethics_cs_test.csv"}));
  REQUIRE(all.size() == 6);
  CHECK(all[0].id == "ethics_cs_test:0");
  CHECK(all[0].options == std::vector<std::string>{"wrong", "not wrong"});
  CHECK(all[0].gold_index == 1);  // label 0 = not wrong
  CHECK(all[1].gold_index == 0);
  CHECK(all[0].question == "Reaction: this is");
  auto short_only = load_benchmark(config(DatasetTag::kEthicsCsTest, {"ethics_cs_test.csv"}, true));
  CHECK(short_only.size() == 5);
  // Ids are stable under the filter.
  CHECK(short_only[3].id == "ethics_cs_test:4");
  for (const auto& ex : short_only) CHECK(ex.options.size() == 2);
}

TEST_CASE("load CODAH") {
  auto ex = load_benchmark(config(DatasetTag::kCodahAll, {"codah_small.tsv", "codah_six.tsv"}));
  REQUIRE(ex.size() == 3);
  CHECK(ex[0].situation == "The woman and her daughter were happily strolling through the park. The woman:");
  CHECK(ex[0].options[0] == "was smiling.");
  CHECK(ex[1].gold_index == 1);
  CHECK(ex[2].id == "codah_all:2");
  CHECK(ex[2].options.size() == 4);
  CHECK(load_benchmark(config(DatasetTag::kCodahAll, {"codah_synth.tsv"})).size() == 50);
}

TEST_CASE("load Social IQA") {
  auto cfg = config(DatasetTag::kSocialIqaTest, {"siqa.jsonl"});
  CHECK(code_of([&] { load_benchmark(cfg); }) == ErrorCode::kSchemaError);  // no labels anywhere
  cfg.labels_path = qa_fixture("siqa-labels.lst");
  auto ex = load_benchmark(cfg);
  REQUIRE(ex.size() == 3);
  CHECK(ex[0].gold_index == 2);
  CHECK(ex[1].gold_index == 0);
  CHECK(ex[0].question == "What does Tracy need to do before this?");
  CHECK(ex[0].options.size() == 3);
}

TEST_CASE("loader errors") {
  testutil::TempDir tmp;
  io::write_file(tmp / "empty.tsv", "");
  BenchmarkConfig cfg;
  cfg.tag = DatasetTag::kCodahAll;
  cfg.paths = {tmp / "empty.tsv"};
  CHECK(code_of([&] { load_benchmark(cfg); }) == ErrorCode::kSchemaError);
  cfg.paths = {tmp / "missing.tsv"};
  CHECK(code_of([&] { load_benchmark(cfg); }) == ErrorCode::kIoError);
  io::write_file(tmp / "bad.tsv", "a\tb\tc\n");
  cfg.paths = {tmp / "bad.tsv"};
  try {
    load_benchmark(cfg);
    FAIL("expected SchemaError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kSchemaError);
    CHECK(std::string(e.what()).find("bad.tsv:1") != std::string::npos);
  }
  io::write_file(tmp / "e.csv", "label,input\n2,x\n");
  cfg.tag = DatasetTag::kEthicsCsTest;
  cfg.paths = {tmp / "e.csv"};
  CHECK(code_of([&] { load_benchmark(cfg); }) == ErrorCode::kSchemaError);
  cfg.exclude_long_context = true;
  io::write_file(tmp / "e.csv", "label,input\n1,x\n");
  CHECK(code_of([&] { load_benchmark(cfg); }) == ErrorCode::kSchemaError);
}

TEST_CASE("attach_context") {
  auto ex = load_benchmark(config(DatasetTag::kEthicsCsTest, {"ethics_cs_test.csv"}))[0];
  auto base = attach_context(ex, std::nullopt);
  CHECK_FALSE(base.context);
  CHECK(base.question ==
        "I got sick the last time I ate there, so I recommend a different restaurant to my in-laws. Reaction: this is");
  CHECK(base.options == ex.options);
  auto with = attach_context(ex, in_laws_se());
  REQUIRE(with.context);
  CHECK(*with.context == serialize_se(in_laws_se()));
  CHECK(with.options == ex.options);
  CHECK(attach_context(ex, SceneElaboration{}) == base);
  SituatedExample no_q{"x", "S.", "", {"a", "b"}, 0, "t"};
  CHECK(attach_context(no_q, std::nullopt).question == "S.");
}

TEST_CASE("select_answer") {
  const std::vector<std::string> ethics = {"wrong", "not wrong"};
  CHECK(select_answer("(B) not wrong", ethics) == 1);
  CHECK(select_answer("not wrong", ethics) == 1);
  CHECK(select_answer("Wrong.", ethics) == 0);
  CHECK(select_answer("(A)", ethics) == 0);
  CHECK(select_answer("b)", ethics) == 1);
  CHECK(select_answer("the woman was smiling", {"was smiling", "went home", "sat down", "was crying"}) == 0);
  CHECK(select_answer("zebra", {"a", "b", "c"}) == 0);
  CHECK(select_answer("", {"a", "b"}) == 0);
  CHECK(code_of([] { select_answer("x", {"only"}); }) == ErrorCode::kInvalidArgument);

  SUBCASE("exact match wins under any permutation") {
    std::mt19937_64 rng(1);
    std::vector<std::string> opts = {"was smiling", "was smiling widely", "smiling", "went home", "was"};
    for (int i = 0; i < 50; ++i) {
      std::shuffle(opts.begin(), opts.end(), rng);
      for (size_t k = 0; k < opts.size(); ++k) CHECK(select_answer(opts[k], opts) == k);
    }
  }
}

TEST_CASE("token_f1") {
  // "the woman was smiling" vs "was smiling": common 2, P=2/4, R=2/2 -> 2/3.
  CHECK(token_f1("the woman was smiling", "was smiling") == doctest::Approx(2.0 / 3.0));
  CHECK(token_f1("the woman was smiling", "was crying") == doctest::Approx(2.0 * 0.25 * 0.5 / 0.75));
  CHECK(token_f1("a", "b") == 0.0);
  CHECK(normalize_answer("(a) Self-aware/kind!") == "self aware kind");
}

TEST_CASE("evaluate") {
  auto examples = load_benchmark(config(DatasetTag::kEthicsCsTest, {"ethics_cs_test.csv"}));
  auto backend = std::make_shared<ScriptedBackend>();
  gateway::Gateway gw(backend, gateway::PromptTemplate::load("plain-qa"), 4, 0, 0);

  SUBCASE("baseline") {
    auto r = evaluate(examples, gw);
    CHECK(r.n == 6);
    CHECK(r.n_correct == 3);
    CHECK(r.accuracy == doctest::Approx(0.5));
    for (size_t i = 0; i < r.records.size(); ++i) {
      CHECK(r.records[i].id == examples[i].id);
      CHECK_FALSE(r.records[i].se);
      CHECK_FALSE(r.records[i].components);
      CHECK(r.records[i].chosen == 1);
    }
  }
  SUBCASE("with elaborations and ablations") {
    CountingProvider se;
    EvaluateOptions opts;
    opts.se_source = &se;
    auto all = evaluate(examples, gw, opts);
    REQUIRE(all.records[0].se);
    CHECK(*all.records[0].se == serialize_se(in_laws_se()));
    CHECK_FALSE(all.records[1].se);  // provider has nothing for :1
    CHECK(all.records[0].components == std::vector<std::string>{"rot", "emotion", "motivation", "consequence"});

    opts.components = std::vector<Dimension>(kAllDimensions.begin(), kAllDimensions.end());
    auto four = evaluate(examples, gw, opts);
    std::reverse(opts.components->begin(), opts.components->end());
    auto reversed = evaluate(examples, gw, opts);
    CHECK(four.records == all.records);
    CHECK(reversed.records == all.records);

    opts.components = std::vector<Dimension>{Dimension::kConsequence};
    auto con = evaluate(examples, gw, opts);
    CHECK(*con.records[0].se == "[likely consequence] " + *in_laws_se().get(Dimension::kConsequence));

    opts.components = std::vector<Dimension>{};
    auto none = evaluate(examples, gw, opts);
    auto base = evaluate(examples, gw);
    for (size_t i = 0; i < none.records.size(); ++i) {
      CHECK_FALSE(none.records[i].se);
      CHECK(none.records[i].chosen == base.records[i].chosen);
    }
  }
  SUBCASE("failures count as incorrect and are flagged") {
    examples[2].situation = "FAIL here";
    auto r = evaluate(examples, gw);
    CHECK(r.n == 6);
    CHECK(r.n_failed == 1);
    CHECK_FALSE(r.records[2].correct);
    CHECK_FALSE(r.records[2].chosen);
    REQUIRE(r.records[2].error);
    CHECK(r.records[2].error->starts_with("MalformedResponse"));
  }
  SUBCASE("parallel and serial runs agree") {
    EvaluateOptions serial;
    serial.jobs = 1;
    EvaluateOptions parallel;
    parallel.jobs = 8;
    CHECK(evaluate(examples, gw, serial).records == evaluate(examples, gw, parallel).records);
  }
}

TEST_CASE("audit io") {
  testutil::TempDir tmp;
  RunResult r;
  AuditRecord a{"x:0", "codah_all", 2, 2, true, std::string("[emotion] e."), std::vector<std::string>{"emotion"}, {}};
  AuditRecord b{"x:1", "codah_all", std::nullopt, 1, false, std::nullopt, std::nullopt, std::string("Timeout: t")};
  r = summarize({a, b});
  CHECK(r.accuracy == 0.5);
  CHECK(r.n_failed == 1);
  write_audit(tmp / "audit.jsonl", r);
  CHECK(read_audit(tmp / "audit.jsonl") == r.records);
  auto line = io::read_jsonl(tmp / "audit.jsonl")[1];
  CHECK(line["chosen"].is_null());
  CHECK(line["se"].is_null());
  CHECK(line["components"].is_null());
}

TEST_CASE("stored and cached elaborations") {
  testutil::TempDir tmp;
  auto examples = load_benchmark(config(DatasetTag::kEthicsCsTest, {"ethics_cs_test.csv"}));
  io::write_jsonl(tmp / "se.jsonl", {to_json(StoredElaboration{"ethics_cs_test:0", "unused", in_laws_se(),
                                                                ElaborationSource::kDream}),
                                     to_json(StoredElaboration{"other", examples[1].situation, in_laws_se(),
                                                               ElaborationSource::kManual})});
  StoredSeProvider stored(tmp / "se.jsonl");
  CHECK(stored.get(examples[0]) == in_laws_se());
  CHECK(stored.get(examples[1]) == in_laws_se());  // situation fallback
  CHECK_FALSE(stored.get(examples[2]));

  auto counting = std::make_shared<CountingProvider>();
  {
    CachingSeProvider cache(counting, tmp / "cache.jsonl");
    cache.get(examples[0]);
    cache.get(examples[0]);
    CHECK(counting->calls == 1);
  }
  CachingSeProvider reopened(counting, tmp / "cache.jsonl");
  CHECK(reopened.get(examples[0]) == in_laws_se());
  CHECK(counting->calls == 1);

  auto gw = gateway::Gateway::from_config(gateway::GatewayConfig{});
  GatewaySeProvider dream(gw, GatewaySeProvider::Mode::kDream);
  GatewaySeProvider probed(gw, GatewaySeProvider::Mode::kProbe);
  CHECK(dream.get(examples[0])->size() == 4);
  CHECK(*probed.get(examples[0])->get(Dimension::kEmotion) == "I (myself)'s emotion is calm. in-laws's emotion is calm.");
  CHECK(dream.id() != probed.id());
}
