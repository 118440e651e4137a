#include <atomic>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "sceneqa/error.hpp"
#include "sceneqa/entity_probe.hpp"
#include "sceneqa/io.hpp"
#include "sceneqa/model_gateway.hpp"
#include "test_util.hpp"

using namespace sceneqa;
using namespace sceneqa::gateway;
using nlohmann::json;

namespace {

Error error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e;
  }
  FAIL("expected an error");
  return Error(ErrorCode::kInvalidArgument, "");
}

// Local HTTP server on an ephemeral port, stopped on destruction.
class TestServer {
 public:
  TestServer() { port_ = server_.bind_to_any_port("127.0.0.1"); }
  ~TestServer() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }
  httplib::Server& server() { return server_; }
  void start() {
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  std::string url(const std::string& path) const {
    return "http://127.0.0.1:" + std::to_string(port_) + path;
  }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

// Independent FNV-1a 64 and tokenizer for the stub embedding oracle.
uint64_t oracle_fnv(const std::string& s) {
  uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::vector<double> oracle_embedding(const std::string& text, size_t dim, uint64_t seed) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text + " ") {
    unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(cur);
      cur.clear();
    }
  }
  std::vector<long> counts(dim, 0);
  for (const auto& t : tokens) {
    uint64_t h = oracle_fnv(std::to_string(seed) + ":" + t);
    counts[h % dim] += (h & (1ull << 63)) ? -1 : 1;
  }
  long sq = 0;
  for (long c : counts) sq += c * c;
  std::vector<double> out(dim);
  for (size_t i = 0; i < dim; ++i) out[i] = counts[i] / std::sqrt(static_cast<double>(sq));
  return out;
}

}  // namespace

TEST_CASE("request validation") {
  GenerationRequest req;
  CHECK(error_of([&] { validate(req); }).code() == ErrorCode::kInvalidArgument);
  req.question = "q";
  req.options = std::vector<std::string>{"only"};
  CHECK(error_of([&] { validate(req); }).code() == ErrorCode::kInvalidArgument);
  req.options = std::vector<std::string>{"a", "b"};
  req.context = "";
  CHECK(error_of([&] { validate(req); }).code() == ErrorCode::kInvalidArgument);
  req.context = "c";
  CHECK_NOTHROW(validate(req));
}

TEST_CASE("prompt templates") {
  GenerationRequest req{"Is it wrong?", std::nullopt, std::vector<std::string>{"wrong", "not wrong"}};
  auto plain = PromptTemplate::load("plain-qa");
  CHECK(plain.render(req) == "Question: Is it wrong?\nOptions: (A) wrong (B) not wrong\nAnswer:");
  req.context = "[social norm] Be kind.";
  CHECK(plain.render(req) ==
        "Context: [social norm] Be kind.\nQuestion: Is it wrong?\nOptions: (A) wrong (B) not wrong\nAnswer:");
  auto macaw = PromptTemplate::load("macaw-angles");
  CHECK(macaw.render(req) ==
        "$answer$ ; $mcoptions$ ; $question$ = Is it wrong? ; $mcoptions$ = (A) wrong (B) not wrong ; $context$ = "
        "[social norm] Be kind.");
  CHECK(PromptTemplate::load("raw").render(req) == "Is it wrong?");

  SUBCASE("files in the templates dir match and override built-ins") {
    auto dir = std::filesystem::path(SCENEQA_FIXTURES).parent_path().parent_path() / "templates";
    CHECK(PromptTemplate::load("plain-qa", dir).render(req) == plain.render(req));
    CHECK(PromptTemplate::load("macaw-angles", dir).render(req) == macaw.render(req));
    testutil::TempDir tmp;
    io::write_file(tmp / "plain-qa.txt", "Q={question}\n");
    CHECK(PromptTemplate::load("plain-qa", tmp.path()).render(req) == "Q=Is it wrong?");
  }
  SUBCASE("errors") {
    CHECK(error_of([] { PromptTemplate("t", "no slot"); }).code() == ErrorCode::kConfigError);
    CHECK(error_of([] { PromptTemplate::load("no-such-template"); }).code() == ErrorCode::kConfigError);
    PromptTemplate bad("t", "{question}{?context}x");
    CHECK(error_of([&] { bad.render(req); }).code() == ErrorCode::kConfigError);
  }
  SUBCASE("question inside a section still renders") {
    PromptTemplate t("t", "{?context}{context} / {question}{/context}{question}");
    CHECK(t.render(req) == "[social norm] Be kind. / Is it wrong?Is it wrong?");
  }
}

TEST_CASE("rendering is injective over generated requests") {
  std::mt19937_64 rng(3);
  const std::vector<std::string> words = {"a", "b", "wrong", "not", "x y", "(A)", "Context:"};
  auto phrase = [&] {
    std::string s = words[rng() % words.size()];
    for (size_t n = rng() % 3; n > 0; --n) s += " " + words[rng() % words.size()];
    return s;
  };
  for (const auto& name : {"plain-qa", "macaw-angles"}) {
    auto t = PromptTemplate::load(name);
    std::map<std::string, GenerationRequest> seen;
    for (int i = 0; i < 3000; ++i) {
      GenerationRequest req;
      req.question = phrase();
      if (rng() % 2) req.context = phrase();
      if (rng() % 2) req.options = std::vector<std::string>{phrase(), phrase()};
      auto [it, fresh] = seen.emplace(t.render(req), req);
      if (!fresh) CHECK(it->second == req);
    }
  }
}

TEST_CASE("stub generation contract") {
  StubGenerationBackend stub;
  Gateway gw(std::make_shared<StubGenerationBackend>(), PromptTemplate::load("plain-qa"));
  SUBCASE("highest word overlap with the question, ties to the lowest index") {
    GenerationRequest req{"Is spending time with children good?", std::nullopt,
                          std::vector<std::string>{"never", "spending time", "time with children"}};
    CHECK(gw.generate(req).answer == "time with children");
    req.options = std::vector<std::string>{"alpha", "beta"};
    CHECK(gw.generate(req).answer == "alpha");
    req.options = std::vector<std::string>{"zzz", "good", "children"};
    CHECK(gw.generate(req).answer == "good");
  }
  SUBCASE("dimension prompts get canned text") {
    GenerationRequest req{"[SITUATION] x [QUERY] emotion"};
    CHECK(stub.complete("", req) == StubGenerationBackend::canned_elaboration(Dimension::kEmotion));
    CHECK(gw.generate_elaboration("smacking an airplane seat to intimidate a child.", Dimension::kRuleOfThumb) ==
          StubGenerationBackend::canned_elaboration(Dimension::kRuleOfThumb));
    CHECK(error_of([&] { gw.generate_elaboration("  ", Dimension::kEmotion); }).code() ==
          ErrorCode::kInvalidArgument);
  }
  SUBCASE("elaborate fills all four dimensions") {
    auto se = gw.elaborate("A woman is at the park.");
    CHECK(se.size() == 4);
    CHECK(*se.get(Dimension::kConsequence) == "Things turn out fine for everyone.");
  }
  SUBCASE("probe") {
    probe::RuleBasedExtractor ex;
    auto se = gw.probe("The woman and her daughter were strolling.", ex);
    CHECK(*se.get(Dimension::kEmotion) == "woman's emotion is calm. daughter's emotion is calm.");
    CHECK(*se.get(Dimension::kRuleOfThumb) == "It's good to be kind.");
    auto empty = gw.probe("This winter is very cold.", ex);
    CHECK(empty.size() == 2);
  }
  SUBCASE("deterministic") {
    GenerationRequest req{"q a b", std::string("ctx"), std::vector<std::string>{"a", "b"}};
    CHECK(gw.generate(req).raw == gw.generate(req).raw);
  }
}

TEST_CASE("stub embedding") {
  StubEmbeddingProvider emb(64, 0);
  auto a = emb.embed("a");
  auto b = emb.embed("b");
  CHECK(a == emb.embed("a"));
  CHECK(a != b);
  CHECK(a.dim() == 64);
  for (const auto* text : {"a", "b", "The woman and her daughter were happily strolling.", "x x x y"}) {
    for (auto [dim, seed] : {std::pair<size_t, uint64_t>{64, 0}, {16, 5}, {7, 123}}) {
      StubEmbeddingProvider p(dim, seed);
      auto got = p.embed(text).values;
      auto want = oracle_embedding(text, dim, seed);
      REQUIRE(got.size() == want.size());
      for (size_t i = 0; i < dim; ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-15));
    }
  }
  CHECK(io::fnv1a64("a") == oracle_fnv("a"));
  CHECK(error_of([&] { emb.embed(" "); }).code() == ErrorCode::kInvalidArgument);
  CHECK(emb.id() == "stub-hash-64-0");
}

TEST_CASE("embedding cache") {
  testutil::TempDir tmp;
  auto inner = std::make_shared<StubEmbeddingProvider>(8, 1);
  {
    CachedEmbeddingProvider cache(inner, tmp / "emb.jsonl");
    auto v = cache.embed("hello world");
    CHECK(cache.embed("hello world") == v);
    CHECK(cache.hits() == 1);
  }
  CachedEmbeddingProvider reopened(inner, tmp / "emb.jsonl");
  CHECK(reopened.embed("hello world") == inner->embed("hello world"));
  CHECK(reopened.hits() == 1);
  // A different provider ignores foreign entries.
  CachedEmbeddingProvider other(std::make_shared<StubEmbeddingProvider>(8, 2), tmp / "emb.jsonl");
  other.embed("hello world");
  CHECK(other.hits() == 0);
}

TEST_CASE("http generation backend") {
  TestServer srv;
  std::atomic<int> calls{0};
  std::atomic<int> in_flight{0};
  std::atomic<int> peak{0};
  json last_payload;
  std::mutex mu;
  srv.server().Post("/ok", [&](const httplib::Request& req, httplib::Response& res) {
    ++calls;
    int now = ++in_flight;
    for (int p = peak.load(); now > p && !peak.compare_exchange_weak(p, now);) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    {
      std::lock_guard lock(mu);
      last_payload = json::parse(req.body);
    }
    --in_flight;
    res.set_content(json{{"text", " (A) wrong \n"}}.dump(), "application/json");
  });
  srv.server().Post("/busy", [&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.status = 503;
  });
  srv.server().Post("/bad", [&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.status = 400;
  });
  srv.server().Post("/garbage", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("not json", "text/plain");
  });
  srv.server().Post("/notext", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"answer": "x"})", "application/json");
  });
  srv.server().Post("/slow", [](const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(600));
    res.set_content(R"({"text": "late"})", "application/json");
  });
  srv.start();

  GenerationRequest req{"Is it wrong?", std::nullopt, std::vector<std::string>{"wrong", "not wrong"}};
  auto make = [&](const std::string& path, int timeout_ms = 2000, int retries = 2, int in_flight_cap = 4) {
    return Gateway(std::make_shared<HttpGenerationBackend>(srv.url(path), timeout_ms),
                   PromptTemplate::load("plain-qa"), in_flight_cap, retries, 1);
  };

  SUBCASE("success") {
    auto gw = make("/ok");
    gw.set_decoding(32, 0.0);
    auto res = gw.generate(req);
    CHECK(res.answer == "(A) wrong");
    CHECK(res.raw == " (A) wrong \n");
    CHECK(last_payload["prompt"] == "Question: Is it wrong?\nOptions: (A) wrong (B) not wrong\nAnswer:");
    CHECK(last_payload["max_tokens"] == 32);
    CHECK(last_payload["temperature"] == 0.0);
  }
  SUBCASE("transient errors are retried then surface with the prompt") {
    auto gw = make("/busy");
    auto e = error_of([&] { gw.generate(req); });
    CHECK(e.code() == ErrorCode::kEndpointUnreachable);
    CHECK(calls == 3);
    CHECK(e.detail() == "Question: Is it wrong?\nOptions: (A) wrong (B) not wrong\nAnswer:");
  }
  SUBCASE("client errors are not retried") {
    auto gw = make("/bad");
    CHECK(error_of([&] { gw.generate(req); }).code() == ErrorCode::kMalformedResponse);
    CHECK(calls == 1);
  }
  SUBCASE("malformed bodies") {
    auto g1 = make("/garbage");
    CHECK(error_of([&] { g1.generate(req); }).code() == ErrorCode::kMalformedResponse);
    auto g2 = make("/notext");
    CHECK(error_of([&] { g2.generate(req); }).code() == ErrorCode::kMalformedResponse);
  }
  SUBCASE("timeout") {
    auto gw = make("/slow", 150, 0);
    auto e = error_of([&] { gw.generate(req); });
    CHECK(e.code() == ErrorCode::kTimeout);
    CHECK_FALSE(e.detail().empty());
  }
  SUBCASE("unreachable") {
    Gateway gw(std::make_shared<HttpGenerationBackend>("http://127.0.0.1:1/x", 500), PromptTemplate::load("raw"),
               1, 1, 1);
    CHECK(error_of([&] { gw.generate(req); }).code() == ErrorCode::kEndpointUnreachable);
  }
  SUBCASE("in-flight requests are bounded") {
    auto gw = make("/ok", 2000, 0, 2);
    std::vector<std::jthread> threads;
    for (int i = 0; i < 8; ++i) threads.emplace_back([&] { gw.generate(req); });
    threads.clear();
    CHECK(calls == 8);
    CHECK(peak <= 2);
  }
}

TEST_CASE("http embedding provider") {
  TestServer srv;
  std::atomic<int> n{0};
  srv.server().Post("/embed", [&](const httplib::Request& req, httplib::Response& res) {
    auto body = json::parse(req.body);
    size_t dim = body["text"] == "short" && n++ > 0 ? 2 : 3;
    res.set_content(json{{"vector", std::vector<double>(dim, 0.5)}}.dump(), "application/json");
  });
  srv.start();
  HttpEmbeddingProvider emb(srv.url("/embed"), 2000);
  CHECK(emb.embed("hello").dim() == 3);
  CHECK(emb.embed("short").dim() == 3);
  CHECK(error_of([&] { emb.embed("short"); }).code() == ErrorCode::kDimensionMismatch);
  HttpEmbeddingProvider declared(srv.url("/embed"), 2000, 4);
  CHECK(error_of([&] { declared.embed("hello"); }).code() == ErrorCode::kDimensionMismatch);
}

TEST_CASE("gateway config layering") {
  testutil::TempDir tmp;
  io::write_file(tmp / "gw.json", R"({"template": "macaw-angles", "max_in_flight": 2, "timeout_ms": 100})");
  auto cfg = GatewayConfig::load((tmp / "gw.json").string());
  CHECK(cfg.qa_template == "macaw-angles");
  CHECK(cfg.max_in_flight == 2);
  CHECK(cfg.backend == "stub");
  setenv("GATEWAY_GEN_URL", "http://127.0.0.1:9/gen", 1);
  setenv("GATEWAY_TIMEOUT_MS", "1234", 1);
  cfg.apply_env();
  unsetenv("GATEWAY_GEN_URL");
  unsetenv("GATEWAY_TIMEOUT_MS");
  CHECK(cfg.backend == "http");
  CHECK(cfg.gen_url == "http://127.0.0.1:9/gen");
  CHECK(cfg.timeout_ms == 1234);
  CHECK(GatewayConfig::from_json(cfg.to_json()).to_json() == cfg.to_json());
  CHECK(error_of([] { GatewayConfig::from_json({{"backend", "grpc"}}); }).code() == ErrorCode::kConfigError);
  CHECK(Gateway::from_config(GatewayConfig::load("stub"))->id() == "stub/plain-qa");
}
