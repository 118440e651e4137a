#include "sceneqa/model_gateway.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <thread>
#include <tuple>

#include "httplib.h"
#include "sceneqa/error.hpp"
#include "sceneqa/io.hpp"
#include "sceneqa/text.hpp"

namespace sceneqa::gateway {

using nlohmann::json;

void validate(const GenerationRequest& req) {
  if (text::trim(req.question).empty()) {
    throw Error(ErrorCode::kInvalidArgument, "generation request has an empty question");
  }
  if (req.context && req.context->empty()) {
    throw Error(ErrorCode::kInvalidArgument, "context must be absent rather than empty");
  }
  if (req.options && req.options->size() < 2) {
    throw Error(ErrorCode::kInvalidArgument, "options need at least two entries");
  }
}

std::string render_options(const std::vector<std::string>& options) {
  std::string out;
  for (size_t i = 0; i < options.size(); ++i) {
    if (i) out.push_back(' ');
    out.push_back('(');
    out.push_back(static_cast<char>('A' + i));
    out += ") ";
    out += options[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prompt templates

namespace {

const std::map<std::string, std::string, std::less<>>& builtin_templates() {
  static const std::map<std::string, std::string, std::less<>> templates = {
      {"raw", "{question}"},
      {"plain-qa",
       "{?context}Context: {context}\n{/context}Question: {question}\n"
       "{?options}Options: {options}\n{/options}Answer:"},
      {"macaw-angles",
       "$answer$ ; $mcoptions$ ; $question$ = {question}{?options} ; $mcoptions$ = "
       "{options}{/options}{?context} ; $context$ = {context}{/context}"},
  };
  return templates;
}

}  // namespace

PromptTemplate::PromptTemplate(std::string name, std::string body)
    : name_(std::move(name)), body_(std::move(body)) {
  if (body_.find("{question}") == std::string::npos) {
    throw Error(ErrorCode::kConfigError, "template '" + name_ + "' has no {question} slot");
  }
}

namespace {

using Slots = std::map<std::string, std::optional<std::string>, std::less<>>;

std::string render_body(std::string_view body, const Slots& slots, const std::string& name) {
  std::string out;
  size_t i = 0;
  while (i < body.size()) {
    if (body[i] != '{') {
      out.push_back(body[i++]);
      continue;
    }
    size_t close = body.find('}', i);
    if (close == std::string_view::npos) {
      out.append(body.substr(i));
      break;
    }
    std::string_view token = body.substr(i + 1, close - i - 1);
    if (!token.empty() && token.front() == '?') {
      std::string_view slot = token.substr(1);
      std::string end_marker = "{/" + std::string(slot) + "}";
      size_t end = body.find(end_marker, close + 1);
      if (end == std::string_view::npos) {
        throw Error(ErrorCode::kConfigError,
                    "template '" + name + "': unterminated section " + std::string(token));
      }
      auto it = slots.find(slot);
      if (it != slots.end() && it->second) {
        out += render_body(body.substr(close + 1, end - close - 1), slots, name);
      }
      i = end + end_marker.size();
      continue;
    }
    auto it = slots.find(token);
    if (it == slots.end()) {
      out.append(body.substr(i, close - i + 1));
    } else if (it->second) {
      out += *it->second;
    }
    i = close + 1;
  }
  return out;
}

}  // namespace

std::string PromptTemplate::render(const GenerationRequest& req) const {
  Slots slots = {
      {"question", req.question},
      {"context", req.context},
      {"options", req.options ? std::optional(render_options(*req.options)) : std::nullopt},
  };
  return render_body(body_, slots, name_);
}

PromptTemplate PromptTemplate::load(std::string_view name_or_path,
                                    const std::filesystem::path& dir) {
  std::string name(name_or_path);
  auto from_file = [](const std::filesystem::path& p) {
    auto body = io::read_file(p);
    while (!body.empty() && (body.back() == '\n' || body.back() == '\r')) body.pop_back();
    return PromptTemplate(p.stem().string(), body);
  };
  // A file in the templates directory overrides the built-in of the same name.
  if (!dir.empty() && std::filesystem::is_regular_file(dir / (name + ".txt"))) {
    return from_file(dir / (name + ".txt"));
  }
  auto& builtins = builtin_templates();
  if (auto it = builtins.find(name); it != builtins.end()) {
    return PromptTemplate(it->first, it->second);
  }
  if (std::filesystem::is_regular_file(name)) return from_file(name);
  throw Error(ErrorCode::kConfigError, "unknown prompt template '" + name + "'");
}

// ---------------------------------------------------------------------------
// HTTP plumbing

namespace {

struct Endpoint {
  std::string base;  // scheme://host[:port]
  std::string path;
};

Endpoint split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorCode::kConfigError, "endpoint URL needs a scheme: " + url);
  }
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

json post_json(const std::string& url, int timeout_ms, const json& payload,
               const std::string& prompt_for_errors) {
  auto ep = split_url(url);
  httplib::Client client(ep.base);
  auto timeout = std::chrono::milliseconds(timeout_ms);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  auto res = client.Post(ep.path, payload.dump(), "application/json");
  if (!res) {
    auto err = res.error();
    auto msg = url + ": " + httplib::to_string(err);
    if (err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout) {
      throw Error(ErrorCode::kTimeout, msg, prompt_for_errors);
    }
    throw Error(ErrorCode::kEndpointUnreachable, msg, prompt_for_errors);
  }
  if (res->status >= 500 || res->status == 429) {
    throw Error(ErrorCode::kEndpointUnreachable,
                url + ": HTTP " + std::to_string(res->status), prompt_for_errors);
  }
  if (res->status != 200) {
    throw Error(ErrorCode::kMalformedResponse,
                url + ": HTTP " + std::to_string(res->status) + ": " + res->body,
                prompt_for_errors);
  }
  try {
    return json::parse(res->body);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kMalformedResponse, url + ": response is not JSON: " + e.what(),
                prompt_for_errors);
  }
}

}  // namespace

HttpGenerationBackend::HttpGenerationBackend(std::string url, int timeout_ms)
    : url_(std::move(url)), timeout_ms_(timeout_ms) {
  split_url(url_);
}

std::string HttpGenerationBackend::complete(const std::string& prompt,
                                            const GenerationRequest& req) {
  json payload = {{"prompt", prompt},
                  {"max_tokens", req.max_output_tokens},
                  {"temperature", req.temperature}};
  auto body = post_json(url_, timeout_ms_, payload, prompt);
  if (!body.is_object() || !body.contains("text") || !body["text"].is_string()) {
    throw Error(ErrorCode::kMalformedResponse, url_ + ": response lacks a \"text\" string",
                prompt);
  }
  return body["text"].get<std::string>();
}

// ---------------------------------------------------------------------------
// Stub generation

namespace {

constexpr std::string_view kSituationMarker = "[SITUATION] ";
constexpr std::string_view kQueryMarker = " [QUERY] ";

}  // namespace

std::string StubGenerationBackend::canned_elaboration(Dimension d) {
  switch (d) {
    case Dimension::kRuleOfThumb: return "It's good to be considerate of others.";
    case Dimension::kEmotion: return "The person's emotion is calm.";
    case Dimension::kMotivation: return "The person's motivation is to do the right thing.";
    case Dimension::kConsequence: return "Things turn out fine for everyone.";
  }
  return {};
}

std::string StubGenerationBackend::complete(const std::string&, const GenerationRequest& req) {
  const std::string& q = req.question;
  if (q.starts_with(kSituationMarker)) {
    auto pos = q.rfind(kQueryMarker);
    if (pos != std::string::npos) {
      if (auto d = dimension_from_keyword(q.substr(pos + kQueryMarker.size()))) {
        return canned_elaboration(*d);
      }
    }
  }
  if (req.options && req.options->size() >= 2) {
    auto q_tokens = text::word_tokens(q);
    std::set<std::string> question_set(q_tokens.begin(), q_tokens.end());
    size_t best = 0;
    size_t best_overlap = 0;
    for (size_t i = 0; i < req.options->size(); ++i) {
      auto o_tokens = text::word_tokens((*req.options)[i]);
      std::set<std::string> option_set(o_tokens.begin(), o_tokens.end());
      size_t overlap = 0;
      for (const auto& t : option_set) overlap += question_set.count(t);
      if (overlap > best_overlap) {
        best_overlap = overlap;
        best = i;
      }
    }
    return (*req.options)[best];
  }
  if (q.ends_with("'s emotion?")) return "calm";
  if (q.ends_with("'s motivation?")) return "to do the right thing";
  if (q == probe::kRuleOfThumbQuestion) return "It's good to be kind.";
  if (q == probe::kConsequenceQuestion) return "Things will work out.";
  return "unknown";
}

// ---------------------------------------------------------------------------
// Embeddings

namespace {

EmbeddingVector vector_from_json(const json& body, const std::string& url) {
  if (!body.is_object() || !body.contains("vector") || !body["vector"].is_array()) {
    throw Error(ErrorCode::kMalformedResponse, url + ": response lacks a \"vector\" array");
  }
  EmbeddingVector v;
  for (const auto& x : body["vector"]) {
    if (!x.is_number()) throw Error(ErrorCode::kMalformedResponse, url + ": non-numeric vector");
    double d = x.get<double>();
    if (!std::isfinite(d)) throw Error(ErrorCode::kMalformedResponse, url + ": non-finite value");
    v.values.push_back(d);
  }
  if (v.values.empty()) throw Error(ErrorCode::kMalformedResponse, url + ": empty vector");
  return v;
}

}  // namespace

HttpEmbeddingProvider::HttpEmbeddingProvider(std::string url, int timeout_ms,
                                             size_t expected_dim)
    : url_(std::move(url)), timeout_ms_(timeout_ms), dim_(expected_dim) {
  split_url(url_);
}

EmbeddingVector HttpEmbeddingProvider::embed(std::string_view text) {
  if (text::trim(text).empty()) throw Error(ErrorCode::kInvalidArgument, "cannot embed empty text");
  auto v = vector_from_json(post_json(url_, timeout_ms_, {{"text", text}}, std::string(text)), url_);
  std::lock_guard lock(mu_);
  if (dim_ == 0) dim_ = v.dim();
  if (v.dim() != dim_) {
    throw Error(ErrorCode::kDimensionMismatch, url_ + ": expected dim " + std::to_string(dim_) +
                                                   ", got " + std::to_string(v.dim()));
  }
  return v;
}

StubEmbeddingProvider::StubEmbeddingProvider(size_t dim, uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim_ == 0) throw Error(ErrorCode::kInvalidArgument, "embedding dim must be positive");
}

EmbeddingVector StubEmbeddingProvider::embed(std::string_view text) {
  if (text::trim(text).empty()) throw Error(ErrorCode::kInvalidArgument, "cannot embed empty text");
  auto tokens = text::word_tokens(text);
  if (tokens.empty()) tokens.emplace_back(text);
  EmbeddingVector v;
  v.values.assign(dim_, 0.0);
  const std::string prefix = std::to_string(seed_) + ":";
  for (const auto& tok : tokens) {
    uint64_t h = io::fnv1a64(prefix + tok);
    v.values[h % dim_] += (h >> 63) ? -1.0 : 1.0;
  }
  double norm = 0.0;
  for (double x : v.values) norm += x * x;
  norm = std::sqrt(norm);
  if (norm > 0) {
    for (double& x : v.values) x /= norm;
  }
  return v;
}

std::string StubEmbeddingProvider::id() const {
  return "stub-hash-" + std::to_string(dim_) + "-" + std::to_string(seed_);
}

CachedEmbeddingProvider::CachedEmbeddingProvider(std::shared_ptr<EmbeddingProvider> inner,
                                                 std::filesystem::path cache_path)
    : inner_(std::move(inner)), path_(std::move(cache_path)) {
  if (!std::filesystem::exists(path_)) return;
  const auto provider = inner_->id();
  io::for_each_jsonl(path_, [&](const json& row, size_t) {
    if (row.value("provider", std::string()) != provider) return;
    EmbeddingVector v;
    v.values = row.at("vector").get<std::vector<double>>();
    cache_[row.at("key").get<std::string>()] = std::move(v);
  });
}

EmbeddingVector CachedEmbeddingProvider::embed(std::string_view text) {
  auto key = io::sha256_hex(text);
  {
    std::lock_guard lock(mu_);
    if (auto it = cache_.find(key); it != cache_.end()) {
      ++hits_;
      return it->second;
    }
  }
  auto v = inner_->embed(text);
  std::lock_guard lock(mu_);
  if (cache_.emplace(key, v).second) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    std::ofstream out(path_, std::ios::app);
    if (!out) throw Error(ErrorCode::kIoError, "cannot append to " + path_.string());
    out << json{{"key", key}, {"provider", inner_->id()}, {"vector", v.values}}.dump() << '\n';
  }
  return v;
}

// ---------------------------------------------------------------------------
// Configuration

GatewayConfig GatewayConfig::from_json(const json& j) {
  GatewayConfig c;
  try {
    c.backend = j.value("backend", c.backend);
    c.gen_url = j.value("gen_url", c.gen_url);
    c.emb_url = j.value("emb_url", c.emb_url);
    c.timeout_ms = j.value("timeout_ms", c.timeout_ms);
    c.qa_template = j.value("template", c.qa_template);
    c.templates_dir = j.value("templates_dir", std::string());
    c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
    c.max_retries = j.value("max_retries", c.max_retries);
    c.backoff_ms = j.value("backoff_ms", c.backoff_ms);
    c.max_output_tokens = j.value("max_output_tokens", c.max_output_tokens);
    c.temperature = j.value("temperature", c.temperature);
    c.embedder = j.value("embedder", c.embedder);
    c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
    c.embedding_seed = j.value("embedding_seed", c.embedding_seed);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfigError, std::string("gateway config: ") + e.what());
  }
  if (c.backend != "stub" && c.backend != "http") {
    throw Error(ErrorCode::kConfigError, "gateway backend must be stub or http");
  }
  if (c.embedder != "stub" && c.embedder != "http") {
    throw Error(ErrorCode::kConfigError, "embedder must be stub or http");
  }
  if (c.max_in_flight < 1 || c.max_in_flight > 1024) {
    throw Error(ErrorCode::kConfigError, "max_in_flight must be within [1, 1024]");
  }
  return c;
}

GatewayConfig GatewayConfig::load(std::string_view spec) {
  if (spec.empty() || spec == "stub") return GatewayConfig{};
  std::filesystem::path path{std::string(spec)};
  try {
    auto cfg = from_json(json::parse(io::read_file(path)));
    if (!cfg.templates_dir.empty() && cfg.templates_dir.is_relative()) {
      cfg.templates_dir = path.parent_path() / cfg.templates_dir;
    }
    return cfg;
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kConfigError, path.string() + ": " + e.what());
  }
}

void GatewayConfig::apply_env() {
  if (const char* v = std::getenv("GATEWAY_GEN_URL"); v && *v) {
    gen_url = v;
    backend = "http";
  }
  if (const char* v = std::getenv("GATEWAY_EMB_URL"); v && *v) {
    emb_url = v;
    embedder = "http";
  }
  if (const char* v = std::getenv("GATEWAY_TIMEOUT_MS"); v && *v) {
    try {
      timeout_ms = std::stoi(v);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kConfigError, "GATEWAY_TIMEOUT_MS is not an integer");
    }
  }
}

json GatewayConfig::to_json() const {
  return {{"backend", backend},
          {"gen_url", gen_url},
          {"emb_url", emb_url},
          {"timeout_ms", timeout_ms},
          {"template", qa_template},
          {"templates_dir", templates_dir.string()},
          {"max_in_flight", max_in_flight},
          {"max_retries", max_retries},
          {"backoff_ms", backoff_ms},
          {"max_output_tokens", max_output_tokens},
          {"temperature", temperature},
          {"embedder", embedder},
          {"embedding_dim", embedding_dim},
          {"embedding_seed", embedding_seed}};
}

std::shared_ptr<EmbeddingProvider> make_embedder(const GatewayConfig& cfg) {
  if (cfg.embedder == "http") {
    if (cfg.emb_url.empty()) throw Error(ErrorCode::kConfigError, "embedder http needs emb_url");
    return std::make_shared<HttpEmbeddingProvider>(cfg.emb_url, cfg.timeout_ms);
  }
  return std::make_shared<StubEmbeddingProvider>(cfg.embedding_dim, cfg.embedding_seed);
}

// ---------------------------------------------------------------------------
// Gateway

Gateway::Gateway(std::shared_ptr<GenerationBackend> backend, PromptTemplate qa_template,
                 int max_in_flight, int max_retries, int backoff_ms)
    : backend_(std::move(backend)),
      template_(std::move(qa_template)),
      raw_template_(PromptTemplate::load("raw")),
      slots_(std::clamp(max_in_flight, 1, 1024)),
      max_retries_(std::max(0, max_retries)),
      backoff_ms_(std::max(0, backoff_ms)) {}

std::shared_ptr<Gateway> Gateway::from_config(const GatewayConfig& cfg) {
  std::shared_ptr<GenerationBackend> backend;
  if (cfg.backend == "http") {
    if (cfg.gen_url.empty()) throw Error(ErrorCode::kConfigError, "http backend needs gen_url");
    backend = std::make_shared<HttpGenerationBackend>(cfg.gen_url, cfg.timeout_ms);
  } else {
    backend = std::make_shared<StubGenerationBackend>();
  }
  auto gw = std::make_shared<Gateway>(backend, PromptTemplate::load(cfg.qa_template, cfg.templates_dir),
                                      cfg.max_in_flight, cfg.max_retries, cfg.backoff_ms);
  gw->set_decoding(cfg.max_output_tokens, cfg.temperature);
  return gw;
}

void Gateway::set_decoding(int max_output_tokens, double temperature) {
  if (max_output_tokens < 1) throw Error(ErrorCode::kConfigError, "max_output_tokens must be positive");
  decoding_ = {max_output_tokens, temperature};
}

GenerationResponse Gateway::call(const std::string& prompt, const GenerationRequest& request) {
  GenerationRequest req = request;
  if (decoding_) std::tie(req.max_output_tokens, req.temperature) = *decoding_;
  for (int attempt = 0;; ++attempt) {
    auto start = std::chrono::steady_clock::now();
    try {
      std::string raw;
      {
        slots_.acquire();
        struct Release {
          std::counting_semaphore<1024>& s;
          ~Release() { s.release(); }
        } release{slots_};
        raw = backend_->complete(prompt, req);
      }
      auto elapsed = std::chrono::steady_clock::now() - start;
      return {text::trim(raw), raw,
              std::chrono::duration_cast<std::chrono::milliseconds>(elapsed).count()};
    } catch (const Error& e) {
      bool transient =
          e.code() == ErrorCode::kEndpointUnreachable || e.code() == ErrorCode::kTimeout;
      if (!transient || attempt >= max_retries_) {
        throw Error(e.code(), e.what(), prompt);
      }
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms_ << attempt));
  }
}

GenerationResponse Gateway::generate(const GenerationRequest& req) {
  validate(req);
  return call(template_.render(req), req);
}

std::string Gateway::generate_elaboration(std::string_view situation, Dimension d,
                                          const std::optional<probe::Entity>& entity) {
  auto s = text::squash_whitespace(situation);
  if (s.empty()) throw Error(ErrorCode::kInvalidArgument, "empty situation");
  if (entity && (d == Dimension::kEmotion || d == Dimension::kMotivation)) {
    GenerationRequest req;
    req.question = d == Dimension::kEmotion ? probe::emotion_question(entity->surface)
                                            : probe::motivation_question(entity->surface);
    req.context = s;
    auto answer = generate(req).answer;
    return answer.empty() ? std::string() : probe::templatize_answer(*entity, d, answer);
  }
  GenerationRequest req;
  req.question = "[SITUATION] " + s + " [QUERY] " + std::string(query_keyword(d));
  validate(req);
  return call(raw_template_.render(req), req).answer;
}

SceneElaboration Gateway::elaborate(std::string_view situation) {
  SceneElaboration se;
  for (Dimension d : kAllDimensions) {
    auto answer = text::squash_whitespace(generate_elaboration(situation, d));
    // Tags inside generated text would break the serialized form.
    for (Dimension other : kAllDimensions) {
      std::string tag(serialization_tag(other));
      for (size_t p; (p = answer.find(tag)) != std::string::npos;) answer.erase(p, tag.size());
    }
    answer = text::squash_whitespace(answer);
    if (!answer.empty()) se.set(d, answer);
  }
  return se;
}

SceneElaboration Gateway::probe(std::string_view situation,
                                const probe::EntityExtractor& extractor, std::string_view id) {
  auto s = text::squash_whitespace(situation);
  auto queries = probe::generate_probe_queries(s, extractor, id);
  std::vector<std::pair<probe::ProbeQuery, std::string>> answers;
  answers.reserve(queries.size());
  for (auto& q : queries) {
    GenerationRequest req;
    req.question = q.question;
    req.context = s;
    auto answer = generate(req).answer;
    for (Dimension other : kAllDimensions) {
      std::string tag(serialization_tag(other));
      for (size_t p; (p = answer.find(tag)) != std::string::npos;) answer.erase(p, tag.size());
    }
    answers.emplace_back(std::move(q), std::move(answer));
  }
  return probe::assemble_probed_se(answers);
}

}  // namespace sceneqa::gateway
