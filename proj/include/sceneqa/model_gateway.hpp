#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "sceneqa/entity_probe.hpp"
#include "sceneqa/scene_model.hpp"

namespace sceneqa::gateway {

struct GenerationRequest {
  std::string question;
  std::optional<std::string> context;
  std::optional<std::vector<std::string>> options;
  int max_output_tokens = 64;
  double temperature = 0.0;

  bool operator==(const GenerationRequest&) const = default;
};

// Throws InvalidArgument on an empty question, an empty context string or
// fewer than two options.
void validate(const GenerationRequest& req);

struct GenerationResponse {
  std::string answer;
  std::string raw;
  int64_t latency_ms = 0;
};

struct EmbeddingVector {
  std::vector<double> values;

  size_t dim() const { return values.size(); }
  bool operator==(const EmbeddingVector&) const = default;
};

// "(A) first (B) second ..."
std::string render_options(const std::vector<std::string>& options);

// Named prompt layout with {question}, {context} and {options} slots.
// "{?name}...{/name}" wraps text emitted only when the slot is present.
class PromptTemplate {
 public:
  PromptTemplate(std::string name, std::string body);

  const std::string& name() const { return name_; }
  const std::string& body() const { return body_; }
  std::string render(const GenerationRequest& req) const;

  // <dir>/<name>.txt first, then the built-ins "raw", "plain-qa" and
  // "macaw-angles", then a file path.
  static PromptTemplate load(std::string_view name_or_path,
                             const std::filesystem::path& dir = {});

 private:
  std::string name_;
  std::string body_;
};

class GenerationBackend {
 public:
  virtual ~GenerationBackend() = default;
  virtual std::string complete(const std::string& prompt, const GenerationRequest& req) = 0;
  virtual std::string id() const = 0;
};

// POST {"prompt", "max_tokens", "temperature"} -> {"text"}.
class HttpGenerationBackend : public GenerationBackend {
 public:
  HttpGenerationBackend(std::string url, int timeout_ms);
  std::string complete(const std::string& prompt, const GenerationRequest& req) override;
  std::string id() const override { return "http:" + url_; }

 private:
  std::string url_;
  int timeout_ms_;
};

// Hermetic backend. Multiple-choice requests get the option sharing the most
// distinct word tokens with the question (ties to the lowest index); a
// "[SITUATION] ... [QUERY] <keyword>" question gets canned text for that
// dimension; probing questions get canned short answers.
class StubGenerationBackend : public GenerationBackend {
 public:
  std::string complete(const std::string& prompt, const GenerationRequest& req) override;
  std::string id() const override { return "stub"; }

  static std::string canned_elaboration(Dimension d);
};

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual EmbeddingVector embed(std::string_view text) = 0;
  virtual std::string id() const = 0;
};

// POST {"text"} -> {"vector": [...]}. When `expected_dim` is 0 the first
// response fixes the dimension.
class HttpEmbeddingProvider : public EmbeddingProvider {
 public:
  HttpEmbeddingProvider(std::string url, int timeout_ms, size_t expected_dim = 0);
  EmbeddingVector embed(std::string_view text) override;
  std::string id() const override { return "http:" + url_; }

 private:
  std::string url_;
  int timeout_ms_;
  std::mutex mu_;
  size_t dim_;
};

// Signed feature hashing of lowercased word tokens: each token adds +/-1 to
// bucket h % dim where h = FNV-1a64("<seed>:<token>") and the sign is the top
// bit of h. The vector is L2-normalized. Text without word tokens hashes as a
// single token.
class StubEmbeddingProvider : public EmbeddingProvider {
 public:
  explicit StubEmbeddingProvider(size_t dim = 64, uint64_t seed = 0);
  EmbeddingVector embed(std::string_view text) override;
  std::string id() const override;

 private:
  size_t dim_;
  uint64_t seed_;
};

// Disk cache keyed by sha256(text) for one inner provider.
class CachedEmbeddingProvider : public EmbeddingProvider {
 public:
  CachedEmbeddingProvider(std::shared_ptr<EmbeddingProvider> inner,
                          std::filesystem::path cache_path);
  EmbeddingVector embed(std::string_view text) override;
  std::string id() const override { return inner_->id(); }
  size_t hits() const { return hits_; }

 private:
  std::shared_ptr<EmbeddingProvider> inner_;
  std::filesystem::path path_;
  std::mutex mu_;
  std::map<std::string, EmbeddingVector> cache_;
  size_t hits_ = 0;
};

struct GatewayConfig {
  std::string backend = "stub";  // stub | http
  std::string gen_url;
  std::string emb_url;
  int timeout_ms = 30000;
  std::string qa_template = "plain-qa";
  std::filesystem::path templates_dir;
  int max_in_flight = 4;
  int max_retries = 3;
  int backoff_ms = 200;
  int max_output_tokens = 64;
  double temperature = 0.0;
  std::string embedder = "stub";  // stub | http
  size_t embedding_dim = 64;
  uint64_t embedding_seed = 0;

  // JSON keys mirror the field names. Environment variables GATEWAY_GEN_URL,
  // GATEWAY_EMB_URL and GATEWAY_TIMEOUT_MS override the file; setting a URL
  // switches the corresponding backend to http.
  static GatewayConfig from_json(const nlohmann::json& j);
  static GatewayConfig load(std::string_view spec);  // "stub" or a JSON file path
  void apply_env();
  nlohmann::json to_json() const;
};

class Gateway {
 public:
  Gateway(std::shared_ptr<GenerationBackend> backend, PromptTemplate qa_template,
          int max_in_flight = 4, int max_retries = 3, int backoff_ms = 200);

  static std::shared_ptr<Gateway> from_config(const GatewayConfig& cfg);

  // Errors: EndpointUnreachable, Timeout, MalformedResponse; each carries the
  // rendered prompt in Error::detail().
  GenerationResponse generate(const GenerationRequest& req);

  // Renders "[SITUATION] <situation> [QUERY] <keyword>" and returns the answer.
  // With an entity and an emotion/motivation dimension, asks the probing
  // question with the situation as context and returns the templated sentence.
  std::string generate_elaboration(std::string_view situation, Dimension d,
                                   const std::optional<probe::Entity>& entity = std::nullopt);

  // All four dimensions generated independently, empty answers omitted.
  SceneElaboration elaborate(std::string_view situation);

  // Probing questions answered one by one, then assembled.
  SceneElaboration probe(std::string_view situation, const probe::EntityExtractor& extractor,
                         std::string_view id = {});

  // Decoding settings applied to every request, overriding the request's own.
  void set_decoding(int max_output_tokens, double temperature);

  const PromptTemplate& qa_template() const { return template_; }
  std::string id() const { return backend_->id() + "/" + template_.name(); }

 private:
  GenerationResponse call(const std::string& prompt, const GenerationRequest& req);

  std::shared_ptr<GenerationBackend> backend_;
  PromptTemplate template_;
  PromptTemplate raw_template_;
  std::counting_semaphore<1024> slots_;
  int max_retries_;
  int backoff_ms_;
  std::optional<std::pair<int, double>> decoding_;
};

std::shared_ptr<EmbeddingProvider> make_embedder(const GatewayConfig& cfg);

}  // namespace sceneqa::gateway
