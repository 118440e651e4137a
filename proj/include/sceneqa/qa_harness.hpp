#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "sceneqa/entity_probe.hpp"
#include "sceneqa/model_gateway.hpp"
#include "sceneqa/scene_model.hpp"

namespace sceneqa::qa {

enum class DatasetTag { kEthicsCsTest, kEthicsCsTestHard, kEthicsCsTrain, kCodahAll, kSocialIqaTest };

std::string_view to_string(DatasetTag tag);
DatasetTag dataset_tag_from_string(std::string_view name);
size_t expected_option_count(DatasetTag tag);
bool is_ethics(DatasetTag tag);

inline constexpr std::string_view kEthicsWrong = "wrong";
inline constexpr std::string_view kEthicsNotWrong = "not wrong";
inline constexpr std::string_view kEthicsQuestion = "Reaction: this is";

struct BenchmarkConfig {
  DatasetTag tag = DatasetTag::kSocialIqaTest;
  // Several files are concatenated in order (CODAH train+dev+test).
  std::vector<std::filesystem::path> paths;
  // Drops ETHICS rows whose is_short column is false (the long AITA posts).
  bool exclude_long_context = false;
  // Social IQA keeps labels in a separate one-per-line file (1-based).
  std::optional<std::filesystem::path> labels_path;
};

// Adapters:
//   ETHICS   CSV with header label,input[,is_short,...]; options are
//            ["wrong", "not wrong"], label 1 -> gold 0, label 0 -> gold 1.
//   CODAH    headerless TSV [category,] stem, 4 completions, 0-based answer.
//   SocialIQA JSONL {context, question, answerA..C[, label]} with 1-based labels.
// Ids are "<tag>:<n>", n counting rows across files before filtering.
std::vector<SituatedExample> load_benchmark(const BenchmarkConfig& cfg);

// question = situation + " " + question text (or the situation alone);
// context = serialize_se(se) when that is non-empty.
gateway::GenerationRequest attach_context(const SituatedExample& ex,
                                          const std::optional<SceneElaboration>& se);

// Lowercase, drop an "(a)"/"a)" option-letter prefix, strip punctuation,
// collapse whitespace.
std::string normalize_answer(std::string_view s);
double token_f1(std::string_view prediction, std::string_view reference);

// Exact normalized match first, then a bare option letter such as "(B)",
// then the best token F1; ties go to the lowest index.
size_t select_answer(std::string_view model_output, const std::vector<std::string>& options);

class SeProvider {
 public:
  virtual ~SeProvider() = default;
  virtual std::optional<SceneElaboration> get(const SituatedExample& ex) = 0;
  virtual std::string id() const = 0;
};

// Stored-elaboration JSONL, looked up by example id and then by situation.
class StoredSeProvider : public SeProvider {
 public:
  explicit StoredSeProvider(const std::filesystem::path& path);
  std::optional<SceneElaboration> get(const SituatedExample& ex) override;
  std::string id() const override { return id_; }

 private:
  std::map<std::string, SceneElaboration, std::less<>> by_id_;
  std::map<std::string, SceneElaboration, std::less<>> by_situation_;
  std::string id_;
};

// Generates elaborations from the situation field through a gateway.
class GatewaySeProvider : public SeProvider {
 public:
  enum class Mode { kDream, kProbe };
  GatewaySeProvider(std::shared_ptr<gateway::Gateway> gw, Mode mode,
                    std::shared_ptr<probe::EntityExtractor> extractor = nullptr);
  std::optional<SceneElaboration> get(const SituatedExample& ex) override;
  std::string id() const override;

 private:
  std::shared_ptr<gateway::Gateway> gateway_;
  Mode mode_;
  std::shared_ptr<probe::EntityExtractor> extractor_;
};

// Disk cache keyed by (sha256(situation), inner provider id).
class CachingSeProvider : public SeProvider {
 public:
  CachingSeProvider(std::shared_ptr<SeProvider> inner, std::filesystem::path cache_path);
  std::optional<SceneElaboration> get(const SituatedExample& ex) override;
  std::string id() const override { return inner_->id(); }

 private:
  std::shared_ptr<SeProvider> inner_;
  std::filesystem::path path_;
  std::mutex mu_;
  std::map<std::string, SceneElaboration> cache_;
};

struct AuditRecord {
  std::string id;
  std::string dataset;
  std::optional<int> chosen;  // absent when the example failed
  int gold = 0;
  bool correct = false;
  std::optional<std::string> se;
  std::optional<std::vector<std::string>> components;
  std::optional<std::string> error;

  bool operator==(const AuditRecord&) const = default;
};

nlohmann::json to_json(const AuditRecord& r);
AuditRecord audit_record_from_json(const nlohmann::json& j);

struct RunResult {
  std::vector<AuditRecord> records;
  double accuracy = 0.0;
  size_t n = 0;
  size_t n_correct = 0;
  size_t n_failed = 0;
};

RunResult summarize(std::vector<AuditRecord> records);

struct EvaluateOptions {
  SeProvider* se_source = nullptr;
  std::optional<std::vector<Dimension>> components;
  int jobs = 4;
};

// Answers every example. Failures are recorded per example and counted as
// incorrect. Records keep the loaded order regardless of `jobs`.
RunResult evaluate(const std::vector<SituatedExample>& examples, gateway::Gateway& gw,
                   const EvaluateOptions& opts = {});
RunResult evaluate(const BenchmarkConfig& cfg, gateway::Gateway& gw,
                   const EvaluateOptions& opts = {});

void write_audit(const std::filesystem::path& path, const RunResult& result);
std::vector<AuditRecord> read_audit(const std::filesystem::path& path);

}  // namespace sceneqa::qa
