#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "sceneqa/scene_model.hpp"

namespace sceneqa::probe {

inline constexpr std::string_view kFirstPersonSurface = "I (myself)";

struct Entity {
  std::string surface;
  bool is_person = true;
  bool is_first_person = false;

  bool operator==(const Entity&) const = default;
};

struct ProbeQuery {
  Dimension dimension = Dimension::kRuleOfThumb;
  std::optional<Entity> entity;  // set for emotion and motivation only
  std::string question;

  bool operator==(const ProbeQuery&) const = default;
};

nlohmann::json to_json(const ProbeQuery& q);

class EntityExtractor {
 public:
  virtual ~EntityExtractor() = default;
  // `id` lets sidecar-backed extractors look up precomputed annotations.
  virtual std::vector<Entity> extract(std::string_view id, std::string_view situation) const = 0;
};

struct LexiconConfig {
  std::set<std::string> role_nouns;
  // Capitalized words that never start an entity (determiners, pronouns,
  // sentence adverbs). Compared lowercase.
  std::set<std::string> non_entity_words;

  static LexiconConfig defaults();
  static LexiconConfig from_json(const nlohmann::json& j);
};

// First-person pronouns collapse to one "I (myself)" entity; role nouns from
// the lexicon and capitalized words outside the stop list become entities.
// Output is deduplicated case-insensitively and ordered by first mention.
class RuleBasedExtractor : public EntityExtractor {
 public:
  explicit RuleBasedExtractor(LexiconConfig lexicon = LexiconConfig::defaults());
  std::vector<Entity> extract(std::string_view id, std::string_view situation) const override;

 private:
  LexiconConfig lexicon_;
};

// Reads {"id", "entities": [{"surface", "person"}]} lines produced by an
// external NLP pipeline. Unknown ids yield no entities.
class SidecarExtractor : public EntityExtractor {
 public:
  explicit SidecarExtractor(const std::filesystem::path& path);
  std::vector<Entity> extract(std::string_view id, std::string_view situation) const override;

 private:
  std::map<std::string, std::vector<Entity>, std::less<>> entities_;
};

std::vector<Entity> extract_entities(std::string_view situation);

std::string motivation_question(std::string_view entity);
std::string emotion_question(std::string_view entity);
inline constexpr std::string_view kRuleOfThumbQuestion = "What is a rule of thumb relevant here?";
inline constexpr std::string_view kConsequenceQuestion = "What is likely to happen next?";

// Per entity a motivation then an emotion query, followed by the rule-of-thumb
// and consequence queries.
std::vector<ProbeQuery> generate_probe_queries(const std::vector<Entity>& entities);
std::vector<ProbeQuery> generate_probe_queries(std::string_view situation,
                                               const EntityExtractor& extractor,
                                               std::string_view id = {});
std::vector<ProbeQuery> generate_probe_queries(std::string_view situation);

std::string templatize_answer(const Entity& entity, Dimension d, std::string_view raw_answer);

SceneElaboration assemble_probed_se(const std::vector<std::pair<ProbeQuery, std::string>>& answers);

}  // namespace sceneqa::probe
