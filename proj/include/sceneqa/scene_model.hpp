#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace sceneqa {

// The four conceptual dimensions of a scene elaboration. Enumerator order is
// the serialization order.
enum class Dimension { kRuleOfThumb, kEmotion, kMotivation, kConsequence };

inline constexpr std::array<Dimension, 4> kAllDimensions = {
    Dimension::kRuleOfThumb, Dimension::kEmotion, Dimension::kMotivation,
    Dimension::kConsequence};

// Bracketed tag used in serialized elaborations, e.g. "[social norm]".
std::string_view serialization_tag(Dimension d);
// Keyword used after "[QUERY]" in training prompts, e.g. "social norm".
std::string_view query_keyword(Dimension d);
// Short machine key used in JSON records: rot|emotion|motivation|consequence.
std::string_view json_key(Dimension d);

std::optional<Dimension> dimension_from_keyword(std::string_view keyword);
std::optional<Dimension> dimension_from_json_key(std::string_view key);

// Parses a comma-separated list of json keys ("rot,emotion"). Throws
// InvalidArgument on unknown names.
std::vector<Dimension> parse_dimension_list(std::string_view csv);

class SceneElaboration {
 public:
  SceneElaboration() = default;

  // Text is trimmed; empty text is rejected with InvalidArgument.
  void set(Dimension d, std::string_view text);
  void erase(Dimension d) { components_.erase(d); }

  const std::string* get(Dimension d) const;
  bool has(Dimension d) const { return components_.count(d) != 0; }
  bool empty() const { return components_.empty(); }
  size_t size() const { return components_.size(); }
  const std::map<Dimension, std::string>& components() const { return components_; }

  // Copy restricted to the given dimensions.
  SceneElaboration filtered(const std::vector<Dimension>& keep) const;

  bool operator==(const SceneElaboration&) const = default;

 private:
  std::map<Dimension, std::string> components_;
};

// "<entity>'s emotion is <answer>." / "<entity>'s motivation is <answer>.",
// adding a terminal period only when the answer lacks one. Throws
// WrongDimension for RuleOfThumb and Consequence.
std::string entity_sentence(std::string_view entity, Dimension d, std::string_view answer);

std::string serialize_se(const SceneElaboration& se);
SceneElaboration parse_se(std::string_view text);

nlohmann::json se_to_json(const SceneElaboration& se);
SceneElaboration se_from_json(const nlohmann::json& j);

struct SituatedExample {
  std::string id;
  std::string situation;
  std::string question;
  std::vector<std::string> options;
  int gold_index = 0;
  std::string dataset_tag;
};

// Throws InvalidArgument unless 2 <= |options| <= 5 and gold is in range.
void validate(const SituatedExample& ex);

enum class ElaborationSource { kProbe, kDream, kManual };

std::string_view to_string(ElaborationSource s);
ElaborationSource elaboration_source_from_string(std::string_view s);

// One line of a stored-elaboration JSONL file.
struct StoredElaboration {
  std::string id;
  std::string situation;
  SceneElaboration se;
  ElaborationSource source = ElaborationSource::kManual;

  bool operator==(const StoredElaboration&) const = default;
};

nlohmann::json to_json(const StoredElaboration& rec);
StoredElaboration stored_elaboration_from_json(const nlohmann::json& j);

}  // namespace sceneqa
