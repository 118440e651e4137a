#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "sceneqa/scene_model.hpp"

namespace sceneqa::corpus {

enum class SourceKind { kStoryCommonsense, kSocialChemistry, kMoralStories };

// CLI / JSONL names: story_cs, social_chem, moral_stories.
std::string_view to_string(SourceKind kind);
SourceKind source_kind_from_string(std::string_view name);

// Literal marker used by Story Commonsense for "no significant emotion/motivation".
inline constexpr std::string_view kNoneAnnotation = "[none]";

struct SourceRecord {
  SourceKind source = SourceKind::kSocialChemistry;
  std::string id;
  std::map<std::string, std::string> fields;
};

struct TrainingRecord {
  std::string prompt;
  std::string target;
  Dimension dimension = Dimension::kRuleOfThumb;
  SourceKind source = SourceKind::kSocialChemistry;
  std::string source_id;

  bool operator==(const TrainingRecord&) const = default;
};

// "[SITUATION] <situation> [QUERY] <keyword>". Throws InvalidArgument if the
// situation is empty or itself contains a prompt marker.
std::string make_prompt(std::string_view situation, Dimension d);

nlohmann::json to_json(const TrainingRecord& r);
TrainingRecord training_record_from_json(const nlohmann::json& j);

std::vector<TrainingRecord> build_story_commonsense(const std::vector<SourceRecord>& records);
std::vector<TrainingRecord> build_social_chemistry(const std::vector<SourceRecord>& records);
std::vector<TrainingRecord> build_moral_stories(const std::vector<SourceRecord>& records);
std::vector<TrainingRecord> build(SourceKind kind, const std::vector<SourceRecord>& records);

using DimensionGroups = std::map<Dimension, std::vector<TrainingRecord>>;

DimensionGroups group_by_dimension(const std::vector<TrainingRecord>& records);

// Shuffles each group with one generator seeded by `seed` (groups visited in
// serialization order), then emits round-robin over the non-exhausted groups.
std::vector<TrainingRecord> interleave(DimensionGroups groups, uint64_t seed);

struct Split {
  DimensionGroups train;
  DimensionGroups dev;
};

// Per-dimension seeded shuffle; the first round(ratio * n) records of each
// group go to train, the rest to dev.
Split split_stratified(DimensionGroups groups, double train_ratio, uint64_t seed);

size_t emit_training_file(const std::vector<TrainingRecord>& records,
                          const std::filesystem::path& path);
std::vector<TrainingRecord> read_training_file(const std::filesystem::path& path);

// Column mapping for one source file. JSON config:
//   {"format": "jsonl"|"csv"|"tsv", "header": true, "id": "<column>",
//    "fields": {"situation": "<column>", "rot": "<column>", ...}}
// Columns are names (header row or JSON keys) or, for headerless
// delimited files, 0-based indices written as strings.
struct ColumnMapping {
  enum class Format { kJsonl, kCsv, kTsv };
  Format format = Format::kJsonl;
  bool header = true;
  std::string id_column;
  std::map<std::string, std::string> fields;
};

ColumnMapping load_mapping(const std::filesystem::path& path);
ColumnMapping mapping_from_json(const nlohmann::json& j);

std::vector<SourceRecord> read_source_records(const std::filesystem::path& path, SourceKind kind,
                                              const ColumnMapping& mapping);

}  // namespace sceneqa::corpus
