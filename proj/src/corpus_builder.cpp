#include "sceneqa/corpus_builder.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <tuple>

#include "sceneqa/error.hpp"
#include "sceneqa/io.hpp"
#include "sceneqa/text.hpp"

namespace sceneqa::corpus {

namespace {

constexpr std::string_view kSituationMarker = "[SITUATION]";
constexpr std::string_view kQueryMarker = "[QUERY]";

const std::string& require(const SourceRecord& rec, const std::string& field) {
  auto it = rec.fields.find(field);
  if (it == rec.fields.end() || text::trim(it->second).empty()) {
    throw Error(ErrorCode::kMissingField, std::string(to_string(rec.source)) + " record '" +
                                              rec.id + "' is missing field '" + field + "'");
  }
  return it->second;
}

std::string optional_field(const SourceRecord& rec, const std::string& field) {
  auto it = rec.fields.find(field);
  return it == rec.fields.end() ? std::string() : text::squash_whitespace(it->second);
}

void require_kind(const SourceRecord& rec, SourceKind kind) {
  if (rec.source != kind) {
    throw Error(ErrorCode::kInvalidArgument, "record '" + rec.id + "' is from " +
                                                 std::string(to_string(rec.source)) +
                                                 ", expected " + std::string(to_string(kind)));
  }
}

}  // namespace

std::string_view to_string(SourceKind kind) {
  switch (kind) {
    case SourceKind::kStoryCommonsense: return "story_cs";
    case SourceKind::kSocialChemistry: return "social_chem";
    case SourceKind::kMoralStories: return "moral_stories";
  }
  return "";
}

SourceKind source_kind_from_string(std::string_view name) {
  if (name == "story_cs") return SourceKind::kStoryCommonsense;
  if (name == "social_chem") return SourceKind::kSocialChemistry;
  if (name == "moral_stories") return SourceKind::kMoralStories;
  throw Error(ErrorCode::kInvalidArgument, "unknown source '" + std::string(name) + "'");
}

std::string make_prompt(std::string_view situation, Dimension d) {
  auto s = text::squash_whitespace(situation);
  if (s.empty()) throw Error(ErrorCode::kInvalidArgument, "empty situation");
  if (s.find(kSituationMarker) != std::string::npos || s.find(kQueryMarker) != std::string::npos) {
    throw Error(ErrorCode::kInvalidArgument, "situation contains a prompt marker: " + s);
  }
  std::string prompt(kSituationMarker);
  prompt += ' ';
  prompt += s;
  prompt += ' ';
  prompt += kQueryMarker;
  prompt += ' ';
  prompt += query_keyword(d);
  return prompt;
}

nlohmann::json to_json(const TrainingRecord& r) {
  return {{"prompt", r.prompt},
          {"target", r.target},
          {"dimension", std::string(json_key(r.dimension))},
          {"source", std::string(to_string(r.source))},
          {"source_id", r.source_id}};
}

TrainingRecord training_record_from_json(const nlohmann::json& j) {
  TrainingRecord r;
  try {
    r.prompt = j.at("prompt").get<std::string>();
    r.target = j.at("target").get<std::string>();
    auto dim = dimension_from_json_key(j.at("dimension").get<std::string>());
    if (!dim) throw Error(ErrorCode::kSchemaError, "unknown dimension in training record");
    r.dimension = *dim;
    r.source = source_kind_from_string(j.at("source").get<std::string>());
    r.source_id = j.at("source_id").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kSchemaError, std::string("training record: ") + e.what());
  }
  return r;
}

std::vector<TrainingRecord> build_story_commonsense(const std::vector<SourceRecord>& records) {
  std::vector<TrainingRecord> out;
  // One record per distinct annotation; the source repeats items per annotator.
  std::set<std::tuple<std::string, std::string, Dimension, std::string>> seen;
  for (const auto& rec : records) {
    require_kind(rec, SourceKind::kStoryCommonsense);
    auto sentence = text::squash_whitespace(require(rec, "sentence"));
    auto character = text::squash_whitespace(require(rec, "character"));
    auto emotion = optional_field(rec, "emotion");
    auto motivation = optional_field(rec, "motivation");
    if (emotion.empty() && motivation.empty()) {
      throw Error(ErrorCode::kMissingField, "story_cs record '" + rec.id +
                                                "' has neither an emotion nor a motivation");
    }
    for (auto [dim, answer] : {std::pair{Dimension::kEmotion, emotion},
                               std::pair{Dimension::kMotivation, motivation}}) {
      if (answer.empty()) continue;
      std::string target = answer == kNoneAnnotation ? std::string("none")
                                                     : entity_sentence(character, dim, answer);
      if (!seen.insert({sentence, character, dim, target}).second) continue;
      out.push_back({make_prompt(sentence, dim), std::move(target), dim,
                     SourceKind::kStoryCommonsense, rec.id});
    }
  }
  return out;
}

std::vector<TrainingRecord> build_social_chemistry(const std::vector<SourceRecord>& records) {
  std::vector<TrainingRecord> out;
  out.reserve(records.size());
  for (const auto& rec : records) {
    require_kind(rec, SourceKind::kSocialChemistry);
    const auto& situation = require(rec, "situation");
    auto rot = text::squash_whitespace(require(rec, "rot"));
    out.push_back({make_prompt(situation, Dimension::kRuleOfThumb), std::move(rot),
                   Dimension::kRuleOfThumb, SourceKind::kSocialChemistry, rec.id});
  }
  return out;
}

std::vector<TrainingRecord> build_moral_stories(const std::vector<SourceRecord>& records) {
  std::vector<TrainingRecord> out;
  out.reserve(records.size() * 2);
  for (const auto& rec : records) {
    require_kind(rec, SourceKind::kMoralStories);
    auto situation = text::squash_whitespace(require(rec, "situation"));
    for (std::string_view branch : {"moral", "immoral"}) {
      std::string b(branch);
      auto action = text::squash_whitespace(require(rec, b + "_action"));
      auto consequence = text::squash_whitespace(require(rec, b + "_consequence"));
      out.push_back({make_prompt(situation + " " + action, Dimension::kConsequence),
                     std::move(consequence), Dimension::kConsequence,
                     SourceKind::kMoralStories, rec.id + "/" + b});
    }
  }
  return out;
}

std::vector<TrainingRecord> build(SourceKind kind, const std::vector<SourceRecord>& records) {
  switch (kind) {
    case SourceKind::kStoryCommonsense: return build_story_commonsense(records);
    case SourceKind::kSocialChemistry: return build_social_chemistry(records);
    case SourceKind::kMoralStories: return build_moral_stories(records);
  }
  return {};
}

DimensionGroups group_by_dimension(const std::vector<TrainingRecord>& records) {
  DimensionGroups groups;
  for (const auto& r : records) groups[r.dimension].push_back(r);
  return groups;
}

std::vector<TrainingRecord> interleave(DimensionGroups groups, uint64_t seed) {
  io::SeededShuffler shuffler(seed);
  size_t total = 0;
  for (Dimension d : kAllDimensions) {
    auto it = groups.find(d);
    if (it == groups.end()) continue;
    shuffler.shuffle(it->second);
    total += it->second.size();
  }
  std::vector<TrainingRecord> out;
  out.reserve(total);
  for (size_t round = 0; out.size() < total; ++round) {
    for (Dimension d : kAllDimensions) {
      auto it = groups.find(d);
      if (it != groups.end() && round < it->second.size()) {
        out.push_back(std::move(it->second[round]));
      }
    }
  }
  return out;
}

Split split_stratified(DimensionGroups groups, double train_ratio, uint64_t seed) {
  if (!(train_ratio >= 0.0 && train_ratio <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "split ratio must be within [0, 1]");
  }
  io::SeededShuffler shuffler(seed);
  Split split;
  for (Dimension d : kAllDimensions) {
    auto it = groups.find(d);
    if (it == groups.end() || it->second.empty()) continue;
    auto& group = it->second;
    shuffler.shuffle(group);
    auto n_train = static_cast<size_t>(std::llround(train_ratio * static_cast<double>(group.size())));
    auto& train = split.train[d];
    auto& dev = split.dev[d];
    train.assign(std::make_move_iterator(group.begin()),
                 std::make_move_iterator(group.begin() + static_cast<std::ptrdiff_t>(n_train)));
    dev.assign(std::make_move_iterator(group.begin() + static_cast<std::ptrdiff_t>(n_train)),
               std::make_move_iterator(group.end()));
  }
  return split;
}

size_t emit_training_file(const std::vector<TrainingRecord>& records,
                          const std::filesystem::path& path) {
  std::vector<nlohmann::json> rows;
  rows.reserve(records.size());
  for (const auto& r : records) rows.push_back(to_json(r));
  io::write_jsonl(path, rows);
  return rows.size();
}

std::vector<TrainingRecord> read_training_file(const std::filesystem::path& path) {
  std::vector<TrainingRecord> out;
  io::for_each_jsonl(path, [&](const nlohmann::json& row, size_t line) {
    try {
      out.push_back(training_record_from_json(row));
    } catch (const Error& e) {
      throw Error(ErrorCode::kSchemaError,
                  path.string() + ":" + std::to_string(line) + ": " + e.what());
    }
  });
  return out;
}

ColumnMapping mapping_from_json(const nlohmann::json& j) {
  ColumnMapping m;
  try {
    auto format = j.value("format", std::string("jsonl"));
    if (format == "jsonl") {
      m.format = ColumnMapping::Format::kJsonl;
    } else if (format == "csv") {
      m.format = ColumnMapping::Format::kCsv;
    } else if (format == "tsv") {
      m.format = ColumnMapping::Format::kTsv;
    } else {
      throw Error(ErrorCode::kConfigError, "unknown source format '" + format + "'");
    }
    m.header = j.value("header", true);
    m.id_column = j.value("id", std::string());
    for (const auto& [field, column] : j.at("fields").items()) {
      m.fields[field] = column.get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfigError, std::string("column mapping: ") + e.what());
  }
  return m;
}

ColumnMapping load_mapping(const std::filesystem::path& path) {
  try {
    return mapping_from_json(nlohmann::json::parse(io::read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kConfigError, path.string() + ": " + e.what());
  }
}

namespace {

std::string json_scalar(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_null()) return {};
  return v.dump();
}

std::vector<SourceRecord> read_jsonl_source(const std::filesystem::path& path, SourceKind kind,
                                            const ColumnMapping& m) {
  std::vector<SourceRecord> out;
  io::for_each_jsonl(path, [&](const nlohmann::json& row, size_t line) {
    SourceRecord rec;
    rec.source = kind;
    rec.id = m.id_column.empty() || !row.contains(m.id_column)
                 ? std::to_string(line)
                 : json_scalar(row.at(m.id_column));
    for (const auto& [field, column] : m.fields) {
      if (row.contains(column)) rec.fields[field] = json_scalar(row.at(column));
    }
    out.push_back(std::move(rec));
  });
  return out;
}

std::vector<SourceRecord> read_delimited_source(const std::filesystem::path& path,
                                                SourceKind kind, const ColumnMapping& m) {
  char sep = m.format == ColumnMapping::Format::kTsv ? '\t' : ',';
  auto rows = io::parse_delimited(io::read_file(path), sep);
  std::map<std::string, size_t> index;
  size_t first = 0;
  if (m.header) {
    if (rows.empty()) throw Error(ErrorCode::kSchemaError, path.string() + ": missing header");
    for (size_t i = 0; i < rows[0].size(); ++i) index[text::trim(rows[0][i])] = i;
    first = 1;
  }
  auto resolve = [&](const std::string& column) -> size_t {
    if (m.header) {
      auto it = index.find(column);
      if (it == index.end()) {
        throw Error(ErrorCode::kSchemaError, path.string() + ": no column '" + column + "'");
      }
      return it->second;
    }
    try {
      return static_cast<size_t>(std::stoul(column));
    } catch (const std::exception&) {
      throw Error(ErrorCode::kConfigError,
                  "headerless files need numeric column indices, got '" + column + "'");
    }
  };
  std::map<std::string, size_t> field_cols;
  for (const auto& [field, column] : m.fields) field_cols[field] = resolve(column);
  std::optional<size_t> id_col;
  if (!m.id_column.empty()) id_col = resolve(m.id_column);

  std::vector<SourceRecord> out;
  for (size_t r = first; r < rows.size(); ++r) {
    const auto& row = rows[r];
    SourceRecord rec;
    rec.source = kind;
    rec.id = id_col && *id_col < row.size() ? row[*id_col] : std::to_string(r + 1);
    for (const auto& [field, col] : field_cols) {
      if (col < row.size()) rec.fields[field] = row[col];
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace

std::vector<SourceRecord> read_source_records(const std::filesystem::path& path, SourceKind kind,
                                              const ColumnMapping& mapping) {
  if (mapping.format == ColumnMapping::Format::kJsonl) {
    return read_jsonl_source(path, kind, mapping);
  }
  return read_delimited_source(path, kind, mapping);
}

}  // namespace sceneqa::corpus
