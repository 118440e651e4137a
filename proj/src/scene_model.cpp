#include "sceneqa/scene_model.hpp"

#include <algorithm>

#include "sceneqa/error.hpp"
#include "sceneqa/text.hpp"

namespace sceneqa {

namespace {

struct DimensionInfo {
  Dimension dim;
  std::string_view tag;
  std::string_view keyword;
  std::string_view key;
};

constexpr std::array<DimensionInfo, 4> kTable = {{
    {Dimension::kRuleOfThumb, "[social norm]", "social norm", "rot"},
    {Dimension::kEmotion, "[emotion]", "emotion", "emotion"},
    {Dimension::kMotivation, "[motivation]", "motivation", "motivation"},
    {Dimension::kConsequence, "[likely consequence]", "likely consequence", "consequence"},
}};

const DimensionInfo& info(Dimension d) { return kTable[static_cast<size_t>(d)]; }

// Earliest known tag at or after `from`. Content never holds a known tag, so
// every occurrence is a delimiter.
struct TagHit {
  size_t pos = std::string_view::npos;
  const DimensionInfo* info = nullptr;
};

TagHit find_tag(std::string_view text, size_t from) {
  TagHit best;
  for (const auto& entry : kTable) {
    size_t pos = text.find(entry.tag, from);
    if (pos < best.pos) best = {pos, &entry};
  }
  return best;
}

bool contains_known_tag(std::string_view text) {
  for (const auto& entry : kTable) {
    if (text.find(entry.tag) != std::string_view::npos) return true;
  }
  return false;
}

}  // namespace

std::string_view serialization_tag(Dimension d) { return info(d).tag; }
std::string_view query_keyword(Dimension d) { return info(d).keyword; }
std::string_view json_key(Dimension d) { return info(d).key; }

std::optional<Dimension> dimension_from_keyword(std::string_view keyword) {
  for (const auto& entry : kTable) {
    if (entry.keyword == keyword) return entry.dim;
  }
  return std::nullopt;
}

std::optional<Dimension> dimension_from_json_key(std::string_view key) {
  for (const auto& entry : kTable) {
    if (entry.key == key) return entry.dim;
  }
  return std::nullopt;
}

std::vector<Dimension> parse_dimension_list(std::string_view csv) {
  std::vector<Dimension> dims;
  if (text::trim(csv).empty()) return dims;
  for (const auto& part : text::split(csv, ',')) {
    auto name = text::trim(part);
    auto d = dimension_from_json_key(name);
    if (!d) throw Error(ErrorCode::kInvalidArgument, "unknown component '" + name + "'");
    if (std::find(dims.begin(), dims.end(), *d) == dims.end()) dims.push_back(*d);
  }
  return dims;
}

void SceneElaboration::set(Dimension d, std::string_view raw) {
  auto value = text::trim(raw);
  if (value.empty()) {
    throw Error(ErrorCode::kInvalidArgument,
                "empty text for component " + std::string(json_key(d)));
  }
  if (contains_known_tag(value)) {
    throw Error(ErrorCode::kInvalidArgument,
                "component text may not contain a dimension tag: " + value);
  }
  components_[d] = std::move(value);
}

const std::string* SceneElaboration::get(Dimension d) const {
  auto it = components_.find(d);
  return it == components_.end() ? nullptr : &it->second;
}

SceneElaboration SceneElaboration::filtered(const std::vector<Dimension>& keep) const {
  SceneElaboration out;
  for (const auto& [d, t] : components_) {
    if (std::find(keep.begin(), keep.end(), d) != keep.end()) out.components_[d] = t;
  }
  return out;
}

std::string entity_sentence(std::string_view entity, Dimension d, std::string_view answer) {
  if (d != Dimension::kEmotion && d != Dimension::kMotivation) {
    throw Error(ErrorCode::kWrongDimension,
                "entity templates exist only for emotion and motivation, not " +
                    std::string(json_key(d)));
  }
  std::string out = text::trim(entity);
  out += "'s ";
  out += query_keyword(d);
  out += " is ";
  out += text::trim(answer);
  if (!text::ends_with_terminal_punct(out)) out.push_back('.');
  return out;
}

std::string serialize_se(const SceneElaboration& se) {
  std::string out;
  for (Dimension d : kAllDimensions) {
    const std::string* t = se.get(d);
    if (!t) continue;
    if (!out.empty()) out.push_back(' ');
    out += serialization_tag(d);
    out.push_back(' ');
    out += *t;
  }
  return out;
}

SceneElaboration parse_se(std::string_view input) {
  SceneElaboration se;
  std::string owned = text::trim(input);
  std::string_view s = owned;
  if (s.empty()) return se;

  TagHit hit = find_tag(s, 0);
  if (hit.pos != 0) {
    if (s.front() == '[') {
      auto close = s.find(']');
      std::string tag(s.substr(0, close == std::string_view::npos ? s.size() : close + 1));
      throw Error(ErrorCode::kUnknownTag, "unknown tag " + tag);
    }
    throw Error(ErrorCode::kMalformedSegment, "text does not start with a dimension tag");
  }
  while (hit.pos != std::string_view::npos) {
    size_t body = hit.pos + hit.info->tag.size();
    TagHit next = find_tag(s, body);
    size_t end = next.pos == std::string_view::npos ? s.size() : next.pos;
    if (body < s.size() && s[body] != ' ') {
      throw Error(ErrorCode::kMalformedSegment,
                  "tag " + std::string(hit.info->tag) + " must be followed by a space");
    }
    auto content = text::trim(s.substr(body, end - body));
    if (content.empty()) {
      throw Error(ErrorCode::kMalformedSegment,
                  "empty content after " + std::string(hit.info->tag));
    }
    if (se.has(hit.info->dim)) {
      throw Error(ErrorCode::kDuplicateTag, "duplicate tag " + std::string(hit.info->tag));
    }
    se.set(hit.info->dim, content);
    hit = next;
  }
  return se;
}

nlohmann::json se_to_json(const SceneElaboration& se) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [d, t] : se.components()) j[std::string(json_key(d))] = t;
  return j;
}

SceneElaboration se_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::kSchemaError, "\"se\" must be an object");
  SceneElaboration se;
  for (const auto& [key, value] : j.items()) {
    auto d = dimension_from_json_key(key);
    if (!d) throw Error(ErrorCode::kUnknownTag, "unknown component key '" + key + "'");
    if (value.is_null()) continue;
    if (!value.is_string()) {
      throw Error(ErrorCode::kSchemaError, "component '" + key + "' must be a string");
    }
    auto t = text::trim(value.get<std::string>());
    if (!t.empty()) se.set(*d, t);
  }
  return se;
}

void validate(const SituatedExample& ex) {
  if (ex.options.size() < 2 || ex.options.size() > 5) {
    throw Error(ErrorCode::kInvalidArgument,
                "example " + ex.id + " has " + std::to_string(ex.options.size()) + " options");
  }
  if (ex.gold_index < 0 || ex.gold_index >= static_cast<int>(ex.options.size())) {
    throw Error(ErrorCode::kInvalidArgument, "example " + ex.id + " gold index out of range");
  }
}

std::string_view to_string(ElaborationSource s) {
  switch (s) {
    case ElaborationSource::kProbe: return "probe";
    case ElaborationSource::kDream: return "dream";
    case ElaborationSource::kManual: return "manual";
  }
  return "manual";
}

ElaborationSource elaboration_source_from_string(std::string_view s) {
  if (s == "probe") return ElaborationSource::kProbe;
  if (s == "dream") return ElaborationSource::kDream;
  if (s == "manual") return ElaborationSource::kManual;
  throw Error(ErrorCode::kSchemaError, "unknown elaboration source '" + std::string(s) + "'");
}

nlohmann::json to_json(const StoredElaboration& rec) {
  return {{"id", rec.id},
          {"situation", rec.situation},
          {"se", se_to_json(rec.se)},
          {"source", std::string(to_string(rec.source))}};
}

StoredElaboration stored_elaboration_from_json(const nlohmann::json& j) {
  StoredElaboration rec;
  try {
    rec.id = j.at("id").get<std::string>();
    rec.situation = j.at("situation").get<std::string>();
    rec.se = se_from_json(j.at("se"));
    rec.source = elaboration_source_from_string(j.value("source", std::string("manual")));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kSchemaError, std::string("stored elaboration: ") + e.what());
  }
  return rec;
}

}  // namespace sceneqa
