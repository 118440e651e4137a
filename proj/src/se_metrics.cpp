#include "sceneqa/se_metrics.hpp"

#include <algorithm>
#include <set>

#include "sceneqa/error.hpp"
#include "sceneqa/io.hpp"

namespace sceneqa::metrics {

using nlohmann::json;

bool is_component_score(double v) { return v == 0.0 || v == 0.5 || v == 1.0; }

bool is_consistency_score(double v) {
  return v == 0.0 || v == 0.25 || v == 0.5 || v == 0.75 || v == 1.0;
}

namespace {

std::map<Dimension, double> parse_component_scores(const json& j, const char* what,
                                                   const std::string& item) {
  if (!j.is_object()) {
    throw Error(ErrorCode::kValidationError, item + ": \"" + what + "\" must be an object");
  }
  std::map<Dimension, double> out;
  for (const auto& [key, value] : j.items()) {
    auto d = dimension_from_json_key(key);
    if (!d) throw Error(ErrorCode::kValidationError, item + ": unknown component '" + key + "'");
    if (!value.is_number()) {
      throw Error(ErrorCode::kValidationError, item + ": " + what + "." + key + " is not a number");
    }
    double v = value.get<double>();
    if (!is_component_score(v)) {
      throw Error(ErrorCode::kValidationError,
                  item + ": " + what + "." + key + " = " + value.dump() + " is not 0, 0.5 or 1");
    }
    out[*d] = v;
  }
  return out;
}

template <typename Map>
std::set<Dimension> keys_of(const Map& m) {
  std::set<Dimension> out;
  for (const auto& [k, v] : m) out.insert(k);
  return out;
}

}  // namespace

AnnotationRecord annotation_from_json(const json& j) {
  AnnotationRecord r;
  try {
    r.item_id = j.at("item_id").get<std::string>();
    r.worker_id = j.at("worker_id").get<std::string>();
    r.system = j.at("system").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kValidationError, std::string("annotation: ") + e.what());
  }
  if (r.system != "macaw_probe" && r.system != "dream") {
    throw Error(ErrorCode::kValidationError, r.item_id + ": unknown system '" + r.system + "'");
  }
  if (!j.contains("accuracy") || !j.contains("usefulness") || !j.contains("consistency")) {
    throw Error(ErrorCode::kValidationError,
                r.item_id + ": annotation needs accuracy, usefulness and consistency");
  }
  r.accuracy = parse_component_scores(j["accuracy"], "accuracy", r.item_id);
  r.usefulness = parse_component_scores(j["usefulness"], "usefulness", r.item_id);
  if (keys_of(r.accuracy) != keys_of(r.usefulness)) {
    throw Error(ErrorCode::kValidationError,
                r.item_id + ": accuracy and usefulness rate different components");
  }
  if (!j["consistency"].is_number() || !is_consistency_score(j["consistency"].get<double>())) {
    throw Error(ErrorCode::kValidationError,
                r.item_id + ": consistency " + j["consistency"].dump() + " is not a multiple of 0.25 in [0, 1]");
  }
  r.consistency = j["consistency"].get<double>();
  return r;
}

json to_json(const AnnotationRecord& r) {
  json acc = json::object();
  json use = json::object();
  for (const auto& [d, v] : r.accuracy) acc[std::string(json_key(d))] = v;
  for (const auto& [d, v] : r.usefulness) use[std::string(json_key(d))] = v;
  return {{"item_id", r.item_id},   {"worker_id", r.worker_id}, {"system", r.system},
          {"accuracy", acc},        {"usefulness", use},        {"consistency", r.consistency}};
}

std::vector<AnnotationRecord> read_annotations(const std::filesystem::path& path) {
  std::vector<AnnotationRecord> out;
  io::for_each_jsonl(path, [&](const json& row, size_t line) {
    try {
      out.push_back(annotation_from_json(row));
    } catch (const Error& e) {
      throw Error(e.code(), path.string() + ":" + std::to_string(line) + ": " + e.what());
    }
  });
  return out;
}

ItemScore aggregate_item(std::span<const AnnotationRecord> annotations) {
  if (annotations.empty()) throw Error(ErrorCode::kEmptyInput, "no annotations for item");
  const auto& first = annotations.front();
  const auto components = keys_of(first.accuracy);
  ItemScore s;
  s.item_id = first.item_id;
  s.system = first.system;
  s.n_workers = static_cast<int>(annotations.size());
  s.flagged = s.n_workers != kExpectedWorkers;

  double consistency = 0.0;
  for (const auto& a : annotations) {
    if (a.item_id != first.item_id || a.system != first.system) {
      throw Error(ErrorCode::kInvalidArgument, "annotations for different items were mixed");
    }
    if (keys_of(a.accuracy) != components) {
      throw Error(ErrorCode::kMixedComponentSets,
                  first.item_id + ": workers rated different component sets");
    }
    for (Dimension d : components) {
      s.component_accuracy[d] += a.accuracy.at(d);
      s.component_usefulness[d] += a.usefulness.at(d);
    }
    consistency += a.consistency;
  }
  const double workers = static_cast<double>(annotations.size());
  for (Dimension d : components) {
    s.component_accuracy[d] /= workers;
    s.component_usefulness[d] /= workers;
    s.accuracy += s.component_accuracy[d];
    s.usefulness += s.component_usefulness[d];
  }
  if (!components.empty()) {
    s.accuracy /= static_cast<double>(components.size());
    s.usefulness /= static_cast<double>(components.size());
  }
  s.consistency = consistency / workers;
  return s;
}

std::vector<ItemScore> aggregate_all(const std::vector<AnnotationRecord>& annotations) {
  std::map<std::pair<std::string, std::string>, std::vector<AnnotationRecord>> groups;
  for (const auto& a : annotations) groups[{a.system, a.item_id}].push_back(a);
  std::vector<ItemScore> out;
  out.reserve(groups.size());
  for (const auto& [key, group] : groups) out.push_back(aggregate_item(group));
  return out;
}

json to_json(const CorpusSummary& s) {
  return {{"system", s.system},
          {"n_items", s.n_items},
          {"n_flagged", s.n_flagged},
          {"accuracy_pct", s.accuracy_pct},
          {"usefulness_pct", s.usefulness_pct},
          {"consistency_pct", s.consistency_pct},
          {"frac_any_true", s.frac_any_true},
          {"frac_any_useful_given_true", s.frac_any_useful_given_true},
          {"frac_consistency_at_least_half", s.frac_consistency_at_least_half},
          {"frac_consistency_at_least_three_quarters", s.frac_consistency_at_least_three_quarters}};
}

CorpusSummary corpus_report(const std::vector<ItemScore>& scores, const std::string& system_tag) {
  CorpusSummary s;
  s.system = system_tag;
  size_t any_true = 0;
  size_t useful_given_true = 0;
  size_t cons_half = 0;
  size_t cons_three_quarters = 0;
  double acc = 0.0;
  double use = 0.0;
  double cons = 0.0;
  auto positive_max = [](const std::map<Dimension, double>& m) {
    return std::any_of(m.begin(), m.end(), [](const auto& kv) { return kv.second > 0.0; });
  };
  for (const auto& item : scores) {
    if (!system_tag.empty() && item.system != system_tag) continue;
    ++s.n_items;
    s.n_flagged += item.flagged ? 1 : 0;
    acc += item.accuracy;
    use += item.usefulness;
    cons += item.consistency;
    if (positive_max(item.component_accuracy)) {
      ++any_true;
      if (positive_max(item.component_usefulness)) ++useful_given_true;
    }
    if (item.consistency >= 0.5) ++cons_half;
    if (item.consistency >= 0.75) ++cons_three_quarters;
  }
  if (s.n_items == 0) {
    throw Error(ErrorCode::kEmptyInput, "no item scores for system '" + system_tag + "'");
  }
  const double n = static_cast<double>(s.n_items);
  s.accuracy_pct = 100.0 * acc / n;
  s.usefulness_pct = 100.0 * use / n;
  s.consistency_pct = 100.0 * cons / n;
  s.frac_any_true = static_cast<double>(any_true) / n;
  s.frac_any_useful_given_true =
      any_true == 0 ? 0.0 : static_cast<double>(useful_given_true) / static_cast<double>(any_true);
  s.frac_consistency_at_least_half = static_cast<double>(cons_half) / n;
  s.frac_consistency_at_least_three_quarters = static_cast<double>(cons_three_quarters) / n;
  return s;
}

json to_json(const PredictionChange& p) {
  return {{"n", p.n},
          {"wrong_to_correct", p.wrong_to_correct},
          {"correct_to_wrong", p.correct_to_wrong},
          {"wrong_to_wrong", p.wrong_to_wrong},
          {"correct_to_correct", p.correct_to_correct}};
}

PredictionChange prediction_change_report(const std::vector<qa::AuditRecord>& baseline,
                                          const std::vector<qa::AuditRecord>& with_se) {
  std::map<std::string, bool> before;
  for (const auto& r : baseline) {
    if (!before.emplace(r.id, r.correct).second) {
      throw Error(ErrorCode::kIdMismatch, "baseline audit repeats id " + r.id);
    }
  }
  if (with_se.size() != before.size()) {
    throw Error(ErrorCode::kIdMismatch, "audits cover different numbers of examples");
  }
  if (before.empty()) throw Error(ErrorCode::kEmptyInput, "empty audits");
  size_t cells[2][2] = {{0, 0}, {0, 0}};
  std::set<std::string> seen;
  for (const auto& r : with_se) {
    auto it = before.find(r.id);
    if (it == before.end()) throw Error(ErrorCode::kIdMismatch, "id " + r.id + " missing from baseline");
    if (!seen.insert(r.id).second) throw Error(ErrorCode::kIdMismatch, "with-SE audit repeats id " + r.id);
    ++cells[it->second ? 1 : 0][r.correct ? 1 : 0];
  }
  PredictionChange p;
  p.n = before.size();
  const double n = static_cast<double>(p.n);
  p.wrong_to_wrong = static_cast<double>(cells[0][0]) / n;
  p.wrong_to_correct = static_cast<double>(cells[0][1]) / n;
  p.correct_to_wrong = static_cast<double>(cells[1][0]) / n;
  p.correct_to_correct = static_cast<double>(cells[1][1]) / n;
  return p;
}

}  // namespace sceneqa::metrics
