#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sceneqa/qa_harness.hpp"
#include "sceneqa/scene_model.hpp"

namespace sceneqa::metrics {

// Rater alphabets: components take 0 / 0.5 / 1, consistency takes i/4.
bool is_component_score(double v);
bool is_consistency_score(double v);

inline constexpr int kExpectedWorkers = 3;

struct AnnotationRecord {
  std::string item_id;
  std::string worker_id;
  std::string system;  // macaw_probe | dream
  std::map<Dimension, double> accuracy;
  std::map<Dimension, double> usefulness;
  double consistency = 0.0;
};

// Throws ValidationError for out-of-alphabet scores, unknown systems, or
// accuracy/usefulness maps that rate different components.
AnnotationRecord annotation_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AnnotationRecord& r);
std::vector<AnnotationRecord> read_annotations(const std::filesystem::path& path);

struct ItemScore {
  std::string item_id;
  std::string system;
  double accuracy = 0.0;
  double usefulness = 0.0;
  double consistency = 0.0;
  int n_workers = 0;
  bool flagged = false;  // worker count differs from kExpectedWorkers
  std::map<Dimension, double> component_accuracy;    // worker means
  std::map<Dimension, double> component_usefulness;  // worker means
};

// Worker-mean per component, then the mean over components; consistency is
// the worker mean. Errors: EmptyInput, MixedComponentSets.
ItemScore aggregate_item(std::span<const AnnotationRecord> annotations);

// Groups by (system, item_id) in sorted order.
std::vector<ItemScore> aggregate_all(const std::vector<AnnotationRecord>& annotations);

struct CorpusSummary {
  std::string system;
  size_t n_items = 0;
  size_t n_flagged = 0;
  double accuracy_pct = 0.0;
  double usefulness_pct = 0.0;
  double consistency_pct = 0.0;
  double frac_any_true = 0.0;               // some component accuracy mean > 0
  double frac_any_useful_given_true = 0.0;  // among any_true, some usefulness mean > 0
  double frac_consistency_at_least_half = 0.0;
  double frac_consistency_at_least_three_quarters = 0.0;
};

nlohmann::json to_json(const CorpusSummary& s);

// Scores whose system differs from `system_tag` are skipped unless the tag
// is empty. Throws EmptyInput if nothing remains.
CorpusSummary corpus_report(const std::vector<ItemScore>& scores, const std::string& system_tag);

struct PredictionChange {
  size_t n = 0;
  double wrong_to_correct = 0.0;
  double correct_to_wrong = 0.0;
  double wrong_to_wrong = 0.0;
  double correct_to_correct = 0.0;
};

nlohmann::json to_json(const PredictionChange& p);

// Throws IdMismatch unless both audits cover the same ids (each once).
PredictionChange prediction_change_report(const std::vector<qa::AuditRecord>& baseline,
                                          const std::vector<qa::AuditRecord>& with_se);

}  // namespace sceneqa::metrics
