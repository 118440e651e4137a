#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "sceneqa/model_gateway.hpp"
#include "sceneqa/qa_harness.hpp"
#include "sceneqa/scene_model.hpp"

namespace sceneqa::knn {

// Binary moral-judgement labels.
inline constexpr int kNotWrong = 0;
inline constexpr int kWrong = 1;

struct LabeledPoint {
  std::string id;
  gateway::EmbeddingVector vector;
  int label = 0;
  std::string text;

  bool operator==(const LabeledPoint&) const = default;
};

struct KnnIndex {
  std::vector<LabeledPoint> points;
  size_t dim = 0;
  bool with_se = false;
};

struct Neighbor {
  std::string id;
  int label = 0;
  double distance = 0.0;  // squared Euclidean
};

struct Classification {
  int label = 0;
  std::vector<Neighbor> neighbors;  // nearest first
};

// Squared Euclidean distance with Neumaier-compensated summation. Throws
// DimensionMismatch on unequal lengths.
double squared_distance(std::span<const double> a, std::span<const double> b);

// ETHICS examples map to 1 when the gold option is "wrong"; other datasets use
// the gold index.
int label_of(const SituatedExample& ex);

// The situation, followed by a space and the serialized elaboration when it is
// non-empty.
std::string encode_text(const SituatedExample& ex, const std::optional<SceneElaboration>& se);

// One point per example; the first embedding failure aborts the build.
KnnIndex build_index(const std::vector<SituatedExample>& train,
                     gateway::EmbeddingProvider& embedder, qa::SeProvider* se_provider = nullptr);

// Brute-force k nearest by (distance, id); majority label, vote ties resolved
// in favour of the tied label whose best neighbour ranks first (for binary
// labels, the single nearest neighbour).
Classification classify(const KnnIndex& index, std::span<const double> query, size_t k);
Classification classify(const KnnIndex& index, std::string_view query_text,
                        gateway::EmbeddingProvider& embedder, size_t k);

struct KnnExampleResult {
  std::string id;
  std::string query;
  int gold = 0;
  int predicted = 0;
  std::vector<Neighbor> neighbors;
};

struct KnnEvaluation {
  double accuracy = 0.0;
  size_t n = 0;
  size_t n_correct = 0;
  std::vector<KnnExampleResult> results;
};

KnnEvaluation evaluate_knn(const KnnIndex& index, const std::vector<SituatedExample>& test,
                           gateway::EmbeddingProvider& embedder, size_t k,
                           qa::SeProvider* se_provider = nullptr, int jobs = 4);

// Line 1: {"dim", "with_se", "count"}; then one {"id", "label", "text",
// "vector"} object per point.
void write_index(const std::filesystem::path& path, const KnnIndex& index);
KnnIndex read_index(const std::filesystem::path& path);

// One line per query with its neighbours (text included) and correctness.
void write_neighbor_dump(const std::filesystem::path& path, const KnnIndex& index,
                         const KnnEvaluation& eval);

}  // namespace sceneqa::knn
