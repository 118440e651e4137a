#include "sceneqa/knn_answerer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <thread>
#include <unordered_map>

#include "sceneqa/error.hpp"
#include "sceneqa/io.hpp"

namespace sceneqa::knn {

using nlohmann::json;

double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "vector dims differ: " + std::to_string(a.size()) +
                                                   " vs " + std::to_string(b.size()));
  }
  double sum = 0.0;
  double comp = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    double term = d * d;
    double t = sum + term;
    if (std::abs(sum) >= std::abs(term)) {
      comp += (sum - t) + term;
    } else {
      comp += (term - t) + sum;
    }
    sum = t;
  }
  return sum + comp;
}

int label_of(const SituatedExample& ex) {
  if (ex.options.size() == 2 && ex.options[0] == qa::kEthicsWrong &&
      ex.options[1] == qa::kEthicsNotWrong) {
    return ex.gold_index == 0 ? kWrong : kNotWrong;
  }
  return ex.gold_index;
}

std::string encode_text(const SituatedExample& ex, const std::optional<SceneElaboration>& se) {
  if (!se) return ex.situation;
  auto serialized = serialize_se(*se);
  return serialized.empty() ? ex.situation : ex.situation + " " + serialized;
}

KnnIndex build_index(const std::vector<SituatedExample>& train,
                     gateway::EmbeddingProvider& embedder, qa::SeProvider* se_provider) {
  if (train.empty()) throw Error(ErrorCode::kEmptyInput, "cannot build an index from no examples");
  KnnIndex index;
  index.with_se = se_provider != nullptr;
  index.points.reserve(train.size());
  for (const auto& ex : train) {
    std::optional<SceneElaboration> se;
    if (se_provider) se = se_provider->get(ex);
    LabeledPoint p;
    p.id = ex.id;
    p.label = label_of(ex);
    p.text = encode_text(ex, se);
    p.vector = embedder.embed(p.text);
    if (index.dim == 0) index.dim = p.vector.dim();
    if (p.vector.dim() != index.dim) {
      throw Error(ErrorCode::kDimensionMismatch, "point " + p.id + " has dim " +
                                                     std::to_string(p.vector.dim()));
    }
    index.points.push_back(std::move(p));
  }
  return index;
}

Classification classify(const KnnIndex& index, std::span<const double> query, size_t k) {
  if (index.points.empty()) throw Error(ErrorCode::kEmptyInput, "empty index");
  if (k < 1 || k > index.points.size()) {
    throw Error(ErrorCode::kInvalidArgument, "k must be within [1, " +
                                                 std::to_string(index.points.size()) + "]");
  }
  if (query.size() != index.dim) {
    throw Error(ErrorCode::kDimensionMismatch, "query dim " + std::to_string(query.size()) +
                                                   " != index dim " + std::to_string(index.dim));
  }
  std::vector<std::pair<double, const LabeledPoint*>> scored;
  scored.reserve(index.points.size());
  for (const auto& p : index.points) {
    scored.emplace_back(squared_distance(query, p.vector.values), &p);
  }
  auto closer = [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return a.second->id < b.second->id;
  };
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(),
                    closer);

  Classification out;
  std::map<int, size_t> votes;
  std::map<int, size_t> first_rank;
  for (size_t r = 0; r < k; ++r) {
    const auto* p = scored[r].second;
    out.neighbors.push_back({p->id, p->label, scored[r].first});
    ++votes[p->label];
    first_rank.emplace(p->label, r);
  }
  size_t best_votes = 0;
  size_t best_rank = 0;
  for (const auto& [label, count] : votes) {
    size_t rank = first_rank[label];
    if (count > best_votes || (count == best_votes && rank < best_rank)) {
      best_votes = count;
      best_rank = rank;
      out.label = label;
    }
  }
  return out;
}

Classification classify(const KnnIndex& index, std::string_view query_text,
                        gateway::EmbeddingProvider& embedder, size_t k) {
  auto v = embedder.embed(query_text);
  return classify(index, v.values, k);
}

KnnEvaluation evaluate_knn(const KnnIndex& index, const std::vector<SituatedExample>& test,
                           gateway::EmbeddingProvider& embedder, size_t k,
                           qa::SeProvider* se_provider, int jobs) {
  if (test.empty()) throw Error(ErrorCode::kEmptyInput, "no test examples");
  if (index.with_se != (se_provider != nullptr)) {
    throw Error(ErrorCode::kInvalidArgument,
                "queries must be encoded like the index (with_se mismatch)");
  }
  KnnEvaluation eval;
  eval.results.resize(test.size());
  std::vector<std::exception_ptr> errors(test.size());
  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (size_t i; (i = next.fetch_add(1)) < test.size();) {
      try {
        const auto& ex = test[i];
        std::optional<SceneElaboration> se;
        if (se_provider) se = se_provider->get(ex);
        auto& r = eval.results[i];
        r.id = ex.id;
        r.query = encode_text(ex, se);
        r.gold = label_of(ex);
        auto c = classify(index, r.query, embedder, k);
        r.predicted = c.label;
        r.neighbors = std::move(c.neighbors);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  size_t n_threads = std::clamp<size_t>(static_cast<size_t>(std::max(1, jobs)), 1, test.size());
  {
    std::vector<std::jthread> pool;
    for (size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  eval.n = test.size();
  for (const auto& r : eval.results) eval.n_correct += r.predicted == r.gold ? 1 : 0;
  eval.accuracy = static_cast<double>(eval.n_correct) / static_cast<double>(eval.n);
  return eval;
}

void write_index(const std::filesystem::path& path, const KnnIndex& index) {
  std::vector<json> rows;
  rows.reserve(index.points.size() + 1);
  rows.push_back({{"dim", index.dim}, {"with_se", index.with_se}, {"count", index.points.size()}});
  for (const auto& p : index.points) {
    rows.push_back({{"id", p.id}, {"label", p.label}, {"text", p.text}, {"vector", p.vector.values}});
  }
  io::write_jsonl(path, rows);
}

KnnIndex read_index(const std::filesystem::path& path) {
  KnnIndex index;
  bool have_header = false;
  size_t expected = 0;
  io::for_each_jsonl(path, [&](const json& row, size_t line) {
    auto loc = path.string() + ":" + std::to_string(line);
    try {
      if (!have_header) {
        index.dim = row.at("dim").get<size_t>();
        index.with_se = row.at("with_se").get<bool>();
        expected = row.at("count").get<size_t>();
        have_header = true;
        return;
      }
      LabeledPoint p;
      p.id = row.at("id").get<std::string>();
      p.label = row.at("label").get<int>();
      p.text = row.value("text", std::string());
      p.vector.values = row.at("vector").get<std::vector<double>>();
      if (p.vector.dim() != index.dim) {
        throw Error(ErrorCode::kDimensionMismatch, loc + ": point dim differs from header");
      }
      index.points.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kSchemaError, loc + ": " + e.what());
    }
  });
  if (!have_header) throw Error(ErrorCode::kSchemaError, path.string() + ": missing header");
  if (index.points.size() != expected) {
    throw Error(ErrorCode::kSchemaError, path.string() + ": header count " +
                                             std::to_string(expected) + " but " +
                                             std::to_string(index.points.size()) + " points");
  }
  return index;
}

void write_neighbor_dump(const std::filesystem::path& path, const KnnIndex& index,
                         const KnnEvaluation& eval) {
  std::unordered_map<std::string, const LabeledPoint*> by_id;
  for (const auto& p : index.points) by_id[p.id] = &p;
  std::vector<json> rows;
  rows.reserve(eval.results.size());
  for (const auto& r : eval.results) {
    json neighbors = json::array();
    for (const auto& n : r.neighbors) {
      auto it = by_id.find(n.id);
      neighbors.push_back({{"id", n.id},
                           {"label", n.label},
                           {"distance", n.distance},
                           {"text", it == by_id.end() ? std::string() : it->second->text}});
    }
    rows.push_back({{"id", r.id},
                    {"query", r.query},
                    {"gold", r.gold},
                    {"predicted", r.predicted},
                    {"correct", r.gold == r.predicted},
                    {"neighbors", std::move(neighbors)}});
  }
  io::write_jsonl(path, rows);
}

}  // namespace sceneqa::knn
