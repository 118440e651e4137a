#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"
#include "sceneqa/qa_harness.hpp"
#include "sceneqa/scene_model.hpp"

namespace httplib {
class Server;
}

namespace sceneqa::annotation {

// One rating task for the browser rater. `system` is kept for the export
// round trip and must never be shown to raters.
struct AnnotationTask {
  std::string item_id;
  std::string system;  // macaw_probe | dream
  std::string situation;
  std::string question;
  std::vector<std::string> options;
  int gold = 0;
  SceneElaboration se;
};

nlohmann::json to_json(const AnnotationTask& t);

// Tasks for every (example, system) pair with a non-empty elaboration, in
// example order, systems in the given order.
std::vector<AnnotationTask> build_tasks(
    const std::vector<SituatedExample>& examples,
    const std::vector<std::pair<std::string, qa::SeProvider*>>& systems);

void write_tasks(const std::filesystem::path& path, const std::vector<AnnotationTask>& tasks);

// Rater choices as the browser collects them.
enum class Choice { kNo, kABit, kYes };

// "yes" / "a bit" / "no"; anything else is a ValidationError.
Choice choice_from_string(std::string_view s);
double choice_score(Choice c);  // 1 / 0.5 / 0

struct RatingSubmission {
  std::string item_id;
  std::string worker_id;
  std::string system;
  std::map<Dimension, Choice> accuracy;
  std::map<Dimension, Choice> usefulness;
  int consistency_level = 0;  // 0 (not consistent) .. 4 (all consistent)
  int64_t elapsed_ms = 0;
};

// One annotation JSONL record in the se_metrics schema. Throws
// ValidationError for partial submissions or a level outside 0..4.
nlohmann::json export_annotation(const RatingSubmission& s);

// Shares a task file with several raters: GET /tasks returns the task JSONL,
// POST /annotations validates one annotation JSON object (or JSONL body) and
// appends it to the annotations file.
class AnnotationServer {
 public:
  AnnotationServer(std::filesystem::path tasks_path, std::filesystem::path annotations_path);
  ~AnnotationServer();

  // Binds (port 0 picks a free port) and serves on a background thread.
  int start(const std::string& host, int port);
  // Blocks the calling thread.
  void run(const std::string& host, int port);
  void stop();

 private:
  void install_routes();

  std::filesystem::path tasks_path_;
  std::filesystem::path annotations_path_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

}  // namespace sceneqa::annotation
