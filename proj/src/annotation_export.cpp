#include "sceneqa/annotation_export.hpp"

#include <fstream>
#include <mutex>
#include <sstream>

#include "httplib.h"
#include "sceneqa/error.hpp"
#include "sceneqa/io.hpp"
#include "sceneqa/se_metrics.hpp"

namespace sceneqa::annotation {

using nlohmann::json;

json to_json(const AnnotationTask& t) {
  json components = json::array();
  for (const auto& [d, text] : t.se.components()) {
    components.push_back({{"dimension", std::string(json_key(d))},
                          {"label", std::string(query_keyword(d))},
                          {"text", text}});
  }
  return {{"item_id", t.item_id},     {"system", t.system}, {"situation", t.situation},
          {"question", t.question},   {"options", t.options}, {"gold", t.gold},
          {"components", components}};
}

std::vector<AnnotationTask> build_tasks(
    const std::vector<SituatedExample>& examples,
    const std::vector<std::pair<std::string, qa::SeProvider*>>& systems) {
  for (const auto& [name, provider] : systems) {
    if (name != "macaw_probe" && name != "dream") {
      throw Error(ErrorCode::kInvalidArgument, "system must be macaw_probe or dream, got " + name);
    }
    if (!provider) throw Error(ErrorCode::kInvalidArgument, "no elaborations for " + name);
  }
  std::vector<AnnotationTask> tasks;
  for (const auto& ex : examples) {
    for (const auto& [name, provider] : systems) {
      auto se = provider->get(ex);
      if (!se || se->empty()) continue;
      tasks.push_back({ex.id, name, ex.situation, ex.question, ex.options, ex.gold_index, *se});
    }
  }
  return tasks;
}

void write_tasks(const std::filesystem::path& path, const std::vector<AnnotationTask>& tasks) {
  std::vector<json> rows;
  rows.reserve(tasks.size());
  for (const auto& t : tasks) rows.push_back(to_json(t));
  io::write_jsonl(path, rows);
}

Choice choice_from_string(std::string_view s) {
  if (s == "yes") return Choice::kYes;
  if (s == "a bit") return Choice::kABit;
  if (s == "no") return Choice::kNo;
  throw Error(ErrorCode::kValidationError, "rating must be yes, a bit or no, got '" + std::string(s) + "'");
}

double choice_score(Choice c) {
  switch (c) {
    case Choice::kYes:
      return 1.0;
    case Choice::kABit:
      return 0.5;
    case Choice::kNo:
      return 0.0;
  }
  return 0.0;
}

json export_annotation(const RatingSubmission& s) {
  if (s.accuracy.empty()) throw Error(ErrorCode::kValidationError, s.item_id + ": nothing rated");
  for (const auto& [d, c] : s.accuracy) {
    if (!s.usefulness.count(d)) {
      throw Error(ErrorCode::kValidationError,
                  s.item_id + ": usefulness of " + std::string(json_key(d)) + " not rated");
    }
  }
  if (s.usefulness.size() != s.accuracy.size()) {
    throw Error(ErrorCode::kValidationError, s.item_id + ": usefulness rates an unseen component");
  }
  if (s.consistency_level < 0 || s.consistency_level > 4) {
    throw Error(ErrorCode::kValidationError, s.item_id + ": consistency level must be 0..4");
  }
  json acc = json::object();
  json use = json::object();
  for (const auto& [d, c] : s.accuracy) acc[std::string(json_key(d))] = choice_score(c);
  for (const auto& [d, c] : s.usefulness) use[std::string(json_key(d))] = choice_score(c);
  json out = {{"item_id", s.item_id},
              {"worker_id", s.worker_id},
              {"system", s.system},
              {"accuracy", acc},
              {"usefulness", use},
              {"consistency", s.consistency_level / 4.0}};
  metrics::annotation_from_json(out);
  return out;
}

AnnotationServer::AnnotationServer(std::filesystem::path tasks_path,
                                   std::filesystem::path annotations_path)
    : tasks_path_(std::move(tasks_path)),
      annotations_path_(std::move(annotations_path)),
      server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

AnnotationServer::~AnnotationServer() { stop(); }

void AnnotationServer::install_routes() {
  auto append_mu = std::make_shared<std::mutex>();
  server_->Get("/tasks", [this](const httplib::Request&, httplib::Response& res) {
    try {
      res.set_content(io::read_file(tasks_path_), "application/x-ndjson");
    } catch (const Error& e) {
      res.status = 500;
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    }
  });
  server_->Post("/annotations", [this, append_mu](const httplib::Request& req,
                                                  httplib::Response& res) {
    std::vector<json> rows;
    try {
      std::istringstream in(req.body);
      for (std::string line; std::getline(in, line);) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto row = json::parse(line);
        metrics::annotation_from_json(row);
        rows.push_back(std::move(row));
      }
      if (rows.empty()) throw Error(ErrorCode::kValidationError, "empty submission");
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
      return;
    }
    std::lock_guard lock(*append_mu);
    std::ofstream out(annotations_path_, std::ios::app);
    for (const auto& row : rows) out << row.dump() << '\n';
    res.set_content(json{{"accepted", rows.size()}}.dump(), "application/json");
  });
}

int AnnotationServer::start(const std::string& host, int port) {
  int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error(ErrorCode::kIoError, "cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return bound;
}

void AnnotationServer::run(const std::string& host, int port) {
  if (!server_->listen(host, port)) {
    throw Error(ErrorCode::kIoError, "cannot listen on " + host + ":" + std::to_string(port));
  }
}

void AnnotationServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace sceneqa::annotation
