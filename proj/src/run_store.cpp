#include "sceneqa/run_store.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <set>
#include <sstream>

#include "sceneqa/error.hpp"
#include "sceneqa/io.hpp"

namespace sceneqa::runs {

using nlohmann::json;

json to_json(const RunManifest& m) {
  return {{"run_id", m.run_id},
          {"command", m.command},
          {"config", m.config_snapshot},
          {"inputs", m.inputs},
          {"outputs", m.outputs},
          {"started_at", m.started_at},
          {"finished_at", m.finished_at},
          {"tool_version", m.tool_version}};
}

RunManifest manifest_from_json(const json& j) {
  RunManifest m;
  m.run_id = j.at("run_id").get<std::string>();
  m.command = j.at("command").get<std::string>();
  m.config_snapshot = j.at("config").get<std::string>();
  m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
  m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
  m.started_at = j.at("started_at").get<std::string>();
  m.finished_at = j.at("finished_at").get<std::string>();
  m.tool_version = j.at("tool_version").get<std::string>();
  return m;
}

std::string utc_now_iso8601() {
  auto now = std::chrono::system_clock::now();
  auto secs = std::chrono::system_clock::to_time_t(now);
  auto micros = std::chrono::duration_cast<std::chrono::microseconds>(now.time_since_epoch()) %
                std::chrono::seconds(1);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char frac[16];
  std::snprintf(frac, sizeof frac, ".%06ldZ", static_cast<long>(micros.count()));
  return std::string(buf) + frac;
}

namespace {

std::string canonical_path(const std::filesystem::path& p) {
  std::error_code ec;
  auto abs = std::filesystem::weakly_canonical(p, ec);
  return ec ? p.string() : abs.string();
}

std::string fresh_run_id(const std::string& command, const std::string& started) {
  static std::atomic<uint64_t> counter{0};
  std::ostringstream seed;
  seed << command << '|' << started << '|' << ::getpid() << '|' << counter++ << '|'
       << std::chrono::steady_clock::now().time_since_epoch().count();
  std::string stamp;
  for (char c : started.substr(0, 19)) {
    if (c != '-' && c != ':') stamp.push_back(c);
  }
  return stamp + "-" + io::sha256_hex(seed.str()).substr(0, 12);
}

class FileLock {
 public:
  explicit FileLock(const std::filesystem::path& p) {
    fd_ = ::open(p.c_str(), O_RDWR | O_CREAT | O_APPEND, 0644);
    if (fd_ < 0) throw Error(ErrorCode::kIoError, "cannot open registry " + p.string());
    if (::flock(fd_, LOCK_EX) != 0) {
      ::close(fd_);
      throw Error(ErrorCode::kIoError, "cannot lock registry " + p.string());
    }
  }
  ~FileLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;
  int fd() const { return fd_; }

 private:
  int fd_ = -1;
};

std::vector<RunManifest> parse_registry(const std::filesystem::path& path) {
  std::vector<RunManifest> out;
  if (!std::filesystem::exists(path)) return out;
  std::istringstream in(io::read_file(path));
  size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(manifest_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kIoError,
                  "run registry " + path.string() + " is corrupt at line " +
                      std::to_string(lineno) + " (" + e.what() +
                      "); move the file aside or delete that line to recover");
    }
  }
  return out;
}

}  // namespace

RunManifest begin_run(const std::string& command, const json& config,
                      const std::vector<std::filesystem::path>& inputs) {
  RunManifest m;
  m.command = command;
  m.config_snapshot = config.dump();
  m.started_at = utc_now_iso8601();
  m.run_id = fresh_run_id(command + m.config_snapshot, m.started_at);
  for (const auto& p : inputs) {
    if (std::filesystem::is_regular_file(p)) m.inputs[canonical_path(p)] = io::sha256_file(p);
  }
  return m;
}

RunRegistry::RunRegistry(std::filesystem::path dir)
    : dir_(std::move(dir)), path_(dir_ / "registry.jsonl") {}

std::filesystem::path RunRegistry::resolve_dir(const std::filesystem::path& fallback) {
  if (const char* env = std::getenv("RUNS_DIR"); env && *env) return env;
  return fallback;
}

std::string RunRegistry::record_run(RunManifest manifest,
                                    const std::vector<std::filesystem::path>& outputs) {
  for (const auto& p : outputs) {
    if (!std::filesystem::is_regular_file(p)) {
      throw Error(ErrorCode::kIoError, "run output " + p.string() + " does not exist");
    }
    manifest.outputs[canonical_path(p)] = io::sha256_file(p);
  }
  manifest.finished_at = utc_now_iso8601();
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot create runs dir " + dir_.string());

  FileLock lock(path_);
  auto existing = parse_registry(path_);
  for (const auto& m : existing) {
    if (m.run_id == manifest.run_id) {
      throw Error(ErrorCode::kIoError, "run id " + manifest.run_id + " already recorded");
    }
  }
  auto line = to_json(manifest).dump() + "\n";
  if (::write(lock.fd(), line.data(), line.size()) != static_cast<ssize_t>(line.size())) {
    throw Error(ErrorCode::kIoError, "short write to " + path_.string());
  }
  return manifest.run_id;
}

std::vector<RunManifest> RunRegistry::list() const { return parse_registry(path_); }

}  // namespace sceneqa::runs
