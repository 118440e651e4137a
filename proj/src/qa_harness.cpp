#include "sceneqa/qa_harness.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <fstream>
#include <sstream>
#include <thread>

#include "sceneqa/error.hpp"
#include "sceneqa/io.hpp"
#include "sceneqa/text.hpp"

namespace sceneqa::qa {

using nlohmann::json;

std::string_view to_string(DatasetTag tag) {
  switch (tag) {
    case DatasetTag::kEthicsCsTest: return "ethics_cs_test";
    case DatasetTag::kEthicsCsTestHard: return "ethics_cs_test_hard";
    case DatasetTag::kEthicsCsTrain: return "ethics_cs_train";
    case DatasetTag::kCodahAll: return "codah_all";
    case DatasetTag::kSocialIqaTest: return "social_iqa_test";
  }
  return "";
}

DatasetTag dataset_tag_from_string(std::string_view name) {
  for (auto tag : {DatasetTag::kEthicsCsTest, DatasetTag::kEthicsCsTestHard,
                   DatasetTag::kEthicsCsTrain, DatasetTag::kCodahAll,
                   DatasetTag::kSocialIqaTest}) {
    if (to_string(tag) == name) return tag;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown dataset '" + std::string(name) + "'");
}

bool is_ethics(DatasetTag tag) {
  return tag == DatasetTag::kEthicsCsTest || tag == DatasetTag::kEthicsCsTestHard ||
         tag == DatasetTag::kEthicsCsTrain;
}

size_t expected_option_count(DatasetTag tag) {
  if (is_ethics(tag)) return 2;
  return tag == DatasetTag::kCodahAll ? 4 : 3;
}

// ---------------------------------------------------------------------------
// Loaders

namespace {

std::string where(const std::filesystem::path& p, size_t line) {
  return p.string() + ":" + std::to_string(line);
}

bool falsy(std::string_view v) {
  auto s = text::to_lower(text::trim(v));
  return s == "false" || s == "0" || s == "no";
}

int parse_int(const std::string& s, const std::string& loc) {
  try {
    size_t used = 0;
    int v = std::stoi(text::trim(s), &used);
    if (used != text::trim(s).size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::kSchemaError, loc + ": expected an integer, got '" + s + "'");
  }
}

void load_ethics(const BenchmarkConfig& cfg, const std::filesystem::path& path, size_t& counter,
                 std::vector<SituatedExample>& out) {
  auto rows = io::parse_delimited(io::read_file(path), ',');
  if (rows.empty()) throw Error(ErrorCode::kSchemaError, path.string() + ": empty file");
  std::map<std::string, size_t> cols;
  for (size_t i = 0; i < rows[0].size(); ++i) cols[text::trim(rows[0][i])] = i;
  if (!cols.count("label") || !cols.count("input")) {
    throw Error(ErrorCode::kSchemaError, where(path, 1) + ": header needs label and input");
  }
  std::optional<size_t> short_col;
  if (cols.count("is_short")) short_col = cols["is_short"];
  if (cfg.exclude_long_context && !short_col) {
    throw Error(ErrorCode::kSchemaError,
                where(path, 1) + ": excluding long context needs an is_short column");
  }
  for (size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    auto loc = where(path, r + 1);
    size_t n = counter++;
    if (row.size() <= std::max(cols["label"], cols["input"])) {
      throw Error(ErrorCode::kSchemaError, loc + ": too few columns");
    }
    if (cfg.exclude_long_context && *short_col < row.size() && falsy(row[*short_col])) continue;
    int label = parse_int(row[cols["label"]], loc);
    if (label != 0 && label != 1) throw Error(ErrorCode::kSchemaError, loc + ": label must be 0/1");
    SituatedExample ex;
    ex.id = std::string(to_string(cfg.tag)) + ":" + std::to_string(n);
    ex.situation = text::squash_whitespace(row[cols["input"]]);
    ex.question = std::string(kEthicsQuestion);
    ex.options = {std::string(kEthicsWrong), std::string(kEthicsNotWrong)};
    ex.gold_index = label == 1 ? 0 : 1;
    ex.dataset_tag = std::string(to_string(cfg.tag));
    if (ex.situation.empty()) throw Error(ErrorCode::kSchemaError, loc + ": empty input");
    out.push_back(std::move(ex));
  }
}

void load_codah(const BenchmarkConfig& cfg, const std::filesystem::path& path, size_t& counter,
                std::vector<SituatedExample>& out) {
  auto rows = io::parse_delimited(io::read_file(path), '\t');
  for (size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    auto loc = where(path, r + 1);
    if (row.size() != 6 && row.size() != 7) {
      throw Error(ErrorCode::kSchemaError,
                  loc + ": expected 6 or 7 tab-separated columns, got " + std::to_string(row.size()));
    }
    size_t off = row.size() - 6;
    SituatedExample ex;
    ex.id = std::string(to_string(cfg.tag)) + ":" + std::to_string(counter++);
    ex.situation = text::squash_whitespace(row[off]);
    for (size_t k = 0; k < 4; ++k) ex.options.push_back(text::squash_whitespace(row[off + 1 + k]));
    ex.gold_index = parse_int(row[off + 5], loc);
    ex.dataset_tag = std::string(to_string(cfg.tag));
    if (ex.situation.empty()) throw Error(ErrorCode::kSchemaError, loc + ": empty stem");
    try {
      validate(ex);
    } catch (const Error& e) {
      throw Error(ErrorCode::kSchemaError, loc + ": " + e.what());
    }
    out.push_back(std::move(ex));
  }
}

void load_social_iqa(const BenchmarkConfig& cfg, const std::filesystem::path& path,
                     size_t& counter, std::vector<SituatedExample>& out) {
  std::vector<std::string> labels;
  if (cfg.labels_path) {
    std::istringstream in(io::read_file(*cfg.labels_path));
    for (std::string line; std::getline(in, line);) {
      auto t = text::trim(line);
      if (!t.empty()) labels.push_back(t);
    }
  }
  size_t row_index = 0;
  io::for_each_jsonl(path, [&](const json& row, size_t line) {
    auto loc = where(path, line);
    SituatedExample ex;
    try {
      ex.situation = text::squash_whitespace(row.at("context").get<std::string>());
      ex.question = text::squash_whitespace(row.at("question").get<std::string>());
      for (const char* key : {"answerA", "answerB", "answerC"}) {
        ex.options.push_back(text::squash_whitespace(row.at(key).get<std::string>()));
      }
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kSchemaError, loc + ": " + e.what());
    }
    std::string label;
    if (cfg.labels_path) {
      if (row_index >= labels.size()) {
        throw Error(ErrorCode::kSchemaError, loc + ": no label in " + cfg.labels_path->string());
      }
      label = labels[row_index];
    } else if (row.contains("label")) {
      label = row["label"].is_string() ? row["label"].get<std::string>() : row["label"].dump();
    } else {
      throw Error(ErrorCode::kSchemaError, loc + ": missing label");
    }
    ++row_index;
    ex.gold_index = parse_int(label, loc) - 1;
    ex.id = std::string(to_string(cfg.tag)) + ":" + std::to_string(counter++);
    ex.dataset_tag = std::string(to_string(cfg.tag));
    if (ex.situation.empty()) throw Error(ErrorCode::kSchemaError, loc + ": empty context");
    try {
      validate(ex);
    } catch (const Error& e) {
      throw Error(ErrorCode::kSchemaError, loc + ": " + e.what());
    }
    out.push_back(std::move(ex));
  });
}

}  // namespace

std::vector<SituatedExample> load_benchmark(const BenchmarkConfig& cfg) {
  if (cfg.paths.empty()) throw Error(ErrorCode::kInvalidArgument, "benchmark has no input files");
  std::vector<SituatedExample> out;
  size_t counter = 0;
  for (const auto& path : cfg.paths) {
    if (!std::filesystem::is_regular_file(path)) {
      throw Error(ErrorCode::kIoError, "cannot open " + path.string());
    }
    if (is_ethics(cfg.tag)) {
      load_ethics(cfg, path, counter, out);
    } else if (cfg.tag == DatasetTag::kCodahAll) {
      load_codah(cfg, path, counter, out);
    } else {
      load_social_iqa(cfg, path, counter, out);
    }
  }
  if (counter == 0) {
    throw Error(ErrorCode::kSchemaError, "no examples in " + cfg.paths.front().string());
  }
  for (const auto& ex : out) {
    if (ex.options.size() != expected_option_count(cfg.tag)) {
      throw Error(ErrorCode::kSchemaError, ex.id + ": wrong option count for dataset");
    }
  }
  return out;
}

gateway::GenerationRequest attach_context(const SituatedExample& ex,
                                          const std::optional<SceneElaboration>& se) {
  gateway::GenerationRequest req;
  req.question = ex.question.empty() ? ex.situation : ex.situation + " " + ex.question;
  req.options = ex.options;
  if (se) {
    auto serialized = serialize_se(*se);
    if (!serialized.empty()) req.context = std::move(serialized);
  }
  return req;
}

// ---------------------------------------------------------------------------
// Answer selection

namespace {

// Returns the option-letter index if `s` opens with "(x)" or "x)".
std::optional<size_t> letter_prefix(std::string_view s, size_t* consumed) {
  size_t i = 0;
  if (i < s.size() && s[i] == '(') ++i;
  if (i >= s.size() || !std::isalpha(static_cast<unsigned char>(s[i]))) return std::nullopt;
  char letter = static_cast<char>(std::tolower(static_cast<unsigned char>(s[i])));
  ++i;
  if (i >= s.size() || s[i] != ')') return std::nullopt;
  ++i;
  if (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) return std::nullopt;
  if (letter < 'a' || letter > 'e') return std::nullopt;
  *consumed = i;
  return static_cast<size_t>(letter - 'a');
}

}  // namespace

std::string normalize_answer(std::string_view s) {
  auto t = text::trim(s);
  size_t consumed = 0;
  if (letter_prefix(t, &consumed)) t = t.substr(consumed);
  std::string cleaned;
  cleaned.reserve(t.size());
  for (char c : t) {
    auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u)) {
      cleaned.push_back(static_cast<char>(std::tolower(u)));
    } else if (std::isspace(u)) {
      cleaned.push_back(' ');
    } else if (u >= 0x80) {
      cleaned.push_back(c);
    } else if (c == '-' || c == '/') {
      cleaned.push_back(' ');
    }
  }
  return text::squash_whitespace(cleaned);
}

double token_f1(std::string_view prediction, std::string_view reference) {
  auto p = text::split(normalize_answer(prediction), ' ');
  auto r = text::split(normalize_answer(reference), ' ');
  std::erase(p, std::string());
  std::erase(r, std::string());
  if (p.empty() || r.empty()) return 0.0;
  std::map<std::string, int> counts;
  for (const auto& t : r) ++counts[t];
  int common = 0;
  for (const auto& t : p) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      ++common;
      --it->second;
    }
  }
  if (common == 0) return 0.0;
  double precision = static_cast<double>(common) / static_cast<double>(p.size());
  double recall = static_cast<double>(common) / static_cast<double>(r.size());
  return 2.0 * precision * recall / (precision + recall);
}

size_t select_answer(std::string_view model_output, const std::vector<std::string>& options) {
  if (options.size() < 2) throw Error(ErrorCode::kInvalidArgument, "need at least two options");
  auto norm = normalize_answer(model_output);
  for (size_t i = 0; i < options.size(); ++i) {
    if (normalize_answer(options[i]) == norm) return i;
  }
  size_t consumed = 0;
  auto trimmed = text::trim(model_output);
  if (auto letter = letter_prefix(trimmed, &consumed);
      letter && *letter < options.size() && norm.empty()) {
    return *letter;
  }
  size_t best = 0;
  double best_f1 = 0.0;
  for (size_t i = 0; i < options.size(); ++i) {
    double f1 = token_f1(model_output, options[i]);
    if (f1 > best_f1) {
      best_f1 = f1;
      best = i;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Elaboration sources

StoredSeProvider::StoredSeProvider(const std::filesystem::path& path)
    : id_("stored:" + path.filename().string()) {
  io::for_each_jsonl(path, [&](const json& row, size_t line) {
    StoredElaboration rec;
    try {
      rec = stored_elaboration_from_json(row);
    } catch (const Error& e) {
      throw Error(e.code(), where(path, line) + ": " + e.what());
    }
    by_situation_.emplace(text::squash_whitespace(rec.situation), rec.se);
    by_id_[rec.id] = std::move(rec.se);
  });
}

std::optional<SceneElaboration> StoredSeProvider::get(const SituatedExample& ex) {
  if (auto it = by_id_.find(ex.id); it != by_id_.end()) return it->second;
  if (auto it = by_situation_.find(text::squash_whitespace(ex.situation));
      it != by_situation_.end()) {
    return it->second;
  }
  return std::nullopt;
}

GatewaySeProvider::GatewaySeProvider(std::shared_ptr<gateway::Gateway> gw, Mode mode,
                                     std::shared_ptr<probe::EntityExtractor> extractor)
    : gateway_(std::move(gw)), mode_(mode), extractor_(std::move(extractor)) {
  if (!extractor_) extractor_ = std::make_shared<probe::RuleBasedExtractor>();
}

std::optional<SceneElaboration> GatewaySeProvider::get(const SituatedExample& ex) {
  if (mode_ == Mode::kDream) return gateway_->elaborate(ex.situation);
  return gateway_->probe(ex.situation, *extractor_, ex.id);
}

std::string GatewaySeProvider::id() const {
  return std::string(mode_ == Mode::kDream ? "dream:" : "probe:") + gateway_->id();
}

CachingSeProvider::CachingSeProvider(std::shared_ptr<SeProvider> inner,
                                     std::filesystem::path cache_path)
    : inner_(std::move(inner)), path_(std::move(cache_path)) {
  if (!std::filesystem::exists(path_)) return;
  const auto provider = inner_->id();
  io::for_each_jsonl(path_, [&](const json& row, size_t line) {
    if (row.value("provider", std::string()) != provider) return;
    try {
      cache_[row.at("key").get<std::string>()] = se_from_json(row.at("se"));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kSchemaError, where(path_, line) + ": " + e.what());
    }
  });
}

std::optional<SceneElaboration> CachingSeProvider::get(const SituatedExample& ex) {
  auto key = io::sha256_hex(text::squash_whitespace(ex.situation));
  {
    std::lock_guard lock(mu_);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  }
  auto se = inner_->get(ex);
  if (!se) return se;
  std::lock_guard lock(mu_);
  if (cache_.emplace(key, *se).second) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    std::ofstream out(path_, std::ios::app);
    if (!out) throw Error(ErrorCode::kIoError, "cannot append to " + path_.string());
    out << json{{"key", key}, {"provider", inner_->id()}, {"situation", ex.situation},
                {"se", se_to_json(*se)}}
               .dump()
        << '\n';
  }
  return se;
}

// ---------------------------------------------------------------------------
// Evaluation

json to_json(const AuditRecord& r) {
  json j;
  j["id"] = r.id;
  j["dataset"] = r.dataset;
  j["chosen"] = r.chosen ? json(*r.chosen) : json(nullptr);
  j["gold"] = r.gold;
  j["correct"] = r.correct;
  j["se"] = r.se ? json(*r.se) : json(nullptr);
  j["components"] = r.components ? json(*r.components) : json(nullptr);
  j["error"] = r.error ? json(*r.error) : json(nullptr);
  return j;
}

AuditRecord audit_record_from_json(const json& j) {
  AuditRecord r;
  try {
    r.id = j.at("id").get<std::string>();
    r.dataset = j.value("dataset", std::string());
    if (j.contains("chosen") && !j["chosen"].is_null()) r.chosen = j["chosen"].get<int>();
    r.gold = j.at("gold").get<int>();
    r.correct = j.at("correct").get<bool>();
    if (j.contains("se") && !j["se"].is_null()) r.se = j["se"].get<std::string>();
    if (j.contains("components") && !j["components"].is_null()) {
      r.components = j["components"].get<std::vector<std::string>>();
    }
    if (j.contains("error") && !j["error"].is_null()) r.error = j["error"].get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kSchemaError, std::string("audit record: ") + e.what());
  }
  return r;
}

RunResult summarize(std::vector<AuditRecord> records) {
  RunResult result;
  result.n = records.size();
  for (const auto& r : records) {
    result.n_correct += r.correct ? 1 : 0;
    result.n_failed += r.error ? 1 : 0;
  }
  result.accuracy = result.n == 0 ? 0.0
                                  : static_cast<double>(result.n_correct) /
                                        static_cast<double>(result.n);
  result.records = std::move(records);
  return result;
}

namespace {

AuditRecord answer_one(const SituatedExample& ex, gateway::Gateway& gw,
                       const EvaluateOptions& opts) {
  AuditRecord rec;
  rec.id = ex.id;
  rec.dataset = ex.dataset_tag;
  rec.gold = ex.gold_index;
  if (opts.se_source) {
    std::vector<std::string> names;
    const auto& dims = opts.components ? *opts.components
                                       : std::vector<Dimension>(kAllDimensions.begin(),
                                                                kAllDimensions.end());
    for (Dimension d : kAllDimensions) {
      if (std::find(dims.begin(), dims.end(), d) != dims.end()) {
        names.emplace_back(json_key(d));
      }
    }
    rec.components = std::move(names);
  }
  try {
    std::optional<SceneElaboration> se;
    if (opts.se_source) {
      se = opts.se_source->get(ex);
      if (se && opts.components) se = se->filtered(*opts.components);
    }
    auto req = attach_context(ex, se);
    if (req.context) rec.se = req.context;
    auto response = gw.generate(req);
    auto chosen = select_answer(response.answer, ex.options);
    rec.chosen = static_cast<int>(chosen);
    rec.correct = rec.chosen == ex.gold_index;
  } catch (const Error& e) {
    rec.error = std::string(to_string(e.code())) + ": " + e.what();
  } catch (const std::exception& e) {
    rec.error = std::string("Internal: ") + e.what();
  }
  return rec;
}

}  // namespace

RunResult evaluate(const std::vector<SituatedExample>& examples, gateway::Gateway& gw,
                   const EvaluateOptions& opts) {
  std::vector<AuditRecord> records(examples.size());
  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (size_t i; (i = next.fetch_add(1)) < examples.size();) {
      records[i] = answer_one(examples[i], gw, opts);
    }
  };
  size_t jobs = std::clamp<size_t>(static_cast<size_t>(std::max(1, opts.jobs)), 1,
                                   std::max<size_t>(1, examples.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (size_t t = 0; t < jobs; ++t) pool.emplace_back(worker);
  }
  return summarize(std::move(records));
}

RunResult evaluate(const BenchmarkConfig& cfg, gateway::Gateway& gw, const EvaluateOptions& opts) {
  return evaluate(load_benchmark(cfg), gw, opts);
}

void write_audit(const std::filesystem::path& path, const RunResult& result) {
  std::vector<json> rows;
  rows.reserve(result.records.size());
  for (const auto& r : result.records) rows.push_back(to_json(r));
  io::write_jsonl(path, rows);
}

std::vector<AuditRecord> read_audit(const std::filesystem::path& path) {
  std::vector<AuditRecord> out;
  io::for_each_jsonl(path, [&](const json& row, size_t line) {
    try {
      out.push_back(audit_record_from_json(row));
    } catch (const Error& e) {
      throw Error(ErrorCode::kSchemaError, where(path, line) + ": " + e.what());
    }
  });
  return out;
}

}  // namespace sceneqa::qa
