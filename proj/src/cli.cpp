#include "sceneqa/cli.hpp"

#include <algorithm>
#include <functional>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "sceneqa/annotation_export.hpp"
#include "sceneqa/corpus_builder.hpp"
#include "sceneqa/entity_probe.hpp"
#include "sceneqa/error.hpp"
#include "sceneqa/io.hpp"
#include "sceneqa/knn_answerer.hpp"
#include "sceneqa/model_gateway.hpp"
#include "sceneqa/qa_harness.hpp"
#include "sceneqa/run_store.hpp"
#include "sceneqa/se_metrics.hpp"
#include "sceneqa/text.hpp"

namespace sceneqa::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Paths = std::vector<fs::path>;

// One registered subcommand. `inputs` is evaluated after parsing and before
// `run`, so input digests reflect the files as the command found them.
struct Command {
  CLI::App* app = nullptr;
  std::string name;
  std::function<Paths()> inputs;
  std::function<Paths(std::ostream&)> run;
  std::function<json()> config;
};

struct Globals {
  std::string config_path;
  std::string runs_dir;
  bool no_record = false;
  json file_config = json::object();

  json section(const char* name) const {
    return file_config.contains(name) ? file_config.at(name) : json::object();
  }
};

// Gateway settings: config-file section or --gateway file, then environment,
// then explicit flags.
struct GatewayFlags {
  std::string spec;
  std::string qa_template;
  int jobs = 0;

  void add(CLI::App* app) {
    app->add_option("--gateway", spec, "Gateway config JSON, or 'stub'");
    app->add_option("--template", qa_template, "Prompt template name or file");
  }

  gateway::GatewayConfig resolve(const Globals& g) const {
    gateway::GatewayConfig cfg;
    if (!spec.empty()) {
      cfg = gateway::GatewayConfig::load(spec);
    } else if (g.file_config.contains("gateway")) {
      cfg = gateway::GatewayConfig::from_json(g.file_config.at("gateway"));
    }
    cfg.apply_env();
    if (!qa_template.empty()) cfg.qa_template = qa_template;
    return cfg;
  }

  Paths files() const {
    Paths p;
    if (!spec.empty() && spec != "stub") p.emplace_back(spec);
    return p;
  }
};

struct DatasetFlags {
  std::string tag;
  std::vector<std::string> in;
  std::string labels;
  bool exclude_long = false;

  void add(CLI::App* app, bool required, const std::string& prefix = "") {
    auto* d = app->add_option("--" + prefix + "dataset", tag,
                              "ethics_cs_test|ethics_cs_test_hard|ethics_cs_train|codah_all|social_iqa_test");
    auto* i = app->add_option("--" + prefix + "in", in, "Dataset file(s), concatenated in order");
    if (required) {
      d->required();
      i->required();
    }
    app->add_option("--" + prefix + "labels", labels, "Social IQA labels file (1-based)");
    app->add_flag("--" + prefix + "exclude-long", exclude_long,
                  "Drop ETHICS rows whose is_short column is false");
  }

  bool given() const { return !tag.empty(); }

  qa::BenchmarkConfig config() const {
    qa::BenchmarkConfig cfg;
    cfg.tag = qa::dataset_tag_from_string(tag);
    for (const auto& p : in) cfg.paths.emplace_back(p);
    cfg.exclude_long_context = exclude_long;
    if (!labels.empty()) cfg.labels_path = labels;
    return cfg;
  }

  Paths files() const {
    Paths p(in.begin(), in.end());
    if (!labels.empty()) p.emplace_back(labels);
    return p;
  }

  json to_json() const {
    return {{"dataset", tag}, {"in", in}, {"labels", labels}, {"exclude_long", exclude_long}};
  }
};

// {"id", "situation"} lines, or a benchmark.
std::vector<SituatedExample> load_situations(const std::string& situations,
                                             const DatasetFlags& dataset) {
  if (!situations.empty()) {
    std::vector<SituatedExample> out;
    io::for_each_jsonl(situations, [&](const json& row, size_t line) {
      SituatedExample ex;
      try {
        ex.situation = text::squash_whitespace(row.at("situation").get<std::string>());
        ex.id = row.contains("id") ? row["id"].get<std::string>() : std::to_string(line);
      } catch (const json::exception& e) {
        throw Error(ErrorCode::kSchemaError, situations + ":" + std::to_string(line) + ": " + e.what());
      }
      if (ex.situation.empty()) {
        throw Error(ErrorCode::kSchemaError, situations + ":" + std::to_string(line) + ": empty situation");
      }
      out.push_back(std::move(ex));
    });
    return out;
  }
  if (!dataset.given()) {
    throw Error(ErrorCode::kInvalidArgument, "give --situations or --dataset with --in");
  }
  return qa::load_benchmark(dataset.config());
}

std::shared_ptr<qa::SeProvider> stored_se(const std::string& spec) {
  if (spec.empty() || spec == "none") return nullptr;
  return std::make_shared<qa::StoredSeProvider>(spec);
}

Paths optional_file(const std::string& p) {
  if (p.empty() || p == "none") return {};
  return {fs::path(p)};
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(digits) << v;
  return ss.str();
}

// ---------------------------------------------------------------------------

void add_build_corpus(CLI::App& root, std::vector<Command>& cmds, const Globals&) {
  struct Opts {
    std::string source, in, map, out;
  };
  auto o = std::make_shared<Opts>();
  auto* app = root.add_subcommand("build-corpus", "Convert one commonsense source into training records");
  app->add_option("--source", o->source, "story_cs|social_chem|moral_stories")->required();
  app->add_option("--in", o->in, "Source file")->required();
  app->add_option("--map", o->map, "Column mapping config (JSON)")->required();
  app->add_option("--out", o->out, "Training JSONL to write")->required();
  cmds.push_back({app, "build-corpus",
                  [o] { return Paths{o->in, o->map}; },
                  [o](std::ostream& out) {
                    auto kind = corpus::source_kind_from_string(o->source);
                    auto mapping = corpus::load_mapping(o->map);
                    auto records = corpus::read_source_records(o->in, kind, mapping);
                    auto built = corpus::build(kind, records);
                    auto n = corpus::emit_training_file(built, o->out);
                    out << "wrote " << n << " records from " << records.size() << " "
                        << o->source << " rows to " << o->out << "\n";
                    return Paths{o->out};
                  },
                  [o] { return json{{"source", o->source}, {"in", o->in}, {"map", o->map}, {"out", o->out}}; }});
}

void add_interleave(CLI::App& root, std::vector<Command>& cmds, const Globals& g) {
  struct Opts {
    std::vector<std::string> in;
    uint64_t seed = 0;
    double split = 0.95;
    std::string out_train, out_dev;
  };
  auto o = std::make_shared<Opts>();
  auto* app = root.add_subcommand("interleave", "Split and interleave training records by dimension");
  app->add_option("--in", o->in, "Training JSONL files")->required();
  auto* seed = app->add_option("--seed", o->seed, "Shuffle seed");
  auto* split = app->add_option("--split", o->split, "Train fraction per dimension");
  app->add_option("--out-train", o->out_train, "Train JSONL")->required();
  app->add_option("--out-dev", o->out_dev, "Dev JSONL");
  cmds.push_back({app, "interleave",
                  [o] { return Paths(o->in.begin(), o->in.end()); },
                  [o, seed, split, &g](std::ostream& out) {
                    auto corpus_cfg = g.section("corpus");
                    if (!seed->count() && corpus_cfg.contains("seed")) o->seed = corpus_cfg["seed"].get<uint64_t>();
                    if (!split->count() && corpus_cfg.contains("split")) o->split = corpus_cfg["split"].get<double>();
                    std::vector<corpus::TrainingRecord> all;
                    for (const auto& p : o->in) {
                      auto part = corpus::read_training_file(p);
                      all.insert(all.end(), part.begin(), part.end());
                    }
                    if (all.empty()) throw Error(ErrorCode::kEmptyInput, "no training records to interleave");
                    auto parts = corpus::split_stratified(corpus::group_by_dimension(all), o->split, o->seed);
                    auto train = corpus::interleave(std::move(parts.train), o->seed);
                    auto dev = corpus::interleave(std::move(parts.dev), o->seed);
                    corpus::emit_training_file(train, o->out_train);
                    Paths written{o->out_train};
                    if (!o->out_dev.empty()) {
                      corpus::emit_training_file(dev, o->out_dev);
                      written.emplace_back(o->out_dev);
                    }
                    out << "train " << train.size() << ", dev " << dev.size() << "\n";
                    return written;
                  },
                  [o] {
                    return json{{"in", o->in}, {"seed", o->seed}, {"split", o->split},
                                {"out_train", o->out_train}, {"out_dev", o->out_dev}};
                  }});
}

std::shared_ptr<probe::EntityExtractor> make_extractor(const std::string& kind,
                                                       const std::string& sidecar,
                                                       const std::string& lexicon) {
  if (kind == "sidecar") {
    if (sidecar.empty()) throw Error(ErrorCode::kInvalidArgument, "--extractor sidecar needs --sidecar");
    return std::make_shared<probe::SidecarExtractor>(sidecar);
  }
  if (kind != "rule") throw Error(ErrorCode::kInvalidArgument, "extractor must be rule or sidecar");
  auto lex = probe::LexiconConfig::defaults();
  if (!lexicon.empty()) lex = probe::LexiconConfig::from_json(json::parse(io::read_file(lexicon)));
  return std::make_shared<probe::RuleBasedExtractor>(std::move(lex));
}

void add_probe(CLI::App& root, std::vector<Command>& cmds, const Globals& g) {
  struct Opts {
    std::string situations, extractor = "rule", sidecar, lexicon, out, se_out;
    DatasetFlags dataset;
    GatewayFlags gw;
  };
  auto o = std::make_shared<Opts>();
  auto* app = root.add_subcommand("probe", "Generate probing questions (and optionally answer them)");
  app->add_option("--situations", o->situations, "JSONL of {id, situation}");
  o->dataset.add(app, false);
  app->add_option("--extractor", o->extractor, "rule|sidecar");
  app->add_option("--sidecar", o->sidecar, "Entity sidecar JSONL");
  app->add_option("--lexicon", o->lexicon, "Lexicon JSON for the rule extractor");
  app->add_option("--out", o->out, "Probe queries JSONL")->required();
  app->add_option("--se-out", o->se_out, "Answer the probes through the gateway and store elaborations here");
  o->gw.add(app);
  cmds.push_back({app, "probe",
                  [o] {
                    Paths p = optional_file(o->situations);
                    for (auto& f : o->dataset.files()) p.push_back(f);
                    for (auto& f : optional_file(o->sidecar)) p.push_back(f);
                    for (auto& f : optional_file(o->lexicon)) p.push_back(f);
                    for (auto& f : o->gw.files()) p.push_back(f);
                    return p;
                  },
                  [o, &g](std::ostream& out) {
                    auto examples = load_situations(o->situations, o->dataset);
                    auto extractor = make_extractor(o->extractor, o->sidecar, o->lexicon);
                    std::vector<json> rows;
                    for (const auto& ex : examples) {
                      for (const auto& q : probe::generate_probe_queries(ex.situation, *extractor, ex.id)) {
                        auto j = probe::to_json(q);
                        j["id"] = ex.id;
                        rows.push_back(std::move(j));
                      }
                    }
                    io::write_jsonl(o->out, rows);
                    Paths written{o->out};
                    out << "wrote " << rows.size() << " probe queries for " << examples.size() << " situations\n";
                    if (!o->se_out.empty()) {
                      auto gw = gateway::Gateway::from_config(o->gw.resolve(g));
                      std::vector<json> stored;
                      for (const auto& ex : examples) {
                        StoredElaboration rec{ex.id, ex.situation, gw->probe(ex.situation, *extractor, ex.id),
                                              ElaborationSource::kProbe};
                        stored.push_back(to_json(rec));
                      }
                      io::write_jsonl(o->se_out, stored);
                      written.emplace_back(o->se_out);
                      out << "wrote " << stored.size() << " probed elaborations to " << o->se_out << "\n";
                    }
                    return written;
                  },
                  [o, &g] {
                    return json{{"situations", o->situations}, {"dataset", o->dataset.to_json()},
                                {"extractor", o->extractor}, {"sidecar", o->sidecar}, {"lexicon", o->lexicon},
                                {"out", o->out}, {"se_out", o->se_out},
                                {"gateway", o->se_out.empty() ? json(nullptr) : o->gw.resolve(g).to_json()}};
                  }});
}

void add_elaborate(CLI::App& root, std::vector<Command>& cmds, const Globals& g) {
  struct Opts {
    std::string situations, out, mode = "dream", cache;
    DatasetFlags dataset;
    GatewayFlags gw;
  };
  auto o = std::make_shared<Opts>();
  auto* app = root.add_subcommand("elaborate", "Generate scene elaborations through the gateway");
  app->add_option("--situations", o->situations, "JSONL of {id, situation}");
  o->dataset.add(app, false);
  app->add_option("--mode", o->mode, "dream (per-dimension generation) or probe");
  app->add_option("--cache", o->cache, "Elaboration cache JSONL");
  app->add_option("--out", o->out, "Stored elaborations JSONL")->required();
  o->gw.add(app);
  cmds.push_back({app, "elaborate",
                  [o] {
                    Paths p = optional_file(o->situations);
                    for (auto& f : o->dataset.files()) p.push_back(f);
                    for (auto& f : o->gw.files()) p.push_back(f);
                    return p;
                  },
                  [o, &g](std::ostream& out) {
                    if (o->mode != "dream" && o->mode != "probe") {
                      throw Error(ErrorCode::kInvalidArgument, "--mode must be dream or probe");
                    }
                    auto examples = load_situations(o->situations, o->dataset);
                    auto gw = gateway::Gateway::from_config(o->gw.resolve(g));
                    auto mode = o->mode == "dream" ? qa::GatewaySeProvider::Mode::kDream
                                                   : qa::GatewaySeProvider::Mode::kProbe;
                    std::shared_ptr<qa::SeProvider> provider = std::make_shared<qa::GatewaySeProvider>(gw, mode);
                    if (!o->cache.empty()) provider = std::make_shared<qa::CachingSeProvider>(provider, o->cache);
                    std::vector<json> rows;
                    for (const auto& ex : examples) {
                      auto se = provider->get(ex).value_or(SceneElaboration{});
                      rows.push_back(to_json(StoredElaboration{
                          ex.id, ex.situation, se,
                          o->mode == "dream" ? ElaborationSource::kDream : ElaborationSource::kProbe}));
                    }
                    io::write_jsonl(o->out, rows);
                    out << "wrote " << rows.size() << " elaborations to " << o->out << "\n";
                    Paths written{o->out};
                    if (!o->cache.empty() && fs::exists(o->cache)) written.emplace_back(o->cache);
                    return written;
                  },
                  [o, &g] {
                    return json{{"situations", o->situations}, {"dataset", o->dataset.to_json()},
                                {"mode", o->mode}, {"cache", o->cache}, {"out", o->out},
                                {"gateway", o->gw.resolve(g).to_json()}};
                  }});
}

void add_answer(CLI::App& root, std::vector<Command>& cmds, const Globals& g) {
  struct Opts {
    DatasetFlags dataset;
    GatewayFlags gw;
    std::string se = "none", components, out;
    int jobs = 4;
  };
  auto o = std::make_shared<Opts>();
  auto* app = root.add_subcommand("answer", "Answer a benchmark, optionally with elaboration context");
  o->dataset.add(app, true);
  app->add_option("--se", o->se, "Stored elaborations JSONL, or 'none'");
  app->add_option("--components", o->components, "Comma-separated subset: rot,emotion,motivation,consequence");
  app->add_option("--out", o->out, "Audit JSONL")->required();
  auto* jobs = app->add_option("--jobs", o->jobs, "Parallel requests");
  o->gw.add(app);
  cmds.push_back({app, "answer",
                  [o] {
                    Paths p = o->dataset.files();
                    for (auto& f : optional_file(o->se)) p.push_back(f);
                    for (auto& f : o->gw.files()) p.push_back(f);
                    return p;
                  },
                  [o, jobs, &g](std::ostream& out) {
                    auto answer_cfg = g.section("answer");
                    if (!jobs->count() && answer_cfg.contains("jobs")) o->jobs = answer_cfg["jobs"].get<int>();
                    auto gw = gateway::Gateway::from_config(o->gw.resolve(g));
                    auto se = stored_se(o->se);
                    qa::EvaluateOptions opts;
                    opts.se_source = se.get();
                    opts.jobs = o->jobs;
                    if (!o->components.empty()) opts.components = parse_dimension_list(o->components);
                    auto result = qa::evaluate(o->dataset.config(), *gw, opts);
                    qa::write_audit(o->out, result);
                    out << "accuracy " << fixed(result.accuracy) << " (" << result.n_correct << "/"
                        << result.n << "), failed " << result.n_failed << "\n";
                    return Paths{o->out};
                  },
                  [o, &g] {
                    return json{{"dataset", o->dataset.to_json()}, {"se", o->se}, {"components", o->components},
                                {"out", o->out}, {"gateway", o->gw.resolve(g).to_json()}};
                  }});
}

void add_score(CLI::App& root, std::vector<Command>& cmds, const Globals&) {
  struct Opts {
    std::string audit;
    bool as_json = false;
  };
  auto o = std::make_shared<Opts>();
  auto* app = root.add_subcommand("score", "Accuracy of an audit file");
  app->add_option("--audit", o->audit, "Audit JSONL")->required();
  app->add_flag("--json", o->as_json, "Print JSON");
  cmds.push_back({app, "score", [o] { return Paths{o->audit}; },
                  [o](std::ostream& out) {
                    if (!fs::is_regular_file(o->audit)) {
                      throw Error(ErrorCode::kIoError, "cannot open audit " + o->audit);
                    }
                    auto result = qa::summarize(qa::read_audit(o->audit));
                    if (o->as_json) {
                      out << json{{"accuracy", result.accuracy}, {"n", result.n},
                                  {"correct", result.n_correct}, {"failed", result.n_failed}}
                                 .dump()
                          << "\n";
                    } else {
                      out << "accuracy " << fixed(result.accuracy) << " (" << result.n_correct << "/"
                          << result.n << "), failed " << result.n_failed << "\n";
                    }
                    return Paths{};
                  },
                  [o] { return json{{"audit", o->audit}}; }});
}

void add_knn(CLI::App& root, std::vector<Command>& cmds, const Globals& g) {
  auto* knn = root.add_subcommand("knn", "Nearest-neighbour answering over embeddings");
  knn->require_subcommand(1);

  struct BuildOpts {
    DatasetFlags dataset;
    GatewayFlags gw;
    std::string se = "none", out, embed_cache;
  };
  auto b = std::make_shared<BuildOpts>();
  auto* build = knn->add_subcommand("build", "Embed training examples into an index");
  b->dataset.add(build, true);
  build->add_option("--se,--with-se", b->se, "Stored elaborations JSONL, or 'none'");
  build->add_option("--embed-cache", b->embed_cache, "Embedding cache JSONL");
  build->add_option("--out", b->out, "Index file")->required();
  b->gw.add(build);

  auto embedder_for = [&g](const GatewayFlags& flags, const std::string& cache) {
    auto emb = gateway::make_embedder(flags.resolve(g));
    if (!cache.empty()) emb = std::make_shared<gateway::CachedEmbeddingProvider>(emb, cache);
    return emb;
  };

  cmds.push_back({build, "knn build",
                  [b] {
                    Paths p = b->dataset.files();
                    for (auto& f : optional_file(b->se)) p.push_back(f);
                    for (auto& f : b->gw.files()) p.push_back(f);
                    return p;
                  },
                  [b, embedder_for](std::ostream& out) {
                    auto emb = embedder_for(b->gw, b->embed_cache);
                    auto se = stored_se(b->se);
                    auto index = knn::build_index(qa::load_benchmark(b->dataset.config()), *emb, se.get());
                    knn::write_index(b->out, index);
                    out << "indexed " << index.points.size() << " points (dim " << index.dim
                        << (index.with_se ? ", with elaborations" : "") << ")\n";
                    Paths written{b->out};
                    if (!b->embed_cache.empty() && fs::exists(b->embed_cache)) written.emplace_back(b->embed_cache);
                    return written;
                  },
                  [b, &g] {
                    return json{{"dataset", b->dataset.to_json()}, {"se", b->se}, {"out", b->out},
                                {"gateway", b->gw.resolve(g).to_json()}};
                  }});

  struct ClassifyOpts {
    std::string index, text;
    size_t k = 5;
    GatewayFlags gw;
  };
  auto c = std::make_shared<ClassifyOpts>();
  auto* classify = knn->add_subcommand("classify", "Label one query text");
  classify->add_option("--index", c->index, "Index file")->required();
  classify->add_option("--text", c->text, "Query text (situation plus elaboration if the index has them)")->required();
  classify->add_option("--k", c->k, "Neighbours");
  c->gw.add(classify);
  cmds.push_back({classify, "knn classify",
                  [c] {
                    Paths p{c->index};
                    for (auto& f : c->gw.files()) p.push_back(f);
                    return p;
                  },
                  [c, &g](std::ostream& out) {
                    auto index = knn::read_index(c->index);
                    auto emb = gateway::make_embedder(c->gw.resolve(g));
                    auto result = knn::classify(index, c->text, *emb, c->k);
                    json neighbors = json::array();
                    for (const auto& n : result.neighbors) {
                      neighbors.push_back({{"id", n.id}, {"label", n.label}, {"distance", n.distance}});
                    }
                    out << json{{"label", result.label}, {"neighbors", neighbors}}.dump() << "\n";
                    return Paths{};
                  },
                  [c, &g] {
                    return json{{"index", c->index}, {"text", c->text}, {"k", c->k},
                                {"gateway", c->gw.resolve(g).to_json()}};
                  }});

  struct EvalOpts {
    std::string index, se = "none", dump, embed_cache;
    size_t k = 5;
    int jobs = 4;
    DatasetFlags dataset;
    GatewayFlags gw;
  };
  auto e = std::make_shared<EvalOpts>();
  auto* evaluate = knn->add_subcommand("evaluate", "Accuracy of an index on a test set");
  evaluate->add_option("--index", e->index, "Index file")->required();
  e->dataset.add(evaluate, true);
  evaluate->add_option("--se,--with-se", e->se, "Stored elaborations JSONL for the queries, or 'none'");
  auto* k_opt = evaluate->add_option("--k", e->k, "Neighbours");
  evaluate->add_option("--dump", e->dump, "Neighbour dump JSONL");
  evaluate->add_option("--embed-cache", e->embed_cache, "Embedding cache JSONL");
  evaluate->add_option("--jobs", e->jobs, "Parallel queries");
  e->gw.add(evaluate);
  cmds.push_back({evaluate, "knn evaluate",
                  [e] {
                    Paths p{e->index};
                    for (auto& f : e->dataset.files()) p.push_back(f);
                    for (auto& f : optional_file(e->se)) p.push_back(f);
                    for (auto& f : e->gw.files()) p.push_back(f);
                    return p;
                  },
                  [e, k_opt, embedder_for, &g](std::ostream& out) {
                    auto knn_cfg = g.section("knn");
                    if (!k_opt->count() && knn_cfg.contains("k")) e->k = knn_cfg["k"].get<size_t>();
                    auto index = knn::read_index(e->index);
                    auto emb = embedder_for(e->gw, e->embed_cache);
                    auto se = stored_se(e->se);
                    auto result = knn::evaluate_knn(index, qa::load_benchmark(e->dataset.config()), *emb,
                                                    e->k, se.get(), e->jobs);
                    out << "accuracy " << fixed(result.accuracy) << " (" << result.n_correct << "/"
                        << result.n << "), k=" << e->k << (index.with_se ? ", with elaborations" : "") << "\n";
                    Paths written;
                    if (!e->dump.empty()) {
                      knn::write_neighbor_dump(e->dump, index, result);
                      written.emplace_back(e->dump);
                    }
                    if (!e->embed_cache.empty() && fs::exists(e->embed_cache)) written.emplace_back(e->embed_cache);
                    return written;
                  },
                  [e, &g] {
                    return json{{"index", e->index}, {"dataset", e->dataset.to_json()}, {"se", e->se},
                                {"k", e->k}, {"dump", e->dump}, {"gateway", e->gw.resolve(g).to_json()}};
                  }});
}

void add_metrics(CLI::App& root, std::vector<Command>& cmds, const Globals&) {
  auto* metrics = root.add_subcommand("metrics", "Rubric aggregation and prediction-change analysis");
  metrics->require_subcommand(1);

  struct AggOpts {
    std::string in, out, system;
  };
  auto a = std::make_shared<AggOpts>();
  auto* agg = metrics->add_subcommand("aggregate", "Aggregate annotation JSONL into a report");
  agg->add_option("--in", a->in, "Annotation JSONL")->required();
  agg->add_option("--out", a->out, "Report JSON")->required();
  agg->add_option("--system", a->system, "Only this system");
  cmds.push_back({agg, "metrics aggregate", [a] { return Paths{a->in}; },
                  [a](std::ostream& out) {
                    auto items = metrics::aggregate_all(metrics::read_annotations(a->in));
                    std::vector<std::string> systems;
                    if (!a->system.empty()) {
                      systems.push_back(a->system);
                    } else {
                      for (const auto& s : items) {
                        if (std::find(systems.begin(), systems.end(), s.system) == systems.end()) {
                          systems.push_back(s.system);
                        }
                      }
                    }
                    json report = {{"systems", json::object()}, {"items", json::array()}};
                    for (const auto& sys : systems) {
                      auto summary = metrics::corpus_report(items, sys);
                      report["systems"][sys] = metrics::to_json(summary);
                      out << sys << ": accuracy " << fixed(summary.accuracy_pct, 2) << "% usefulness "
                          << fixed(summary.usefulness_pct, 2) << "% consistency "
                          << fixed(summary.consistency_pct, 2) << "% over " << summary.n_items << " items\n";
                    }
                    for (const auto& s : items) {
                      if (!a->system.empty() && s.system != a->system) continue;
                      report["items"].push_back({{"item_id", s.item_id}, {"system", s.system},
                                                 {"accuracy", s.accuracy}, {"usefulness", s.usefulness},
                                                 {"consistency", s.consistency}, {"n_workers", s.n_workers},
                                                 {"flagged", s.flagged}});
                    }
                    io::write_file(a->out, report.dump(2) + "\n");
                    return Paths{a->out};
                  },
                  [a] { return json{{"in", a->in}, {"out", a->out}, {"system", a->system}}; }});

  struct DeltaOpts {
    std::string baseline, with_se;
  };
  auto d = std::make_shared<DeltaOpts>();
  auto* delta = metrics->add_subcommand("delta", "Prediction changes between two audits");
  delta->add_option("--baseline", d->baseline, "Audit without elaborations")->required();
  delta->add_option("--with-se", d->with_se, "Audit with elaborations")->required();
  cmds.push_back({delta, "metrics delta", [d] { return Paths{d->baseline, d->with_se}; },
                  [d](std::ostream& out) {
                    auto report = metrics::prediction_change_report(qa::read_audit(d->baseline),
                                                                    qa::read_audit(d->with_se));
                    out << metrics::to_json(report).dump() << "\n";
                    return Paths{};
                  },
                  [d] { return json{{"baseline", d->baseline}, {"with_se", d->with_se}}; }});
}

void add_annotation_export(CLI::App& root, std::vector<Command>& cmds, const Globals&) {
  struct Opts {
    DatasetFlags dataset;
    std::vector<std::string> se;
    std::string out, annotations_out, host = "127.0.0.1";
    int serve = -1;
  };
  auto o = std::make_shared<Opts>();
  auto* app = root.add_subcommand("serve-annotation-export",
                                  "Write rating tasks for the annotation tool, optionally serve them");
  o->dataset.add(app, true);
  app->add_option("--se", o->se, "system=path, system in {macaw_probe, dream}; repeatable")->required();
  app->add_option("--out", o->out, "Task JSONL")->required();
  app->add_option("--serve", o->serve, "Serve tasks and collect annotations on this port");
  app->add_option("--host", o->host, "Bind address for --serve");
  app->add_option("--annotations-out", o->annotations_out, "Where served submissions are appended");
  auto parse_se = [o] {
    std::vector<std::pair<std::string, std::string>> pairs;
    for (const auto& spec : o->se) {
      auto eq = spec.find('=');
      if (eq == std::string::npos) throw Error(ErrorCode::kInvalidArgument, "--se expects system=path");
      pairs.emplace_back(spec.substr(0, eq), spec.substr(eq + 1));
    }
    return pairs;
  };
  cmds.push_back({app, "serve-annotation-export",
                  [o, parse_se] {
                    Paths p = o->dataset.files();
                    for (const auto& [sys, path] : parse_se()) p.emplace_back(path);
                    return p;
                  },
                  [o, parse_se](std::ostream& out) {
                    std::vector<std::shared_ptr<qa::SeProvider>> owned;
                    std::vector<std::pair<std::string, qa::SeProvider*>> systems;
                    for (const auto& [sys, path] : parse_se()) {
                      owned.push_back(std::make_shared<qa::StoredSeProvider>(path));
                      systems.emplace_back(sys, owned.back().get());
                    }
                    auto tasks = annotation::build_tasks(qa::load_benchmark(o->dataset.config()), systems);
                    annotation::write_tasks(o->out, tasks);
                    out << "wrote " << tasks.size() << " rating tasks to " << o->out << "\n";
                    Paths written{o->out};
                    if (o->serve >= 0) {
                      auto sink = o->annotations_out.empty() ? fs::path(o->out).replace_extension(".annotations.jsonl")
                                                             : fs::path(o->annotations_out);
                      annotation::AnnotationServer server(o->out, sink);
                      out << "serving on http://" << o->host << ":" << o->serve << " (GET /tasks, POST /annotations)\n"
                          << std::flush;
                      server.run(o->host, o->serve);
                      if (fs::exists(sink)) written.push_back(sink);
                    }
                    return written;
                  },
                  [o] {
                    return json{{"dataset", o->dataset.to_json()}, {"se", o->se}, {"out", o->out}, {"serve", o->serve}};
                  }});
}

void print_error(std::ostream& err, std::string_view code, const std::string& message,
                 const std::string& detail = {}) {
  json j = {{"error", code}, {"message", message}};
  if (!detail.empty()) j["detail"] = detail;
  err << j.dump() << "\n";
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Scene elaboration corpus, QA and evaluation toolkit", "sceneqa"};
  app.set_version_flag("--version", std::string(runs::kToolVersion));
  app.require_subcommand(1);
  Globals globals;
  app.add_option("--config", globals.config_path, "JSON config with per-module sections");
  app.add_option("--runs-dir", globals.runs_dir, "Run registry directory (default: RUNS_DIR or ./runs)");
  app.add_flag("--no-record", globals.no_record, "Do not write a run manifest");

  std::vector<Command> cmds;
  add_build_corpus(app, cmds, globals);
  add_interleave(app, cmds, globals);
  add_probe(app, cmds, globals);
  add_elaborate(app, cmds, globals);
  add_answer(app, cmds, globals);
  add_score(app, cmds, globals);
  add_knn(app, cmds, globals);
  add_metrics(app, cmds, globals);
  add_annotation_export(app, cmds, globals);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << runs::kToolVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    bool unknown = false;
    std::string word;
    // First positional word, skipping the values of global options.
    for (size_t i = 0; i < args.size(); ++i) {
      const auto& a = args[i];
      if (a == "--config" || a == "--runs-dir") {
        ++i;
        continue;
      }
      if (a.starts_with("-")) continue;
      auto subs = app.get_subcommands([](const CLI::App*) { return true; });
      unknown = std::none_of(subs.begin(), subs.end(), [&](const CLI::App* s) { return s->get_name() == a; });
      word = a;
      break;
    }
    if (unknown) {
      print_error(err, to_string(ErrorCode::kUnknownCommand), "unknown command '" + word + "'; see --help");
    } else {
      print_error(err, "UsageError", e.what());
    }
    return 2;
  }

  const Command* selected = nullptr;
  for (const auto& c : cmds) {
    if (c.app->parsed()) selected = &c;
  }
  if (!selected) {
    print_error(err, to_string(ErrorCode::kUnknownCommand), "no subcommand selected");
    return 2;
  }

  try {
    if (!globals.config_path.empty()) {
      try {
        globals.file_config = json::parse(io::read_file(globals.config_path));
      } catch (const json::parse_error& e) {
        throw Error(ErrorCode::kConfigError, globals.config_path + ": " + e.what());
      }
    }
    fs::path runs_dir = globals.runs_dir;
    if (runs_dir.empty()) {
      runs_dir = runs::RunRegistry::resolve_dir(globals.file_config.value("runs_dir", std::string("runs")));
    }
    auto inputs = selected->inputs();
    if (!globals.config_path.empty()) inputs.emplace_back(globals.config_path);
    for (const auto& p : inputs) {
      if (!fs::is_regular_file(p)) throw Error(ErrorCode::kIoError, "cannot open " + p.string());
    }
    std::optional<runs::RunManifest> manifest;
    if (!globals.no_record) {
      manifest = runs::begin_run(selected->name, selected->config(), inputs);
    }
    auto outputs = selected->run(out);
    if (manifest) {
      runs::RunRegistry registry(runs_dir);
      auto id = registry.record_run(std::move(*manifest), outputs);
      out << "run " << id << " recorded in " << registry.registry_path().string() << "\n";
    }
    return 0;
  } catch (const Error& e) {
    print_error(err, to_string(e.code()), e.what(), e.detail());
  } catch (const json::exception& e) {
    print_error(err, to_string(ErrorCode::kConfigError), e.what());
  } catch (const std::exception& e) {
    print_error(err, "Internal", e.what());
  }
  return 1;
}

int dispatch(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dispatch(args, std::cout, std::cerr);
}

}  // namespace sceneqa::cli
