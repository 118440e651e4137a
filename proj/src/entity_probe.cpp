#include "sceneqa/entity_probe.hpp"

#include <cctype>

#include "sceneqa/error.hpp"
#include "sceneqa/io.hpp"
#include "sceneqa/text.hpp"

namespace sceneqa::probe {

namespace {

const std::set<std::string> kFirstPerson = {
    "i",  "me",  "my",   "mine", "myself", "we",    "us",    "our",   "ours",
    "ourselves", "i'm", "i've", "i'd", "i'll", "we're", "we've", "we'd", "we'll"};

struct Token {
  std::string word;  // possessive suffix removed
  bool sentence_initial = false;
  bool possessive = false;
  size_t start = 0;  // byte offsets of the raw token
  size_t end = 0;
};

bool word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '\'';
}

std::string normalize_apostrophes(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (size_t i = 0; i < s.size(); ++i) {
    // U+2019 RIGHT SINGLE QUOTATION MARK
    if (i + 2 < s.size() && static_cast<unsigned char>(s[i]) == 0xE2 &&
        static_cast<unsigned char>(s[i + 1]) == 0x80 &&
        static_cast<unsigned char>(s[i + 2]) == 0x99) {
      out.push_back('\'');
      i += 2;
    } else {
      out.push_back(s[i]);
    }
  }
  return out;
}

std::vector<Token> tokenize(std::string_view s) {
  std::vector<Token> tokens;
  bool at_sentence_start = true;
  size_t i = 0;
  while (i < s.size()) {
    char c = s[i];
    if (!word_char(c)) {
      if (c == '.' || c == '!' || c == '?') at_sentence_start = true;
      ++i;
      continue;
    }
    size_t start = i;
    while (i < s.size() && word_char(s[i])) ++i;
    std::string raw(s.substr(start, i - start));
    while (!raw.empty() && (raw.front() == '\'' || raw.front() == '-')) raw.erase(raw.begin());
    Token tok;
    tok.start = start;
    tok.end = i;
    tok.sentence_initial = at_sentence_start;
    at_sentence_start = false;
    if (raw.size() > 2 && (raw.ends_with("'s") || raw.ends_with("'S"))) {
      raw.resize(raw.size() - 2);
      tok.possessive = true;
    } else if (raw.size() > 1 && raw.back() == '\'') {
      raw.pop_back();
      tok.possessive = true;
    }
    while (!raw.empty() && (raw.back() == '\'' || raw.back() == '-')) raw.pop_back();
    if (raw.empty()) continue;
    tok.word = std::move(raw);
    tokens.push_back(std::move(tok));
  }
  return tokens;
}

bool capitalized(const std::string& w) {
  return !w.empty() && std::isupper(static_cast<unsigned char>(w.front()));
}

}  // namespace

nlohmann::json to_json(const ProbeQuery& q) {
  nlohmann::json j = {{"dimension", std::string(json_key(q.dimension))},
                      {"question", q.question}};
  if (q.entity) {
    j["entity"] = {{"surface", q.entity->surface}, {"person", q.entity->is_person}};
  } else {
    j["entity"] = nullptr;
  }
  return j;
}

LexiconConfig LexiconConfig::defaults() {
  LexiconConfig cfg;
  cfg.role_nouns = {
      "man",       "men",        "woman",     "women",    "boy",        "boys",
      "girl",      "girls",      "child",     "children", "kid",        "kids",
      "baby",      "babies",     "infant",    "toddler",  "teen",       "teenager",
      "mother",    "father",     "mom",       "dad",      "mum",        "parent",
      "parents",   "son",        "sons",      "daughter", "daughters",  "brother",
      "brothers",  "sister",     "sisters",   "sibling",  "siblings",   "husband",
      "wife",      "spouse",     "partner",   "boyfriend", "girlfriend", "fiance",
      "fiancee",   "grandmother", "grandfather", "grandma", "grandpa",  "grandparents",
      "aunt",      "uncle",      "cousin",    "nephew",   "niece",      "in-laws",
      "friend",    "friends",    "roommate",  "neighbor", "neighbors",  "neighbour",
      "coworker",  "coworkers",  "colleague", "colleagues", "boss",     "employee",
      "employees", "manager",    "teacher",   "teachers", "student",    "students",
      "classmate", "classmates", "doctor",    "nurse",    "patient",    "customer",
      "customers", "client",     "clients",   "stranger", "strangers",  "guest",
      "guests",    "waiter",     "waitress",  "driver",   "officer",    "police",
      "owner",     "landlord",   "tenant",    "person",   "people",     "lady",
      "guy",       "team",       "coach",     "player",   "players",    "family",
  };
  cfg.non_entity_words = {
      "a",         "an",       "the",      "this",     "that",      "these",    "those",
      "he",        "she",      "it",       "they",     "them",      "his",      "her",
      "hers",      "its",      "their",    "theirs",   "him",       "you",      "your",
      "yours",     "there",    "here",     "when",     "while",     "after",    "before",
      "since",     "because",  "if",       "then",     "so",        "but",      "and",
      "or",        "yet",      "as",       "at",       "in",        "on",       "of",
      "to",        "for",      "with",     "from",     "by",        "during",   "one",
      "some",      "every",    "each",     "all",      "no",        "not",      "what",
      "who",       "why",      "how",      "where",    "which",     "today",    "yesterday",
      "tomorrow",  "tonight",  "last",     "next",     "once",      "later",    "now",
      "recently",  "finally",  "suddenly", "eventually", "always",  "never",    "sometimes",
      "although",  "though",   "instead",  "also",     "still",     "even",     "just",
      "is",        "was",      "are",      "were",     "do",        "does",     "did",
      "can",       "could",    "would",    "should",   "will",      "may",      "might",
      "must",      "it's",     "let's",
      "reaction",  "someone",  "somebody", "everyone", "everybody", "nobody",   "anyone",
      "something", "nothing",  "everything", "many",   "most",      "few",      "several",
      "monday",    "tuesday",  "wednesday", "thursday", "friday",   "saturday", "sunday",
  };
  return cfg;
}

LexiconConfig LexiconConfig::from_json(const nlohmann::json& j) {
  LexiconConfig cfg = defaults();
  auto load = [&](const char* key, std::set<std::string>& target) {
    if (!j.contains(key)) return;
    target.clear();
    for (const auto& w : j.at(key)) target.insert(text::to_lower(w.get<std::string>()));
  };
  try {
    load("role_nouns", cfg.role_nouns);
    load("non_entity_words", cfg.non_entity_words);
    if (j.contains("extra_role_nouns")) {
      for (const auto& w : j.at("extra_role_nouns")) {
        cfg.role_nouns.insert(text::to_lower(w.get<std::string>()));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfigError, std::string("lexicon: ") + e.what());
  }
  return cfg;
}

RuleBasedExtractor::RuleBasedExtractor(LexiconConfig lexicon) : lexicon_(std::move(lexicon)) {}

std::vector<Entity> RuleBasedExtractor::extract(std::string_view,
                                                std::string_view situation) const {
  const std::string normalized = normalize_apostrophes(situation);
  const auto tokens = tokenize(normalized);
  std::vector<Entity> out;
  std::set<std::string> seen;
  auto add = [&](Entity e) {
    if (seen.insert(text::to_lower(e.surface)).second) out.push_back(std::move(e));
  };

  // Whether tokens[j + 1] extends a capitalized name ending at tokens[j].
  auto extends_name = [&](size_t j) {
    if (tokens[j].possessive || j + 1 >= tokens.size()) return false;
    const auto& nxt = tokens[j + 1];
    auto nxt_lower = text::to_lower(nxt.word);
    return nxt.start == tokens[j].end + 1 && !nxt.sentence_initial && capitalized(nxt.word) &&
           !lexicon_.non_entity_words.count(nxt_lower) && !kFirstPerson.count(nxt_lower) &&
           !lexicon_.role_nouns.count(nxt_lower);
  };

  for (size_t i = 0; i < tokens.size(); ++i) {
    const auto& tok = tokens[i];
    const auto lower = text::to_lower(tok.word);
    if (kFirstPerson.count(lower) && (lower != "us" || tok.word == "us")) {
      add({std::string(kFirstPersonSurface), true, true});
      continue;
    }
    // A capitalized role noun before a name is a title ("Aunt Clara").
    if (lexicon_.role_nouns.count(lower) && !(capitalized(tok.word) && extends_name(i))) {
      add({tok.word, true, false});
      continue;
    }
    if (!capitalized(tok.word) || lexicon_.non_entity_words.count(lower)) continue;
    // Sentence-initial gerunds ("Smacking a seat...") describe actions, not people.
    if (tok.sentence_initial && lower.size() > 4 && lower.ends_with("ing")) continue;

    // Merge runs of capitalized words into one name ("Mary Jane").
    std::string name = tok.word;
    size_t j = i;
    while (extends_name(j)) {
      name += " " + tokens[j + 1].word;
      ++j;
    }
    i = j;
    add({name, true, false});
  }
  return out;
}

SidecarExtractor::SidecarExtractor(const std::filesystem::path& path) {
  io::for_each_jsonl(path, [&](const nlohmann::json& row, size_t line) {
    try {
      std::vector<Entity> ents;
      for (const auto& e : row.at("entities")) {
        Entity ent;
        ent.surface = text::trim(e.at("surface").get<std::string>());
        ent.is_person = e.value("person", true);
        if (ent.surface.empty()) continue;
        auto lower = text::to_lower(ent.surface);
        if (kFirstPerson.count(lower) || ent.surface == kFirstPersonSurface) {
          ent.surface = std::string(kFirstPersonSurface);
          ent.is_first_person = true;
          ent.is_person = true;
        }
        bool dup = false;
        for (const auto& prev : ents) dup |= text::to_lower(prev.surface) == text::to_lower(ent.surface);
        if (!dup) ents.push_back(std::move(ent));
      }
      entities_[row.at("id").get<std::string>()] = std::move(ents);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kSchemaError,
                  path.string() + ":" + std::to_string(line) + ": " + e.what());
    }
  });
}

std::vector<Entity> SidecarExtractor::extract(std::string_view id, std::string_view) const {
  auto it = entities_.find(id);
  return it == entities_.end() ? std::vector<Entity>{} : it->second;
}

std::vector<Entity> extract_entities(std::string_view situation) {
  static const RuleBasedExtractor extractor;
  return extractor.extract({}, situation);
}

std::string motivation_question(std::string_view entity) {
  return "What is " + std::string(entity) + "'s motivation?";
}

std::string emotion_question(std::string_view entity) {
  return "What is " + std::string(entity) + "'s emotion?";
}

std::vector<ProbeQuery> generate_probe_queries(const std::vector<Entity>& entities) {
  std::vector<ProbeQuery> queries;
  queries.reserve(entities.size() * 2 + 2);
  for (const auto& e : entities) {
    queries.push_back({Dimension::kMotivation, e, motivation_question(e.surface)});
    queries.push_back({Dimension::kEmotion, e, emotion_question(e.surface)});
  }
  queries.push_back({Dimension::kRuleOfThumb, std::nullopt, std::string(kRuleOfThumbQuestion)});
  queries.push_back({Dimension::kConsequence, std::nullopt, std::string(kConsequenceQuestion)});
  return queries;
}

std::vector<ProbeQuery> generate_probe_queries(std::string_view situation,
                                               const EntityExtractor& extractor,
                                               std::string_view id) {
  if (text::trim(situation).empty()) {
    throw Error(ErrorCode::kInvalidArgument, "empty situation");
  }
  return generate_probe_queries(extractor.extract(id, situation));
}

std::vector<ProbeQuery> generate_probe_queries(std::string_view situation) {
  static const RuleBasedExtractor extractor;
  return generate_probe_queries(situation, extractor);
}

std::string templatize_answer(const Entity& entity, Dimension d, std::string_view raw_answer) {
  return entity_sentence(entity.surface, d, raw_answer);
}

SceneElaboration assemble_probed_se(
    const std::vector<std::pair<ProbeQuery, std::string>>& answers) {
  std::map<Dimension, std::vector<std::string>> parts;
  for (const auto& [query, raw] : answers) {
    auto answer = text::squash_whitespace(raw);
    if (answer.empty()) continue;
    if ((query.dimension == Dimension::kEmotion || query.dimension == Dimension::kMotivation) &&
        query.entity) {
      parts[query.dimension].push_back(templatize_answer(*query.entity, query.dimension, answer));
    } else {
      parts[query.dimension].push_back(answer);
    }
  }
  SceneElaboration se;
  for (const auto& [d, sentences] : parts) se.set(d, text::join(sentences, " "));
  return se;
}

}  // namespace sceneqa::probe
