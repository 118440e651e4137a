#pragma once

// Situation generator with a known answer: each sentence is assembled from
// mentions whose expected entity surface is recorded alongside.

#include <algorithm>
#include <random>
#include <string>
#include <vector>

namespace testutil {

struct GeneratedSituation {
  std::string text;
  std::vector<std::string> expected;  // surfaces in first-mention order
};

inline GeneratedSituation generate_situation(std::mt19937_64& rng) {
  struct Mention {
    std::string text;
    std::string surface;
  };
  static const std::vector<Mention> mentions = {
      {"Rick", "Rick"},           {"Mary Jane", "Mary Jane"}, {"the woman", "woman"},
      {"her daughter", "daughter"}, {"Tom", "Tom"},           {"the teacher", "teacher"},
      {"a stranger", "stranger"}, {"Aunt Clara", "Aunt Clara"}, {"the neighbors", "neighbors"},
      {"Priya", "Priya"},         {"his boss", "boss"},        {"the in-laws", "in-laws"}};
  static const std::vector<std::string> verbs = {"talked to", "waited for", "argued with",
                                                 "laughed at", "helped", "called"};
  static const std::vector<std::string> tails = {"about the weather.", "near the old bridge.",
                                                 "after dinner.", "in the rain.", "for an hour."};
  static const std::vector<std::string> empty = {"This winter is very cold.",
                                                 "The rain fell all night.",
                                                 "It was a quiet morning in the valley."};
  GeneratedSituation out;
  std::uniform_int_distribution<int> kind(0, 9);
  int k = kind(rng);
  if (k == 0) {
    out.text = empty[rng() % empty.size()];
    return out;
  }
  bool first_person = k == 1 || k == 2;
  std::vector<size_t> order(mentions.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  size_t n = 1 + rng() % 3;
  std::vector<Mention> picked;
  for (size_t i = 0; i < n; ++i) picked.push_back(mentions[order[i]]);

  std::string subject = first_person ? "I" : picked[0].text;
  size_t start = first_person ? 0 : 1;
  if (!first_person && (subject.rfind("the ", 0) == 0 || subject.rfind("a ", 0) == 0 ||
                        subject.rfind("her ", 0) == 0 || subject.rfind("his ", 0) == 0)) {
    subject[0] = static_cast<char>(subject[0] - 'a' + 'A');
  }
  if (first_person) {
    out.expected.push_back("I (myself)");
  } else {
    out.expected.push_back(picked[0].surface);
  }
  out.text = subject + " " + verbs[rng() % verbs.size()];
  if (start >= picked.size()) {
    out.text += " nobody";
  }
  for (size_t i = start; i < picked.size(); ++i) {
    if (i > start) out.text += (i + 1 == picked.size()) ? " and" : ",";
    out.text += " " + picked[i].text;
    out.expected.push_back(picked[i].surface);
  }
  out.text += " " + tails[rng() % tails.size()];
  return out;
}

// Random component text: words, punctuation, stray brackets, multi-sentence.
inline std::string random_component_text(std::mt19937_64& rng) {
  static const std::vector<std::string> pieces = {
      "Rick's", "emotion", "is", "amazed.", "[weather]", "sunny", "It's", "good", "to", "help.",
      "[social", "norm", "]", "likely", "consequence", "caf\xc3\xa9", "[", "]", "(A)", "don't",
      "I (myself)", "[emotion", "motivation]", "x", "42", "\"quoted\"", "a-b", "end!"};
  std::uniform_int_distribution<size_t> len(1, 12), pick(0, pieces.size() - 1);
  std::string out;
  size_t n = len(rng);
  for (size_t i = 0; i < n; ++i) {
    if (i) out += (rng() % 7 == 0) ? "  " : " ";
    out += pieces[pick(rng)];
  }
  return out;
}

}  // namespace testutil
