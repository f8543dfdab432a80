#pragma once

// Problems, code candidates, test candidates, and their JSONL persistence.
// A Corpus plus its sidecar Vocabulary is the unit every pipeline stage
// consumes; both are pure values and safe to share read-only across threads.

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fdpo/token.hpp"

namespace fdpo {

inline constexpr int kCorpusFormatVersion = 1;

struct CodeCandidate {
  int idx = 0;
  TokenSeq code;
};

struct TestCandidate {
  int idx = 0;
  nlohmann::json payload;  // interpreted by the executor backend
};

struct Problem {
  std::string id;
  std::string prompt;
  std::vector<CodeCandidate> candidates;
  std::vector<TestCandidate> tests;
  nlohmann::json metadata;  // generator-only ground truth; never consumed by pipeline stages

  int k() const { return static_cast<int>(candidates.size()); }
};

struct Corpus {
  std::vector<Problem> problems;
};

inline nlohmann::json problem_to_json(const Problem& p) {
  nlohmann::json cands = nlohmann::json::array();
  for (const auto& c : p.candidates) cands.push_back({{"idx", c.idx}, {"code", c.code.ids}});
  nlohmann::json tests = nlohmann::json::array();
  for (const auto& t : p.tests) tests.push_back({{"idx", t.idx}, {"payload", t.payload}});
  return {{"format_version", kCorpusFormatVersion},
          {"id", p.id},
          {"prompt", p.prompt},
          {"candidates", cands},
          {"tests", tests},
          {"metadata", p.metadata}};
}

inline Problem problem_from_json(const nlohmann::json& j) {
  if (j.value("format_version", -1) != kCorpusFormatVersion)
    throw std::runtime_error("corpus: unsupported format_version");
  Problem p;
  p.id = j.at("id").get<std::string>();
  p.prompt = j.at("prompt").get<std::string>();
  for (const auto& c : j.at("candidates")) {
    CodeCandidate cc;
    cc.idx = c.at("idx").get<int>();
    cc.code.ids = c.at("code").get<std::vector<TokenId>>();
    if (cc.code.empty()) throw std::runtime_error("corpus: empty candidate code in " + p.id);
    p.candidates.push_back(std::move(cc));
  }
  for (const auto& t : j.at("tests")) {
    TestCandidate tc;
    tc.idx = t.at("idx").get<int>();
    tc.payload = t.at("payload");
    p.tests.push_back(std::move(tc));
  }
  p.metadata = j.value("metadata", nlohmann::json::object());
  return p;
}

inline void write_corpus_jsonl(const Corpus& corpus, std::ostream& os) {
  for (const auto& p : corpus.problems) os << problem_to_json(p).dump() << '\n';
}

inline Corpus read_corpus_jsonl(std::istream& is) {
  Corpus corpus;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    corpus.problems.push_back(problem_from_json(nlohmann::json::parse(line)));
  }
  return corpus;
}

inline Corpus load_corpus_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("corpus: cannot open " + path);
  return read_corpus_jsonl(in);
}

inline Vocabulary load_vocab_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("vocab: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return Vocabulary::from_json(j);
}

}  // namespace fdpo
