// Executor: interpreter semantics against an independent text-based oracle,
// link-matrix construction, thread invariance, and the CSV dump format.

#include <catch2/catch_amalgamated.hpp>

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fdpo/executor.hpp"
#include "fdpo/rng.hpp"
#include "fdpo/token.hpp"

using namespace fdpo;

namespace {

// ---------------------------------------------------------------------------
// Independent oracle: parses the *text* form of a program and interprets it
// with its own representation. Shares no code with run_ministack.
// ---------------------------------------------------------------------------
struct OracleResult {
  std::string status;  // Pass | WrongAnswer | RuntimeError | StepLimit
  std::optional<long long> value;
};

OracleResult oracle_run(const std::string& text, const std::vector<long long>& input,
                        long long expected, int max_steps) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    if (c == ' ' || c == '\t' || c == '\n') {
      if (!cur.empty()) words.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) words.push_back(cur);

  std::vector<long long> st(input.begin(), input.end());
  int steps = 0;
  for (std::size_t i = 0; i < words.size();) {
    if (steps >= max_steps) return {"StepLimit", std::nullopt};
    ++steps;
    const std::string& w = words[i];
    if (w == "PUSH") {
      if (i + 1 >= words.size()) return {"RuntimeError", std::nullopt};
      const std::string& arg = words[i + 1];
      for (char c : arg)
        if (!isdigit(static_cast<unsigned char>(c))) return {"RuntimeError", std::nullopt};
      st.push_back(std::stoll(arg));
      i += 2;
    } else if (w == "ADD" || w == "SUB" || w == "MUL") {
      if (st.size() < 2) return {"RuntimeError", std::nullopt};
      long long b = st.back(); st.pop_back();
      long long a = st.back(); st.pop_back();
      unsigned long long ua = static_cast<unsigned long long>(a);
      unsigned long long ub = static_cast<unsigned long long>(b);
      unsigned long long r = w == "ADD" ? ua + ub : (w == "SUB" ? ua - ub : ua * ub);
      st.push_back(static_cast<long long>(r));
      ++i;
    } else if (w == "DUP") {
      if (st.empty()) return {"RuntimeError", std::nullopt};
      st.push_back(st.back());
      ++i;
    } else if (w == "SWAP") {
      if (st.size() < 2) return {"RuntimeError", std::nullopt};
      std::swap(st[st.size() - 1], st[st.size() - 2]);
      ++i;
    } else if (w == "RET") {
      if (st.empty()) return {"RuntimeError", std::nullopt};
      return {st.back() == expected ? "Pass" : "WrongAnswer", st.back()};
    } else {
      return {"RuntimeError", std::nullopt};
    }
  }
  return {"StepLimit", std::nullopt};
}

std::string random_program_text(Rng& rng, int n_ops, bool ensure_ret) {
  static const char* ops[] = {"PUSH", "ADD", "SUB", "MUL", "DUP", "SWAP", "RET"};
  std::string text;
  for (int i = 0; i < n_ops; ++i) {
    const char* op = ops[rng.next_int(0, 6)];
    text += op;
    if (std::string(op) == "PUSH") {
      text += ' ';
      text += std::to_string(rng.next_int(0, 99));
    }
    text += '\n';
  }
  if (ensure_ret) text += "RET\n";
  return text;
}

}  // namespace

TEST_CASE("hand-written programs produce the expected outcomes") {
  Vocabulary v;
  auto run = [&](const std::string& text, std::vector<std::int64_t> in, std::int64_t want) {
    return run_ministack(tokenize(text, v), v, StackTest{std::move(in), want});
  };

  REQUIRE(run("PUSH 2\nPUSH 3\nADD\nRET\n", {}, 5).status == ExecStatus::Pass);
  REQUIRE(run("PUSH 2\nPUSH 3\nADD\nRET\n", {}, 6).status == ExecStatus::WrongAnswer);
  REQUIRE(run("PUSH 7\nMUL\nRET\n", {3}, 21).status == ExecStatus::Pass);   // uses input
  REQUIRE(run("SUB\nRET\n", {10, 4}, 6).status == ExecStatus::Pass);        // 10 - 4
  REQUIRE(run("SWAP\nSUB\nRET\n", {10, 4}, -6).status == ExecStatus::Pass); // 4 - 10
  REQUIRE(run("DUP\nMUL\nRET\n", {5}, 25).status == ExecStatus::Pass);
  REQUIRE(run("ADD\nRET\n", {1}, 0).status == ExecStatus::RuntimeError);    // underflow
  REQUIRE(run("NOP\nRET\n", {}, 0).status == ExecStatus::RuntimeError);     // unknown op
  REQUIRE(run("PUSH\nRET\n", {}, 0).status == ExecStatus::RuntimeError);    // missing operand
  REQUIRE(run("PUSH 1\n", {}, 1).status == ExecStatus::StepLimit);          // no RET
  REQUIRE(run("", {1}, 1).status == ExecStatus::StepLimit);                 // empty program
}

TEST_CASE("step limit fires") {
  Vocabulary v;
  std::string text;
  for (int i = 0; i < 50; ++i) text += "PUSH 1\n";
  text += "RET\n";
  const TokenSeq prog = tokenize(text, v);
  REQUIRE(run_ministack(prog, v, StackTest{{}, 1}, ExecLimits{10}).status ==
          ExecStatus::StepLimit);
  REQUIRE(run_ministack(prog, v, StackTest{{}, 1}, ExecLimits{1000}).status == ExecStatus::Pass);
}

TEST_CASE("returned value is reported on both pass and wrong-answer") {
  Vocabulary v;
  const TokenSeq prog = tokenize("PUSH 4\nDUP\nMUL\nRET\n", v);
  const ExecOutcome pass = run_ministack(prog, v, StackTest{{}, 16});
  REQUIRE(pass.returned.value() == 16);
  const ExecOutcome wrong = run_ministack(prog, v, StackTest{{}, 17});
  REQUIRE(wrong.status == ExecStatus::WrongAnswer);
  REQUIRE(wrong.returned.value() == 16);
}

TEST_CASE("interpreter agrees with an independent text-based oracle") {
  Vocabulary v;
  Rng rng(555);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::string text = random_program_text(rng, rng.next_int(0, 12), trial % 2 == 0);
    std::vector<std::int64_t> input;
    const int arity = rng.next_int(0, 3);
    for (int i = 0; i < arity; ++i) input.push_back(rng.next_int(-5, 9));
    const std::int64_t expected = rng.next_int(-10, 30);

    const ExecOutcome mine = run_ministack(tokenize(text, v), v, StackTest{input, expected});
    const OracleResult theirs =
        oracle_run(text, std::vector<long long>(input.begin(), input.end()), expected, 1000);
    INFO("program:\n" << text);
    REQUIRE(std::string(to_string(mine.status)) == theirs.status);
    if (theirs.value) REQUIRE(mine.returned.value() == *theirs.value);
  }
}

namespace {

Problem make_problem(Vocabulary& v) {
  Problem p;
  p.id = "t0";
  p.prompt = "TASK\n";
  p.candidates.push_back({0, tokenize("PUSH 2\nPUSH 3\nADD\nRET\n", v)});  // 5
  p.candidates.push_back({1, tokenize("PUSH 2\nPUSH 3\nMUL\nRET\n", v)});  // 6
  p.candidates.push_back({2, tokenize("ADD\nADD\nRET\n", v)});             // underflow
  p.tests.push_back({0, {{"input", nlohmann::json::array()}, {"expected", 5}}});
  p.tests.push_back({1, {{"input", nlohmann::json::array()}, {"expected", 6}}});
  return p;
}

}  // namespace

TEST_CASE("link matrix matches per-cell outcomes and is thread-invariant") {
  Vocabulary v;
  const Problem p = make_problem(v);
  MiniStackBackend backend(v);

  const LinkMatrix m1 = build_link_matrix(p, backend, 1);
  REQUIRE(m1.n_codes == 3);
  REQUIRE(m1.n_tests == 2);
  REQUIRE(m1.at(0, 0));
  REQUIRE_FALSE(m1.at(0, 1));
  REQUIRE_FALSE(m1.at(1, 0));
  REQUIRE(m1.at(1, 1));
  REQUIRE_FALSE(m1.at(2, 0));
  REQUIRE_FALSE(m1.at(2, 1));

  for (int threads : {2, 3, 7, 16}) {
    const LinkMatrix mt = build_link_matrix(p, backend, threads);
    REQUIRE(mt == m1);
  }
}

TEST_CASE("csv dump uses a test-index header and 0/1 rows, and round-trips") {
  Vocabulary v;
  const Problem p = make_problem(v);
  MiniStackBackend backend(v);
  const LinkMatrix m = build_link_matrix(p, backend, 1);

  std::ostringstream os;
  write_link_matrix_csv(m, p, os);
  REQUIRE(os.str() == "0,1\n1,0\n0,1\n0,0\n");

  std::istringstream is(os.str());
  REQUIRE(read_link_matrix_csv(is) == m);

  std::istringstream bad("0,1\n1,2\n");
  REQUIRE_THROWS_AS(read_link_matrix_csv(bad), std::runtime_error);
  std::istringstream ragged("0,1\n1\n");
  REQUIRE_THROWS_AS(read_link_matrix_csv(ragged), std::runtime_error);
}

TEST_CASE("subprocess backend maps exit status and enforces the timeout") {
  Vocabulary v;
  Problem p;
  p.id = "s0";
  p.candidates.push_back({0, tokenize("RET\n", v)});
  p.tests.push_back({0, {{"input", nlohmann::json::array()}, {"expected", 0}}});

  SubprocessBackend pass_backend(v, "exit 0", 5.0);
  REQUIRE(pass_backend.run_cell(p, 0, 0).status == ExecStatus::Pass);

  SubprocessBackend fail_backend(v, "exit 3", 5.0);
  REQUIRE(fail_backend.run_cell(p, 0, 0).status == ExecStatus::WrongAnswer);

  // the command sees real files for {code} and {test}
  SubprocessBackend file_backend(v, "grep -q RET {code} && grep -q expected {test}", 5.0);
  REQUIRE(file_backend.run_cell(p, 0, 0).status == ExecStatus::Pass);

  SubprocessBackend slow_backend(v, "sleep 5", 0.2);
  REQUIRE(slow_backend.run_cell(p, 0, 0).status == ExecStatus::StepLimit);
}
