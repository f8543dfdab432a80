#pragma once

// Execution layer: a small stack-machine interpreter, the boolean code x test
// link matrix, and the three backends that can fill it (embedded interpreter,
// subprocess command, precomputed CSV dump). Outcomes are execution-determined
// and fail-closed: anything that is not a verified pass counts as a fail.

#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "fdpo/corpus.hpp"
#include "fdpo/token.hpp"

#include <csignal>
#include <cstdio>
#include <sys/wait.h>
#include <unistd.h>

namespace fdpo {

enum class ExecStatus { Pass, WrongAnswer, RuntimeError, StepLimit };

inline const char* to_string(ExecStatus s) {
  switch (s) {
    case ExecStatus::Pass: return "Pass";
    case ExecStatus::WrongAnswer: return "WrongAnswer";
    case ExecStatus::RuntimeError: return "RuntimeError";
    case ExecStatus::StepLimit: return "StepLimit";
  }
  return "?";
}

struct ExecOutcome {
  ExecStatus status = ExecStatus::RuntimeError;
  int steps_used = 0;
  std::string detail;
  /// Value on top of the stack at RET; empty when execution never returned.
  std::optional<std::int64_t> returned;

  bool passed() const { return status == ExecStatus::Pass; }
};

struct ExecLimits {
  int max_steps = 1000;
};

/// Toy-language test payload: initial stack plus expected top-of-stack at RET.
struct StackTest {
  std::vector<std::int64_t> input;
  std::int64_t expected = 0;
};

inline StackTest parse_stack_test(const nlohmann::json& payload) {
  StackTest t;
  t.input = payload.at("input").get<std::vector<std::int64_t>>();
  t.expected = payload.at("expected").get<std::int64_t>();
  return t;
}

inline nlohmann::json stack_test_to_json(const StackTest& t) {
  return {{"input", t.input}, {"expected", t.expected}};
}

namespace detail {
inline bool is_ws_lexeme(const std::string& s) {
  for (char c : s)
    if (c != ' ' && c != '\t' && c != '\n') return false;
  return !s.empty();
}
inline bool is_number_lexeme(const std::string& s) {
  for (char c : s)
    if (c < '0' || c > '9') return false;
  return !s.empty();
}
// wraparound arithmetic; keeps the interpreter total on adversarial programs
inline std::int64_t wrap_add(std::int64_t a, std::int64_t b) {
  return static_cast<std::int64_t>(static_cast<std::uint64_t>(a) + static_cast<std::uint64_t>(b));
}
inline std::int64_t wrap_sub(std::int64_t a, std::int64_t b) {
  return static_cast<std::int64_t>(static_cast<std::uint64_t>(a) - static_cast<std::uint64_t>(b));
}
inline std::int64_t wrap_mul(std::int64_t a, std::int64_t b) {
  return static_cast<std::int64_t>(static_cast<std::uint64_t>(a) * static_cast<std::uint64_t>(b));
}
}  // namespace detail

/**
 * Small-step interpreter for the op vocabulary
 * {PUSH k, ADD, SUB, MUL, DUP, SWAP, RET}. Whitespace tokens are separators.
 * Binary ops pop b then a and push (a op b). RET reports the stack top.
 *
 * Reaching the end of the program without RET produces StepLimit: the program
 * never delivered a result within its budget.
 */
inline ExecOutcome run_ministack(const TokenSeq& program, const Vocabulary& vocab,
                                 const StackTest& test, const ExecLimits& limits = {}) {
  std::vector<std::int64_t> stack = test.input;
  int steps = 0;
  std::size_t i = 0;
  const std::size_t n = program.size();

  auto skip_ws = [&](std::size_t pos) {
    while (pos < n && detail::is_ws_lexeme(vocab.lexeme(program[pos]))) ++pos;
    return pos;
  };

  i = skip_ws(0);
  while (i < n) {
    if (steps >= limits.max_steps)
      return {ExecStatus::StepLimit, steps, "step limit reached"};
    ++steps;

    const std::string& op = vocab.lexeme(program[i]);
    if (op == "PUSH") {
      std::size_t j = skip_ws(i + 1);
      if (j >= n || !detail::is_number_lexeme(vocab.lexeme(program[j])))
        return {ExecStatus::RuntimeError, steps, "PUSH without numeric operand"};
      stack.push_back(std::stoll(vocab.lexeme(program[j])));
      i = skip_ws(j + 1);
    } else if (op == "ADD" || op == "SUB" || op == "MUL") {
      if (stack.size() < 2)
        return {ExecStatus::RuntimeError, steps, "stack underflow at " + op};
      std::int64_t b = stack.back();
      stack.pop_back();
      std::int64_t a = stack.back();
      stack.pop_back();
      if (op == "ADD") stack.push_back(detail::wrap_add(a, b));
      else if (op == "SUB") stack.push_back(detail::wrap_sub(a, b));
      else stack.push_back(detail::wrap_mul(a, b));
      i = skip_ws(i + 1);
    } else if (op == "DUP") {
      if (stack.empty()) return {ExecStatus::RuntimeError, steps, "stack underflow at DUP"};
      stack.push_back(stack.back());
      i = skip_ws(i + 1);
    } else if (op == "SWAP") {
      if (stack.size() < 2) return {ExecStatus::RuntimeError, steps, "stack underflow at SWAP"};
      std::swap(stack[stack.size() - 1], stack[stack.size() - 2]);
      i = skip_ws(i + 1);
    } else if (op == "RET") {
      if (stack.empty()) return {ExecStatus::RuntimeError, steps, "stack underflow at RET"};
      std::int64_t value = stack.back();
      if (value == test.expected)
        return {ExecStatus::Pass, steps, "returned " + std::to_string(value), value};
      return {ExecStatus::WrongAnswer, steps,
              "returned " + std::to_string(value) + ", expected " + std::to_string(test.expected),
              value};
    } else {
      return {ExecStatus::RuntimeError, steps, "unknown opcode '" + op + "'"};
    }
  }
  return {ExecStatus::StepLimit, steps, "no RET before end of program"};
}

// ============================================================================
// Link matrix
// ============================================================================

/// Boolean codes x tests execution outcomes; links[i][j] == candidate i passes test j.
struct LinkMatrix {
  int n_codes = 0;
  int n_tests = 0;
  std::vector<std::uint8_t> cells;  // row-major

  LinkMatrix() = default;
  LinkMatrix(int codes, int tests)
      : n_codes(codes), n_tests(tests),
        cells(static_cast<std::size_t>(codes) * static_cast<std::size_t>(tests), 0) {}

  bool at(int code_idx, int test_idx) const {
    return cells[static_cast<std::size_t>(code_idx) * static_cast<std::size_t>(n_tests) +
                 static_cast<std::size_t>(test_idx)] != 0;
  }
  void set(int code_idx, int test_idx, bool v) {
    cells[static_cast<std::size_t>(code_idx) * static_cast<std::size_t>(n_tests) +
          static_cast<std::size_t>(test_idx)] = v ? 1 : 0;
  }
  bool operator==(const LinkMatrix&) const = default;
};

class ExecBackend {
 public:
  virtual ~ExecBackend() = default;
  /// Evaluate one (code, test) cell. Must be safe to call concurrently.
  virtual ExecOutcome run_cell(const Problem& problem, int code_idx, int test_idx) = 0;
};

class MiniStackBackend final : public ExecBackend {
 public:
  MiniStackBackend(const Vocabulary& vocab, ExecLimits limits = {})
      : vocab_(&vocab), limits_(limits) {}

  ExecOutcome run_cell(const Problem& problem, int code_idx, int test_idx) override {
    const auto test = parse_stack_test(problem.tests[static_cast<std::size_t>(test_idx)].payload);
    return run_ministack(problem.candidates[static_cast<std::size_t>(code_idx)].code, *vocab_,
                         test, limits_);
  }

 private:
  const Vocabulary* vocab_;
  ExecLimits limits_;
};

/**
 * Runs a shell command per cell; exit status 0 means pass. The command
 * template may contain {code} and {test}, replaced by paths to temp files
 * holding the detokenized candidate and the JSON test payload. Processes
 * exceeding the wall-clock timeout are killed and the cell fails closed.
 */
class SubprocessBackend final : public ExecBackend {
 public:
  SubprocessBackend(const Vocabulary& vocab, std::string command_template, double timeout_s = 5.0)
      : vocab_(&vocab), template_(std::move(command_template)), timeout_s_(timeout_s) {}

  ExecOutcome run_cell(const Problem& problem, int code_idx, int test_idx) override {
    TempFile code_file("fdpo_code");
    TempFile test_file("fdpo_test");
    code_file.write(detokenize(problem.candidates[static_cast<std::size_t>(code_idx)].code, *vocab_));
    test_file.write(problem.tests[static_cast<std::size_t>(test_idx)].payload.dump());

    std::string cmd = template_;
    replace_all(cmd, "{code}", code_file.path());
    replace_all(cmd, "{test}", test_file.path());

    pid_t pid = ::fork();
    if (pid < 0) return {ExecStatus::RuntimeError, 0, "fork failed"};
    if (pid == 0) {
      ::execl("/bin/sh", "sh", "-c", cmd.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    const int poll_us = 2000;
    double waited = 0.0;
    int status = 0;
    while (true) {
      pid_t r = ::waitpid(pid, &status, WNOHANG);
      if (r == pid) break;
      if (r < 0) return {ExecStatus::RuntimeError, 0, "waitpid failed"};
      if (waited >= timeout_s_) {
        ::kill(pid, SIGKILL);
        ::waitpid(pid, &status, 0);
        return {ExecStatus::StepLimit, 0, "timeout after " + std::to_string(timeout_s_) + "s"};
      }
      ::usleep(poll_us);
      waited += poll_us * 1e-6;
    }
    if (WIFEXITED(status) && WEXITSTATUS(status) == 0) return {ExecStatus::Pass, 0, "exit 0"};
    return {ExecStatus::WrongAnswer, 0, "exit status " + std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : -1)};
  }

 private:
  struct TempFile {
    explicit TempFile(const char* tag) {
      char buf[256];
      std::snprintf(buf, sizeof buf, "/tmp/%s_XXXXXX", tag);
      fd_ = ::mkstemp(buf);
      if (fd_ < 0) throw std::runtime_error("mkstemp failed");
      path_ = buf;
    }
    ~TempFile() {
      if (fd_ >= 0) ::close(fd_);
      ::unlink(path_.c_str());
    }
    void write(const std::string& content) {
      if (::write(fd_, content.data(), content.size()) < 0)
        throw std::runtime_error("temp file write failed");
    }
    const std::string& path() const { return path_; }
    int fd_ = -1;
    std::string path_;
  };

  static void replace_all(std::string& s, std::string_view from, const std::string& to) {
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
      s.replace(pos, from.size(), to);
      pos += to.size();
    }
  }

  const Vocabulary* vocab_;
  std::string template_;
  double timeout_s_;
};

/**
 * Evaluate every (code, test) cell of a problem. Cells are independent; with
 * n_threads > 1 they are evaluated in parallel on a strided partition, each
 * writing its own slot, so the result is identical for any thread count.
 * Backend exceptions fail closed: the cell is recorded false and a diagnostic
 * appended to `diagnostics` when given.
 */
inline LinkMatrix build_link_matrix(const Problem& problem, ExecBackend& backend,
                                    int n_threads = 1,
                                    std::vector<std::string>* diagnostics = nullptr) {
  const int nc = problem.k();
  const int nt = static_cast<int>(problem.tests.size());
  LinkMatrix m(nc, nt);
  const int total = nc * nt;
  if (total == 0) return m;

  std::vector<std::string> diags(static_cast<std::size_t>(total));
  auto eval_range = [&](int start, int stride) {
    for (int cell = start; cell < total; cell += stride) {
      const int ci = cell / nt;
      const int tj = cell % nt;
      try {
        m.set(ci, tj, backend.run_cell(problem, ci, tj).passed());
      } catch (const std::exception& e) {
        m.set(ci, tj, false);
        diags[static_cast<std::size_t>(cell)] =
            problem.id + " cell (" + std::to_string(ci) + "," + std::to_string(tj) + "): " + e.what();
      }
    }
  };

  if (n_threads <= 1) {
    eval_range(0, 1);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(eval_range, t, n_threads);
    for (auto& th : pool) th.join();
  }
  if (diagnostics)
    for (auto& d : diags)
      if (!d.empty()) diagnostics->push_back(std::move(d));
  return m;
}

// ============================================================================
// CSV dump format: header row of test indices, one 0/1 row per candidate
// ============================================================================

inline void write_link_matrix_csv(const LinkMatrix& m, const Problem& problem, std::ostream& os) {
  for (int j = 0; j < m.n_tests; ++j) {
    if (j) os << ',';
    os << problem.tests[static_cast<std::size_t>(j)].idx;
  }
  os << '\n';
  for (int i = 0; i < m.n_codes; ++i) {
    for (int j = 0; j < m.n_tests; ++j) {
      if (j) os << ',';
      os << (m.at(i, j) ? '1' : '0');
    }
    os << '\n';
  }
}

inline LinkMatrix read_link_matrix_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("link matrix csv: empty file");
  int n_tests = line.empty() ? 0 : 1;
  for (char c : line)
    if (c == ',') ++n_tests;

  std::vector<std::vector<std::uint8_t>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::uint8_t> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      if (cell != "0" && cell != "1")
        throw std::runtime_error("link matrix csv: cell must be 0 or 1, got '" + cell + "'");
      row.push_back(cell == "1" ? 1 : 0);
    }
    if (static_cast<int>(row.size()) != n_tests)
      throw std::runtime_error("link matrix csv: ragged row");
    rows.push_back(std::move(row));
  }
  LinkMatrix m(static_cast<int>(rows.size()), n_tests);
  for (int i = 0; i < m.n_codes; ++i)
    for (int j = 0; j < n_tests; ++j) m.set(i, j, rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] != 0);
  return m;
}

/// Precomputed-matrix backend: loads one CSV dump per problem from a directory.
inline LinkMatrix load_link_matrix_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("link matrix csv: cannot open " + path);
  return read_link_matrix_csv(in);
}

}  // namespace fdpo
