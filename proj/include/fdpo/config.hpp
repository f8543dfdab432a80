#pragma once

// Pipeline configuration: a single TOML-shaped key-value file (sections,
// scalar values, flat integer arrays, # comments). Parsing is schema-driven:
// every recognized key lands in a typed field with range validation, unknown
// sections or keys are errors, and all problems are reported in one pass
// rather than stopping at the first.

#include <cctype>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fdpo/identifier.hpp"
#include "fdpo/io.hpp"
#include "fdpo/loss.hpp"
#include "fdpo/policy.hpp"
#include "fdpo/ranker.hpp"
#include "fdpo/synth.hpp"

namespace fdpo {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> errors)
      : std::runtime_error(join(errors)), errors_(std::move(errors)) {}
  const std::vector<std::string>& errors() const { return errors_; }

 private:
  static std::string join(const std::vector<std::string>& errors) {
    std::string out = "config invalid:";
    for (const auto& e : errors) out += "\n  - " + e;
    return out;
  }
  std::vector<std::string> errors_;
};

struct ExecutorConfig {
  std::string backend = "ministack";  ///< ministack | subprocess | matrix_dir
  int max_steps = 1000;
  double timeout_s = 5.0;
  std::string command;     ///< subprocess template with {code} and {test}
  std::string matrix_dir;  ///< directory of precomputed link-matrix CSVs
};

struct IdentifierConfig {
  double lambda = 0.01;
  FilterThresholds filter;
};

struct AnalysisConfig {
  int n_samples = 20;
  double temperature = 1.5;
  std::vector<int> ks = {1, 3, 5, 10};
  int max_new_tokens = 64;
  int n_bins = 20;
};

struct PipelineConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  int threads = 1;
  SynthParams corpus;           // corpus.seed mirrors the global seed
  ExecutorConfig executor;
  RankParams ranker;
  IdentifierConfig identifier;
  std::string loss_variant = "focused";  ///< focused | standard
  LossConfig loss;
  TrainConfig train;            // train.seed mirrors the global seed
  int policy_order = 2;
  AnalysisConfig analysis;
};

namespace detail {

struct RawEntry {
  std::string value;
  int line = 0;
  bool consumed = false;
};

struct RawConfig {
  // key = "section.key" (or bare "key" for the top level)
  std::map<std::string, RawEntry> entries;
  std::vector<std::string> errors;
};

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

/// Strip a trailing # comment, respecting double-quoted strings.
inline std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_string = !in_string;
    else if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

inline RawConfig parse_raw_config(const std::string& text) {
  RawConfig raw;
  std::string section;
  std::size_t pos = 0;
  int lineno = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string line = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
    pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
    ++lineno;

    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        raw.errors.push_back("line " + std::to_string(lineno) + ": malformed section header '" +
                             line + "'");
        continue;
      }
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty())
        raw.errors.push_back("line " + std::to_string(lineno) + ": empty section name");
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      raw.errors.push_back("line " + std::to_string(lineno) + ": expected key = value, got '" +
                           line + "'");
      continue;
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      raw.errors.push_back("line " + std::to_string(lineno) + ": empty key or value");
      continue;
    }
    const std::string full = section.empty() ? key : section + "." + key;
    if (raw.entries.count(full))
      raw.errors.push_back("line " + std::to_string(lineno) + ": duplicate key '" + full + "'");
    else
      raw.entries[full] = RawEntry{value, lineno, false};
  }
  return raw;
}

/// Typed, validating accessor over a RawConfig; collects errors instead of
/// throwing so every problem in the file is reported together.
class ConfigReader {
 public:
  explicit ConfigReader(RawConfig& raw) : raw_(raw) {}

  void read_int(const std::string& key, int& target, long long lo, long long hi) {
    const RawEntry* e = take(key);
    if (!e) return;
    long long v;
    if (!parse_int(e->value, v)) return fail(key, *e, "expected an integer");
    if (v < lo || v > hi)
      return fail(key, *e,
                  "must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    target = static_cast<int>(v);
  }

  void read_u64(const std::string& key, std::uint64_t& target) {
    const RawEntry* e = take(key);
    if (!e) return;
    try {
      std::size_t used = 0;
      const std::uint64_t v = std::stoull(e->value, &used);
      if (used != e->value.size()) throw std::invalid_argument("");
      target = v;
    } catch (const std::exception&) {
      fail(key, *e, "expected a non-negative integer");
    }
  }

  void read_double(const std::string& key, double& target, double lo, double hi,
                   bool lo_exclusive = false, bool hi_exclusive = false) {
    const RawEntry* e = take(key);
    if (!e) return;
    double v;
    if (!parse_double(e->value, v)) return fail(key, *e, "expected a number");
    const bool lo_ok = lo_exclusive ? v > lo : v >= lo;
    const bool hi_ok = hi_exclusive ? v < hi : v <= hi;
    if (!lo_ok || !hi_ok)
      return fail(key, *e,
                  "must be in " + std::string(lo_exclusive ? "(" : "[") + format_num(lo) + ", " +
                      format_num(hi) + std::string(hi_exclusive ? ")" : "]"));
    target = v;
  }

  void read_bool(const std::string& key, bool& target) {
    const RawEntry* e = take(key);
    if (!e) return;
    if (e->value == "true") target = true;
    else if (e->value == "false") target = false;
    else fail(key, *e, "expected true or false");
  }

  void read_string(const std::string& key, std::string& target,
                   const std::vector<std::string>& allowed = {}) {
    const RawEntry* e = take(key);
    if (!e) return;
    std::string v = e->value;
    if (v.size() >= 2 && v.front() == '"' && v.back() == '"') v = v.substr(1, v.size() - 2);
    if (!allowed.empty()) {
      bool ok = false;
      for (const auto& a : allowed) ok = ok || a == v;
      if (!ok) {
        std::string msg = "must be one of {";
        for (std::size_t i = 0; i < allowed.size(); ++i)
          msg += (i ? ", " : "") + allowed[i];
        return fail(key, *e, msg + "}");
      }
    }
    target = v;
  }

  void read_int_array(const std::string& key, std::vector<int>& target, long long lo,
                      long long hi) {
    const RawEntry* e = take(key);
    if (!e) return;
    const std::string& v = e->value;
    if (v.size() < 2 || v.front() != '[' || v.back() != ']')
      return fail(key, *e, "expected an array like [1, 3, 5]");
    std::vector<int> out;
    std::string inner = v.substr(1, v.size() - 2);
    std::size_t start = 0;
    while (start <= inner.size()) {
      std::size_t comma = inner.find(',', start);
      const std::string item =
          trim(inner.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      start = comma == std::string::npos ? inner.size() + 1 : comma + 1;
      if (item.empty()) continue;
      long long x;
      if (!parse_int(item, x)) return fail(key, *e, "array element '" + item + "' not an integer");
      if (x < lo || x > hi)
        return fail(key, *e, "array element " + item + " out of range");
      out.push_back(static_cast<int>(x));
    }
    if (out.empty()) return fail(key, *e, "array must be non-empty");
    target = std::move(out);
  }

  /// After all reads: every untouched entry is an unknown key.
  void flag_unknown_keys() {
    for (const auto& [key, entry] : raw_.entries)
      if (!entry.consumed)
        raw_.errors.push_back("line " + std::to_string(entry.line) + ": unknown key '" + key +
                              "'");
  }

 private:
  const RawEntry* take(const std::string& key) {
    auto it = raw_.entries.find(key);
    if (it == raw_.entries.end()) return nullptr;
    it->second.consumed = true;
    return &it->second;
  }
  void fail(const std::string& key, const RawEntry& e, const std::string& why) {
    raw_.errors.push_back("line " + std::to_string(e.line) + ": " + key + " " + why + " (got '" +
                          e.value + "')");
  }
  static bool parse_int(const std::string& s, long long& out) {
    try {
      std::size_t used = 0;
      out = std::stoll(s, &used);
      return used == s.size();
    } catch (const std::exception&) {
      return false;
    }
  }
  static bool parse_double(const std::string& s, double& out) {
    try {
      std::size_t used = 0;
      out = std::stod(s, &used);
      return used == s.size();
    } catch (const std::exception&) {
      return false;
    }
  }
  static std::string format_num(double v) {
    std::string s = std::to_string(v);
    while (s.size() > 1 && s.back() == '0') s.pop_back();
    if (!s.empty() && s.back() == '.') s.pop_back();
    return s;
  }

  RawConfig& raw_;
};

}  // namespace detail

/**
 * Parse and validate configuration text. An empty file yields the fully
 * defaulted config. Throws ConfigError carrying every problem found:
 * syntax errors, type mismatches, out-of-range values, and unknown keys.
 */
inline PipelineConfig parse_config(const std::string& text) {
  detail::RawConfig raw = detail::parse_raw_config(text);
  detail::ConfigReader r(raw);
  PipelineConfig cfg;

  r.read_u64("seed", cfg.seed);
  r.read_string("out_dir", cfg.out_dir);
  r.read_int("threads", cfg.threads, 1, 256);

  r.read_int("corpus.num_problems", cfg.corpus.n_problems, 1, 1000000);
  r.read_int("corpus.k", cfg.corpus.k, 2, 1000);
  r.read_int("corpus.num_tests", cfg.corpus.tests_per_problem, 1, 1000);
  r.read_double("corpus.mutation_rate", cfg.corpus.mutant_fraction, 0.0, 1.0);
  r.read_int("corpus.min_ops", cfg.corpus.min_ops, 2, 10000);
  r.read_int("corpus.max_ops", cfg.corpus.max_ops, 2, 10000);
  r.read_int("corpus.min_arity", cfg.corpus.min_arity, 1, 16);
  r.read_int("corpus.max_arity", cfg.corpus.max_arity, 1, 16);
  r.read_int("corpus.max_depth", cfg.corpus.max_depth, 2, 64);
  r.read_double("corpus.mutation_band_lo", cfg.corpus.mutation_band_lo, 0.0, 1.0);
  r.read_double("corpus.mutation_band_hi", cfg.corpus.mutation_band_hi, 0.0, 1.0);
  r.read_double("corpus.hot_mutation_prob", cfg.corpus.hot_mutation_prob, 0.0, 1.0);
  r.read_double("corpus.corrupt_test_fraction", cfg.corpus.corrupt_test_fraction, 0.0, 1.0);
  r.read_int("corpus.max_input_value", cfg.corpus.max_input_value, 0, 1000000);

  r.read_string("executor.backend", cfg.executor.backend,
                {"ministack", "subprocess", "matrix_dir"});
  r.read_int("executor.max_steps", cfg.executor.max_steps, 1, 100000000);
  r.read_double("executor.timeout_s", cfg.executor.timeout_s, 0.0, 3600.0, true);
  r.read_string("executor.command", cfg.executor.command);
  r.read_string("executor.matrix_dir", cfg.executor.matrix_dir);

  r.read_double("ranker.d", cfg.ranker.damping, 0.0, 1.0, true, true);
  r.read_double("ranker.init", cfg.ranker.init, 0.0, 1e12, true);
  r.read_double("ranker.tol", cfg.ranker.tol, 0.0, 1.0, true);
  r.read_int("ranker.max_iter", cfg.ranker.max_iter, 1, 1000000);

  r.read_double("identifier.lambda", cfg.identifier.lambda, 0.0, 1e6);
  r.read_double("identifier.min_correct_frac", cfg.identifier.filter.min_correct_frac, 0.0, 1.0);
  r.read_double("identifier.max_correct_frac", cfg.identifier.filter.max_correct_frac, 0.0, 1.0);

  r.read_string("loss.variant", cfg.loss_variant, {"focused", "standard"});
  r.read_double("loss.beta", cfg.loss.beta, 0.0, 1e6, true);
  r.read_double("loss.gamma", cfg.loss.gamma, 0.0, 1e6, true);
  r.read_double("loss.w_focused", cfg.loss.w_focused, 0.0, 1e6);
  r.read_bool("loss.suffix_in_chosen", cfg.loss.include_suffix_in_chosen);
  r.read_bool("loss.suffix_in_reject", cfg.loss.include_suffix_in_reject);

  r.read_double("train.learning_rate", cfg.train.learning_rate, 0.0, 1e6);
  r.read_int("train.steps", cfg.train.steps, 0, 10000000);
  r.read_int("train.batch_size", cfg.train.batch_size, 0, 1000000);
  r.read_int("train.order", cfg.policy_order, 1, 8);

  r.read_int("analysis.n_samples", cfg.analysis.n_samples, 1, 100000);
  r.read_double("analysis.temperature", cfg.analysis.temperature, 0.0, 100.0);
  r.read_int_array("analysis.ks", cfg.analysis.ks, 1, 100000);
  r.read_int("analysis.max_new_tokens", cfg.analysis.max_new_tokens, 1, 1000000);
  r.read_int("analysis.n_bins", cfg.analysis.n_bins, 1, 100000);

  r.flag_unknown_keys();

  // cross-field checks
  if (cfg.corpus.max_ops < cfg.corpus.min_ops)
    raw.errors.push_back("corpus.max_ops must be >= corpus.min_ops");
  if (cfg.corpus.max_arity < cfg.corpus.min_arity)
    raw.errors.push_back("corpus.max_arity must be >= corpus.min_arity");
  if (cfg.corpus.mutation_band_hi <= cfg.corpus.mutation_band_lo)
    raw.errors.push_back("corpus.mutation_band_hi must be > corpus.mutation_band_lo");
  if (cfg.identifier.filter.max_correct_frac < cfg.identifier.filter.min_correct_frac)
    raw.errors.push_back("identifier.max_correct_frac must be >= identifier.min_correct_frac");
  if (cfg.executor.backend == "subprocess" && cfg.executor.command.empty())
    raw.errors.push_back("executor.command is required for the subprocess backend");
  if (cfg.executor.backend == "matrix_dir" && cfg.executor.matrix_dir.empty())
    raw.errors.push_back("executor.matrix_dir is required for the matrix_dir backend");
  for (int k : cfg.analysis.ks)
    if (k > cfg.analysis.n_samples) {
      raw.errors.push_back("analysis.ks entries must be <= analysis.n_samples");
      break;
    }

  if (!raw.errors.empty()) throw ConfigError(std::move(raw.errors));

  // derived mirrors
  cfg.corpus.seed = cfg.seed;
  cfg.train.seed = cfg.seed;
  return cfg;
}

inline PipelineConfig load_config_file(const std::string& path) {
  return parse_config(read_text_file(path));
}

/// Canonical JSON snapshot; its hash identifies a run's configuration.
inline nlohmann::json config_to_json(const PipelineConfig& c) {
  return {
      {"seed", c.seed},
      {"out_dir", c.out_dir},
      {"corpus",
       {{"num_problems", c.corpus.n_problems},
        {"k", c.corpus.k},
        {"num_tests", c.corpus.tests_per_problem},
        {"mutation_rate", c.corpus.mutant_fraction},
        {"min_ops", c.corpus.min_ops},
        {"max_ops", c.corpus.max_ops},
        {"min_arity", c.corpus.min_arity},
        {"max_arity", c.corpus.max_arity},
        {"max_depth", c.corpus.max_depth},
        {"mutation_band_lo", c.corpus.mutation_band_lo},
        {"mutation_band_hi", c.corpus.mutation_band_hi},
        {"hot_mutation_prob", c.corpus.hot_mutation_prob},
        {"corrupt_test_fraction", c.corpus.corrupt_test_fraction},
        {"max_input_value", c.corpus.max_input_value}}},
      {"executor",
       {{"backend", c.executor.backend},
        {"max_steps", c.executor.max_steps},
        {"timeout_s", c.executor.timeout_s},
        {"command", c.executor.command},
        {"matrix_dir", c.executor.matrix_dir}}},
      {"ranker",
       {{"d", c.ranker.damping},
        {"init", c.ranker.init},
        {"tol", c.ranker.tol},
        {"max_iter", c.ranker.max_iter}}},
      {"identifier",
       {{"lambda", c.identifier.lambda},
        {"min_correct_frac", c.identifier.filter.min_correct_frac},
        {"max_correct_frac", c.identifier.filter.max_correct_frac}}},
      {"loss",
       {{"variant", c.loss_variant},
        {"beta", c.loss.beta},
        {"gamma", c.loss.gamma},
        {"w_focused", c.loss.w_focused},
        {"suffix_in_chosen", c.loss.include_suffix_in_chosen},
        {"suffix_in_reject", c.loss.include_suffix_in_reject}}},
      {"train",
       {{"learning_rate", c.train.learning_rate},
        {"steps", c.train.steps},
        {"batch_size", c.train.batch_size},
        {"order", c.policy_order}}},
      {"analysis",
       {{"n_samples", c.analysis.n_samples},
        {"temperature", c.analysis.temperature},
        {"ks", c.analysis.ks},
        {"max_new_tokens", c.analysis.max_new_tokens},
        {"n_bins", c.analysis.n_bins}}}};
}

/// Configuration identity for artifact naming: hash of the canonical JSON
/// snapshot minus volatile fields (out_dir), so a run is identified by what
/// it computes, not where it writes.
inline std::string config_hash(const PipelineConfig& c) {
  nlohmann::json j = config_to_json(c);
  j.erase("out_dir");
  return hex64(fnv1a64(j.dump()));
}

}  // namespace fdpo
