#pragma once

// Seeded synthetic corpus generator for the stack toy language.
//
// Each problem gets one hidden reference program drawn from a *biased* op
// distribution (small constants and ADD/DUP-heavy op mix). Candidate programs
// are either verbatim copies of the reference or copies with a single
// length-preserving mutation (binary-op swap or PUSH-constant swap) drawn
// *uniformly* among alternatives and placed inside a configurable band of the
// program. The contrast between the biased reference distribution and the
// uniform mutation distribution is what downstream learners can pick up on,
// and the recorded mutation span is the ground truth that segment
// identification is judged against.
//
// Test candidates preload the stack with random inputs; expected outputs are
// computed by running the reference, and a configurable fraction is corrupted
// (expected off by one) to exercise test-side ranking.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fdpo/corpus.hpp"
#include "fdpo/executor.hpp"
#include "fdpo/rng.hpp"
#include "fdpo/token.hpp"

namespace fdpo {

struct SynthParams {
  int n_problems = 50;
  int k = 10;                 ///< code candidates per problem
  int tests_per_problem = 10;
  int min_ops = 8;            ///< reference program length, excluding RET
  int max_ops = 14;
  int min_arity = 1;          ///< stack values preloaded by a test
  int max_arity = 3;
  int max_depth = 4;          ///< stack depth cap steering op choice
  double mutant_fraction = 0.5;
  double mutation_band_lo = 0.50;  ///< fractional op-index band for mutations
  double mutation_band_hi = 0.85;
  /// Probability that a mutant hits the problem's shared error-prone op index
  /// rather than an independent band draw. Concentrating mutations on one
  /// locus per problem is what gives incorrect candidates a common divergence
  /// point, mirroring how real generation errors cluster.
  double hot_mutation_prob = 0.7;
  double corrupt_test_fraction = 0.2;
  int max_input_value = 9;
  std::uint64_t seed = 1;
};

namespace detail {

enum class OpKind { Push, Add, Sub, Mul, Dup, Swap };

struct Op {
  OpKind kind;
  int constant = 0;  // PUSH only
};

inline const char* op_word(OpKind k) {
  switch (k) {
    case OpKind::Push: return "PUSH";
    case OpKind::Add: return "ADD";
    case OpKind::Sub: return "SUB";
    case OpKind::Mul: return "MUL";
    case OpKind::Dup: return "DUP";
    case OpKind::Swap: return "SWAP";
  }
  return "?";
}

inline bool is_binary(OpKind k) {
  return k == OpKind::Add || k == OpKind::Sub || k == OpKind::Mul;
}

/// Reference-style op weights; mutations deliberately ignore these.
inline double ref_op_weight(OpKind k) {
  switch (k) {
    case OpKind::Push: return 0.30;
    case OpKind::Add: return 0.22;
    case OpKind::Dup: return 0.18;
    case OpKind::Mul: return 0.14;
    case OpKind::Swap: return 0.10;
    case OpKind::Sub: return 0.06;
  }
  return 0.0;
}

/// Reference-style constant weights over 1..9, biased toward small values.
inline const std::vector<double>& ref_constant_weights() {
  static const std::vector<double> w = {0.26, 0.22, 0.18, 0.12, 0.08, 0.06, 0.04, 0.02, 0.02};
  return w;
}

inline int depth_delta(OpKind k) {
  switch (k) {
    case OpKind::Push: return +1;
    case OpKind::Dup: return +1;
    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::Mul: return -1;
    case OpKind::Swap: return 0;
  }
  return 0;
}

inline bool op_valid_at(OpKind k, int depth, int max_depth) {
  switch (k) {
    case OpKind::Push: return depth < max_depth;
    case OpKind::Dup: return depth >= 1 && depth < max_depth;
    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::Mul: return depth >= 2;
    case OpKind::Swap: return depth >= 2;
  }
  return false;
}

inline std::vector<Op> draw_reference_ops(Rng& rng, int n_ops, int arity, int max_depth) {
  static const OpKind all[] = {OpKind::Push, OpKind::Add, OpKind::Sub,
                               OpKind::Mul,  OpKind::Dup, OpKind::Swap};
  std::vector<Op> ops;
  ops.reserve(static_cast<std::size_t>(n_ops));
  int depth = arity;
  for (int i = 0; i < n_ops; ++i) {
    std::vector<OpKind> valid;
    std::vector<double> weights;
    for (OpKind k : all) {
      if (op_valid_at(k, depth, max_depth)) {
        valid.push_back(k);
        weights.push_back(ref_op_weight(k));
      }
    }
    OpKind pick = valid[rng.pick_weighted(weights)];
    Op op{pick, 0};
    if (pick == OpKind::Push)
      op.constant = 1 + static_cast<int>(rng.pick_weighted(ref_constant_weights()));
    ops.push_back(op);
    depth += depth_delta(pick);
  }
  return ops;
}

/// A mutable op is one that admits a length-preserving uniform swap.
inline bool op_mutable(const Op& op) { return is_binary(op.kind) || op.kind == OpKind::Push; }

/// Token layout of one op: word [space constant] newline. Returns the token
/// span of the part a mutation would change (the word, or the constant).
struct OpTokens {
  std::size_t word_pos;
  std::size_t constant_pos;  // npos when the op has no constant
};

inline void append_op_tokens(TokenSeq& seq, const Op& op, Vocabulary& vocab,
                             OpTokens* layout = nullptr) {
  if (layout) layout->word_pos = seq.size();
  seq.append(vocab.intern(op_word(op.kind)));
  if (layout) layout->constant_pos = static_cast<std::size_t>(-1);
  if (op.kind == OpKind::Push) {
    seq.append(vocab.intern(" "));
    if (layout) layout->constant_pos = seq.size();
    seq.append(vocab.intern(std::to_string(op.constant)));
  }
  seq.append(vocab.intern("\n"));
}

inline TokenSeq ops_to_tokens(const std::vector<Op>& ops, Vocabulary& vocab,
                              std::vector<OpTokens>* layouts = nullptr) {
  TokenSeq seq;
  if (layouts) layouts->clear();
  for (const Op& op : ops) {
    OpTokens lt{};
    append_op_tokens(seq, op, vocab, layouts ? &lt : nullptr);
    if (layouts) layouts->push_back(lt);
  }
  seq.append(vocab.intern("RET"));
  seq.append(vocab.intern("\n"));
  return seq;
}

/// Uniform mutation of one op, guaranteed to differ from the original.
inline Op mutate_op(const Op& op, Rng& rng) {
  Op out = op;
  if (is_binary(op.kind)) {
    static const OpKind binaries[] = {OpKind::Add, OpKind::Sub, OpKind::Mul};
    std::vector<OpKind> alts;
    for (OpKind k : binaries)
      if (k != op.kind) alts.push_back(k);
    out.kind = alts[static_cast<std::size_t>(rng.next_int(0, static_cast<int>(alts.size()) - 1))];
  } else {
    int alt = op.constant;
    while (alt == op.constant) alt = rng.next_int(1, 9);
    out.constant = alt;
  }
  return out;
}

/// Index of the op a mutation lands on: a mutable op inside the fractional
/// band if one exists, otherwise the mutable op nearest the band's center.
inline int pick_mutation_index(const std::vector<Op>& ops, Rng& rng, double band_lo,
                               double band_hi) {
  const int m = static_cast<int>(ops.size());
  const int lo = std::clamp(static_cast<int>(std::floor(band_lo * m)), 0, m - 1);
  const int hi = std::clamp(static_cast<int>(std::ceil(band_hi * m)), lo + 1, m);
  std::vector<int> in_band;
  for (int i = lo; i < hi; ++i)
    if (op_mutable(ops[static_cast<std::size_t>(i)])) in_band.push_back(i);
  if (!in_band.empty())
    return in_band[static_cast<std::size_t>(rng.next_int(0, static_cast<int>(in_band.size()) - 1))];

  const double center = 0.5 * (band_lo + band_hi) * m;
  int best = -1;
  double best_dist = 1e18;
  for (int i = 0; i < m; ++i) {
    if (!op_mutable(ops[static_cast<std::size_t>(i)])) continue;
    double dist = std::abs(i - center);
    if (dist < best_dist) {
      best_dist = dist;
      best = i;
    }
  }
  return best;  // -1 only if no op is mutable at all
}

}  // namespace detail

/**
 * Generate a deterministic corpus. Every problem derives its own RNG stream
 * from (seed, problem index), so corpora are stable under reordering and
 * identical across thread counts. Interns all lexemes into `vocab`.
 *
 * Per-candidate metadata records whether it was mutated and the token-space
 * span [span_begin, span_end) of the change; per-test metadata records
 * whether its expected value was corrupted.
 */
inline Corpus synth_corpus(const SynthParams& p, Vocabulary& vocab) {
  if (p.k < 2) throw std::invalid_argument("synth_corpus: k must be >= 2");
  if (p.tests_per_problem < 1)
    throw std::invalid_argument("synth_corpus: tests_per_problem must be >= 1");
  if (p.min_ops < 2 || p.max_ops < p.min_ops)
    throw std::invalid_argument("synth_corpus: bad op-count range");
  if (p.min_arity < 1 || p.max_arity < p.min_arity)
    throw std::invalid_argument("synth_corpus: bad arity range");

  Corpus corpus;
  corpus.problems.reserve(static_cast<std::size_t>(p.n_problems));

  for (int pi = 0; pi < p.n_problems; ++pi) {
    Rng rng = derive_rng(p.seed, static_cast<std::uint64_t>(pi));

    const int arity = rng.next_int(p.min_arity, p.max_arity);
    const int n_ops = rng.next_int(p.min_ops, p.max_ops);

    // Reference program; redraw until at least two ops admit a mutation so
    // mutants can always be placed.
    std::vector<detail::Op> ref_ops;
    for (int attempt = 0; attempt < 64; ++attempt) {
      ref_ops = detail::draw_reference_ops(rng, n_ops, arity, p.max_depth);
      int n_mutable = 0;
      for (const auto& op : ref_ops)
        if (detail::op_mutable(op)) ++n_mutable;
      if (n_mutable >= 2) break;
      ref_ops.clear();
    }
    if (ref_ops.empty())
      throw std::runtime_error("synth_corpus: could not draw a mutable reference program");

    std::vector<detail::OpTokens> layouts;
    const TokenSeq ref_tokens = detail::ops_to_tokens(ref_ops, vocab, &layouts);

    Problem prob;
    char idbuf[16];
    std::snprintf(idbuf, sizeof idbuf, "p%04d", pi);
    prob.id = idbuf;
    prob.prompt = "TASK ARITY " + std::to_string(arity) + "\n";
    // intern the prompt's lexemes so the persisted vocabulary covers prompts
    (void)tokenize(prob.prompt, vocab);

    // --- tests: inputs random, expected from the reference, some corrupted
    const int n_corrupt = std::clamp(
        static_cast<int>(std::lround(p.corrupt_test_fraction * p.tests_per_problem)), 0,
        p.tests_per_problem - 1);
    std::vector<int> corrupt_order(static_cast<std::size_t>(p.tests_per_problem));
    for (int j = 0; j < p.tests_per_problem; ++j) corrupt_order[static_cast<std::size_t>(j)] = j;
    rng.shuffle(corrupt_order);
    std::vector<bool> corrupt(static_cast<std::size_t>(p.tests_per_problem), false);
    for (int j = 0; j < n_corrupt; ++j) corrupt[static_cast<std::size_t>(corrupt_order[static_cast<std::size_t>(j)])] = true;

    nlohmann::json tests_meta = nlohmann::json::array();
    for (int j = 0; j < p.tests_per_problem; ++j) {
      StackTest t;
      for (int a = 0; a < arity; ++a)
        t.input.push_back(rng.next_int(0, p.max_input_value));
      ExecOutcome ref_run = run_ministack(ref_tokens, vocab, StackTest{t.input, 0});
      if (!ref_run.returned)
        throw std::runtime_error("synth_corpus: reference program failed to execute: " +
                                 ref_run.detail);
      t.expected = corrupt[static_cast<std::size_t>(j)] ? *ref_run.returned + 1 : *ref_run.returned;
      prob.tests.push_back(TestCandidate{j, stack_test_to_json(t)});
      tests_meta.push_back({{"idx", j}, {"corrupt", corrupt[static_cast<std::size_t>(j)]}});
    }

    // --- candidates: verbatim copies and single-span mutants, shuffled order
    const int n_mutants =
        std::clamp(static_cast<int>(std::lround(p.mutant_fraction * p.k)), 1, p.k - 1);
    std::vector<int> mutant_order(static_cast<std::size_t>(p.k));
    for (int c = 0; c < p.k; ++c) mutant_order[static_cast<std::size_t>(c)] = c;
    rng.shuffle(mutant_order);
    std::vector<bool> is_mutant(static_cast<std::size_t>(p.k), false);
    for (int c = 0; c < n_mutants; ++c) is_mutant[static_cast<std::size_t>(mutant_order[static_cast<std::size_t>(c)])] = true;

    const int hot_index =
        detail::pick_mutation_index(ref_ops, rng, p.mutation_band_lo, p.mutation_band_hi);

    nlohmann::json cands_meta = nlohmann::json::array();
    for (int c = 0; c < p.k; ++c) {
      nlohmann::json meta = {{"idx", c}, {"mutated", false}, {"span_begin", -1},
                             {"span_end", -1}, {"mutated_op_index", -1}};
      if (!is_mutant[static_cast<std::size_t>(c)]) {
        prob.candidates.push_back(CodeCandidate{c, ref_tokens});
      } else {
        const int mi = rng.next_bernoulli(p.hot_mutation_prob)
                           ? hot_index
                           : detail::pick_mutation_index(ref_ops, rng, p.mutation_band_lo,
                                                         p.mutation_band_hi);
        std::vector<detail::Op> ops = ref_ops;
        ops[static_cast<std::size_t>(mi)] = detail::mutate_op(ops[static_cast<std::size_t>(mi)], rng);
        const TokenSeq mut_tokens = detail::ops_to_tokens(ops, vocab, nullptr);

        // The mutation is length-preserving: the changed token is either the
        // op word or the constant at the recorded layout position.
        const auto& lt = layouts[static_cast<std::size_t>(mi)];
        std::size_t pos = detail::is_binary(ref_ops[static_cast<std::size_t>(mi)].kind)
                              ? lt.word_pos
                              : lt.constant_pos;
        meta["mutated"] = true;
        meta["span_begin"] = static_cast<int>(pos);
        meta["span_end"] = static_cast<int>(pos + 1);
        meta["mutated_op_index"] = mi;
        prob.candidates.push_back(CodeCandidate{c, mut_tokens});
      }
      cands_meta.push_back(std::move(meta));
    }

    prob.metadata = {{"arity", arity},
                     {"n_ops", n_ops},
                     {"n_corrupt_tests", n_corrupt},
                     {"candidates", std::move(cands_meta)},
                     {"tests", std::move(tests_meta)}};
    corpus.problems.push_back(std::move(prob));
  }
  return corpus;
}

}  // namespace fdpo
