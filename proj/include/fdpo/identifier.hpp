#pragma once

// Error-point identification: decompose (correct, incorrect) code pairs into
// prefix / mid / suffix by maximal common prefix-then-suffix matching, score
// candidate pairs with the Diff criterion (normalized rank gap plus
// length-weighted concentration term), pick one pair per problem, filter
// problems by accuracy band, and emit the preference dataset.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "fdpo/corpus.hpp"
#include "fdpo/io.hpp"
#include "fdpo/ranker.hpp"
#include "fdpo/token.hpp"

namespace fdpo {

// ============================================================================
// Segmentation
// ============================================================================

struct Segmentation {
  TokenSeq prefix;
  TokenSeq mid_chosen;
  TokenSeq mid_rej;
  TokenSeq suffix;
};

enum class SegmentError { DegeneratePair, EmptyMid };

inline const char* to_string(SegmentError e) {
  switch (e) {
    case SegmentError::DegeneratePair: return "DegeneratePair";
    case SegmentError::EmptyMid: return "EmptyMid";
  }
  return "?";
}

/**
 * Split a (chosen, rejected) pair into maximal common prefix, the two mid
 * segments, and the maximal common suffix of the post-prefix remainders.
 * Prefix is matched first and takes priority, so prefix and suffix never
 * overlap. Identical sequences are DegeneratePair; a pair whose mid is empty
 * on either side is EmptyMid (no divergence signal on that side).
 */
inline std::variant<Segmentation, SegmentError> segment_pair(const TokenSeq& chosen,
                                                             const TokenSeq& rej) {
  if (chosen.ids == rej.ids) return SegmentError::DegeneratePair;

  const std::size_t nc = chosen.size(), nr = rej.size();
  std::size_t p = 0;
  while (p < nc && p < nr && chosen[p] == rej[p]) ++p;

  // maximal common suffix of the remainders chosen[p..), rej[p..)
  std::size_t s = 0;
  while (s < nc - p && s < nr - p && chosen[nc - 1 - s] == rej[nr - 1 - s]) ++s;

  const std::size_t mid_c_len = nc - p - s;
  const std::size_t mid_r_len = nr - p - s;
  if (mid_c_len == 0 || mid_r_len == 0) return SegmentError::EmptyMid;

  Segmentation seg;
  seg.prefix = chosen.slice(0, p);
  seg.mid_chosen = chosen.slice(p, p + mid_c_len);
  seg.mid_rej = rej.slice(p, p + mid_r_len);
  seg.suffix = chosen.slice(p + mid_c_len, nc);
  return seg;
}

// ============================================================================
// Diff criterion
// ============================================================================

/// Pure scoring kernel: normalized rank gap plus λ-weighted shared length.
inline double diff_score(double norm_rank_chosen, double norm_rank_rej, std::size_t prefix_len,
                         std::size_t suffix_len, double lambda) {
  return norm_rank_chosen - norm_rank_rej +
         lambda * (static_cast<double>(prefix_len) + static_cast<double>(suffix_len));
}

/**
 * Problem-level Diff: reassembles both codes from the segmentation, requires
 * each to be an existing candidate, and scores with min-max normalized rank
 * scores over the problem's candidates.
 */
inline double diff_score(const Segmentation& seg, const Problem& problem, const RankResult& rank,
                         double lambda) {
  const TokenSeq chosen = concat(seg.prefix, seg.mid_chosen, seg.suffix);
  const TokenSeq rej = concat(seg.prefix, seg.mid_rej, seg.suffix);
  auto find_idx = [&](const TokenSeq& code) -> int {
    for (const auto& cand : problem.candidates)
      if (cand.code.ids == code.ids) return cand.idx;
    throw std::invalid_argument("diff_score: assembled code is not a candidate of problem " +
                                problem.id);
  };
  const int ci = find_idx(chosen);
  const int ri = find_idx(rej);
  const std::vector<double> norm = min_max_normalize(rank.code_scores);
  return diff_score(norm[static_cast<std::size_t>(ci)], norm[static_cast<std::size_t>(ri)],
                    seg.prefix.size(), seg.suffix.size(), lambda);
}

// ============================================================================
// Pair selection and problem filtering
// ============================================================================

struct PreferencePair {
  std::string problem_id;
  Segmentation segmentation;
  double diff_value = 0.0;
  int chosen_idx = -1;
  int rej_idx = -1;
};

/**
 * Argmax of the Diff criterion over all (correct x incorrect) pairs with a
 * valid segmentation; ties broken by ascending (chosen_idx, rej_idx). Returns
 * empty when no pair segments cleanly (all degenerate or empty-mid).
 */
inline std::optional<PreferencePair> select_pair(const Problem& problem,
                                                 const Classification& cls,
                                                 const RankResult& rank, double lambda) {
  if (cls.correct.empty() || cls.incorrect.empty())
    throw std::invalid_argument("select_pair: both candidate sets must be non-empty");

  const std::vector<double> norm = min_max_normalize(rank.code_scores);
  std::optional<PreferencePair> best;
  for (int ci : cls.correct) {
    for (int ri : cls.incorrect) {
      const auto seg = segment_pair(problem.candidates[static_cast<std::size_t>(ci)].code,
                                    problem.candidates[static_cast<std::size_t>(ri)].code);
      if (std::holds_alternative<SegmentError>(seg)) continue;
      const auto& s = std::get<Segmentation>(seg);
      const double score = diff_score(norm[static_cast<std::size_t>(ci)],
                                      norm[static_cast<std::size_t>(ri)], s.prefix.size(),
                                      s.suffix.size(), lambda);
      // strict > keeps the lexicographically smallest (chosen_idx, rej_idx)
      // on ties because iteration order is ascending in both indices
      if (!best || score > best->diff_value)
        best = PreferencePair{problem.id, s, score, ci, ri};
    }
  }
  return best;
}

struct FilterThresholds {
  double min_correct_frac = 0.1;
  double max_correct_frac = 0.9;
};

/// Keep a problem iff it is usable (non-empty ground truth), has both correct
/// and incorrect candidates, and its correct fraction lies in the band.
inline bool keep_problem(const Classification& cls, int n_candidates,
                         const FilterThresholds& th = {}) {
  if (!cls.usable || cls.correct.empty() || cls.incorrect.empty()) return false;
  const double frac = static_cast<double>(cls.correct.size()) / n_candidates;
  return frac >= th.min_correct_frac && frac <= th.max_correct_frac;
}

// ============================================================================
// Training dataset
// ============================================================================

enum class Split { Train, Validation };

/// Deterministic 5:1 train/validation assignment by problem-id content hash.
inline Split split_of(const std::string& problem_id) {
  return (fnv1a64(problem_id) % 6 == 5) ? Split::Validation : Split::Train;
}

struct TrainingDataset {
  std::vector<PreferencePair> pairs;
  nlohmann::json provenance;  ///< config snapshot + seed

  std::vector<const PreferencePair*> split(Split s) const {
    std::vector<const PreferencePair*> out;
    for (const auto& p : pairs)
      if (split_of(p.problem_id) == s) out.push_back(&p);
    return out;
  }
};

inline nlohmann::json preference_pair_to_json(const PreferencePair& p) {
  return {{"problem_id", p.problem_id},
          {"prefix", p.segmentation.prefix.ids},
          {"mid_chosen", p.segmentation.mid_chosen.ids},
          {"mid_rej", p.segmentation.mid_rej.ids},
          {"suffix", p.segmentation.suffix.ids},
          {"diff_value", p.diff_value},
          {"chosen_idx", p.chosen_idx},
          {"rej_idx", p.rej_idx}};
}

inline PreferencePair preference_pair_from_json(const nlohmann::json& j) {
  PreferencePair p;
  p.problem_id = j.at("problem_id").get<std::string>();
  p.segmentation.prefix.ids = j.at("prefix").get<std::vector<TokenId>>();
  p.segmentation.mid_chosen.ids = j.at("mid_chosen").get<std::vector<TokenId>>();
  p.segmentation.mid_rej.ids = j.at("mid_rej").get<std::vector<TokenId>>();
  p.segmentation.suffix.ids = j.at("suffix").get<std::vector<TokenId>>();
  p.diff_value = j.at("diff_value").get<double>();
  p.chosen_idx = j.at("chosen_idx").get<int>();
  p.rej_idx = j.at("rej_idx").get<int>();
  return p;
}

inline void write_dataset_jsonl(const TrainingDataset& ds, std::ostream& os) {
  for (const auto& p : ds.pairs) os << preference_pair_to_json(p).dump() << '\n';
}

inline TrainingDataset read_dataset_jsonl(std::istream& is) {
  TrainingDataset ds;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      ds.pairs.push_back(preference_pair_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return ds;
}

/// Dataset manifest: provenance plus per-segment length statistics
/// (average prefix/suffix/mid lengths and the mid share of total tokens).
inline nlohmann::json dataset_manifest(const TrainingDataset& ds) {
  std::size_t n = ds.pairs.size();
  std::size_t n_train = 0, n_val = 0;
  double sum_prefix = 0, sum_suffix = 0, sum_mid_c = 0, sum_mid_r = 0, sum_total_c = 0;
  for (const auto& p : ds.pairs) {
    (split_of(p.problem_id) == Split::Train ? n_train : n_val) += 1;
    sum_prefix += static_cast<double>(p.segmentation.prefix.size());
    sum_suffix += static_cast<double>(p.segmentation.suffix.size());
    sum_mid_c += static_cast<double>(p.segmentation.mid_chosen.size());
    sum_mid_r += static_cast<double>(p.segmentation.mid_rej.size());
    sum_total_c += static_cast<double>(p.segmentation.prefix.size() +
                                       p.segmentation.mid_chosen.size() +
                                       p.segmentation.suffix.size());
  }
  const double dn = n ? static_cast<double>(n) : 1.0;
  return {{"format_version", 1},
          {"n_pairs", n},
          {"n_train", n_train},
          {"n_validation", n_val},
          {"avg_prefix_len", sum_prefix / dn},
          {"avg_suffix_len", sum_suffix / dn},
          {"avg_mid_chosen_len", sum_mid_c / dn},
          {"avg_mid_rej_len", sum_mid_r / dn},
          {"mid_share_of_total", sum_total_c > 0 ? sum_mid_c / sum_total_c : 0.0},
          {"provenance", ds.provenance}};
}

}  // namespace fdpo
