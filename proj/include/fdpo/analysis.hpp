#pragma once

// Diagnostics over a built dataset and trained policy: segment/correctness
// phi association study, the pass@k estimator, continuation pass rates from
// chosen- vs rejected-mid bases, and probability-margin histograms.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fdpo/executor.hpp"
#include "fdpo/identifier.hpp"
#include "fdpo/policy.hpp"
#include "fdpo/ranker.hpp"
#include "fdpo/rng.hpp"
#include "fdpo/token.hpp"

namespace fdpo {

// ============================================================================
// Phi coefficient and the segment/correctness study
// ============================================================================

/// 2x2 counts of segment presence (rows) against code correctness (columns):
/// n11 present+correct, n10 present+incorrect, n01 absent+correct,
/// n00 absent+incorrect.
struct Contingency2x2 {
  long long n11 = 0, n10 = 0, n01 = 0, n00 = 0;

  long long total() const { return n11 + n10 + n01 + n00; }
};

/// Standard 2x2 phi; empty when any marginal is zero (association undefined).
inline std::optional<double> phi_coefficient(const Contingency2x2& c) {
  const double r1 = static_cast<double>(c.n11 + c.n10);
  const double r0 = static_cast<double>(c.n01 + c.n00);
  const double c1 = static_cast<double>(c.n11 + c.n01);
  const double c0 = static_cast<double>(c.n10 + c.n00);
  if (r1 == 0.0 || r0 == 0.0 || c1 == 0.0 || c0 == 0.0) return std::nullopt;
  const double num = static_cast<double>(c.n11) * static_cast<double>(c.n00) -
                     static_cast<double>(c.n10) * static_cast<double>(c.n01);
  return num / std::sqrt(r1 * r0 * c1 * c0);
}

/// Contiguous token-subsequence containment; the empty segment is contained
/// in everything.
inline bool contains_segment(const TokenSeq& haystack, const TokenSeq& needle) {
  if (needle.size() == 0) return true;
  return std::search(haystack.ids.begin(), haystack.ids.end(), needle.ids.begin(),
                     needle.ids.end()) != haystack.ids.end();
}

/// One problem's inputs to the study: its candidates and classification plus
/// the preference pair whose segments are being tested for association.
struct StudyInput {
  const Problem* problem = nullptr;
  const Classification* cls = nullptr;
  const PreferencePair* pair = nullptr;
};

struct SegmentStudyRow {
  std::string segment;  ///< "prefix" | "suffix" | "prefix+chosen_mid" | "prefix+reject_mid"
  Contingency2x2 counts;
  std::optional<double> phi;
};

/**
 * For each problem, tests every candidate for contiguous containment of the
 * pair's four derived segments, split by the candidate's correctness; counts
 * aggregate across problems and each row gets one phi.
 */
inline std::vector<SegmentStudyRow> segment_correctness_study(
    const std::vector<StudyInput>& inputs) {
  struct Kind {
    const char* name;
    TokenSeq (*make)(const Segmentation&);
  };
  static const Kind kinds[] = {
      {"prefix", [](const Segmentation& s) { return s.prefix; }},
      {"suffix", [](const Segmentation& s) { return s.suffix; }},
      {"prefix+chosen_mid", [](const Segmentation& s) { return concat(s.prefix, s.mid_chosen); }},
      {"prefix+reject_mid", [](const Segmentation& s) { return concat(s.prefix, s.mid_rej); }},
  };

  std::vector<SegmentStudyRow> rows;
  for (const Kind& kind : kinds) {
    SegmentStudyRow row;
    row.segment = kind.name;
    for (const StudyInput& in : inputs) {
      if (!in.problem || !in.cls || !in.pair)
        throw std::invalid_argument("segment_correctness_study: null study input");
      const TokenSeq segment = kind.make(in.pair->segmentation);
      std::vector<bool> correct(in.problem->candidates.size(), false);
      for (int ci : in.cls->correct) correct[static_cast<std::size_t>(ci)] = true;
      for (const auto& cand : in.problem->candidates) {
        const bool present = contains_segment(cand.code, segment);
        const bool is_correct = correct[static_cast<std::size_t>(cand.idx)];
        if (present && is_correct) ++row.counts.n11;
        else if (present && !is_correct) ++row.counts.n10;
        else if (!present && is_correct) ++row.counts.n01;
        else ++row.counts.n00;
      }
    }
    row.phi = phi_coefficient(row.counts);
    rows.push_back(std::move(row));
  }
  return rows;
}

// ============================================================================
// pass@k
// ============================================================================

/// Unbiased estimator 1 - C(n-c, k)/C(n, k), evaluated as a running product
/// so it stays exact and stable for n up to 10^4.
inline double pass_at_k(int n, int c, int k) {
  if (c < 0 || c > n) throw std::invalid_argument("pass_at_k: need 0 <= c <= n");
  if (k < 1 || k > n) throw std::invalid_argument("pass_at_k: need 1 <= k <= n");
  if (n - c < k) return 1.0;  // every size-k draw hits a passing sample
  double prod = 1.0;
  for (int i = 0; i < k; ++i)
    prod *= static_cast<double>(n - c - i) / static_cast<double>(n - i);
  return 1.0 - prod;
}

// ============================================================================
// Continuation pass rates
// ============================================================================

/// One validation pair prepared for the continuation study. The prompt
/// conditions sampling but is not part of the executed program.
struct ContinuationItem {
  TokenSeq prompt;
  TokenSeq prefix;
  TokenSeq mid_chosen;
  TokenSeq mid_rej;
  const Problem* problem = nullptr;
  const Classification* cls = nullptr;
};

struct ContinuationParams {
  int n_samples = 20;
  double temperature = 0.5;
  std::vector<int> ks = {1, 3, 5, 10};
  int max_new_tokens = 64;
  std::uint64_t seed = 1;
  ExecLimits limits{};
};

struct ContinuationRow {
  std::string basis;                ///< "prefix+mid_chosen" or "prefix+mid_rej"
  std::map<int, double> pass_at_k;  ///< k -> rate averaged over items
  long long total_passing = 0;      ///< summed passing samples, for auditing
};

/**
 * For each item and each basis, samples n_samples continuations of
 * prompt ++ prefix ++ mid, executes prefix ++ mid ++ continuation against the
 * problem's ground-truth tests, and averages pass@k over items. Every
 * execution error counts as a failed sample.
 */
inline std::vector<ContinuationRow> continuation_pass_rates(const NGramPolicy& policy,
                                                            const std::vector<ContinuationItem>& items,
                                                            const Vocabulary& vocab,
                                                            const ContinuationParams& params) {
  if (items.empty()) throw std::invalid_argument("continuation_pass_rates: no items");
  for (int k : params.ks)
    if (k < 1 || k > params.n_samples)
      throw std::invalid_argument("continuation_pass_rates: k outside [1, n_samples]");

  const TokenId stop = vocab.lookup("RET").value_or(static_cast<TokenId>(-1));

  std::vector<ContinuationRow> rows;
  for (int basis = 0; basis < 2; ++basis) {
    ContinuationRow row;
    row.basis = basis == 0 ? "prefix+mid_chosen" : "prefix+mid_rej";
    std::map<int, double> sums;
    for (int k : params.ks) sums[k] = 0.0;

    for (std::size_t i = 0; i < items.size(); ++i) {
      const ContinuationItem& item = items[i];
      if (!item.problem || !item.cls || !item.cls->usable)
        throw std::invalid_argument("continuation_pass_rates: item lacks ground-truth tests");
      const TokenSeq& mid = basis == 0 ? item.mid_chosen : item.mid_rej;
      const TokenSeq context = concat(item.prompt, item.prefix, mid);
      const TokenSeq body = concat(item.prefix, mid);

      Rng rng = derive_rng(params.seed, i * 2 + static_cast<std::uint64_t>(basis));
      int c = 0;
      for (int s = 0; s < params.n_samples; ++s) {
        const TokenSeq cont =
            sample_continuation(policy, context, params.temperature, params.max_new_tokens,
                                rng, stop);
        const TokenSeq program = concat(body, cont);
        bool all_pass = true;
        for (int tj : item.cls->gt_tests) {
          try {
            const StackTest t =
                parse_stack_test(item.problem->tests[static_cast<std::size_t>(tj)].payload);
            if (!run_ministack(program, vocab, t, params.limits).passed()) {
              all_pass = false;
              break;
            }
          } catch (const std::exception&) {
            all_pass = false;  // fail-closed on any execution error
            break;
          }
        }
        if (all_pass) ++c;
      }
      row.total_passing += c;
      for (int k : params.ks) sums[k] += pass_at_k(params.n_samples, c, k);
    }
    for (int k : params.ks) row.pass_at_k[k] = sums[k] / static_cast<double>(items.size());
    rows.push_back(std::move(row));
  }
  return rows;
}

// ============================================================================
// Probability-margin histograms
// ============================================================================

struct MarginHistogram {
  int n_bins = 20;
  double lo = -1.0, hi = 1.0;
  std::vector<long long> counts;  ///< size n_bins; sums to n_pairs
  double mean_margin = 0.0;
  double frac_positive = 0.0;
  long long n_pairs = 0;
};

struct MarginStudy {
  MarginHistogram whole_segment;  ///< margin of exp(sum of token logprobs)
  MarginHistogram per_token;      ///< diagnostic: exp(mean token logprob)
};

namespace detail {
inline void histogram_add(MarginHistogram& h, double margin) {
  const double width = (h.hi - h.lo) / h.n_bins;
  int bin = static_cast<int>(std::floor((margin - h.lo) / width));
  bin = std::clamp(bin, 0, h.n_bins - 1);
  ++h.counts[static_cast<std::size_t>(bin)];
  h.mean_margin += margin;
  if (margin > 0.0) h.frac_positive += 1.0;
  ++h.n_pairs;
}
inline void histogram_finalize(MarginHistogram& h) {
  if (h.n_pairs > 0) {
    h.mean_margin /= static_cast<double>(h.n_pairs);
    h.frac_positive /= static_cast<double>(h.n_pairs);
  }
}
}  // namespace detail

/**
 * Per pair: margin = p(mid_chosen) - p(mid_rej) with p(segment) the product
 * of token conditionals given prompt ++ prefix; bounded in [-1, 1] since both
 * are probabilities. A per-token-normalized variant (geometric mean instead
 * of product) is computed alongside.
 */
inline MarginStudy prob_margin_histogram(const NGramPolicy& policy,
                                         const std::vector<TrainExample>& pairs,
                                         int n_bins = 20) {
  if (pairs.empty()) throw std::invalid_argument("prob_margin_histogram: no pairs");
  MarginStudy study;
  study.whole_segment.n_bins = n_bins;
  study.whole_segment.counts.assign(static_cast<std::size_t>(n_bins), 0);
  study.per_token.n_bins = n_bins;
  study.per_token.counts.assign(static_cast<std::size_t>(n_bins), 0);

  for (const TrainExample& ex : pairs) {
    const Segmentation& seg = ex.pair.segmentation;
    const TokenSeq ctx = concat(ex.prompt, seg.prefix);
    double sum_c = 0.0, sum_r = 0.0;
    for (double lp : seq_logprob(policy, ctx, seg.mid_chosen)) sum_c += lp;
    for (double lp : seq_logprob(policy, ctx, seg.mid_rej)) sum_r += lp;
    detail::histogram_add(study.whole_segment, std::exp(sum_c) - std::exp(sum_r));
    detail::histogram_add(study.per_token,
                          std::exp(sum_c / static_cast<double>(seg.mid_chosen.size())) -
                              std::exp(sum_r / static_cast<double>(seg.mid_rej.size())));
  }
  detail::histogram_finalize(study.whole_segment);
  detail::histogram_finalize(study.per_token);
  return study;
}

// ============================================================================
// Report serialization
// ============================================================================

inline nlohmann::json margin_histogram_to_json(const MarginHistogram& h) {
  return {{"n_bins", h.n_bins},       {"lo", h.lo},
          {"hi", h.hi},               {"counts", h.counts},
          {"mean_margin", h.mean_margin}, {"frac_positive", h.frac_positive},
          {"n_pairs", h.n_pairs}};
}

inline nlohmann::json segment_study_to_json(const std::vector<SegmentStudyRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j = {{"segment", r.segment},
                        {"n11", r.counts.n11},
                        {"n10", r.counts.n10},
                        {"n01", r.counts.n01},
                        {"n00", r.counts.n00}};
    if (r.phi) j["phi"] = *r.phi;
    else j["phi"] = nullptr;
    out.push_back(std::move(j));
  }
  return out;
}

inline nlohmann::json continuation_rows_to_json(const std::vector<ContinuationRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json ks = nlohmann::json::object();
    for (const auto& [k, v] : r.pass_at_k) ks[std::to_string(k)] = v;
    out.push_back({{"basis", r.basis}, {"pass_at_k", std::move(ks)},
                   {"total_passing", r.total_passing}});
  }
  return out;
}

}  // namespace fdpo
