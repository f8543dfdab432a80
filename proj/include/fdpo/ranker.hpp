#pragma once

// Mutual execution ranking: codes and tests score each other through the link
// matrix with a damped synchronous update until scores or the code ordering
// stabilize. The top-ranked code then defines the ground-truth test set, and
// that set splits the candidates into correct / incorrect.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "fdpo/executor.hpp"

namespace fdpo {

struct RankParams {
  double damping = 0.85;
  double init = 1.0;
  double tol = 1e-10;
  int max_iter = 200;
};

struct RankResult {
  std::vector<double> code_scores;
  std::vector<double> test_scores;
  std::vector<int> code_order;  ///< indices by descending score, ties by ascending idx
  int iterations = 0;
  bool converged = false;
  double damping = 0.0;
};

namespace detail {
inline std::vector<int> order_by_score_desc(const std::vector<double>& scores) {
  std::vector<int> order(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[static_cast<std::size_t>(a)] != scores[static_cast<std::size_t>(b)])
      return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
    return a < b;
  });
  return order;
}
}  // namespace detail

/**
 * Damped mutual ranking over a boolean link matrix.
 *
 * Synchronous update from iteration t-1 to t:
 *   code_i  <- (1-d) * code_i  + d * sum_j test_j * link[i][j]
 *   test_j  <- (1-d) * test_j  + d * sum_i code_i * link[i][j]
 * with all right-hand sides read from iteration t-1. Scores start at `init`
 * and are never normalized; only the ordering is consumed downstream.
 *
 * Stops when the max-abs score change drops below `tol`, or when the code
 * ordering is unchanged across 2 consecutive iterations, capped at
 * `max_iter`; `converged` records whether either rule fired.
 */
inline RankResult rank(const LinkMatrix& link, const RankParams& p = {}) {
  if (link.n_codes == 0 || link.n_tests == 0)
    throw std::invalid_argument("rank: empty link matrix");
  if (!(p.damping > 0.0 && p.damping < 1.0))
    throw std::invalid_argument("rank: damping must be in (0,1)");
  if (!(p.init > 0.0)) throw std::invalid_argument("rank: init must be > 0");
  if (!(p.tol > 0.0)) throw std::invalid_argument("rank: tol must be > 0");

  const int nc = link.n_codes;
  const int nt = link.n_tests;
  const double d = p.damping;

  RankResult r;
  r.damping = d;
  r.code_scores.assign(static_cast<std::size_t>(nc), p.init);
  r.test_scores.assign(static_cast<std::size_t>(nt), p.init);

  std::vector<int> prev_order = detail::order_by_score_desc(r.code_scores);
  int stable_count = 0;

  std::vector<double> next_codes(static_cast<std::size_t>(nc));
  std::vector<double> next_tests(static_cast<std::size_t>(nt));

  for (int it = 0; it < p.max_iter; ++it) {
    for (int i = 0; i < nc; ++i) {
      double acc = 0.0;
      for (int j = 0; j < nt; ++j)
        if (link.at(i, j)) acc += r.test_scores[static_cast<std::size_t>(j)];
      next_codes[static_cast<std::size_t>(i)] =
          (1.0 - d) * r.code_scores[static_cast<std::size_t>(i)] + d * acc;
    }
    for (int j = 0; j < nt; ++j) {
      double acc = 0.0;
      for (int i = 0; i < nc; ++i)
        if (link.at(i, j)) acc += r.code_scores[static_cast<std::size_t>(i)];
      next_tests[static_cast<std::size_t>(j)] =
          (1.0 - d) * r.test_scores[static_cast<std::size_t>(j)] + d * acc;
    }

    double max_delta = 0.0;
    for (int i = 0; i < nc; ++i)
      max_delta = std::max(max_delta, std::abs(next_codes[static_cast<std::size_t>(i)] -
                                               r.code_scores[static_cast<std::size_t>(i)]));
    for (int j = 0; j < nt; ++j)
      max_delta = std::max(max_delta, std::abs(next_tests[static_cast<std::size_t>(j)] -
                                               r.test_scores[static_cast<std::size_t>(j)]));

    r.code_scores.swap(next_codes);
    r.test_scores.swap(next_tests);
    r.iterations = it + 1;

    std::vector<int> order = detail::order_by_score_desc(r.code_scores);
    stable_count = (order == prev_order) ? stable_count + 1 : 0;
    prev_order = std::move(order);

    if (max_delta < p.tol || stable_count >= 2) {
      r.converged = true;
      break;
    }
  }
  r.code_order = std::move(prev_order);
  return r;
}

/// Correct/incorrect bipartition induced by the top-ranked code's passed tests.
struct Classification {
  std::vector<int> gt_tests;   ///< tests passed by code_order[0], ascending
  std::vector<int> correct;    ///< candidates passing every gt test, ascending
  std::vector<int> incorrect;  ///< the complement, ascending
  bool usable = false;         ///< false when gt_tests is empty
};

inline Classification select_ground_truth_and_classify(const RankResult& rank,
                                                       const LinkMatrix& link) {
  if (rank.code_order.empty() || static_cast<int>(rank.code_order.size()) != link.n_codes)
    throw std::invalid_argument("classify: rank/link size mismatch");

  Classification out;
  const int top = rank.code_order.front();
  for (int j = 0; j < link.n_tests; ++j)
    if (link.at(top, j)) out.gt_tests.push_back(j);
  out.usable = !out.gt_tests.empty();
  if (!out.usable) return out;

  for (int i = 0; i < link.n_codes; ++i) {
    bool all = true;
    for (int j : out.gt_tests)
      if (!link.at(i, j)) {
        all = false;
        break;
      }
    (all ? out.correct : out.incorrect).push_back(i);
  }
  return out;
}

/// Min-max normalization to [0,1]; a constant vector maps to all 0.5 so that
/// downstream rank gaps are zero rather than undefined.
inline std::vector<double> min_max_normalize(const std::vector<double>& v) {
  if (v.empty()) return {};
  auto [mn_it, mx_it] = std::minmax_element(v.begin(), v.end());
  const double mn = *mn_it, mx = *mx_it;
  std::vector<double> out(v.size());
  if (mx == mn) {
    std::fill(out.begin(), out.end(), 0.5);
    return out;
  }
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - mn) / (mx - mn);
  return out;
}

// --- JSON audit serialization --------------------------------------------

inline nlohmann::json rank_result_to_json(const RankResult& r) {
  return {{"code_scores", r.code_scores}, {"test_scores", r.test_scores},
          {"code_order", r.code_order},   {"iterations", r.iterations},
          {"converged", r.converged},     {"damping", r.damping}};
}

inline RankResult rank_result_from_json(const nlohmann::json& j) {
  RankResult r;
  r.code_scores = j.at("code_scores").get<std::vector<double>>();
  r.test_scores = j.at("test_scores").get<std::vector<double>>();
  r.code_order = j.at("code_order").get<std::vector<int>>();
  r.iterations = j.at("iterations").get<int>();
  r.converged = j.at("converged").get<bool>();
  r.damping = j.at("damping").get<double>();
  return r;
}

inline nlohmann::json classification_to_json(const Classification& c) {
  return {{"gt_tests", c.gt_tests},
          {"correct", c.correct},
          {"incorrect", c.incorrect},
          {"usable", c.usable}};
}

inline Classification classification_from_json(const nlohmann::json& j) {
  Classification c;
  c.gt_tests = j.at("gt_tests").get<std::vector<int>>();
  c.correct = j.at("correct").get<std::vector<int>>();
  c.incorrect = j.at("incorrect").get<std::vector<int>>();
  c.usable = j.at("usable").get<bool>();
  return c;
}

}  // namespace fdpo
