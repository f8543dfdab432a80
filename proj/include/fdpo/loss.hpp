#pragma once

// Segment-weighted preference losses. Rewards weight the mid segment by
// w_focused and treat the suffix asymmetrically (counted for the chosen
// sample, excluded for the rejected one by default); the pair margin is the
// chosen-minus-rejected reward and the loss is mean -log sigmoid(margin).
// With gamma == beta the shared-prefix terms cancel exactly, and with
// {w_focused=1, suffix counted on both sides} the loss reduces to standard
// whole-sequence DPO.

#include <cmath>
#include <stdexcept>
#include <vector>

namespace fdpo {

/// Per-token log-probabilities for one code sample, segment by segment, under
/// the trained policy and the frozen reference. Each segment is conditioned
/// on the full preceding context (prompt ++ prior segments of its own side).
struct SegmentLogProbs {
  std::vector<double> prefix_policy, prefix_ref;
  std::vector<double> mid_policy, mid_ref;
  std::vector<double> suffix_policy, suffix_ref;
};

struct LossConfig {
  double beta = 0.1;    ///< weight on the chosen reward
  double gamma = 0.1;   ///< weight on the rejected reward
  double w_focused = 2.0;
  bool include_suffix_in_chosen = true;   ///< off = "no suffix in positive reward" ablation
  bool include_suffix_in_reject = false;  ///< on  = "suffix in reject reward" ablation
};

namespace detail {
inline void check_segment(const std::vector<double>& policy, const std::vector<double>& ref,
                          const char* name) {
  if (policy.size() != ref.size())
    throw std::invalid_argument(std::string("segment length mismatch in ") + name);
}
inline double ratio_sum(const std::vector<double>& policy, const std::vector<double>& ref) {
  double s = 0.0;
  for (std::size_t i = 0; i < policy.size(); ++i) s += policy[i] - ref[i];
  return s;
}
/// -log sigmoid(m), computed via softplus so large |m| stays finite.
inline double neg_log_sigmoid(double m) {
  if (m >= 0.0) return std::log1p(std::exp(-m));
  return -m + std::log1p(std::exp(m));
}
}  // namespace detail

/// Chosen-side reward: beta * (prefix + w_focused*mid [+ suffix]) log-ratio sums.
inline double reward_chosen(const SegmentLogProbs& lp, const LossConfig& cfg) {
  detail::check_segment(lp.prefix_policy, lp.prefix_ref, "prefix");
  detail::check_segment(lp.mid_policy, lp.mid_ref, "mid");
  detail::check_segment(lp.suffix_policy, lp.suffix_ref, "suffix");
  double r = detail::ratio_sum(lp.prefix_policy, lp.prefix_ref) +
             cfg.w_focused * detail::ratio_sum(lp.mid_policy, lp.mid_ref);
  if (cfg.include_suffix_in_chosen) r += detail::ratio_sum(lp.suffix_policy, lp.suffix_ref);
  return cfg.beta * r;
}

/// Rejected-side reward: gamma * (prefix + w_focused*mid) log-ratio sums;
/// the suffix contributes nothing unless include_suffix_in_reject.
inline double reward_rej(const SegmentLogProbs& lp, const LossConfig& cfg) {
  detail::check_segment(lp.prefix_policy, lp.prefix_ref, "prefix");
  detail::check_segment(lp.mid_policy, lp.mid_ref, "mid");
  detail::check_segment(lp.suffix_policy, lp.suffix_ref, "suffix");
  double r = detail::ratio_sum(lp.prefix_policy, lp.prefix_ref) +
             cfg.w_focused * detail::ratio_sum(lp.mid_policy, lp.mid_ref);
  if (cfg.include_suffix_in_reject) r += detail::ratio_sum(lp.suffix_policy, lp.suffix_ref);
  return cfg.gamma * r;
}

struct PairLossBreakdown {
  double delta_prefix = 0.0;  ///< exactly 0 whenever gamma == beta
  double delta_mid = 0.0;
  double delta_suffix = 0.0;
  double margin = 0.0;  ///< delta_prefix + delta_mid + delta_suffix
  double loss = 0.0;    ///< -log sigmoid(margin)
};

struct LossOutput {
  double loss = 0.0;          ///< batch mean of -log sigmoid(margin)
  double delta_mid = 0.0;     ///< batch means of the margin components
  double delta_suffix = 0.0;
  double margin = 0.0;
  std::vector<PairLossBreakdown> pairs;
};

/**
 * Segment-weighted preference loss over a batch of (chosen, rejected)
 * segment log-probs. Per pair:
 *
 *   delta_prefix = beta*P_chosen - gamma*P_rejected   (P = prefix ratio sum)
 *   delta_mid    = w_focused * (beta*M_chosen - gamma*M_rejected)
 *   delta_suffix = [chosen] beta*S_chosen - [reject] gamma*S_rejected
 *   margin       = delta_prefix + delta_mid + delta_suffix
 *
 * The pair shares its prefix tokens between both sides, so P_chosen equals
 * P_rejected and delta_prefix vanishes exactly when gamma == beta; with
 * gamma != beta the margin is the full reward difference, no shortcut.
 */
inline LossOutput focused_dpo_loss(
    const std::vector<std::pair<SegmentLogProbs, SegmentLogProbs>>& batch,
    const LossConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("focused_dpo_loss: empty batch");

  LossOutput out;
  out.pairs.reserve(batch.size());
  for (const auto& [chosen, rej] : batch) {
    detail::check_segment(chosen.prefix_policy, chosen.prefix_ref, "chosen prefix");
    detail::check_segment(chosen.mid_policy, chosen.mid_ref, "chosen mid");
    detail::check_segment(chosen.suffix_policy, chosen.suffix_ref, "chosen suffix");
    detail::check_segment(rej.prefix_policy, rej.prefix_ref, "rejected prefix");
    detail::check_segment(rej.mid_policy, rej.mid_ref, "rejected mid");
    detail::check_segment(rej.suffix_policy, rej.suffix_ref, "rejected suffix");

    PairLossBreakdown b;
    b.delta_prefix = cfg.beta * detail::ratio_sum(chosen.prefix_policy, chosen.prefix_ref) -
                     cfg.gamma * detail::ratio_sum(rej.prefix_policy, rej.prefix_ref);
    b.delta_mid =
        cfg.w_focused * (cfg.beta * detail::ratio_sum(chosen.mid_policy, chosen.mid_ref) -
                         cfg.gamma * detail::ratio_sum(rej.mid_policy, rej.mid_ref));
    b.delta_suffix = 0.0;
    if (cfg.include_suffix_in_chosen)
      b.delta_suffix += cfg.beta * detail::ratio_sum(chosen.suffix_policy, chosen.suffix_ref);
    if (cfg.include_suffix_in_reject)
      b.delta_suffix -= cfg.gamma * detail::ratio_sum(rej.suffix_policy, rej.suffix_ref);
    b.margin = b.delta_prefix + b.delta_mid + b.delta_suffix;
    b.loss = detail::neg_log_sigmoid(b.margin);

    out.loss += b.loss;
    out.delta_mid += b.delta_mid;
    out.delta_suffix += b.delta_suffix;
    out.margin += b.margin;
    out.pairs.push_back(b);
  }
  const double n = static_cast<double>(batch.size());
  out.loss /= n;
  out.delta_mid /= n;
  out.delta_suffix /= n;
  out.margin /= n;
  return out;
}

/// Whole-sequence log-probabilities for one preference pair.
struct SeqLogProbPair {
  double chosen_policy = 0.0;
  double chosen_ref = 0.0;
  double rej_policy = 0.0;
  double rej_ref = 0.0;
};

/// Plain DPO: mean -log sigmoid(beta * (chosen log-ratio - rejected log-ratio)).
inline LossOutput standard_dpo_loss(const std::vector<SeqLogProbPair>& batch, double beta) {
  if (batch.empty()) throw std::invalid_argument("standard_dpo_loss: empty batch");
  LossOutput out;
  out.pairs.reserve(batch.size());
  for (const auto& p : batch) {
    PairLossBreakdown b;
    b.margin = beta * ((p.chosen_policy - p.chosen_ref) - (p.rej_policy - p.rej_ref));
    b.loss = detail::neg_log_sigmoid(b.margin);
    out.loss += b.loss;
    out.margin += b.margin;
    out.pairs.push_back(b);
  }
  const double n = static_cast<double>(batch.size());
  out.loss /= n;
  out.margin /= n;
  return out;
}

}  // namespace fdpo
