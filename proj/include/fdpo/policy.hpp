#pragma once

// Tabular n-gram softmax policy: the small differentiable stand-in for a
// large autoregressive model. Logits live in a sparse table keyed by the
// n-token context (left-padded with the pad id); a context with no entry is
// implicitly all-zero, i.e. uniform. Gradients of the preference losses are
// analytic softmax calculus, so training needs no autodiff framework.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fdpo/identifier.hpp"
#include "fdpo/loss.hpp"
#include "fdpo/rng.hpp"
#include "fdpo/token.hpp"

namespace fdpo {

using ContextKey = std::vector<TokenId>;
using LogitTable = std::map<ContextKey, std::vector<double>>;

class NGramPolicy {
 public:
  NGramPolicy(int order, int vocab_size, std::uint64_t seed)
      : order_(order), vocab_size_(vocab_size), seed_(seed) {
    if (order < 1) throw std::invalid_argument("NGramPolicy: order must be >= 1");
    if (vocab_size < 1) throw std::invalid_argument("NGramPolicy: vocab_size must be >= 1");
  }

  int order() const { return order_; }
  int vocab_size() const { return vocab_size_; }
  std::uint64_t seed() const { return seed_; }
  const LogitTable& logits() const { return logits_; }

  bool operator==(const NGramPolicy& other) const {
    return order_ == other.order_ && vocab_size_ == other.vocab_size_ &&
           logits_ == other.logits_;
  }

  /// Context key for the token following `preceding`: its last `order` ids,
  /// left-padded with the pad token when the history is shorter.
  ContextKey context_key(const std::vector<TokenId>& preceding) const {
    ContextKey key(static_cast<std::size_t>(order_), kPadToken);
    const std::size_t take = std::min(preceding.size(), static_cast<std::size_t>(order_));
    for (std::size_t i = 0; i < take; ++i)
      key[static_cast<std::size_t>(order_) - take + i] = preceding[preceding.size() - take + i];
    return key;
  }

  /// Softmax probabilities for a context; untouched contexts are uniform.
  std::vector<double> probs(const ContextKey& key) const {
    const auto it = logits_.find(key);
    if (it == logits_.end())
      return std::vector<double>(static_cast<std::size_t>(vocab_size_),
                                 1.0 / static_cast<double>(vocab_size_));
    const std::vector<double>& row = it->second;
    const double m = *std::max_element(row.begin(), row.end());
    std::vector<double> p(row.size());
    double z = 0.0;
    for (std::size_t v = 0; v < row.size(); ++v) {
      p[v] = std::exp(row[v] - m);
      z += p[v];
    }
    for (double& x : p) x /= z;
    return p;
  }

  /// log pi(token | key); O(vocab) via a stable log-sum-exp.
  double logprob(const ContextKey& key, TokenId token) const {
    check_token(token);
    const auto it = logits_.find(key);
    if (it == logits_.end()) return -std::log(static_cast<double>(vocab_size_));
    const std::vector<double>& row = it->second;
    const double m = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double x : row) z += std::exp(x - m);
    return row[static_cast<std::size_t>(token)] - m - std::log(z);
  }

  /// Mutable logits row for a context, materialized as zeros on first touch.
  std::vector<double>& row(const ContextKey& key) {
    auto it = logits_.find(key);
    if (it == logits_.end())
      it = logits_.emplace(key, std::vector<double>(static_cast<std::size_t>(vocab_size_), 0.0))
               .first;
    return it->second;
  }

  void check_token(TokenId t) const {
    if (t < 0 || t >= vocab_size_)
      throw std::out_of_range("NGramPolicy: token id " + std::to_string(t) +
                              " outside vocabulary of size " + std::to_string(vocab_size_));
  }

  nlohmann::json to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& [key, values] : logits_)
      rows.push_back({{"context", key}, {"values", values}});
    return {{"format_version", 1},
            {"order", order_},
            {"vocab_size", vocab_size_},
            {"seed", seed_},
            {"logits", std::move(rows)}};
  }

  static NGramPolicy from_json(const nlohmann::json& j) {
    if (j.at("format_version").get<int>() != 1)
      throw std::runtime_error("policy checkpoint: unsupported format_version");
    NGramPolicy p(j.at("order").get<int>(), j.at("vocab_size").get<int>(),
                  j.at("seed").get<std::uint64_t>());
    for (const auto& row : j.at("logits")) {
      ContextKey key = row.at("context").get<ContextKey>();
      auto values = row.at("values").get<std::vector<double>>();
      if (static_cast<int>(key.size()) != p.order_)
        throw std::runtime_error("policy checkpoint: context length != order");
      if (static_cast<int>(values.size()) != p.vocab_size_)
        throw std::runtime_error("policy checkpoint: row length != vocab_size");
      p.logits_.emplace(std::move(key), std::move(values));
    }
    return p;
  }

 private:
  int order_;
  int vocab_size_;
  std::uint64_t seed_;
  LogitTable logits_;
};

/**
 * Per-token log-probabilities of `segment` given `context`, each token
 * conditioned on the last `order` tokens of context ++ segment-so-far.
 */
inline std::vector<double> seq_logprob(const NGramPolicy& policy, const TokenSeq& context,
                                       const TokenSeq& segment) {
  std::vector<TokenId> running = context.ids;
  std::vector<double> out;
  out.reserve(segment.size());
  for (TokenId t : segment.ids) {
    policy.check_token(t);
    out.push_back(policy.logprob(policy.context_key(running), t));
    running.push_back(t);
  }
  return out;
}

// ============================================================================
// Preference-pair log-probs and analytic gradients
// ============================================================================

/// One dataset pair joined with its problem's prompt tokens.
struct TrainExample {
  TokenSeq prompt;
  PreferencePair pair;
};

/// Evaluate a pair's segment log-probs under policy and reference. The prefix
/// is shared by both sides (same tokens, same context), so it is computed
/// once and mirrored.
inline std::pair<SegmentLogProbs, SegmentLogProbs> pair_segment_logprobs(
    const NGramPolicy& policy, const NGramPolicy& reference, const TrainExample& ex) {
  const Segmentation& seg = ex.pair.segmentation;
  const TokenSeq& prompt = ex.prompt;
  const TokenSeq ctx_mid = concat(prompt, seg.prefix);
  const TokenSeq ctx_suf_c = concat(prompt, seg.prefix, seg.mid_chosen);
  const TokenSeq ctx_suf_r = concat(prompt, seg.prefix, seg.mid_rej);

  SegmentLogProbs chosen, rej;
  chosen.prefix_policy = seq_logprob(policy, prompt, seg.prefix);
  chosen.prefix_ref = seq_logprob(reference, prompt, seg.prefix);
  rej.prefix_policy = chosen.prefix_policy;
  rej.prefix_ref = chosen.prefix_ref;

  chosen.mid_policy = seq_logprob(policy, ctx_mid, seg.mid_chosen);
  chosen.mid_ref = seq_logprob(reference, ctx_mid, seg.mid_chosen);
  rej.mid_policy = seq_logprob(policy, ctx_mid, seg.mid_rej);
  rej.mid_ref = seq_logprob(reference, ctx_mid, seg.mid_rej);

  chosen.suffix_policy = seq_logprob(policy, ctx_suf_c, seg.suffix);
  chosen.suffix_ref = seq_logprob(reference, ctx_suf_c, seg.suffix);
  rej.suffix_policy = seq_logprob(policy, ctx_suf_r, seg.suffix);
  rej.suffix_ref = seq_logprob(reference, ctx_suf_r, seg.suffix);
  return {std::move(chosen), std::move(rej)};
}

/**
 * Batch loss plus the exact gradient of the batch-mean loss with respect to
 * every touched logits entry of `policy` (the reference is frozen).
 *
 * Derivation: the margin is a weighted sum of realized-token log-probs, with
 * per-occurrence weight kappa (beta-gamma on prefix tokens, +/- w_focused
 * times beta/gamma on mid tokens, +/- beta/gamma on counted suffix tokens).
 * d(-log sigmoid(m))/dm = -sigmoid(-m), and d log pi(t|c) / d logits[c][v]
 * = delta(v==t) - softmax_c[v]; the gradient is the kappa- and
 * sigmoid-weighted accumulation of those rows, divided by the batch size.
 */
inline std::pair<LossOutput, LogitTable> loss_and_grad(const NGramPolicy& policy,
                                                       const NGramPolicy& reference,
                                                       const std::vector<TrainExample>& batch,
                                                       const LossConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("loss_and_grad: empty batch");

  std::vector<std::pair<SegmentLogProbs, SegmentLogProbs>> lps;
  lps.reserve(batch.size());
  for (const auto& ex : batch) lps.push_back(pair_segment_logprobs(policy, reference, ex));
  LossOutput out = focused_dpo_loss(lps, cfg);

  LogitTable grad;
  std::map<ContextKey, std::vector<double>> softmax_cache;
  auto softmax_of = [&](const ContextKey& key) -> const std::vector<double>& {
    auto it = softmax_cache.find(key);
    if (it == softmax_cache.end()) it = softmax_cache.emplace(key, policy.probs(key)).first;
    return it->second;
  };

  auto accumulate = [&](const TokenSeq& context, const TokenSeq& segment, double kappa,
                        double coef) {
    if (kappa == 0.0 || segment.size() == 0) return;
    std::vector<TokenId> running = context.ids;
    for (TokenId t : segment.ids) {
      const ContextKey key = policy.context_key(running);
      const std::vector<double>& p = softmax_of(key);
      auto git = grad.find(key);
      if (git == grad.end())
        git = grad.emplace(key, std::vector<double>(p.size(), 0.0)).first;
      std::vector<double>& g = git->second;
      const double scale = coef * kappa;
      for (std::size_t v = 0; v < p.size(); ++v) g[v] -= scale * p[v];
      g[static_cast<std::size_t>(t)] += scale;
      running.push_back(t);
    }
  };

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const TrainExample& ex = batch[i];
    const Segmentation& seg = ex.pair.segmentation;
    const double m = out.pairs[i].margin;
    // d(batch loss)/d(margin_i) = -sigmoid(-m_i)/B, via 1/(1+e^m)
    const double coef = -inv_b / (1.0 + std::exp(m));

    const TokenSeq ctx_mid = concat(ex.prompt, seg.prefix);
    accumulate(ex.prompt, seg.prefix, cfg.beta - cfg.gamma, coef);
    accumulate(ctx_mid, seg.mid_chosen, cfg.beta * cfg.w_focused, coef);
    accumulate(ctx_mid, seg.mid_rej, -cfg.gamma * cfg.w_focused, coef);
    if (cfg.include_suffix_in_chosen)
      accumulate(concat(ex.prompt, seg.prefix, seg.mid_chosen), seg.suffix, cfg.beta, coef);
    if (cfg.include_suffix_in_reject)
      accumulate(concat(ex.prompt, seg.prefix, seg.mid_rej), seg.suffix, -cfg.gamma, coef);
  }
  return {std::move(out), std::move(grad)};
}

// ============================================================================
// Training loop
// ============================================================================

struct TrainConfig {
  double learning_rate = 0.5;
  int steps = 500;
  int batch_size = 0;  ///< <= 0 or >= dataset size means full-batch
  std::uint64_t seed = 1;
  LossConfig loss;
};

struct TrainStep {
  int step = 0;
  double loss = 0.0;
  double mean_margin = 0.0;
};

struct TrainResult {
  NGramPolicy policy;
  std::vector<TrainStep> history;
};

/**
 * Plain gradient descent on the preference loss. Each step evaluates the
 * loss on a seeded batch (a fresh derived RNG per step, so the trajectory is
 * reproducible), records {step, loss, mean margin} *at the current
 * parameters*, then applies one update. Aborts on a non-finite loss.
 */
inline TrainResult train(NGramPolicy policy, const NGramPolicy& reference,
                         const std::vector<TrainExample>& dataset, const TrainConfig& cfg) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  if (cfg.learning_rate < 0.0) throw std::invalid_argument("train: negative learning rate");

  TrainResult result{std::move(policy), {}};
  result.history.reserve(static_cast<std::size_t>(std::max(cfg.steps, 0)));

  const int n = static_cast<int>(dataset.size());
  const bool full_batch = cfg.batch_size <= 0 || cfg.batch_size >= n;

  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<TrainExample> batch;
    const std::vector<TrainExample>* batch_ptr = &dataset;
    if (!full_batch) {
      Rng rng = derive_rng(cfg.seed, static_cast<std::uint64_t>(step));
      std::vector<int> idx(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
      rng.shuffle(idx);
      batch.reserve(static_cast<std::size_t>(cfg.batch_size));
      for (int i = 0; i < cfg.batch_size; ++i)
        batch.push_back(dataset[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
      batch_ptr = &batch;
    }

    auto [loss, grad] = loss_and_grad(result.policy, reference, *batch_ptr, cfg.loss);
    if (!std::isfinite(loss.loss))
      throw std::runtime_error("train: loss diverged (non-finite) at step " +
                               std::to_string(step));
    result.history.push_back({step, loss.loss, loss.margin});

    // a zero learning rate must leave the policy untouched, including its
    // set of materialized rows (the checkpoint would otherwise grow)
    if (cfg.learning_rate == 0.0) continue;
    for (const auto& [key, g] : grad) {
      std::vector<double>& row = result.policy.row(key);
      for (std::size_t v = 0; v < g.size(); ++v) row[v] -= cfg.learning_rate * g[v];
    }
  }
  return result;
}

// ============================================================================
// Sampling
// ============================================================================

/**
 * Autoregressive sampling from `context` until `stop_token` is emitted (it is
 * included in the output) or max_len tokens are drawn. temperature 0 is
 * greedy argmax with ascending-id tie-break; temperature > 0 scales logits
 * before the softmax. Fully determined by the caller's RNG state.
 */
inline TokenSeq sample_continuation(const NGramPolicy& policy, const TokenSeq& context,
                                    double temperature, int max_len, Rng& rng,
                                    TokenId stop_token) {
  if (temperature < 0.0)
    throw std::invalid_argument("sample_continuation: negative temperature");
  TokenSeq out;
  std::vector<TokenId> running = context.ids;
  for (int i = 0; i < max_len; ++i) {
    const ContextKey key = policy.context_key(running);
    TokenId pick = 0;
    if (temperature == 0.0) {
      const auto it = policy.logits().find(key);
      if (it == policy.logits().end()) {
        pick = 0;  // uniform row: lowest id wins the tie
      } else {
        const std::vector<double>& row = it->second;
        pick = static_cast<TokenId>(
            std::max_element(row.begin(), row.end()) - row.begin());  // first max = lowest id
      }
    } else {
      const auto it = policy.logits().find(key);
      std::vector<double> p;
      if (it == policy.logits().end()) {
        p.assign(static_cast<std::size_t>(policy.vocab_size()),
                 1.0 / static_cast<double>(policy.vocab_size()));
      } else {
        const std::vector<double>& row = it->second;
        double m = row[0] / temperature;
        for (double x : row) m = std::max(m, x / temperature);
        p.resize(row.size());
        double z = 0.0;
        for (std::size_t v = 0; v < row.size(); ++v) {
          p[v] = std::exp(row[v] / temperature - m);
          z += p[v];
        }
        for (double& x : p) x /= z;
      }
      const double u = rng.next_double();
      double cum = 0.0;
      pick = static_cast<TokenId>(p.size() - 1);  // fp-residue fallback
      for (std::size_t v = 0; v < p.size(); ++v) {
        cum += p[v];
        if (u < cum) {
          pick = static_cast<TokenId>(v);
          break;
        }
      }
    }
    out.append(pick);
    running.push_back(pick);
    if (pick == stop_token) break;
  }
  return out;
}

}  // namespace fdpo
