#pragma once

// Stage orchestration: gen -> exec -> rank -> build -> train -> analyze, each
// reading the previous stage's artifacts from the output directory and
// writing its own atomically. Every stage leaves a deterministic manifest
// (config hash, seed, format versions, input/output content hashes), so any
// artifact can be traced to the exact configuration that produced it. No
// stage mutates another stage's outputs.

#include <filesystem>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fdpo/analysis.hpp"
#include "fdpo/config.hpp"
#include "fdpo/corpus.hpp"
#include "fdpo/executor.hpp"
#include "fdpo/identifier.hpp"
#include "fdpo/io.hpp"
#include "fdpo/policy.hpp"
#include "fdpo/ranker.hpp"
#include "fdpo/synth.hpp"

namespace fdpo {

/// A stage was invoked before the stages it depends on.
class PrerequisiteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Artifact locations for one run. Report names embed the config hash and
/// seed so runs with different settings never collide.
class Paths {
 public:
  Paths(const std::filesystem::path& out_dir, const std::string& cfg_hash, std::uint64_t seed)
      : root_(out_dir), tag_(cfg_hash + "_s" + std::to_string(seed)) {}

  std::filesystem::path root() const { return root_; }
  std::filesystem::path corpus_jsonl() const { return root_ / "corpus.jsonl"; }
  std::filesystem::path vocab_json() const { return root_ / "vocab.json"; }
  std::filesystem::path links_dir() const { return root_ / "links"; }
  std::filesystem::path link_csv(const std::string& id) const {
    return links_dir() / (id + ".csv");
  }
  std::filesystem::path ranks_dir() const { return root_ / "ranks"; }
  std::filesystem::path rank_json(const std::string& id) const {
    return ranks_dir() / (id + ".json");
  }
  std::filesystem::path dataset_jsonl() const { return root_ / "dataset.jsonl"; }
  std::filesystem::path dataset_manifest_json() const { return root_ / "dataset_manifest.json"; }
  std::filesystem::path policy_init_json() const { return root_ / "policy_init.json"; }
  std::filesystem::path policy_json() const { return root_ / "policy.json"; }
  std::filesystem::path train_history_json() const { return root_ / "train_history.json"; }
  std::filesystem::path reports_dir() const { return root_ / "reports"; }
  std::filesystem::path report(const std::string& name, const std::string& ext) const {
    return reports_dir() / (name + "_" + tag_ + "." + ext);
  }
  std::filesystem::path stage_manifest(const std::string& stage) const {
    return root_ / "manifests" / (stage + ".json");
  }

 private:
  std::filesystem::path root_;
  std::string tag_;
};

namespace detail {

inline std::string require_file(const std::filesystem::path& p, const std::string& stage,
                                const std::string& produced_by) {
  if (!std::filesystem::exists(p))
    throw PrerequisiteError("stage '" + stage + "' requires " + p.string() +
                            "; run the '" + produced_by + "' stage first");
  return read_text_file(p);
}

inline void write_stage_manifest(const Paths& paths, const PipelineConfig& cfg,
                                 const std::string& stage,
                                 const std::map<std::string, std::string>& inputs,
                                 const std::map<std::string, std::string>& outputs) {
  nlohmann::json m = {{"stage", stage},
                      {"config_hash", config_hash(cfg)},
                      {"seed", cfg.seed},
                      {"config", config_to_json(cfg)},
                      {"format_versions",
                       {{"corpus", kCorpusFormatVersion}, {"dataset", 1}, {"policy", 1}}},
                      {"inputs", inputs},
                      {"outputs", outputs}};
  atomic_write_file(paths.stage_manifest(stage), m.dump(2) + "\n");
}

inline std::string content_hash(const std::string& content) { return hex64(fnv1a64(content)); }

/// Write an artifact atomically and record its hash in `outputs`.
inline void emit(const Paths&, std::map<std::string, std::string>& outputs,
                 const std::filesystem::path& path, const std::string& content) {
  atomic_write_file(path, content);
  outputs[path.filename().string()] = content_hash(content);
}

struct LoadedRun {
  Vocabulary vocab;
  Corpus corpus;
};

inline LoadedRun load_corpus_and_vocab(const Paths& paths, const std::string& stage) {
  LoadedRun run;
  const std::string vtext = require_file(paths.vocab_json(), stage, "gen");
  run.vocab = Vocabulary::from_json(nlohmann::json::parse(vtext));
  const std::string ctext = require_file(paths.corpus_jsonl(), stage, "gen");
  std::istringstream cs(ctext);
  run.corpus = read_corpus_jsonl(cs);
  return run;
}

inline std::unique_ptr<ExecBackend> make_backend(const PipelineConfig& cfg,
                                                 const Vocabulary& vocab) {
  if (cfg.executor.backend == "ministack")
    return std::make_unique<MiniStackBackend>(vocab, ExecLimits{cfg.executor.max_steps});
  if (cfg.executor.backend == "subprocess")
    return std::make_unique<SubprocessBackend>(vocab, cfg.executor.command,
                                               cfg.executor.timeout_s);
  return nullptr;  // matrix_dir: handled without a backend
}

/// Effective loss settings: the "standard" variant is focused loss with the
/// exact flag combination under which it reduces to whole-sequence DPO.
inline LossConfig effective_loss(const PipelineConfig& cfg) {
  LossConfig lc = cfg.loss;
  if (cfg.loss_variant == "standard") {
    lc.w_focused = 1.0;
    lc.gamma = lc.beta;
    lc.include_suffix_in_chosen = true;
    lc.include_suffix_in_reject = true;
  }
  return lc;
}

struct RankedProblem {
  RankResult rank;
  Classification cls;
};

inline std::map<std::string, RankedProblem> load_ranks(const Paths& paths, const Corpus& corpus,
                                                       const std::string& stage) {
  std::map<std::string, RankedProblem> out;
  for (const Problem& p : corpus.problems) {
    const std::string text = require_file(paths.rank_json(p.id), stage, "rank");
    const nlohmann::json j = nlohmann::json::parse(text);
    out[p.id] = RankedProblem{rank_result_from_json(j.at("rank")),
                              classification_from_json(j.at("classification"))};
  }
  return out;
}

inline TrainingDataset load_dataset(const Paths& paths, const std::string& stage) {
  const std::string text = require_file(paths.dataset_jsonl(), stage, "build");
  std::istringstream is(text);
  return read_dataset_jsonl(is);
}

/// Join dataset pairs with their problems' prompt tokens.
inline std::vector<TrainExample> make_examples(const TrainingDataset& ds, const Corpus& corpus,
                                               const Vocabulary& vocab,
                                               std::optional<Split> only_split) {
  std::map<std::string, const Problem*> by_id;
  for (const Problem& p : corpus.problems) by_id[p.id] = &p;
  std::vector<TrainExample> out;
  for (const PreferencePair& pair : ds.pairs) {
    if (only_split && split_of(pair.problem_id) != *only_split) continue;
    const auto it = by_id.find(pair.problem_id);
    if (it == by_id.end())
      throw std::runtime_error("dataset references unknown problem " + pair.problem_id);
    out.push_back(TrainExample{tokenize_frozen(it->second->prompt, vocab), pair});
  }
  return out;
}

}  // namespace detail

// ============================================================================
// Stages
// ============================================================================

/// gen: synthesize the corpus and vocabulary.
inline void stage_gen(const PipelineConfig& cfg, const Paths& paths) {
  Vocabulary vocab;
  const Corpus corpus = synth_corpus(cfg.corpus, vocab);

  std::ostringstream cs;
  write_corpus_jsonl(corpus, cs);

  std::map<std::string, std::string> outputs;
  detail::emit(paths, outputs, paths.corpus_jsonl(), cs.str());
  detail::emit(paths, outputs, paths.vocab_json(), vocab.to_json().dump(2) + "\n");
  detail::write_stage_manifest(paths, cfg, "gen", {}, outputs);
}

/// exec: fill one link matrix per problem.
inline void stage_exec(const PipelineConfig& cfg, const Paths& paths) {
  auto run = detail::load_corpus_and_vocab(paths, "exec");
  std::map<std::string, std::string> inputs{
      {"corpus.jsonl", detail::content_hash(read_text_file(paths.corpus_jsonl()))},
      {"vocab.json", detail::content_hash(read_text_file(paths.vocab_json()))}};
  std::map<std::string, std::string> outputs;

  const auto backend = detail::make_backend(cfg, run.vocab);
  for (const Problem& p : run.corpus.problems) {
    LinkMatrix m;
    if (backend) {
      std::vector<std::string> diags;
      m = build_link_matrix(p, *backend, cfg.threads, &diags);
      for (const auto& d : diags) std::fprintf(stderr, "exec: %s\n", d.c_str());
    } else {
      // matrix_dir backend: adopt a precomputed dump after validating shape
      const auto src = std::filesystem::path(cfg.executor.matrix_dir) / (p.id + ".csv");
      if (!std::filesystem::exists(src))
        throw PrerequisiteError("stage 'exec' requires precomputed matrix " + src.string());
      m = load_link_matrix_file(src.string());
      if (m.n_codes != p.k() || m.n_tests != static_cast<int>(p.tests.size()))
        throw std::runtime_error("precomputed matrix " + src.string() +
                                 " does not match problem shape");
    }
    std::ostringstream os;
    write_link_matrix_csv(m, p, os);
    detail::emit(paths, outputs, paths.link_csv(p.id), os.str());
  }
  detail::write_stage_manifest(paths, cfg, "exec", inputs, outputs);
}

/// rank: mutual ranking plus ground-truth classification per problem.
inline void stage_rank(const PipelineConfig& cfg, const Paths& paths) {
  auto run = detail::load_corpus_and_vocab(paths, "rank");
  std::map<std::string, std::string> inputs{
      {"corpus.jsonl", detail::content_hash(read_text_file(paths.corpus_jsonl()))}};
  std::map<std::string, std::string> outputs;

  for (const Problem& p : run.corpus.problems) {
    const std::string csv = detail::require_file(paths.link_csv(p.id), "rank", "exec");
    inputs["links/" + p.id + ".csv"] = detail::content_hash(csv);
    std::istringstream is(csv);
    const LinkMatrix m = read_link_matrix_csv(is);

    const RankResult r = rank(m, cfg.ranker);
    const Classification cls = select_ground_truth_and_classify(r, m);
    const nlohmann::json j = {{"format_version", 1},
                              {"rank", rank_result_to_json(r)},
                              {"classification", classification_to_json(cls)}};
    detail::emit(paths, outputs, paths.rank_json(p.id), j.dump(2) + "\n");
  }
  detail::write_stage_manifest(paths, cfg, "rank", inputs, outputs);
}

/// build: filter problems, select one pair each, emit the dataset.
inline void stage_build(const PipelineConfig& cfg, const Paths& paths) {
  auto run = detail::load_corpus_and_vocab(paths, "build");
  const auto ranked = detail::load_ranks(paths, run.corpus, "build");
  std::map<std::string, std::string> inputs{
      {"corpus.jsonl", detail::content_hash(read_text_file(paths.corpus_jsonl()))}};
  for (const Problem& p : run.corpus.problems)
    inputs["ranks/" + p.id + ".json"] =
        detail::content_hash(read_text_file(paths.rank_json(p.id)));

  TrainingDataset ds;
  for (const Problem& p : run.corpus.problems) {
    const detail::RankedProblem& rp = ranked.at(p.id);
    if (!keep_problem(rp.cls, p.k(), cfg.identifier.filter)) continue;
    const auto pair = select_pair(p, rp.cls, rp.rank, cfg.identifier.lambda);
    if (pair) ds.pairs.push_back(*pair);
  }
  ds.provenance = {{"config_hash", config_hash(cfg)}, {"seed", cfg.seed}};

  std::ostringstream os;
  write_dataset_jsonl(ds, os);
  std::map<std::string, std::string> outputs;
  detail::emit(paths, outputs, paths.dataset_jsonl(), os.str());
  detail::emit(paths, outputs, paths.dataset_manifest_json(),
               dataset_manifest(ds).dump(2) + "\n");
  detail::write_stage_manifest(paths, cfg, "build", inputs, outputs);
}

/// train: optimize the policy on the train split against a frozen reference.
inline void stage_train(const PipelineConfig& cfg, const Paths& paths) {
  auto run = detail::load_corpus_and_vocab(paths, "train");
  const TrainingDataset ds = detail::load_dataset(paths, "train");
  std::map<std::string, std::string> inputs{
      {"corpus.jsonl", detail::content_hash(read_text_file(paths.corpus_jsonl()))},
      {"vocab.json", detail::content_hash(read_text_file(paths.vocab_json()))},
      {"dataset.jsonl", detail::content_hash(read_text_file(paths.dataset_jsonl()))}};

  const auto examples = detail::make_examples(ds, run.corpus, run.vocab, Split::Train);
  if (examples.empty())
    throw std::runtime_error("train: dataset has no train-split pairs; corpus too small");

  NGramPolicy init(cfg.policy_order, static_cast<int>(run.vocab.size()), cfg.seed);
  const NGramPolicy reference = init;  // frozen pre-optimization copy

  TrainConfig tc = cfg.train;
  tc.loss = detail::effective_loss(cfg);
  const TrainResult result = train(init, reference, examples, tc);

  nlohmann::json history = nlohmann::json::array();
  for (const TrainStep& s : result.history)
    history.push_back({{"step", s.step}, {"loss", s.loss}, {"mean_margin", s.mean_margin}});

  std::map<std::string, std::string> outputs;
  detail::emit(paths, outputs, paths.policy_init_json(), reference.to_json().dump() + "\n");
  detail::emit(paths, outputs, paths.policy_json(), result.policy.to_json().dump() + "\n");
  detail::emit(paths, outputs, paths.train_history_json(),
               nlohmann::json{{"format_version", 1}, {"steps", std::move(history)}}.dump(2) +
                   "\n");
  detail::write_stage_manifest(paths, cfg, "train", inputs, outputs);
}

/// analyze: phi study, continuation pass rates, and margin histograms on the
/// validation split, written as CSV + JSON reports.
inline void stage_analyze(const PipelineConfig& cfg, const Paths& paths) {
  auto run = detail::load_corpus_and_vocab(paths, "analyze");
  const TrainingDataset ds = detail::load_dataset(paths, "analyze");
  const auto ranked = detail::load_ranks(paths, run.corpus, "analyze");

  std::map<std::string, std::string> inputs{
      {"corpus.jsonl", detail::content_hash(read_text_file(paths.corpus_jsonl()))},
      {"dataset.jsonl", detail::content_hash(read_text_file(paths.dataset_jsonl()))},
      {"policy.json",
       detail::content_hash(detail::require_file(paths.policy_json(), "analyze", "train"))},
      {"policy_init.json", detail::content_hash(detail::require_file(paths.policy_init_json(),
                                                                     "analyze", "train"))}};

  const NGramPolicy policy =
      NGramPolicy::from_json(nlohmann::json::parse(read_text_file(paths.policy_json())));
  const NGramPolicy init =
      NGramPolicy::from_json(nlohmann::json::parse(read_text_file(paths.policy_init_json())));

  const auto val_examples = detail::make_examples(ds, run.corpus, run.vocab, Split::Validation);
  if (val_examples.empty())
    throw std::runtime_error("analyze: validation split is empty; enlarge the corpus");

  std::map<std::string, const Problem*> by_id;
  for (const Problem& p : run.corpus.problems) by_id[p.id] = &p;

  // --- Segment/correctness phi study
  std::vector<StudyInput> study_inputs;
  for (const TrainExample& ex : val_examples)
    study_inputs.push_back(StudyInput{by_id.at(ex.pair.problem_id),
                                      &ranked.at(ex.pair.problem_id).cls, &ex.pair});
  const auto study = segment_correctness_study(study_inputs);

  std::ostringstream study_csv;
  study_csv << "segment,n11,n10,n01,n00,phi\n";
  for (const auto& row : study) {
    study_csv << row.segment << ',' << row.counts.n11 << ',' << row.counts.n10 << ','
              << row.counts.n01 << ',' << row.counts.n00 << ',';
    if (row.phi) study_csv << *row.phi;
    study_csv << '\n';
  }

  // --- Continuation pass rates under the trained policy
  std::vector<ContinuationItem> items;
  for (const TrainExample& ex : val_examples) {
    ContinuationItem item;
    item.prompt = ex.prompt;
    item.prefix = ex.pair.segmentation.prefix;
    item.mid_chosen = ex.pair.segmentation.mid_chosen;
    item.mid_rej = ex.pair.segmentation.mid_rej;
    item.problem = by_id.at(ex.pair.problem_id);
    item.cls = &ranked.at(ex.pair.problem_id).cls;
    items.push_back(std::move(item));
  }
  ContinuationParams cp;
  cp.n_samples = cfg.analysis.n_samples;
  cp.temperature = cfg.analysis.temperature;
  cp.ks = cfg.analysis.ks;
  cp.max_new_tokens = cfg.analysis.max_new_tokens;
  cp.seed = cfg.seed;
  cp.limits = ExecLimits{cfg.executor.max_steps};
  const auto cont = continuation_pass_rates(policy, items, run.vocab, cp);

  std::ostringstream cont_csv;
  cont_csv << "basis,k,pass_at_k\n";
  for (const auto& row : cont)
    for (const auto& [k, v] : row.pass_at_k)
      cont_csv << row.basis << ',' << k << ',' << v << '\n';

  // --- Margin histograms, before and after training
  const MarginStudy margins_pre = prob_margin_histogram(init, val_examples, cfg.analysis.n_bins);
  const MarginStudy margins_post =
      prob_margin_histogram(policy, val_examples, cfg.analysis.n_bins);
  auto margins_json = [](const MarginStudy& m) {
    return nlohmann::json{{"whole_segment", margin_histogram_to_json(m.whole_segment)},
                          {"per_token", margin_histogram_to_json(m.per_token)}};
  };

  std::map<std::string, std::string> outputs;
  detail::emit(paths, outputs, paths.report("segment_study", "csv"), study_csv.str());
  detail::emit(paths, outputs, paths.report("segment_study", "json"),
               segment_study_to_json(study).dump(2) + "\n");
  detail::emit(paths, outputs, paths.report("continuation", "csv"), cont_csv.str());
  detail::emit(paths, outputs, paths.report("continuation", "json"),
               continuation_rows_to_json(cont).dump(2) + "\n");
  detail::emit(paths, outputs, paths.report("margins_pre", "json"),
               margins_json(margins_pre).dump(2) + "\n");
  detail::emit(paths, outputs, paths.report("margins_post", "json"),
               margins_json(margins_post).dump(2) + "\n");
  detail::write_stage_manifest(paths, cfg, "analyze", inputs, outputs);
}

/// Run one named stage ("all" chains the full pipeline). Throws ConfigError,
/// PrerequisiteError, or std::runtime_error; exit-code mapping is the CLI's.
inline void run_stage(const std::string& stage, const PipelineConfig& cfg) {
  const Paths paths(cfg.out_dir, config_hash(cfg), cfg.seed);
  if (stage == "gen") return stage_gen(cfg, paths);
  if (stage == "exec") return stage_exec(cfg, paths);
  if (stage == "rank") return stage_rank(cfg, paths);
  if (stage == "build") return stage_build(cfg, paths);
  if (stage == "train") return stage_train(cfg, paths);
  if (stage == "analyze") return stage_analyze(cfg, paths);
  if (stage == "all") {
    stage_gen(cfg, paths);
    stage_exec(cfg, paths);
    stage_rank(cfg, paths);
    stage_build(cfg, paths);
    stage_train(cfg, paths);
    stage_analyze(cfg, paths);
    return;
  }
  throw std::invalid_argument("unknown stage '" + stage + "'");
}

}  // namespace fdpo
