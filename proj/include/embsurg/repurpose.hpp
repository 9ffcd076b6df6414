#pragma once

// Re-purposing: optimize embeddings of a domain-A generator against a
// domain-B classifier so the frozen generator synthesizes unseen classes.

#include "embsurg/metrics.hpp"
#include "embsurg/optimizer.hpp"

#include <algorithm>
#include <vector>

namespace embsurg {

// Scores every source class by the mean target-class probability of a few
// random samples from its original embedding; sorted descending, ties by
// lower class index.
inline std::vector<RankedClass> rank_source_classes(
    const GeneratorF& g, const ClassifierF& p_target, int target_class,
    int samples_per_class, Rng& rng) {
  if (target_class < 0 || target_class >= p_target.cfg.num_classes)
    throw ConfigError("rank_source_classes: target class out of range");
  if (samples_per_class < 1)
    throw ConfigError("rank_source_classes: samples_per_class must be >= 1");
  std::vector<RankedClass> ranking;
  ranking.reserve(static_cast<std::size_t>(g.cfg.num_classes));
  for (int y = 0; y < g.cfg.num_classes; ++y) {
    const MatF z =
        rng.normal_matrix<float>(g.cfg.latent_dim, samples_per_class);
    const MatF images = generate_class(g, y, z);
    const auto cls = classify(p_target, images);
    ranking.push_back(
        {y, static_cast<double>(cls.probs.row(target_class).mean())});
  }
  std::stable_sort(ranking.begin(), ranking.end(),
                   [](const RankedClass& a, const RankedClass& b) {
                     return a.mean_prob > b.mean_prob;
                   });
  return ranking;
}

struct RepurposeTask {
  const GeneratorF* generator = nullptr;        // domain A
  const ClassifierF* target_classifier = nullptr;  // domain B
  int target_class = 0;
  InitSpec::Strategy init = InitSpec::Strategy::AroundMean;  // or TopK
  int trials = 5;
  int rank_samples = 10;   // probe samples per source class
  OptimizationConfig cfg;  // AM-L settings by default
  // Evaluation of each trial and the baseline:
  int eval_images = 1000;
  EvalOptions eval;
  SelectRule select{SelectRule::Kind::BestAccuracy, 0};
  std::uint64_t seed = 0;
};

struct RepurposeResult {
  std::vector<RankedClass> ranking;
  std::vector<TrialResult> trials;
  TrialResult selected;
  int baseline_class = 0;          // top-1 source class
  ClassMetrics baseline_metrics;   // its unmodified embedding under p_target
};

// Evaluates a sample set drawn from one embedding under the target
// classifier; shared by trials and the baseline so comparisons stay fair.
inline ClassMetrics evaluate_embedding_under(
    const GeneratorF& g, const ClassifierF& p, const VecF& c, int y,
    int n_images, const EvalOptions& opt, std::uint64_t seed) {
  Rng z_rng(derive_seed(seed, "eval.z"));
  const MatF z = z_rng.normal_matrix<float>(g.cfg.latent_dim, n_images);
  const MatF images = generate(g, c, z);
  Rng m_rng(derive_seed(seed, "eval.metrics"));
  return evaluate_class_set(images, g.cfg.image_size, g.cfg.image_size,
                            g.cfg.channels, y, p, nullptr, opt, m_rng);
}

// Mean-init: cfg.trials AM-L runs from ball-perturbed mean embeddings.
// Top-k: one run per top-k ranked source embedding. The baseline records
// the unmodified top-1 source embedding under the target classifier.
inline RepurposeResult repurpose_class(const RepurposeTask& task) {
  if (!task.generator || !task.target_classifier)
    throw ConfigError("repurpose_class: missing generator or classifier");
  if (task.init != InitSpec::Strategy::AroundMean &&
      task.init != InitSpec::Strategy::TopK)
    throw ConfigError("repurpose_class: init must be around-mean or top-k");
  const GeneratorF& g = *task.generator;
  const ClassifierF& p = *task.target_classifier;

  RepurposeResult result;
  Rng rank_rng(derive_seed(task.seed, "repurpose.rank"));
  result.ranking =
      rank_source_classes(g, p, task.target_class, task.rank_samples,
                          rank_rng);
  result.baseline_class = result.ranking.front().source_class;

  OptimizationConfig cfg = task.cfg;
  cfg.objective.target_class = task.target_class;
  cfg.seed = derive_seed(task.seed, "repurpose.trials");
  cfg.trials = task.trials;
  if (task.init == InitSpec::Strategy::AroundMean) {
    cfg.init.strategy = InitSpec::Strategy::AroundMean;
    result.trials = run_trials(g, p, task.target_class, cfg);
  } else {
    // One trial per ranked embedding; trial t starts at rank t+1 verbatim.
    cfg.init.strategy = InitSpec::Strategy::TopK;
    result.trials.reserve(static_cast<std::size_t>(task.trials));
    for (int t = 0; t < task.trials; ++t) {
      cfg.init.k = t + 1;
      const std::uint64_t trial_seed =
          cfg.seed ^ static_cast<std::uint64_t>(t);
      try {
        result.trials.push_back(optimize_embedding(
            g, p, task.target_class, cfg, trial_seed, &result.ranking));
      } catch (const DivergedError& e) {
        TrialResult r;
        r.failed = true;
        r.error = e.what();
        r.trace = e.partial_trace;
        r.seed = trial_seed;
        result.trials.push_back(std::move(r));
      }
    }
  }

  for (std::size_t t = 0; t < result.trials.size(); ++t) {
    auto& trial = result.trials[t];
    if (trial.failed) continue;
    trial.metrics = evaluate_embedding_under(
        g, p, trial.final_embedding, task.target_class, task.eval_images,
        task.eval, derive_seed(task.seed, "repurpose.eval", t));
  }
  result.selected = select_trial(result.trials, task.select);
  result.baseline_metrics = evaluate_embedding_under(
      g, p, VecF(g.embedding.col(result.baseline_class)), task.target_class,
      task.eval_images, task.eval, derive_seed(task.seed, "repurpose.eval.baseline"));
  return result;
}

// n embeddings for one target class chosen greedily to maximize pairwise
// distance among successful trials; the first pick is the selected trial.
inline std::vector<VecF> multi_embedding_styles(
    const std::vector<TrialResult>& trials, int n, const SelectRule& rule) {
  std::vector<const TrialResult*> ok;
  for (const auto& t : trials)
    if (!t.failed) ok.push_back(&t);
  if (static_cast<int>(ok.size()) < n)
    throw DataError("multi_embedding_styles: need " + std::to_string(n) +
                    " successful trials, have " + std::to_string(ok.size()));
  std::vector<VecF> chosen;
  chosen.push_back(select_trial(trials, rule).final_embedding);
  while (static_cast<int>(chosen.size()) < n) {
    const TrialResult* best = nullptr;
    double best_min = -1.0;
    for (const auto* t : ok) {
      double min_dist = std::numeric_limits<double>::infinity();
      for (const auto& c : chosen) {
        min_dist = std::min(
            min_dist,
            static_cast<double>((t->final_embedding - c).norm()));
      }
      if (min_dist > best_min) {
        best_min = min_dist;
        best = t;
      }
    }
    if (!best || best_min <= 0.0)
      throw DataError("multi_embedding_styles: trials are not distinct");
    chosen.push_back(best->final_embedding);
  }
  return chosen;
}

}  // namespace embsurg
