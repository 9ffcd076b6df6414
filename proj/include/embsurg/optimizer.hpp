#pragma once

// Embedding-optimization loop: initialization regimes, Adam ascent on the
// combined objective, periodic latent resampling, coordinate-wise clipping,
// multi-trial orchestration and trial selection.

#include "embsurg/metrics.hpp"
#include "embsurg/objective.hpp"

#include <array>
#include <chrono>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace embsurg {

using GeneratorF = GeneratorCheckpoint<float>;
using ClassifierF = ClassifierCheckpoint<float>;
using DiscriminatorF = DiscriminatorCheckpoint<float>;

enum class Regime { AmS, AmL, AmDS, AmDL };

inline Regime parse_regime(const std::string& s) {
  if (s == "am-s") return Regime::AmS;
  if (s == "am-l") return Regime::AmL;
  if (s == "am-d-s") return Regime::AmDS;
  if (s == "am-d-l") return Regime::AmDL;
  throw ConfigError("unknown regime '" + s +
                    "' (expected am-s|am-l|am-d-s|am-d-l)");
}

inline const char* regime_name(Regime r) {
  switch (r) {
    case Regime::AmS: return "am-s";
    case Regime::AmL: return "am-l";
    case Regime::AmDS: return "am-d-s";
    case Regime::AmDL: return "am-d-l";
  }
  return "?";
}

struct InitSpec {
  enum class Strategy { AroundOriginal, AroundMean, TopK, Explicit };
  Strategy strategy = Strategy::AroundOriginal;
  double radius = 0.1;
  int k = 5;  // 1-based rank picked by TopK
  std::optional<VecF> explicit_embedding;
  bool gaussian_ball = false;  // radius-truncated Gaussian instead of uniform
};

inline InitSpec::Strategy parse_init_strategy(const std::string& s) {
  if (s == "around-original") return InitSpec::Strategy::AroundOriginal;
  if (s == "around-mean") return InitSpec::Strategy::AroundMean;
  if (s == "top-k") return InitSpec::Strategy::TopK;
  if (s == "explicit") return InitSpec::Strategy::Explicit;
  throw ConfigError("unknown init strategy '" + s + "'");
}

struct OptimizationConfig {
  Regime regime = Regime::AmL;
  double learning_rate = 0.1;  // 0.01 small-region, 0.1 large-region
  int steps = 200;
  int resample_interval = 20;
  int batch_size = 20;  // n_z
  ObjectiveConfig objective;
  std::array<double, 2> clip_bounds{-1.0, 1.0};
  InitSpec init;
  int trials = 5;
  std::uint64_t seed = 0;

  void validate() const {
    if (steps < 0) throw ConfigError("optimization: steps must be >= 0");
    if (resample_interval < 1)
      throw ConfigError("optimization: resample_interval must be >= 1");
    if (batch_size < 1)
      throw ConfigError("optimization: batch size must be >= 1");
    if (!(clip_bounds[0] < clip_bounds[1]))
      throw ConfigError("optimization: clip bounds must satisfy lo < hi");
    if (trials < 1) throw ConfigError("optimization: trials must be >= 1");
    if (init.radius < 0)
      throw ConfigError("optimization: init radius must be >= 0");
  }
};

// [min(W) - margin, max(W) + margin]; the data-derived analog of a fixed
// published clipping interval.
inline std::array<double, 2> compute_clip_bounds(const MatF& w,
                                                 double margin = 0.0) {
  if (w.size() == 0) throw ConfigError("compute_clip_bounds: empty matrix");
  return {static_cast<double>(w.minCoeff()) - margin,
          static_cast<double>(w.maxCoeff()) + margin};
}

// Regime defaults: small-region searches start near the original embedding
// with lr 0.01; large-region searches start near the mean embedding with
// lr 0.1. The -D variants add the softmax diversity term with lambda 2.
inline OptimizationConfig default_config(Regime regime, int target_class,
                                         const MatF& w) {
  OptimizationConfig cfg;
  cfg.regime = regime;
  cfg.objective.target_class = target_class;
  const bool small = regime == Regime::AmS || regime == Regime::AmDS;
  cfg.learning_rate = small ? 0.01 : 0.1;
  cfg.init.strategy = small ? InitSpec::Strategy::AroundOriginal
                            : InitSpec::Strategy::AroundMean;
  cfg.init.radius = 0.1;
  const bool diversity = regime == Regime::AmDS || regime == Regime::AmDL;
  cfg.objective.lambda = diversity ? 2.0 : 0.0;
  cfg.objective.phi = FeatureTap::Softmax;
  cfg.clip_bounds = compute_clip_bounds(w);
  return cfg;
}

// Ranking of source classes by mean target-class probability; produced by
// rank_source_classes and consumed by the top-k initialization.
struct RankedClass {
  int source_class = 0;
  double mean_prob = 0.0;
};

inline VecF init_embedding(const MatF& w, int y, const InitSpec& spec,
                           Rng& rng,
                           const std::vector<RankedClass>* ranking = nullptr) {
  auto ball = [&](Eigen::Index dim) -> VecF {
    if (spec.radius <= 0.0) return VecF::Zero(dim);
    if (!spec.gaussian_ball) return rng.in_ball<float>(dim, spec.radius);
    VecF u(dim);
    for (Eigen::Index i = 0; i < dim; ++i)
      u[i] = static_cast<float>(rng.normal() * spec.radius / 3.0);
    const double norm = u.norm();
    if (norm > spec.radius) u *= static_cast<float>(spec.radius / norm);
    return u;
  };
  switch (spec.strategy) {
    case InitSpec::Strategy::AroundOriginal:
      if (y < 0 || y >= w.cols())
        throw ConfigError("init_embedding: class index out of range");
      return w.col(y) + ball(w.rows());
    case InitSpec::Strategy::AroundMean:
      return VecF(w.rowwise().mean()) + ball(w.rows());
    case InitSpec::Strategy::TopK: {
      if (!ranking || ranking->empty())
        throw ConfigError(
            "init_embedding: top-k initialization requires a classifier "
            "ranking probe");
      if (spec.k < 1 || spec.k > static_cast<int>(ranking->size()))
        throw ConfigError("init_embedding: rank k out of range");
      return w.col((*ranking)[static_cast<std::size_t>(spec.k - 1)]
                       .source_class);
    }
    case InitSpec::Strategy::Explicit:
      if (!spec.explicit_embedding)
        throw ConfigError("init_embedding: explicit strategy needs a vector");
      if (spec.explicit_embedding->size() != w.rows())
        throw ShapeError("init_embedding: explicit vector has wrong size");
      return *spec.explicit_embedding;
  }
  throw ConfigError("init_embedding: invalid strategy");
}

struct TrialResult {
  VecF init_embedding;
  VecF final_embedding;
  MatD trace;  // [3, steps]; rows: total, am, diversity
  std::uint64_t seed = 0;
  double wall_time_sec = 0.0;  // in-memory only; never serialized
  bool failed = false;
  std::string error;
  std::string method = "am";  // am | noise | finetune
  std::optional<ClassMetrics> metrics;
};

using StepObserver =
    std::function<void(int step, const VecF& embedding)>;

// One Adam-ascent run. Latents are redrawn from N(0, I) every
// resample_interval steps (pairs with them), the embedding is clipped
// coordinate-wise after every step, and the last-step embedding is the
// result. Throws DivergedError carrying the partial trace on non-finite
// loss. The checkpoints are never modified.
inline TrialResult optimize_embedding(const GeneratorF& g,
                                      const ClassifierF& p, int y,
                                      const OptimizationConfig& cfg,
                                      std::uint64_t trial_seed,
                                      const std::vector<RankedClass>* ranking =
                                          nullptr,
                                      const StepObserver& observer = {}) {
  cfg.validate();
  if (y < 0 || y >= g.cfg.num_classes)
    throw ConfigError("optimize_embedding: class index out of range");
  const auto t_start = std::chrono::steady_clock::now();

  Rng init_rng(derive_seed(trial_seed, "opt.init"));
  Rng z_rng(derive_seed(trial_seed, "opt.z"));
  Rng pair_rng(derive_seed(trial_seed, "opt.pairs"));

  ObjectiveConfig obj = cfg.objective;
  obj.target_class = y;
  obj.batch_size = cfg.batch_size;

  TrialResult result;
  result.seed = trial_seed;
  result.init_embedding = init_embedding(g.embedding, y, cfg.init, init_rng,
                                         ranking);
  result.trace.resize(3, cfg.steps);

  VecF c = result.init_embedding;
  if (cfg.steps == 0) {
    result.final_embedding = c;
    return result;
  }

  MatF cm = c;
  AdamOptimizer<float> adam;
  adam.lr = cfg.learning_rate;
  adam.init({&cm});
  const float lo = static_cast<float>(cfg.clip_bounds[0]);
  const float hi = static_cast<float>(cfg.clip_bounds[1]);

  MatF z;
  PairList pairs;
  for (int step = 0; step < cfg.steps; ++step) {
    if (step % cfg.resample_interval == 0) {
      z = z_rng.normal_matrix<float>(g.cfg.latent_dim, cfg.batch_size);
      if (obj.lambda != 0.0)
        pairs = select_pairs(cfg.batch_size, obj.num_pairs, pair_rng);
    }
    VecF grad;
    const auto v =
        combined_loss(g, p, VecF(cm.col(0)), z, obj, pairs, &grad);
    result.trace(0, step) = v.total;
    result.trace(1, step) = v.am;
    result.trace(2, step) = v.diversity;
    if (!std::isfinite(static_cast<double>(v.total)) || !grad.allFinite()) {
      throw DivergedError(
          "optimization diverged at step " + std::to_string(step),
          MatD(result.trace.leftCols(step + 1)));
    }
    const MatF neg_grad = -grad;
    adam.step({&cm}, {&neg_grad});
    cm = cm.cwiseMax(lo).cwiseMin(hi);
    if (observer) observer(step, VecF(cm.col(0)));
  }
  result.final_embedding = cm.col(0);
  result.wall_time_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  return result;
}

// Runs cfg.trials independent trials with derived seeds (seed XOR trial
// index). A diverged trial is recorded as failed; only all trials failing
// is fatal. Verifies that neither checkpoint changed.
inline std::vector<TrialResult> run_trials(const GeneratorF& g,
                                           const ClassifierF& p, int y,
                                           const OptimizationConfig& cfg,
                                           const std::vector<RankedClass>*
                                               ranking = nullptr) {
  cfg.validate();
  const std::uint64_t g_sum = g.full_checksum();
  const std::uint64_t p_sum = p.full_checksum();
  std::vector<TrialResult> results;
  int failures = 0;
  for (int t = 0; t < cfg.trials; ++t) {
    const std::uint64_t trial_seed = cfg.seed ^ static_cast<std::uint64_t>(t);
    try {
      results.push_back(optimize_embedding(g, p, y, cfg, trial_seed, ranking));
    } catch (const DivergedError& e) {
      TrialResult r;
      r.failed = true;
      r.error = e.what();
      r.trace = e.partial_trace;
      r.seed = trial_seed;
      results.push_back(std::move(r));
      ++failures;
    }
  }
  if (failures == cfg.trials)
    throw StateError("run_trials: every trial diverged");
  if (g.full_checksum() != g_sum || p.full_checksum() != p_sum)
    throw StateError("run_trials: frozen checkpoint was modified");
  return results;
}

struct SelectRule {
  enum class Kind { BestPerceptual, BestAccuracy, Index };
  Kind kind = Kind::BestPerceptual;
  int index = 0;
};

inline SelectRule::Kind parse_select_rule(const std::string& s) {
  if (s == "best-perceptual") return SelectRule::Kind::BestPerceptual;
  if (s == "best-accuracy") return SelectRule::Kind::BestAccuracy;
  if (s == "index") return SelectRule::Kind::Index;
  throw ConfigError("unknown selection rule '" + s + "'");
}

// Declared automatic stand-in for the paper's by-hand trial choice:
// argmax of the named metric, ties broken by lowest trial index.
inline const TrialResult& select_trial(const std::vector<TrialResult>& results,
                                       const SelectRule& rule) {
  if (results.empty())
    throw std::invalid_argument("select_trial: no results");
  if (rule.kind == SelectRule::Kind::Index) {
    if (rule.index < 0 || rule.index >= static_cast<int>(results.size()))
      throw std::invalid_argument("select_trial: index out of range");
    return results[static_cast<std::size_t>(rule.index)];
  }
  const TrialResult* best = nullptr;
  double best_score = 0.0;
  for (const auto& r : results) {
    if (r.failed) continue;
    if (!r.metrics)
      throw StateError("select_trial: metric rule requires attached metrics");
    const double score = rule.kind == SelectRule::Kind::BestPerceptual
                             ? r.metrics->perceptual
                             : r.metrics->accuracy;
    if (!best || score > best_score) {
      best = &r;
      best_score = score;
    }
  }
  if (!best) throw StateError("select_trial: no successful trials");
  return *best;
}

// ---------------------------------------------------------- persistence --

// Wall time is deliberately not serialized: trial artifacts are bit-exact
// functions of (config, seed); timings go to run logs instead.
inline Container trial_to_container(const TrialResult& r) {
  Container c;
  c.type = "trial";
  c.seed = r.seed;
  c.add("init_embedding", MatF(r.init_embedding));
  c.add("final_embedding", MatF(r.final_embedding));
  c.add("trace", r.trace.cast<float>(), {3, r.trace.cols()});
  c.provenance["method"] = r.method;
  c.provenance["failed"] = r.failed;
  if (!r.error.empty()) c.provenance["error"] = r.error;
  if (r.metrics) c.provenance["metrics"] = r.metrics->to_json();
  return c;
}

inline TrialResult trial_from_container(const Container& c) {
  if (c.type != "trial")
    throw IntegrityError("container is not a trial result");
  TrialResult r;
  r.seed = c.seed;
  r.init_embedding = c.floats("init_embedding").col(0);
  r.final_embedding = c.floats("final_embedding").col(0);
  r.trace = c.floats("trace").cast<double>();
  r.method = c.provenance.value("method", "am");
  r.failed = c.provenance.value("failed", false);
  r.error = c.provenance.value("error", "");
  if (c.provenance.contains("metrics"))
    r.metrics = ClassMetrics::from_json(c.provenance.at("metrics"));
  return r;
}

inline std::string trace_to_csv(const TrialResult& r) {
  std::string out = "step,L_total,L_AM,L_D\n";
  char buf[128];
  for (Eigen::Index s = 0; s < r.trace.cols(); ++s) {
    std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g\n",
                  static_cast<long long>(s), r.trace(0, s), r.trace(1, s),
                  r.trace(2, s));
    out += buf;
  }
  return out;
}

}  // namespace embsurg
