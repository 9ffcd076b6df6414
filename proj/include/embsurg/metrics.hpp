#pragma once

// Evaluation suite: MS-SSIM and perceptual pair distance for diversity,
// inception-style score / Fréchet distance / classifier accuracy for
// realism, plus per-class report aggregation.
//
// All statistics are accumulated in double precision regardless of the
// image scalar type.

#include "embsurg/container.hpp"
#include "embsurg/core.hpp"
#include "embsurg/nets.hpp"
#include "embsurg/rng.hpp"
#include "embsurg/synthdata.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <optional>
#include <string>
#include <utility>

namespace embsurg {

struct EvalOptions {
  int ms_ssim_pairs = 200;
  int perceptual_pairs = 200;
  int is_splits = 10;
};

struct ClassMetrics {
  double ms_ssim = 0.0;     // in [0, 1], lower = more diverse
  double perceptual = 0.0;  // >= 0, higher = more diverse
  double is_mean = 0.0;     // in [1, K]
  double is_std = 0.0;
  double frechet = 0.0;     // >= 0, lower = closer to the reference
  double accuracy = 0.0;    // in [0, 1]
  int n_images = 0;
  int n_pairs = 0;
  bool frechet_valid = false;
  int excluded_pairs = 0;  // zero-feature pairs skipped by perceptual

  nlohmann::json to_json() const;
  static ClassMetrics from_json(const nlohmann::json& j);
};

struct MetricReport {
  std::map<int, ClassMetrics> per_class;
  ClassMetrics aggregate;  // unweighted means across classes
  nlohmann::json provenance = nlohmann::json::object();

  void finalize_aggregate();
  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
  std::string to_csv() const;
};

// Per-class feature statistics of real data plus its diversity scores;
// the fixed reference every generated set is compared against.
struct ClassReferenceStats {
  VecD mu;
  MatD cov;
  double ms_ssim = 0.0;
  double perceptual = 0.0;
  int n_images = 0;
};

struct ReferenceStats {
  std::map<int, ClassReferenceStats> per_class;
  std::string feature_tap = "midlayer";
  nlohmann::json provenance = nlohmann::json::object();
};

Container reference_stats_to_container(const ReferenceStats& s);
ReferenceStats reference_stats_from_container(const Container& c);

// Multi-scale SSIM of one image pair (3 scales, 7x7 Gaussian window,
// grayscale). Images are [-1,1] channel-major vectors.
double ms_ssim_pair(const float* a, const float* b, int h, int w, int ch);

// Mean MS-SSIM over randomly sampled distinct pairs (without replacement).
double ms_ssim_diversity(const MatF& images, int h, int w, int ch,
                         int n_pairs, Rng& rng, int* pairs_used = nullptr);

// Mean distance between unit-normalized midlayer features over random
// pairs; the LPIPS-style diversity score of this toolkit.
double perceptual_pair_distance(const MatF& images,
                                const ClassifierCheckpoint<float>& p,
                                int n_pairs, Rng& rng,
                                int* excluded_pairs = nullptr,
                                int* pairs_used = nullptr);

// exp(mean per-image KL(p(y|x) || p(y))) per split; returns (mean, std)
// over splits. probs columns are per-image distributions.
std::pair<double, double> inception_score(const MatD& probs, int splits = 10);

// ||mu1-mu2||^2 + Tr(C1 + C2 - 2 (C1 C2)^{1/2}); covariances are
// symmetrized and regularized with 1e-6 I before the PSD square root.
double frechet_distance(const VecD& mu1, const MatD& c1, const VecD& mu2,
                        const MatD& c2);

// Fraction of images whose top-1 class equals y.
double classifier_accuracy(const MatF& images,
                           const ClassifierCheckpoint<float>& p, int y);

// Sample mean and covariance (N-1 normalization) of feature columns.
void feature_moments(const MatF& feats, VecD& mu, MatD& cov);

// All five metrics for one class's image set. Passing ref = nullptr omits
// the Fréchet score (frechet_valid = false).
ClassMetrics evaluate_class_set(const MatF& images, int h, int w, int ch,
                                int y, const ClassifierCheckpoint<float>& p,
                                const ClassReferenceStats* ref,
                                const EvalOptions& opt, Rng& rng);

// n_each uniform draws without replacement from each set, concatenated and
// shuffled deterministically.
MatF mix_sample_sets(const MatF& a, const MatF& b, int n_each, Rng& rng);

// Reference statistics of a real dataset under the given classifier's
// midlayer features, including per-class diversity scores.
ReferenceStats real_reference_stats(const LabeledImageSet& set,
                                    const ClassifierCheckpoint<float>& p,
                                    const EvalOptions& opt = {});

}  // namespace embsurg
