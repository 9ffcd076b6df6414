#pragma once

// The three objectives driving embedding optimization, as differentiable
// scalar losses over a latent batch:
//   am          mean log-probability of the target class (maximize)
//   diversity   mean output-feature distance per unit latent distance
//   combined    am + lambda * diversity
//
// Values are computed through the frozen generator and classifier; the
// gradient with respect to the embedding vector comes from one explicit
// backward pass through both.

#include "embsurg/nets.hpp"

#include <utility>
#include <vector>

namespace embsurg {

struct ObjectiveConfig {
  int target_class = 0;
  double lambda = 0.0;                     // weight of the diversity term
  FeatureTap phi = FeatureTap::Softmax;    // feature space for diversity
  int num_pairs = 10;
  int batch_size = 20;                     // latent batch size n_z
};

using PairList = std::vector<std::pair<int, int>>;

// num_pairs distinct unordered index pairs, uniform without replacement.
inline PairList select_pairs(int n_z, int num_pairs, Rng& rng) {
  if (n_z < 2) throw std::invalid_argument("select_pairs: need n_z >= 2");
  const long max_pairs = static_cast<long>(n_z) * (n_z - 1) / 2;
  if (num_pairs < 1 || num_pairs > max_pairs)
    throw std::invalid_argument(
        "select_pairs: num_pairs must be in [1, " + std::to_string(max_pairs) +
        "], got " + std::to_string(num_pairs));
  PairList all;
  all.reserve(static_cast<std::size_t>(max_pairs));
  for (int i = 0; i < n_z; ++i)
    for (int j = i + 1; j < n_z; ++j) all.emplace_back(i, j);
  const auto chosen = rng.sample_without_replacement(
      all.size(), static_cast<std::size_t>(num_pairs));
  PairList out;
  out.reserve(chosen.size());
  for (auto idx : chosen) out.push_back(all[idx]);
  return out;
}

// Mean over the batch of log P(y | x); the arithmetic core of the AM
// objective, exposed for direct verification.
template <class T>
T am_from_log_probs(const Mat<T>& log_probs, int y) {
  if (log_probs.cols() == 0)
    throw std::invalid_argument("am_from_log_probs: empty batch");
  if (y < 0 || y >= log_probs.rows())
    throw ShapeError("am_from_log_probs: class index out of range");
  return log_probs.row(y).mean();
}

// Mean over pairs of ||f_i - f_j|| / ||z_i - z_j||. When dfeats is non-null
// it receives d(value)/d(feats) (same shape as feats, zero-initialized).
template <class T>
T diversity_from_features(const Mat<T>& feats, const Mat<T>& z,
                          const PairList& pairs, Mat<T>* dfeats = nullptr) {
  if (pairs.empty())
    throw std::invalid_argument("diversity_from_features: no pairs");
  if (dfeats) dfeats->setZero(feats.rows(), feats.cols());
  T value = T(0);
  const T scale = T(1) / static_cast<T>(pairs.size());
  for (const auto& [i, j] : pairs) {
    if (i == j || i < 0 || j < 0 || i >= feats.cols() || j >= feats.cols())
      throw std::invalid_argument("diversity_from_features: invalid pair");
    const T dz = (z.col(i) - z.col(j)).norm();
    if (dz == T(0))
      throw std::invalid_argument(
          "diversity_from_features: degenerate pair (z_i == z_j)");
    const Vec<T> diff = feats.col(i) - feats.col(j);
    const T df = diff.norm();
    value += scale * df / dz;
    if (dfeats && df > T(0)) {
      const Vec<T> g = diff * (scale / (df * dz));
      dfeats->col(i) += g;
      dfeats->col(j) -= g;
    }
  }
  return value;
}

template <class T>
struct ObjectiveValue {
  T total = T(0);
  T am = T(0);
  T diversity = T(0);
};

// Full objective with optional gradient in the embedding vector. Pairs are
// drawn from the same latent batch fed to the AM term; one generator and
// one classifier forward pass cover both terms.
template <class T>
ObjectiveValue<T> combined_loss(const GeneratorCheckpoint<T>& g,
                                const ClassifierCheckpoint<T>& p,
                                const Vec<T>& c, const Mat<T>& z,
                                const ObjectiveConfig& cfg,
                                const PairList& pairs,
                                Vec<T>* grad_c = nullptr) {
  const Eigen::Index n = z.cols();
  if (n == 0)
    throw std::invalid_argument("combined_loss: empty latent batch");
  if (cfg.target_class < 0 || cfg.target_class >= p.cfg.num_classes)
    throw ShapeError("combined_loss: target class out of range");
  if (cfg.lambda < 0.0)
    throw ConfigError("combined_loss: lambda must be >= 0");

  GeneratorActs<T> ga;
  ClassifierActs<T> pa;
  const Mat<T>& images =
      generator_forward(g, assemble_generator_input(g, c, z), &ga);
  classifier_forward(p, images, &pa);
  const Mat<T> probs = softmax_cols(pa.logits);
  const Mat<T> logp = log_softmax_cols(pa.logits);

  ObjectiveValue<T> v;
  v.am = am_from_log_probs(logp, cfg.target_class);

  Mat<T> dfeats;
  const bool want_div_grad =
      grad_c != nullptr && cfg.lambda != 0.0 && !pairs.empty();
  if (!pairs.empty()) {
    const Mat<T>& feats = cfg.phi == FeatureTap::Pixel ? ga.out
                          : cfg.phi == FeatureTap::Softmax ? probs
                                                           : pa.feat;
    v.diversity = diversity_from_features(feats, z, pairs,
                                          want_div_grad ? &dfeats : nullptr);
  }
  v.total = v.am + static_cast<T>(cfg.lambda) * v.diversity;

  if (grad_c) {
    // AM term: d(mean log p_y)/d(logits) = (e_y - p)/n, zeroed where the
    // probability floor clipped the log.
    const T floor_log = static_cast<T>(std::log(1e-12));
    Mat<T> dlogits = Mat<T>::Zero(probs.rows(), probs.cols());
    const T inv_n = T(1) / static_cast<T>(n);
    for (Eigen::Index col = 0; col < n; ++col) {
      if (logp(cfg.target_class, col) <= floor_log) continue;
      dlogits.col(col) = -inv_n * probs.col(col);
      dlogits(cfg.target_class, col) += inv_n;
    }

    const Mat<T>* dfeat_inject = nullptr;
    Mat<T> dfeat_mid;
    if (want_div_grad) {
      const T lam = static_cast<T>(cfg.lambda);
      if (cfg.phi == FeatureTap::Softmax) {
        dlogits += softmax_vjp(probs, Mat<T>(lam * dfeats));
      } else if (cfg.phi == FeatureTap::MidLayer) {
        dfeat_mid = lam * dfeats;
        dfeat_inject = &dfeat_mid;
      }
    }
    Mat<T> dimages =
        classifier_backward(p, pa, &dlogits, dfeat_inject, nullptr, true);
    if (want_div_grad && cfg.phi == FeatureTap::Pixel) {
      dimages += static_cast<T>(cfg.lambda) * dfeats;
    }
    const Mat<T> dinput = generator_backward(g, ga, dimages, nullptr, true);
    *grad_c = dinput.topRows(g.cfg.embed_dim).rowwise().sum();
  }
  return v;
}

// Eq.-style single-term conveniences.

template <class T>
T am_loss(const GeneratorCheckpoint<T>& g, const ClassifierCheckpoint<T>& p,
          const Vec<T>& c, const Mat<T>& z, int target_class,
          Vec<T>* grad_c = nullptr) {
  ObjectiveConfig cfg;
  cfg.target_class = target_class;
  cfg.lambda = 0.0;
  return combined_loss(g, p, c, z, cfg, {}, grad_c).am;
}

// phi = Pixel works without a classifier; the other taps require one.
template <class T>
T diversity_loss(const GeneratorCheckpoint<T>& g,
                 const ClassifierCheckpoint<T>* p, const Vec<T>& c,
                 const Mat<T>& z, const PairList& pairs, FeatureTap phi) {
  if (pairs.empty())
    throw std::invalid_argument("diversity_loss: no pairs");
  const Mat<T> images = generate(g, c, z);
  if (phi == FeatureTap::Pixel)
    return diversity_from_features(images, z, pairs);
  if (!p)
    throw ConfigError("diversity_loss: feature tap requires a classifier");
  return diversity_from_features(features(*p, images, phi), z, pairs);
}

}  // namespace embsurg
