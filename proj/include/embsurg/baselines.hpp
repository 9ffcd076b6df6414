#pragma once

// The two comparison treatments: isotropic noise injection on one embedding
// row, and adversarial finetuning of a single row against the frozen
// discriminator.

#include "embsurg/nets.hpp"
#include "embsurg/optimizer.hpp"

#include <vector>

namespace embsurg {

struct NoiseSpec {
  double sigma = 0.1;  // paper values: 0.1 small, 0.3 large
};

// W[y] + eps with eps ~ N(0, sigma^2 I); W itself is never touched.
inline VecF noise_baseline(const MatF& w, int y, const NoiseSpec& spec,
                           Rng& rng) {
  if (y < 0 || y >= w.cols())
    throw ConfigError("noise_baseline: class index out of range");
  if (spec.sigma < 0)
    throw ConfigError("noise_baseline: sigma must be >= 0");
  VecF c = w.col(y);
  for (Eigen::Index i = 0; i < c.size(); ++i)
    c[i] += static_cast<float>(spec.sigma * rng.normal());
  return c;
}

struct FinetuneConfig {
  int iters = 10;
  int batch = 32;
  double lr = 2e-4;          // reuse of the GAN training rate
  double beta1 = 0.5;
  double beta2 = 0.999;
  double init_noise = 0.1;   // N(0, 0.1) start away from W[y]
  GanLoss loss = GanLoss::Hinge;
};

struct FinetuneResult {
  VecF embedding;
  std::vector<double> loss_trace;      // generator loss per iteration
  std::vector<double> margin_trace;    // mean D(real) - mean D(fake)
  bool collapsed = false;
  int iters_run = 0;
};

// Updates only row y (on a working copy) by descending the generator's
// adversarial loss through the frozen discriminator. Stops at the
// configured iteration count or as soon as the loss is non-finite or
// explodes past 10x its initial magnitude.
inline FinetuneResult finetune_embedding(const GeneratorF& g,
                                         const DiscriminatorF& d,
                                         const LabeledImageSet& data, int y,
                                         const FinetuneConfig& cfg, Rng& rng) {
  if (y < 0 || y >= g.cfg.num_classes)
    throw ConfigError("finetune_embedding: class index out of range");
  if (d.cfg.image_size != g.cfg.image_size ||
      d.cfg.channels != g.cfg.channels)
    throw ShapeError("finetune_embedding: discriminator/generator mismatch");

  FinetuneResult result;
  VecF c = g.embedding.col(y);
  for (Eigen::Index i = 0; i < c.size(); ++i)
    c[i] += static_cast<float>(cfg.init_noise * rng.normal());
  result.embedding = c;
  if (cfg.iters == 0) return result;

  MatF cm = c;
  AdamOptimizer<float> adam;
  adam.lr = cfg.lr;
  adam.beta1 = cfg.beta1;
  adam.beta2 = cfg.beta2;
  adam.init({&cm});

  const int dc = g.cfg.embed_dim;
  const int dz = g.cfg.latent_dim;
  const int nb = cfg.batch;
  const MatF real_pool = data.images_of_class(y);
  VecI labels = VecI::Constant(nb, y);
  GeneratorActs<float> gacts;
  DiscriminatorActs<float> dacts;
  double initial_mag = 0.0;

  for (int iter = 0; iter < cfg.iters; ++iter) {
    MatF gin(dc + dz, nb);
    gin.topRows(dc).colwise() = VecF(cm.col(0));
    for (int i = 0; i < nb; ++i)
      for (int r = 0; r < dz; ++r)
        gin(dc + r, i) = static_cast<float>(rng.normal());
    const MatF fake = generator_forward(g, gin, &gacts);
    const VecF sf = discriminator_forward(d, fake, labels, &dacts);

    double loss = 0.0;
    VecF dsf(nb);
    for (int i = 0; i < nb; ++i) {
      const double s = sf[i];
      if (cfg.loss == GanLoss::Hinge) {
        loss += -s;
        dsf[i] = static_cast<float>(-1.0 / nb);
      } else {
        loss += std::log1p(std::exp(-s));
        dsf[i] = static_cast<float>(-1.0 / (1.0 + std::exp(s)) / nb);
      }
    }
    loss /= nb;
    result.loss_trace.push_back(loss);

    if (real_pool.cols() > 0) {
      std::vector<Eigen::Index> idx(static_cast<std::size_t>(
          std::min<Eigen::Index>(real_pool.cols(), nb)));
      for (std::size_t i = 0; i < idx.size(); ++i)
        idx[i] = static_cast<Eigen::Index>(rng.below(
            static_cast<std::uint64_t>(real_pool.cols())));
      MatF real(real_pool.rows(), static_cast<Eigen::Index>(idx.size()));
      for (std::size_t i = 0; i < idx.size(); ++i)
        real.col(static_cast<Eigen::Index>(i)) = real_pool.col(idx[i]);
      const VecF sr = discriminator_forward(
          d, real, VecI::Constant(real.cols(), y), nullptr);
      result.margin_trace.push_back(sr.mean() - sf.mean());
    }

    if (iter == 0) initial_mag = std::fabs(loss);
    if (!std::isfinite(loss) ||
        std::fabs(loss) > 10.0 * (initial_mag + 1.0)) {
      result.collapsed = true;
      break;
    }

    const MatF dimages =
        discriminator_backward(d, dacts, dsf, labels, nullptr, true);
    const MatF dinput = generator_backward(g, gacts, dimages, nullptr);
    MatF grad = MatF::Zero(dc, 1);
    for (int i = 0; i < nb; ++i) grad.col(0) += dinput.col(i).head(dc);
    adam.step({&cm}, {&grad});
    result.iters_run = iter + 1;
  }
  result.embedding = cm.col(0);
  return result;
}

}  // namespace embsurg
