#include "embsurg/metrics.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace embsurg {
namespace {

using Eigen::ArrayXXd;

// 7-tap Gaussian (sigma 1.5), normalized.
const double* gaussian7() {
  static const double taps = [] { return 0.0; }();
  (void)taps;
  static double k[7];
  static const bool init = [] {
    double sum = 0.0;
    for (int i = 0; i < 7; ++i) {
      const double x = i - 3.0;
      k[i] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
      sum += k[i];
    }
    for (double& v : k) v /= sum;
    return true;
  }();
  (void)init;
  return k;
}

// Separable valid-mode 7x7 Gaussian filter.
ArrayXXd filter_valid(const ArrayXXd& img) {
  const double* k = gaussian7();
  const Eigen::Index h = img.rows(), w = img.cols();
  ArrayXXd tmp(h, w - 6);
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x + 6 < w; ++x) {
      double acc = 0.0;
      for (int t = 0; t < 7; ++t) acc += k[t] * img(y, x + t);
      tmp(y, x) = acc;
    }
  }
  ArrayXXd out(h - 6, w - 6);
  for (Eigen::Index y = 0; y + 6 < h; ++y) {
    for (Eigen::Index x = 0; x < w - 6; ++x) {
      double acc = 0.0;
      for (int t = 0; t < 7; ++t) acc += k[t] * tmp(y + t, x);
      out(y, x) = acc;
    }
  }
  return out;
}

ArrayXXd downsample2(const ArrayXXd& img) {
  const Eigen::Index h = img.rows() / 2, w = img.cols() / 2;
  ArrayXXd out(h, w);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x)
      out(y, x) = 0.25 * (img(2 * y, 2 * x) + img(2 * y, 2 * x + 1) +
                          img(2 * y + 1, 2 * x) + img(2 * y + 1, 2 * x + 1));
  return out;
}

// Grayscale [0,1] image from a [-1,1] channel-major sample.
ArrayXXd to_gray(const float* img, int h, int w, int ch) {
  ArrayXXd out(h, w);
  const int plane = h * w;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int i = y * w + x;
      double v;
      if (ch >= 3) {
        v = 0.299 * img[i] + 0.587 * img[plane + i] +
            0.114 * img[2 * plane + i];
      } else {
        v = img[i];
      }
      out(y, x) = 0.5 * (v + 1.0);
    }
  }
  return out;
}

struct ScaleStats {
  double mean_cs = 0.0;
  double mean_ssim = 0.0;  // luminance * cs, last scale only
};

ScaleStats ssim_scale(const ArrayXXd& a, const ArrayXXd& b, bool with_lum) {
  constexpr double kC1 = 0.01 * 0.01;
  constexpr double kC2 = 0.03 * 0.03;
  const ArrayXXd mu_a = filter_valid(a);
  const ArrayXXd mu_b = filter_valid(b);
  const ArrayXXd s_aa = filter_valid(a * a) - mu_a * mu_a;
  const ArrayXXd s_bb = filter_valid(b * b) - mu_b * mu_b;
  const ArrayXXd s_ab = filter_valid(a * b) - mu_a * mu_b;
  const ArrayXXd cs = (2.0 * s_ab + kC2) / (s_aa + s_bb + kC2);
  ScaleStats r;
  r.mean_cs = cs.max(0.0).mean();
  if (with_lum) {
    const ArrayXXd lum =
        (2.0 * mu_a * mu_b + kC1) / (mu_a * mu_a + mu_b * mu_b + kC1);
    r.mean_ssim = (lum * cs).max(0.0).mean();
  }
  return r;
}

// Standard 5-scale MS-SSIM weights truncated to the last 3 and renormalized
// (32x32 inputs cannot host the full pyramid).
constexpr int kScales = 3;
const double* msssim_weights() {
  static double w[kScales] = {0.3001, 0.2363, 0.1333};
  static const bool init = [] {
    double sum = 0.0;
    for (double v : w) sum += v;
    for (double& v : w) v /= sum;
    return true;
  }();
  (void)init;
  return w;
}

// Distinct unordered pairs without replacement; all pairs when fewer exist
// than requested.
std::vector<std::pair<int, int>> sample_pairs(Eigen::Index n, int n_pairs,
                                              Rng& rng) {
  const long total = static_cast<long>(n) * (n - 1) / 2;
  std::vector<std::pair<int, int>> all;
  all.reserve(static_cast<std::size_t>(total));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) all.emplace_back(i, j);
  if (total <= n_pairs) return all;
  const auto idx = rng.sample_without_replacement(
      all.size(), static_cast<std::size_t>(n_pairs));
  std::vector<std::pair<int, int>> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(all[i]);
  return out;
}

}  // namespace

double ms_ssim_pair(const float* a, const float* b, int h, int w, int ch) {
  const int min_side = 7 << (kScales - 1);
  if (h < min_side || w < min_side)
    throw std::invalid_argument(
        "ms_ssim: image smaller than " + std::to_string(min_side) +
        " px cannot host the " + std::to_string(kScales) + "-scale pyramid");
  ArrayXXd ga = to_gray(a, h, w, ch);
  ArrayXXd gb = to_gray(b, h, w, ch);
  const double* weights = msssim_weights();
  double score = 1.0;
  for (int s = 0; s < kScales; ++s) {
    const bool last = s == kScales - 1;
    const ScaleStats st = ssim_scale(ga, gb, last);
    score *= std::pow(last ? st.mean_ssim : st.mean_cs, weights[s]);
    if (!last) {
      ga = downsample2(ga);
      gb = downsample2(gb);
    }
  }
  return score;
}

double ms_ssim_diversity(const MatF& images, int h, int w, int ch,
                         int n_pairs, Rng& rng, int* pairs_used) {
  if (images.cols() < 2)
    throw DataError("ms_ssim_diversity: need at least 2 images");
  const auto pairs = sample_pairs(images.cols(), n_pairs, rng);
  double acc = 0.0;
  for (const auto& [i, j] : pairs)
    acc += ms_ssim_pair(images.col(i).data(), images.col(j).data(), h, w, ch);
  if (pairs_used) *pairs_used = static_cast<int>(pairs.size());
  return acc / static_cast<double>(pairs.size());
}

double perceptual_pair_distance(const MatF& images,
                                const ClassifierCheckpoint<float>& p,
                                int n_pairs, Rng& rng, int* excluded_pairs,
                                int* pairs_used) {
  if (images.cols() < 2)
    throw DataError("perceptual_pair_distance: need at least 2 images");
  const MatF feats = features(p, images, FeatureTap::MidLayer);
  MatD unit(feats.rows(), feats.cols());
  std::vector<bool> valid(static_cast<std::size_t>(feats.cols()), true);
  for (Eigen::Index i = 0; i < feats.cols(); ++i) {
    const VecD f = feats.col(i).cast<double>();
    const double norm = f.norm();
    if (norm == 0.0) {
      valid[static_cast<std::size_t>(i)] = false;
      unit.col(i).setZero();
    } else {
      unit.col(i) = f / norm;
    }
  }
  const auto pairs = sample_pairs(images.cols(), n_pairs, rng);
  double acc = 0.0;
  int used = 0, excluded = 0;
  for (const auto& [i, j] : pairs) {
    if (!valid[static_cast<std::size_t>(i)] ||
        !valid[static_cast<std::size_t>(j)]) {
      ++excluded;
      continue;
    }
    acc += (unit.col(i) - unit.col(j)).norm();
    ++used;
  }
  if (excluded_pairs) *excluded_pairs = excluded;
  if (pairs_used) *pairs_used = used;
  if (used == 0)
    throw DataError("perceptual_pair_distance: every pair was excluded");
  return acc / static_cast<double>(used);
}

std::pair<double, double> inception_score(const MatD& probs, int splits) {
  const Eigen::Index n = probs.cols();
  if (splits < 1) throw std::invalid_argument("inception_score: splits < 1");
  if (n < splits)
    throw std::invalid_argument("inception_score: need at least one sample per split");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::fabs(probs.col(i).sum() - 1.0) > 1e-4 ||
        probs.col(i).minCoeff() < -1e-12) {
      throw std::invalid_argument(
          "inception_score: column " + std::to_string(i) +
          " is not a probability distribution");
    }
  }
  std::vector<double> scores;
  scores.reserve(static_cast<std::size_t>(splits));
  for (int s = 0; s < splits; ++s) {
    const Eigen::Index lo = n * s / splits;
    const Eigen::Index hi = n * (s + 1) / splits;
    const auto block = probs.middleCols(lo, hi - lo);
    const VecD marginal = block.rowwise().mean();
    double mean_kl = 0.0;
    for (Eigen::Index i = 0; i < block.cols(); ++i) {
      double kl = 0.0;
      for (Eigen::Index k = 0; k < block.rows(); ++k) {
        const double pki = block(k, i);
        if (pki > 0.0) {
          kl += pki * (std::log(pki) - std::log(std::max(marginal[k], 1e-12)));
        }
      }
      mean_kl += kl;
    }
    mean_kl /= static_cast<double>(block.cols());
    scores.push_back(std::exp(mean_kl));
  }
  double mean = 0.0;
  for (double v : scores) mean += v;
  mean /= static_cast<double>(scores.size());
  double var = 0.0;
  for (double v : scores) var += (v - mean) * (v - mean);
  var /= static_cast<double>(scores.size());
  return {mean, std::sqrt(var)};
}

double frechet_distance(const VecD& mu1, const MatD& c1, const VecD& mu2,
                        const MatD& c2) {
  const Eigen::Index d = mu1.size();
  if (mu2.size() != d || c1.rows() != d || c1.cols() != d || c2.rows() != d ||
      c2.cols() != d) {
    throw ShapeError("frechet_distance: dimension mismatch");
  }
  const MatD reg = 1e-6 * MatD::Identity(d, d);
  const MatD a = 0.5 * (c1 + c1.transpose()) + reg;
  const MatD b = 0.5 * (c2 + c2.transpose()) + reg;

  Eigen::SelfAdjointEigenSolver<MatD> es_a(a);
  const VecD root_vals = es_a.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const MatD sqrt_a =
      es_a.eigenvectors() * root_vals.asDiagonal() *
      es_a.eigenvectors().transpose();

  MatD m = sqrt_a * b * sqrt_a;
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<MatD> es_m(m);
  const double tr_sqrt = es_m.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

  const double dist = (mu1 - mu2).squaredNorm() + a.trace() + b.trace() -
                      2.0 * tr_sqrt;
  return std::max(dist, 0.0);
}

double classifier_accuracy(const MatF& images,
                           const ClassifierCheckpoint<float>& p, int y) {
  if (images.cols() == 0)
    throw std::invalid_argument("classifier_accuracy: empty batch");
  const auto result = classify(p, images);
  Eigen::Index hits = 0;
  for (Eigen::Index i = 0; i < images.cols(); ++i) {
    Eigen::Index top;
    result.probs.col(i).maxCoeff(&top);
    if (top == y) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(images.cols());
}

void feature_moments(const MatF& feats, VecD& mu, MatD& cov) {
  const Eigen::Index n = feats.cols();
  if (n < 1) throw DataError("feature_moments: empty feature set");
  const MatD f = feats.cast<double>();
  mu = f.rowwise().mean();
  if (n == 1) {
    cov = MatD::Zero(f.rows(), f.rows());
    return;
  }
  const MatD centered = f.colwise() - mu;
  cov = centered * centered.transpose() / static_cast<double>(n - 1);
}

ClassMetrics evaluate_class_set(const MatF& images, int h, int w, int ch,
                                int y, const ClassifierCheckpoint<float>& p,
                                const ClassReferenceStats* ref,
                                const EvalOptions& opt, Rng& rng) {
  ClassMetrics m;
  m.n_images = static_cast<int>(images.cols());
  m.ms_ssim = ms_ssim_diversity(images, h, w, ch, opt.ms_ssim_pairs, rng,
                                &m.n_pairs);
  m.perceptual = perceptual_pair_distance(images, p, opt.perceptual_pairs,
                                          rng, &m.excluded_pairs);
  const auto cls = classify(p, images);
  Eigen::Index hits = 0;
  for (Eigen::Index i = 0; i < images.cols(); ++i) {
    Eigen::Index top;
    cls.probs.col(i).maxCoeff(&top);
    if (top == y) ++hits;
  }
  m.accuracy = static_cast<double>(hits) / static_cast<double>(images.cols());
  const auto is = inception_score(cls.probs.cast<double>(), opt.is_splits);
  m.is_mean = is.first;
  m.is_std = is.second;
  if (ref) {
    VecD mu;
    MatD cov;
    feature_moments(features(p, images, FeatureTap::MidLayer), mu, cov);
    m.frechet = frechet_distance(mu, cov, ref->mu, ref->cov);
    m.frechet_valid = true;
  }
  return m;
}

MatF mix_sample_sets(const MatF& a, const MatF& b, int n_each, Rng& rng) {
  if (a.cols() < n_each || b.cols() < n_each)
    throw DataError("mix_sample_sets: insufficient images (need " +
                    std::to_string(n_each) + " from each set)");
  if (a.rows() != b.rows())
    throw ShapeError("mix_sample_sets: image dimensions differ");
  const auto ia = rng.sample_without_replacement(
      static_cast<std::size_t>(a.cols()), static_cast<std::size_t>(n_each));
  const auto ib = rng.sample_without_replacement(
      static_cast<std::size_t>(b.cols()), static_cast<std::size_t>(n_each));
  MatF out(a.rows(), 2 * n_each);
  for (int i = 0; i < n_each; ++i) {
    out.col(i) = a.col(static_cast<Eigen::Index>(ia[i]));
    out.col(n_each + i) = b.col(static_cast<Eigen::Index>(ib[i]));
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(2 * n_each));
  for (std::size_t i = 0; i < order.size(); ++i)
    order[i] = static_cast<Eigen::Index>(i);
  rng.shuffle(order.begin(), order.end());
  MatF shuffled(out.rows(), out.cols());
  for (Eigen::Index i = 0; i < out.cols(); ++i)
    shuffled.col(i) = out.col(order[static_cast<std::size_t>(i)]);
  return shuffled;
}

ReferenceStats real_reference_stats(const LabeledImageSet& set,
                                    const ClassifierCheckpoint<float>& p,
                                    const EvalOptions& opt) {
  ReferenceStats stats;
  stats.feature_tap = "midlayer";
  const int h = set.spec.image_size, w = set.spec.image_size;
  const int ch = set.spec.channels;
  for (int y = 0; y < set.spec.num_classes; ++y) {
    const MatF imgs = set.images_of_class(y);
    if (imgs.cols() < 2)
      throw DataError("real_reference_stats: class " + std::to_string(y) +
                      " has fewer than 2 samples");
    ClassReferenceStats cs;
    cs.n_images = static_cast<int>(imgs.cols());
    feature_moments(features(p, imgs, FeatureTap::MidLayer), cs.mu, cs.cov);
    Rng rng_ms(derive_seed(set.spec.seed, "refstats.msssim",
                           static_cast<std::uint64_t>(y)));
    cs.ms_ssim = ms_ssim_diversity(imgs, h, w, ch, opt.ms_ssim_pairs, rng_ms);
    Rng rng_pc(derive_seed(set.spec.seed, "refstats.perceptual",
                           static_cast<std::uint64_t>(y)));
    cs.perceptual =
        perceptual_pair_distance(imgs, p, opt.perceptual_pairs, rng_pc);
    stats.per_class[y] = std::move(cs);
  }
  stats.provenance["dataset_spec"] = set.spec.to_json();
  stats.provenance["classifier_checksum"] = hex64(p.full_checksum());
  stats.provenance["ms_ssim_pairs"] = opt.ms_ssim_pairs;
  stats.provenance["perceptual_pairs"] = opt.perceptual_pairs;
  return stats;
}

// ------------------------------------------------------------- reporting --

nlohmann::json ClassMetrics::to_json() const {
  return {{"ms_ssim", ms_ssim},
          {"perceptual", perceptual},
          {"is_mean", is_mean},
          {"is_std", is_std},
          {"frechet", frechet},
          {"frechet_valid", frechet_valid},
          {"accuracy", accuracy},
          {"n_images", n_images},
          {"n_pairs", n_pairs},
          {"excluded_pairs", excluded_pairs}};
}

ClassMetrics ClassMetrics::from_json(const nlohmann::json& j) {
  ClassMetrics m;
  m.ms_ssim = j.at("ms_ssim");
  m.perceptual = j.at("perceptual");
  m.is_mean = j.at("is_mean");
  m.is_std = j.at("is_std");
  m.frechet = j.at("frechet");
  m.frechet_valid = j.at("frechet_valid");
  m.accuracy = j.at("accuracy");
  m.n_images = j.at("n_images");
  m.n_pairs = j.at("n_pairs");
  m.excluded_pairs = j.value("excluded_pairs", 0);
  return m;
}

void MetricReport::finalize_aggregate() {
  aggregate = ClassMetrics{};
  if (per_class.empty()) return;
  int n = 0, n_frechet = 0;
  for (const auto& [y, m] : per_class) {
    aggregate.ms_ssim += m.ms_ssim;
    aggregate.perceptual += m.perceptual;
    aggregate.is_mean += m.is_mean;
    aggregate.is_std += m.is_std;
    aggregate.accuracy += m.accuracy;
    aggregate.n_images += m.n_images;
    aggregate.n_pairs += m.n_pairs;
    aggregate.excluded_pairs += m.excluded_pairs;
    if (m.frechet_valid) {
      aggregate.frechet += m.frechet;
      ++n_frechet;
    }
    ++n;
  }
  aggregate.ms_ssim /= n;
  aggregate.perceptual /= n;
  aggregate.is_mean /= n;
  aggregate.is_std /= n;
  aggregate.accuracy /= n;
  if (n_frechet > 0) {
    aggregate.frechet /= n_frechet;
    aggregate.frechet_valid = true;
  }
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json per;
  for (const auto& [y, m] : per_class) per[std::to_string(y)] = m.to_json();
  return {{"version", 1},
          {"provenance", provenance},
          {"per_class", per},
          {"aggregate", aggregate.to_json()}};
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
  MetricReport r;
  for (const auto& [key, val] : j.at("per_class").items())
    r.per_class[std::stoi(key)] = ClassMetrics::from_json(val);
  r.aggregate = ClassMetrics::from_json(j.at("aggregate"));
  r.provenance = j.value("provenance", nlohmann::json::object());
  return r;
}

std::string MetricReport::to_csv() const {
  std::ostringstream out;
  out << "class,is_mean,is_std,frechet,accuracy,ms_ssim,perceptual,"
         "n_images,n_pairs\n";
  out.precision(9);
  auto row = [&out](const std::string& label, const ClassMetrics& m) {
    out << label << ',' << m.is_mean << ',' << m.is_std << ','
        << (m.frechet_valid ? std::to_string(m.frechet) : std::string("n/a"))
        << ',' << m.accuracy << ',' << m.ms_ssim << ',' << m.perceptual << ','
        << m.n_images << ',' << m.n_pairs << '\n';
  };
  for (const auto& [y, m] : per_class) row(std::to_string(y), m);
  row("aggregate", aggregate);
  return out.str();
}

// ---------------------------------------------------------- persistence --

Container reference_stats_to_container(const ReferenceStats& s) {
  Container c;
  c.type = "reference_stats";
  c.provenance = s.provenance;
  c.provenance["feature_tap"] = s.feature_tap;
  VecI classes(static_cast<Eigen::Index>(s.per_class.size()));
  Eigen::Index i = 0;
  for (const auto& [y, cs] : s.per_class) {
    classes[i++] = y;
    c.add("mu." + std::to_string(y), MatF(cs.mu.cast<float>()));
    c.add("cov." + std::to_string(y), MatF(cs.cov.cast<float>()));
    MatF scores(3, 1);
    scores << static_cast<float>(cs.ms_ssim), static_cast<float>(cs.perceptual),
        static_cast<float>(cs.n_images);
    c.add("scores." + std::to_string(y), scores);
  }
  c.add("classes", classes);
  return c;
}

ReferenceStats reference_stats_from_container(const Container& c) {
  if (c.type != "reference_stats")
    throw IntegrityError("container is not reference stats");
  ReferenceStats s;
  s.provenance = c.provenance;
  s.feature_tap = c.provenance.value("feature_tap", "midlayer");
  const VecI& classes = c.ints("classes");
  for (Eigen::Index i = 0; i < classes.size(); ++i) {
    const int y = static_cast<int>(classes[i]);
    ClassReferenceStats cs;
    cs.mu = c.floats("mu." + std::to_string(y)).cast<double>().col(0);
    cs.cov = c.floats("cov." + std::to_string(y)).cast<double>();
    const MatF& sc = c.floats("scores." + std::to_string(y));
    cs.ms_ssim = sc(0, 0);
    cs.perceptual = sc(1, 0);
    cs.n_images = static_cast<int>(sc(2, 0));
    s.per_class[y] = std::move(cs);
  }
  return s;
}

}  // namespace embsurg
