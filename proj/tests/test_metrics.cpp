#include <doctest.h>

#include "embsurg/metrics.hpp"
#include "embsurg/synthdata.hpp"

#include <cmath>

using namespace embsurg;

namespace {

ClassifierConfig clf_cfg32() {
  ClassifierConfig cfg;
  cfg.num_classes = 10;
  cfg.image_size = 32;
  cfg.c1 = 4;
  cfg.c2 = 6;
  cfg.c3 = 8;
  return cfg;
}

DatasetSpec spec32(double knob, int n) {
  DatasetSpec s;
  s.num_classes = 10;
  s.image_size = 32;
  s.samples_per_class = n;
  s.diversity_knob = knob;
  s.seed = 7;
  return s;
}

}  // namespace

TEST_CASE("ms-ssim of identical images is exactly 1") {
  const VecF img = render_canonical_image(spec32(0.0, 2), 3);
  CHECK(ms_ssim_pair(img.data(), img.data(), 32, 32, 3) ==
        doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ms-ssim of an image and its negation is tiny") {
  const VecF img = render_canonical_image(spec32(0.0, 2), 3);
  const VecF neg = -img;
  CHECK(ms_ssim_pair(img.data(), neg.data(), 32, 32, 3) < 0.2);
}

TEST_CASE("ms-ssim diversity is 1 on a knob-0 class") {
  const auto set = generate_dataset(spec32(0.0, 8));
  Rng rng(1);
  const double v = ms_ssim_diversity(set.images_of_class(2), 32, 32, 3, 20,
                                     rng);
  CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ms-ssim decreases strictly with the diversity knob") {
  Rng rng(2);
  double prev = 2.0;
  for (const double knob : {0.0, 0.5, 1.0}) {
    const auto set = generate_dataset(spec32(knob, 30));
    double mean = 0.0;
    for (int y = 0; y < 10; ++y) {
      Rng r(derive_seed(11, "msk", static_cast<std::uint64_t>(y)));
      mean += ms_ssim_diversity(set.images_of_class(y), 32, 32, 3, 60, r);
    }
    mean /= 10;
    CHECK(mean < prev);
    prev = mean;
  }
}

TEST_CASE("ms-ssim rejects images below the pyramid minimum") {
  MatF tiny = MatF::Zero(3 * 16 * 16, 4);
  Rng rng(3);
  CHECK_THROWS_AS(ms_ssim_diversity(tiny, 16, 16, 3, 4, rng),
                  std::invalid_argument);
  MatF one = MatF::Zero(3 * 32 * 32, 1);
  CHECK_THROWS_AS(ms_ssim_diversity(one, 32, 32, 3, 4, rng), DataError);
}

TEST_CASE("perceptual distance is zero for identical images and symmetric") {
  const auto p = init_classifier<float>(clf_cfg32(), 5);
  const auto set = generate_dataset(spec32(0.0, 6));
  Rng rng(4);
  const double v =
      perceptual_pair_distance(set.images_of_class(1), p, 10, rng);
  CHECK(v == doctest::Approx(0.0).epsilon(1e-12));

  // Symmetry: a two-image set has one pair whichever way it is ordered.
  const auto hi = generate_dataset(spec32(1.0, 2));
  MatF two = hi.images_of_class(3);
  MatF swapped(two.rows(), 2);
  swapped.col(0) = two.col(1);
  swapped.col(1) = two.col(0);
  Rng r1(5), r2(5);
  CHECK(perceptual_pair_distance(two, p, 1, r1) ==
        doctest::Approx(perceptual_pair_distance(swapped, p, 1, r2)));
}

TEST_CASE("perceptual distance grows with the diversity knob") {
  const auto p = init_classifier<float>(clf_cfg32(), 5);
  Rng r0(6), r1(6);
  const auto lo = generate_dataset(spec32(0.0, 20));
  const auto hi = generate_dataset(spec32(1.0, 20));
  const double dlo = perceptual_pair_distance(lo.images_of_class(4), p, 50, r0);
  const double dhi = perceptual_pair_distance(hi.images_of_class(4), p, 50, r1);
  CHECK(dhi > dlo);
}

TEST_CASE("inception score oracles") {
  SUBCASE("identical rows give exactly 1") {
    MatD probs(4, 12);
    probs.colwise() = VecD::Constant(4, 0.25);
    const auto [mean, sd] = inception_score(probs, 3);
    CHECK(mean == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(sd == doctest::Approx(0.0));
  }
  SUBCASE("one-hot uniform rows give exactly K") {
    const int k = 7;
    MatD probs = MatD::Zero(k, k);
    for (int i = 0; i < k; ++i) probs(i, i) = 1.0;
    const auto [mean, sd] = inception_score(probs, 1);
    CHECK(mean == doctest::Approx(double(k)).epsilon(1e-9));
  }
  SUBCASE("hand-computed two-row case") {
    // KL((0.9,0.1) || (0.5,0.5)) = 0.9 ln 1.8 + 0.1 ln 0.2 = 0.3680642...
    // Both rows give the same KL, so IS = exp(0.3680642) = 1.4449276...
    MatD probs(2, 2);
    probs << 0.9, 0.1, 0.1, 0.9;
    const auto [mean, sd] = inception_score(probs, 1);
    const double expected_kl = 0.9 * std::log(1.8) + 0.1 * std::log(0.2);
    CHECK(mean == doctest::Approx(std::exp(expected_kl)).epsilon(1e-12));
    CHECK(mean == doctest::Approx(1.4449276).epsilon(1e-6));
  }
  SUBCASE("split invariance on duplicated data") {
    Rng rng(7);
    MatD half(5, 20);
    for (int j = 0; j < 20; ++j) {
      VecD col(5);
      for (int i = 0; i < 5; ++i) col[i] = rng.uniform(0.05, 1.0);
      half.col(j) = col / col.sum();
    }
    MatD full(5, 40);
    full.leftCols(20) = half;
    full.rightCols(20) = half;
    const auto one = inception_score(half, 1);
    const auto two = inception_score(full, 2);
    CHECK(two.first == doctest::Approx(one.first).epsilon(1e-6));
  }
  SUBCASE("unnormalized rows are rejected") {
    MatD probs = MatD::Constant(3, 6, 0.5);
    CHECK_THROWS_AS(inception_score(probs, 2), std::invalid_argument);
    MatD ok = MatD::Constant(3, 2, 1.0 / 3);
    CHECK_THROWS_AS(inception_score(ok, 5), std::invalid_argument);
  }
}

TEST_CASE("frechet distance closed forms") {
  SUBCASE("identical inputs give zero") {
    VecD mu(3);
    mu << 1.0, -2.0, 0.5;
    MatD c(3, 3);
    c << 2.0, 0.3, 0.0, 0.3, 1.5, 0.2, 0.0, 0.2, 1.0;
    CHECK(frechet_distance(mu, c, mu, c) ==
          doctest::Approx(0.0).epsilon(1e-9));
  }
  SUBCASE("1-d mean shift: mu 0 vs 3, unit variances -> 9") {
    VecD m1(1), m2(1);
    m1 << 0.0;
    m2 << 3.0;
    MatD c1(1, 1), c2(1, 1);
    c1 << 1.0;
    c2 << 1.0;
    CHECK(std::fabs(frechet_distance(m1, c1, m2, c2) - 9.0) < 1e-6);
  }
  SUBCASE("1-d variance shift: sigma 1 vs 2 -> 1") {
    VecD m(1);
    m << 0.0;
    MatD c1(1, 1), c2(1, 1);
    c1 << 1.0;
    c2 << 4.0;
    CHECK(std::fabs(frechet_distance(m, c1, m, c2) - 1.0) < 1e-6);
  }
  SUBCASE("symmetry within 1e-8 on random PSD inputs") {
    Rng rng(8);
    for (int trial = 0; trial < 5; ++trial) {
      const int d = 6;
      const MatD a = rng.normal_matrix<double>(d, d);
      const MatD b = rng.normal_matrix<double>(d, d);
      const MatD c1 = a * a.transpose() / d;
      const MatD c2 = b * b.transpose() / d;
      const VecD m1 = rng.normal_matrix<double>(d, 1).col(0);
      const VecD m2 = rng.normal_matrix<double>(d, 1).col(0);
      const double fwd = frechet_distance(m1, c1, m2, c2);
      const double rev = frechet_distance(m2, c2, m1, c1);
      CHECK(std::fabs(fwd - rev) < 1e-8 * std::max(1.0, fwd));
      CHECK(fwd >= 0.0);
    }
  }
  SUBCASE("dimension mismatch is a shape error") {
    VecD m1(2), m2(3);
    m1.setZero();
    m2.setZero();
    CHECK_THROWS_AS(
        frechet_distance(m1, MatD::Identity(2, 2), m2, MatD::Identity(3, 3)),
        ShapeError);
  }
}

TEST_CASE("classifier accuracy on chance-level inputs") {
  auto p = init_classifier<float>(clf_cfg32(), 9);
  p.fc.w.setZero();
  p.fc.b.setZero();
  // Uniform output: argmax is always class 0, so accuracy is 1 for y=0 and
  // 0 elsewhere; chance behavior is exercised against shuffled labels in
  // the nets tests instead. Here: forced-match case.
  const auto set = generate_dataset(spec32(1.0, 10));
  const MatF imgs = set.images_of_class(0);
  CHECK(classifier_accuracy(imgs, p, 0) == doctest::Approx(1.0));
  CHECK(classifier_accuracy(imgs, p, 3) == doctest::Approx(0.0));
}

TEST_CASE("reference stats: knob-0 classes have zero covariance") {
  const auto p = init_classifier<float>(clf_cfg32(), 10);
  const auto set = generate_dataset(spec32(0.0, 5));
  const auto stats = real_reference_stats(set, p);
  const auto& cs = stats.per_class.at(0);
  CHECK(cs.cov.cwiseAbs().maxCoeff() == doctest::Approx(0.0));
  CHECK(cs.ms_ssim == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(cs.perceptual == doctest::Approx(0.0));
}

TEST_CASE("reference stats are a pure function of their inputs") {
  const auto p = init_classifier<float>(clf_cfg32(), 10);
  const auto set = generate_dataset(spec32(1.0, 8));
  const auto s1 = real_reference_stats(set, p);
  const auto s2 = real_reference_stats(set, p);
  for (int y = 0; y < 10; ++y) {
    CHECK(s1.per_class.at(y).mu == s2.per_class.at(y).mu);
    CHECK(s1.per_class.at(y).ms_ssim == s2.per_class.at(y).ms_ssim);
  }
  // Round trip through the container format.
  const auto back =
      reference_stats_from_container(reference_stats_to_container(s1));
  CHECK(back.per_class.size() == s1.per_class.size());
  CHECK(back.per_class.at(3).n_images == s1.per_class.at(3).n_images);
}

TEST_CASE("knob-1 reference ms-ssim sits strictly below 1") {
  const auto p = init_classifier<float>(clf_cfg32(), 10);
  const auto set = generate_dataset(spec32(1.0, 10));
  const auto stats = real_reference_stats(set, p);
  CHECK(stats.per_class.at(0).ms_ssim < 1.0);
}

TEST_CASE("insufficient per-class data raises a data error") {
  const auto p = init_classifier<float>(clf_cfg32(), 10);
  const auto set = generate_dataset(spec32(1.0, 1));
  CHECK_THROWS_AS(real_reference_stats(set, p), DataError);
}

TEST_CASE("evaluate_class_set fills every metric") {
  const auto p = init_classifier<float>(clf_cfg32(), 11);
  const auto set = generate_dataset(spec32(1.0, 40));
  const auto stats = real_reference_stats(set, p);
  Rng rng(12);
  EvalOptions opt;
  opt.ms_ssim_pairs = 30;
  opt.perceptual_pairs = 30;
  opt.is_splits = 5;
  const MatF imgs = set.images_of_class(2);
  const auto m = evaluate_class_set(imgs, 32, 32, 3, 2, p,
                                    &stats.per_class.at(2), opt, rng);
  CHECK(m.n_images == 40);
  CHECK(m.ms_ssim > 0.0);
  CHECK(m.ms_ssim <= 1.0);
  CHECK(m.perceptual >= 0.0);
  CHECK(m.is_mean >= 1.0);
  CHECK(m.is_mean <= 10.0);
  CHECK(m.frechet_valid);
  // Real set against its own statistics: self-distance at noise level.
  CHECK(m.frechet <= 1e-3);

  const auto no_ref =
      evaluate_class_set(imgs, 32, 32, 3, 2, p, nullptr, opt, rng);
  CHECK_FALSE(no_ref.frechet_valid);
}

TEST_CASE("evaluating knob-0 data pins the degenerate metrics") {
  const auto p = init_classifier<float>(clf_cfg32(), 11);
  const auto set = generate_dataset(spec32(0.0, 12));
  Rng rng(13);
  EvalOptions opt;
  opt.ms_ssim_pairs = 10;
  opt.perceptual_pairs = 10;
  opt.is_splits = 2;
  const auto m =
      evaluate_class_set(set.images_of_class(5), 32, 32, 3, 5, p, nullptr,
                         opt, rng);
  CHECK(m.ms_ssim == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(m.perceptual == doctest::Approx(0.0));
}

TEST_CASE("mix_sample_sets mixes deterministically without replacement") {
  const auto a = generate_dataset(spec32(1.0, 30)).images_of_class(0);
  const auto b = generate_dataset(spec32(0.0, 30)).images_of_class(0);
  Rng r1(14), r2(14);
  const MatF m1 = mix_sample_sets(a, b, 20, r1);
  const MatF m2 = mix_sample_sets(a, b, 20, r2);
  CHECK(m1 == m2);
  CHECK(m1.cols() == 40);
  Rng r3(15);
  CHECK_THROWS_AS(mix_sample_sets(a, b, 31, r3), DataError);

  // Mixing a set with itself keeps the per-pixel mean within noise.
  Rng r4(16);
  const MatF self_mix = mix_sample_sets(a, a, 20, r4);
  CHECK(std::fabs(self_mix.mean() - a.mean()) < 0.05);
}

TEST_CASE("metric report aggregates and serializes") {
  MetricReport report;
  ClassMetrics m0;
  m0.ms_ssim = 0.4;
  m0.perceptual = 0.6;
  m0.is_mean = 2.0;
  m0.accuracy = 0.9;
  m0.frechet = 10.0;
  m0.frechet_valid = true;
  m0.n_images = 100;
  ClassMetrics m1 = m0;
  m1.ms_ssim = 0.6;
  m1.frechet_valid = false;
  report.per_class[0] = m0;
  report.per_class[1] = m1;
  report.finalize_aggregate();
  CHECK(report.aggregate.ms_ssim == doctest::Approx(0.5));
  CHECK(report.aggregate.frechet == doctest::Approx(10.0));  // valid only
  const auto back = MetricReport::from_json(report.to_json());
  CHECK(back.per_class.at(1).ms_ssim == doctest::Approx(0.6));
  const std::string csv = report.to_csv();
  CHECK(csv.find("aggregate") != std::string::npos);
}
