#include <doctest.h>

#include "embsurg/optimizer.hpp"

#include <cmath>

using namespace embsurg;

namespace {

GeneratorConfig tiny_gen_cfg() {
  GeneratorConfig cfg;
  cfg.num_classes = 6;
  cfg.embed_dim = 8;
  cfg.latent_dim = 12;
  cfg.image_size = 16;
  cfg.hidden_dim = 24;
  cfg.base_channels = 6;
  cfg.mid_channels = 5;
  cfg.late_channels = 4;
  return cfg;
}

ClassifierConfig tiny_clf_cfg() {
  ClassifierConfig cfg;
  cfg.num_classes = 6;
  cfg.image_size = 16;
  cfg.c1 = 4;
  cfg.c2 = 6;
  cfg.c3 = 8;
  return cfg;
}

OptimizationConfig quick_cfg(const GeneratorF& g, Regime regime, int y) {
  OptimizationConfig cfg = default_config(regime, y, g.embedding);
  cfg.steps = 8;
  cfg.resample_interval = 4;
  cfg.batch_size = 4;
  cfg.trials = 2;
  return cfg;
}

}  // namespace

TEST_CASE("init_embedding honors each strategy") {
  Rng seed_rng(1);
  const MatF w = seed_rng.normal_matrix<float>(8, 6);

  SUBCASE("radius zero returns the original row exactly") {
    InitSpec spec;
    spec.strategy = InitSpec::Strategy::AroundOriginal;
    spec.radius = 0.0;
    Rng rng(2);
    CHECK(init_embedding(w, 3, spec, rng) == w.col(3));
  }

  SUBCASE("around-original stays inside the ball, 1000 of 1000 draws") {
    InitSpec spec;
    spec.radius = 0.1;
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
      const VecF c = init_embedding(w, 2, spec, rng);
      CHECK((c - w.col(2)).norm() <= 0.1f + 1e-6f);
    }
  }

  SUBCASE("around-mean of identical rows recovers the row plus the ball") {
    MatF same(8, 6);
    Rng vr(4);
    const VecF v = vr.normal_matrix<float>(8, 1).col(0);
    same.colwise() = v;
    InitSpec spec;
    spec.strategy = InitSpec::Strategy::AroundMean;
    spec.radius = 0.05;
    Rng rng(5);
    const VecF c = init_embedding(same, 0, spec, rng);
    CHECK((c - v).norm() <= 0.05f + 1e-6f);
  }

  SUBCASE("top-k picks the k-th ranked row and requires a ranking") {
    std::vector<RankedClass> ranking{{4, 0.9}, {1, 0.5}, {0, 0.2}};
    InitSpec spec;
    spec.strategy = InitSpec::Strategy::TopK;
    spec.k = 2;
    Rng rng(6);
    CHECK(init_embedding(w, 0, spec, rng, &ranking) == w.col(1));
    CHECK_THROWS_AS(init_embedding(w, 0, spec, rng), ConfigError);
    spec.k = 9;
    CHECK_THROWS_AS(init_embedding(w, 0, spec, rng, &ranking), ConfigError);
  }

  SUBCASE("explicit returns the vector verbatim") {
    InitSpec spec;
    spec.strategy = InitSpec::Strategy::Explicit;
    spec.explicit_embedding = VecF::Ones(8);
    Rng rng(7);
    CHECK(init_embedding(w, 0, spec, rng) == VecF::Ones(8));
  }

  SUBCASE("gaussian-ball override also respects the radius") {
    InitSpec spec;
    spec.radius = 0.1;
    spec.gaussian_ball = true;
    Rng rng(8);
    for (int i = 0; i < 200; ++i) {
      const VecF c = init_embedding(w, 1, spec, rng);
      CHECK((c - w.col(1)).norm() <= 0.1f + 1e-6f);
    }
  }
}

TEST_CASE("compute_clip_bounds covers the matrix") {
  MatF w(2, 3);
  w << -0.2f, 0.1f, 0.3f, 0.0f, -0.1f, 0.25f;
  const auto b0 = compute_clip_bounds(w);
  CHECK(b0[0] == doctest::Approx(-0.2));
  CHECK(b0[1] == doctest::Approx(0.3));
  const auto b1 = compute_clip_bounds(w, 0.05);
  CHECK(b1[0] == doctest::Approx(-0.25));
  CHECK(b1[1] == doctest::Approx(0.35));
}

TEST_CASE("regime defaults follow the small/large split") {
  Rng rng(9);
  const MatF w = rng.normal_matrix<float>(8, 6);
  const auto s = default_config(Regime::AmS, 1, w);
  CHECK(s.learning_rate == doctest::Approx(0.01));
  CHECK(s.init.strategy == InitSpec::Strategy::AroundOriginal);
  CHECK(s.objective.lambda == 0.0);
  const auto l = default_config(Regime::AmL, 1, w);
  CHECK(l.learning_rate == doctest::Approx(0.1));
  CHECK(l.init.strategy == InitSpec::Strategy::AroundMean);
  const auto dl = default_config(Regime::AmDL, 1, w);
  CHECK(dl.objective.lambda == doctest::Approx(2.0));
  CHECK(dl.objective.phi == FeatureTap::Softmax);
  CHECK(dl.steps == 200);
  CHECK(dl.resample_interval == 20);
  CHECK(dl.batch_size == 20);
  CHECK(dl.trials == 5);
  CHECK(dl.objective.num_pairs == 10);
}

TEST_CASE("steps=0 returns the init embedding with an empty trace") {
  const auto g = init_generator<float>(tiny_gen_cfg(), 10);
  const auto p = init_classifier<float>(tiny_clf_cfg(), 11);
  auto cfg = quick_cfg(g, Regime::AmS, 2);
  cfg.steps = 0;
  const auto r = optimize_embedding(g, p, 2, cfg, 123);
  CHECK(r.final_embedding == r.init_embedding);
  CHECK(r.trace.cols() == 0);
}

TEST_CASE("zero learning rate clips the init and leaves a flat trace") {
  const auto g = init_generator<float>(tiny_gen_cfg(), 10);
  const auto p = init_classifier<float>(tiny_clf_cfg(), 11);
  auto cfg = quick_cfg(g, Regime::AmS, 1);
  cfg.learning_rate = 0.0;
  cfg.steps = cfg.resample_interval;  // one latent window: flat trace
  // Tight bounds so clipping is visible.
  cfg.clip_bounds = {-0.05, 0.05};
  const auto r = optimize_embedding(g, p, 1, cfg, 55);
  const VecF expected =
      r.init_embedding.cwiseMax(-0.05f).cwiseMin(0.05f);
  CHECK(r.final_embedding == expected);
  for (Eigen::Index s = 1; s < r.trace.cols(); ++s) {
    CHECK(r.trace(0, s) == doctest::Approx(r.trace(0, 0)).epsilon(1e-10));
  }
}

TEST_CASE("every step respects the clip bounds") {
  const auto g = init_generator<float>(tiny_gen_cfg(), 12);
  const auto p = init_classifier<float>(tiny_clf_cfg(), 13);
  auto cfg = quick_cfg(g, Regime::AmL, 0);
  cfg.steps = 12;
  cfg.clip_bounds = {-0.2, 0.2};
  int observed = 0;
  const auto r = optimize_embedding(
      g, p, 0, cfg, 77, nullptr,
      [&](int, const VecF& c) {
        ++observed;
        CHECK(c.minCoeff() >= -0.2f - 1e-7f);
        CHECK(c.maxCoeff() <= 0.2f + 1e-7f);
      });
  CHECK(observed == 12);
  CHECK(r.final_embedding.minCoeff() >= -0.2f - 1e-7f);
  CHECK(r.final_embedding.maxCoeff() <= 0.2f + 1e-7f);
}

TEST_CASE("published clip bounds can be pinned verbatim") {
  const auto g = init_generator<float>(tiny_gen_cfg(), 14);
  const auto p = init_classifier<float>(tiny_clf_cfg(), 15);
  auto cfg = quick_cfg(g, Regime::AmL, 3);
  cfg.clip_bounds = {-0.59, 0.61};
  const auto r = optimize_embedding(g, p, 3, cfg, 81);
  CHECK(r.final_embedding.minCoeff() >= -0.59f - 1e-6f);
  CHECK(r.final_embedding.maxCoeff() <= 0.61f + 1e-6f);
}

TEST_CASE("run_trials is deterministic with distinct per-trial results") {
  const auto g = init_generator<float>(tiny_gen_cfg(), 16);
  const auto p = init_classifier<float>(tiny_clf_cfg(), 17);
  auto cfg = quick_cfg(g, Regime::AmL, 4);
  cfg.trials = 5;
  const auto a = run_trials(g, p, 4, cfg);
  const auto b = run_trials(g, p, 4, cfg);
  REQUIRE(a.size() == 5);
  for (std::size_t t = 0; t < 5; ++t) {
    CHECK(a[t].final_embedding == b[t].final_embedding);
    CHECK(a[t].trace == b[t].trace);
    CHECK(a[t].seed == (cfg.seed ^ static_cast<std::uint64_t>(t)));
  }
  // Distinct initializations and at least one pair of distinct results.
  bool any_diff = false;
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = i + 1; j < 5; ++j) {
      CHECK(a[i].init_embedding != a[j].init_embedding);
      if (a[i].final_embedding != a[j].final_embedding) any_diff = true;
    }
  }
  CHECK(any_diff);
}

TEST_CASE("select_trial applies rules and tie-breaks by index") {
  std::vector<TrialResult> results(3);
  for (auto& r : results) r.metrics = ClassMetrics{};
  results[0].metrics->perceptual = 0.3;
  results[1].metrics->perceptual = 0.5;
  results[2].metrics->perceptual = 0.5;
  results[0].metrics->accuracy = 0.9;
  results[1].metrics->accuracy = 0.1;
  results[2].metrics->accuracy = 0.4;

  const auto& best_p =
      select_trial(results, {SelectRule::Kind::BestPerceptual, 0});
  CHECK(&best_p == &results[1]);  // tie with index 2 broken downward
  const auto& best_a =
      select_trial(results, {SelectRule::Kind::BestAccuracy, 0});
  CHECK(&best_a == &results[0]);
  const auto& by_index = select_trial(results, {SelectRule::Kind::Index, 2});
  CHECK(&by_index == &results[2]);

  std::vector<TrialResult> single(1);
  single[0].metrics = ClassMetrics{};
  CHECK(&select_trial(single, {SelectRule::Kind::BestPerceptual, 0}) ==
        &single[0]);

  std::vector<TrialResult> missing(2);
  CHECK_THROWS_AS(select_trial(missing, {SelectRule::Kind::BestPerceptual, 0}),
                  StateError);
  CHECK_THROWS_AS(select_trial({}, {SelectRule::Kind::BestPerceptual, 0}),
                  std::invalid_argument);
}

TEST_CASE("trial results round-trip through containers") {
  const auto g = init_generator<float>(tiny_gen_cfg(), 18);
  const auto p = init_classifier<float>(tiny_clf_cfg(), 19);
  auto cfg = quick_cfg(g, Regime::AmS, 5);
  const auto r = optimize_embedding(g, p, 5, cfg, 99);
  Container c = trial_to_container(r);
  const auto back = trial_from_container(c);
  CHECK(back.final_embedding == r.final_embedding);
  CHECK(back.init_embedding == r.init_embedding);
  CHECK(back.trace.cols() == r.trace.cols());
  CHECK(back.seed == r.seed);
  const std::string csv = trace_to_csv(r);
  CHECK(csv.rfind("step,L_total,L_AM,L_D\n", 0) == 0);
}
