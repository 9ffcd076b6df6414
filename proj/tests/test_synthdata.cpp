#include <doctest.h>

#include "embsurg/rng.hpp"
#include "embsurg/synthdata.hpp"

#include <cmath>

using namespace embsurg;

namespace {

DatasetSpec base_spec() {
  DatasetSpec s;
  s.domain_id = 'A';
  s.num_classes = 10;
  s.image_size = 32;
  s.samples_per_class = 4;
  s.diversity_knob = 0.0;
  s.seed = 7;
  return s;
}

double mean_pairwise_pixel_distance(const MatF& imgs, int pairs, Rng& rng) {
  double acc = 0.0;
  for (int k = 0; k < pairs; ++k) {
    const auto i = static_cast<Eigen::Index>(
        rng.below(static_cast<std::uint64_t>(imgs.cols())));
    const auto j = static_cast<Eigen::Index>(
        rng.below(static_cast<std::uint64_t>(imgs.cols())));
    acc += (imgs.col(i) - imgs.col(j)).norm();
  }
  return acc / pairs;
}

}  // namespace

TEST_CASE("knob=0 renders one canonical image per class") {
  const auto set = generate_dataset(base_spec());
  REQUIRE(set.size() == 40);
  for (int y = 0; y < 10; ++y) {
    const MatF imgs = set.images_of_class(y);
    REQUIRE(imgs.cols() == 4);
    for (int i = 1; i < 4; ++i) CHECK(imgs.col(i) == imgs.col(0));
  }
}

TEST_CASE("equal specs produce bit-identical datasets") {
  DatasetSpec s = base_spec();
  s.diversity_knob = 1.0;
  s.samples_per_class = 50;
  const auto a = generate_dataset(s);
  const auto b = generate_dataset(s);
  CHECK(a.images == b.images);
  CHECK(a.labels == b.labels);
}

TEST_CASE("pixel range and labels respect the contract") {
  DatasetSpec s = base_spec();
  s.diversity_knob = 1.0;
  s.samples_per_class = 20;
  const auto set = generate_dataset(s);
  CHECK(set.images.minCoeff() >= -1.0f);
  CHECK(set.images.maxCoeff() <= 1.0f);
  for (Eigen::Index i = 0; i < set.labels.size(); ++i) {
    CHECK(set.labels[i] >= 0);
    CHECK(set.labels[i] < s.num_classes);
  }
}

TEST_CASE("intra-class pixel distance grows with the diversity knob") {
  double prev = -1.0;
  for (const double knob : {0.0, 0.5, 1.0}) {
    DatasetSpec s = base_spec();
    s.diversity_knob = knob;
    s.samples_per_class = 40;
    const auto set = generate_dataset(s);
    Rng rng(123);
    double mean_dist = 0.0;
    for (int y = 0; y < s.num_classes; ++y) {
      mean_dist +=
          mean_pairwise_pixel_distance(set.images_of_class(y), 100, rng);
    }
    mean_dist /= s.num_classes;
    CHECK(mean_dist > prev);
    prev = mean_dist;
  }
}

TEST_CASE("knob=1 is strictly more spread than knob=0.2") {
  DatasetSpec lo = base_spec(), hi = base_spec();
  lo.diversity_knob = 0.2;
  hi.diversity_knob = 1.0;
  lo.samples_per_class = hi.samples_per_class = 60;
  const auto a = generate_dataset(lo);
  const auto b = generate_dataset(hi);
  Rng ra(9), rb(9);
  double da = 0.0, db = 0.0;
  for (int y = 0; y < lo.num_classes; ++y) {
    da += mean_pairwise_pixel_distance(a.images_of_class(y), 100, ra);
    db += mean_pairwise_pixel_distance(b.images_of_class(y), 100, rb);
  }
  CHECK(db > da);
}

TEST_CASE("domains render distinct images for the same class index") {
  DatasetSpec a = base_spec();
  DatasetSpec b = base_spec();
  b.domain_id = 'B';
  const auto da = generate_dataset(a);
  const auto db = generate_dataset(b);
  for (int y = 0; y < a.num_classes; ++y) {
    const VecF ia = da.images_of_class(y).col(0);
    const VecF ib = db.images_of_class(y).col(0);
    CHECK((ia - ib).norm() > 1.0f);
  }
}

TEST_CASE("invalid specs name the offending field") {
  DatasetSpec s = base_spec();
  s.num_classes = 1;
  try {
    generate_dataset(s);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("num_classes") != std::string::npos);
  }
  s = base_spec();
  s.image_size = 4;
  CHECK_THROWS_AS(generate_dataset(s), ConfigError);
  s = base_spec();
  s.diversity_knob = 1.5;
  CHECK_THROWS_AS(generate_dataset(s), ConfigError);
}

TEST_CASE("datasets survive the container round trip") {
  DatasetSpec s = base_spec();
  s.diversity_knob = 1.0;
  s.samples_per_class = 6;
  const auto set = generate_dataset(s);
  const Container c = dataset_to_container(set);
  const auto back = dataset_from_container(c);
  CHECK(back.images == set.images);
  CHECK(back.labels == set.labels);
  CHECK(back.spec.seed == s.seed);
  CHECK(back.spec.diversity_knob == s.diversity_knob);
}
