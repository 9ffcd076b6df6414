#include <doctest.h>

#include "embsurg/image_io.hpp"
#include "embsurg/sampling.hpp"

#include <filesystem>
#include <fstream>

using namespace embsurg;

namespace {

GeneratorConfig tiny_gen_cfg() {
  GeneratorConfig cfg;
  cfg.num_classes = 4;
  cfg.embed_dim = 8;
  cfg.latent_dim = 12;
  cfg.image_size = 16;
  cfg.hidden_dim = 24;
  cfg.base_channels = 6;
  cfg.mid_channels = 5;
  cfg.late_channels = 4;
  return cfg;
}

}  // namespace

TEST_CASE("interpolation endpoints are bit-identical to direct generation") {
  const auto g = init_generator<float>(tiny_gen_cfg(), 1);
  Rng rng(2);
  InterpolationSpec spec;
  spec.kind = InterpolationSpec::Kind::Latent;
  spec.z_a = rng.normal_matrix<float>(12, 1).col(0);
  spec.z_b = rng.normal_matrix<float>(12, 1).col(0);
  spec.fixed_embedding = g.embedding.col(1);
  spec.steps = 7;
  const MatF frames = interpolate(g, spec);
  REQUIRE(frames.cols() == 7);
  CHECK(frames.col(0) ==
        generate(g, spec.fixed_embedding, MatF(spec.z_a)).col(0));
  CHECK(frames.col(6) ==
        generate(g, spec.fixed_embedding, MatF(spec.z_b)).col(0));
}

TEST_CASE("steps=2 yields exactly the endpoint generations") {
  const auto g = init_generator<float>(tiny_gen_cfg(), 3);
  Rng rng(4);
  InterpolationSpec spec;
  spec.kind = InterpolationSpec::Kind::Embedding;
  spec.c_a = g.embedding.col(0);
  spec.c_b = g.embedding.col(2);
  spec.fixed_latent = rng.normal_matrix<float>(12, 1).col(0);
  spec.steps = 2;
  const MatF frames = interpolate(g, spec);
  REQUIRE(frames.cols() == 2);
  CHECK(frames.col(0) == generate(g, spec.c_a, MatF(spec.fixed_latent)).col(0));
  CHECK(frames.col(1) == generate(g, spec.c_b, MatF(spec.fixed_latent)).col(0));
}

TEST_CASE("latent midpoint frame equals generation at the mean latent") {
  const auto g = init_generator<float>(tiny_gen_cfg(), 5);
  Rng rng(6);
  InterpolationSpec spec;
  spec.kind = InterpolationSpec::Kind::Latent;
  spec.z_a = rng.normal_matrix<float>(12, 1).col(0);
  spec.z_b = rng.normal_matrix<float>(12, 1).col(0);
  spec.fixed_embedding = g.embedding.col(3);
  spec.steps = 3;
  const MatF frames = interpolate(g, spec);
  const VecF mid = ((spec.z_a + spec.z_b) / 2.0f);
  CHECK(frames.col(1) == generate(g, spec.fixed_embedding, MatF(mid)).col(0));
}

TEST_CASE("interpolation rejects invalid specs") {
  const auto g = init_generator<float>(tiny_gen_cfg(), 7);
  InterpolationSpec spec;
  spec.steps = 1;
  CHECK_THROWS_AS(interpolate(g, spec), ConfigError);
  spec.steps = 4;  // endpoints missing
  CHECK_THROWS_AS(interpolate(g, spec), ConfigError);
}

TEST_CASE("render_grid dimensions follow the tiling arithmetic") {
  const int h = 16, w = 16, ch = 3, pad = 2;
  Rng rng(8);
  const MatF images = rng.normal_matrix<float>(ch * h * w, 64, 0.3);
  int gh = 0, gw = 0;
  const VecF grid = render_grid(images, h, w, ch, 8, 8, pad, -1.0f, &gh, &gw);
  CHECK(gh == 8 * h + 9 * pad);
  CHECK(gw == 8 * w + 9 * pad);
  CHECK(grid.size() == static_cast<Eigen::Index>(ch) * gh * gw);

  // 1x1 grid: the image itself inside a padding frame.
  int g1h = 0, g1w = 0;
  const VecF one = render_grid(images, h, w, ch, 1, 1, pad, 0.5f, &g1h, &g1w);
  CHECK(g1h == h + 2 * pad);
  CHECK(one[(0 * g1h + pad) * g1w + pad] == images(0, 0));
  CHECK(one[0] == 0.5f);  // corner is padding

  CHECK_THROWS_AS(render_grid(images, h, w, ch, 9, 9, pad, 0.0f, nullptr,
                              nullptr),
                  DataError);
}

TEST_CASE("grids render deterministically and write valid PNG bytes") {
  const int h = 16, w = 16, ch = 3;
  Rng rng(9);
  const MatF images = rng.normal_matrix<float>(ch * h * w, 4, 0.3);
  int gh = 0, gw = 0;
  const VecF grid_a = render_grid(images, h, w, ch, 2, 2, 1, -1.0f, &gh, &gw);
  const VecF grid_b = render_grid(images, h, w, ch, 2, 2, 1, -1.0f, nullptr,
                                  nullptr);
  CHECK(grid_a == grid_b);

  const auto dir = std::filesystem::temp_directory_path() / "embsurg_png";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "grid.png").string();
  write_png(path, grid_a, gh, gw, ch);
  std::ifstream f(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(f)), {});
  REQUIRE(bytes.size() > 8);
  CHECK(static_cast<unsigned char>(bytes[0]) == 0x89);
  CHECK(bytes.substr(1, 3) == "PNG");
  CHECK(bytes.find("IHDR") != std::string::npos);
  CHECK(bytes.find("IEND") != std::string::npos);

  // Same input twice produces identical bytes.
  const auto path2 = (dir / "grid2.png").string();
  write_png(path2, grid_a, gh, gw, ch);
  std::ifstream f2(path2, std::ios::binary);
  std::string bytes2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(bytes == bytes2);
}
