#include "embsurg/synthdata.hpp"

#include "embsurg/rng.hpp"

#include <algorithm>
#include <cmath>

namespace embsurg {
namespace {

struct Color {
  float r, g, b;
};

Color hsv_to_rgb(float h, float s, float v) {
  h = h - std::floor(h);
  const float c = v * s;
  const float hp = h * 6.0f;
  const float x = c * (1.0f - std::fabs(std::fmod(hp, 2.0f) - 1.0f));
  float r = 0, g = 0, b = 0;
  if (hp < 1)      { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else             { r = c; b = x; }
  const float m = v - c;
  return {r + m, g + m, b + m};
}

float clampf(float x, float lo, float hi) {
  return std::min(std::max(x, lo), hi);
}

// Signed distance functions; p is relative to the shape center in units of
// image width, r is the shape radius in the same units.

float sd_circle(float px, float py, float r) {
  return std::sqrt(px * px + py * py) - r;
}

float sd_square(float px, float py, float r) {
  return std::max(std::fabs(px), std::fabs(py)) - r;
}

float sd_triangle(float px, float py, float r) {
  const float k = std::sqrt(3.0f);
  float x = std::fabs(px) - r;
  float y = -py + r / k;  // image y grows downward; flip so the apex is up
  if (x + k * y > 0.0f) {
    const float nx = (x - k * y) * 0.5f;
    const float ny = (-k * x - y) * 0.5f;
    x = nx;
    y = ny;
  }
  x -= clampf(x, -2.0f * r, 0.0f);
  const float len = std::sqrt(x * x + y * y);
  return (y < 0.0f ? 1.0f : -1.0f) * len;
}

float sd_box(float px, float py, float hx, float hy) {
  return std::max(std::fabs(px) - hx, std::fabs(py) - hy);
}

float sd_cross(float px, float py, float r) {
  const float arm = 0.34f * r;
  return std::min(sd_box(px, py, r, arm), sd_box(px, py, arm, r));
}

float sd_ring(float px, float py, float r) {
  return std::fabs(sd_circle(px, py, 0.78f * r)) - 0.26f * r;
}

float sd_diamond(float px, float py, float r) {
  return (std::fabs(px) + std::fabs(py) - r) * 0.7071f;
}

float sd_hexagon(float px, float py, float r) {
  const float kx = -0.866025404f, ky = 0.5f, kz = 0.577350269f;
  float x = std::fabs(px), y = std::fabs(py);
  const float d = 2.0f * std::min(kx * x + ky * y, 0.0f);
  x -= d * kx;
  y -= d * ky;
  x -= clampf(x, -kz * r, kz * r);
  y -= r;
  const float len = std::sqrt(x * x + y * y);
  return (y < 0.0f ? -1.0f : 1.0f) * len;
}

float sd_crescent(float px, float py, float r) {
  const float outer = sd_circle(px, py, r);
  const float hole = sd_circle(px - 0.5f * r, py, 0.85f * r);
  return std::max(outer, -hole);
}

float sd_two_dots(float px, float py, float r) {
  return std::min(sd_circle(px - 0.55f * r, py, 0.42f * r),
                  sd_circle(px + 0.55f * r, py, 0.42f * r));
}

float sd_frame(float px, float py, float r) {
  return std::fabs(sd_square(px, py, 0.76f * r)) - 0.24f * r;
}

using SdfFn = float (*)(float, float, float);

constexpr int kShapesPerDomain = 5;
constexpr SdfFn kShapesA[kShapesPerDomain] = {sd_circle, sd_square,
                                              sd_triangle, sd_cross, sd_ring};
constexpr SdfFn kShapesB[kShapesPerDomain] = {sd_diamond, sd_hexagon,
                                              sd_crescent, sd_two_dots,
                                              sd_frame};

struct ClassStyle {
  SdfFn sdf;
  float base_hue;
  float base_scale;
};

ClassStyle class_style(const DatasetSpec& spec, int y) {
  ClassStyle s;
  const bool domain_b = spec.domain_id == 'B';
  s.sdf = domain_b ? kShapesB[y % kShapesPerDomain]
                   : kShapesA[y % kShapesPerDomain];
  // Golden-ratio hue spacing keeps classes separable even when shapes cycle.
  s.base_hue = static_cast<float>(
      std::fmod(0.08 + 0.6180339887498949 * y + (domain_b ? 0.31 : 0.0), 1.0));
  const int cycle = y / kShapesPerDomain;
  s.base_scale = 0.33f * std::pow(0.72f, static_cast<float>(cycle));
  s.base_scale = std::max(s.base_scale, 0.12f);
  return s;
}

struct SampleParams {
  float dx, dy;
  float scale;
  float hue;
  float bg_hue;
};

SampleParams draw_sample_params(const ClassStyle& style, double knob,
                                Rng& rng) {
  // Fixed draw order keeps the dataset a pure function of the spec.
  SampleParams p;
  const double k = knob;
  p.dx = static_cast<float>(rng.uniform(-0.13, 0.13) * k);
  p.dy = static_cast<float>(rng.uniform(-0.13, 0.13) * k);
  p.scale = style.base_scale *
            static_cast<float>(1.0 + rng.uniform(-0.30, 0.22) * k);
  p.hue = style.base_hue + static_cast<float>(rng.uniform(-0.025, 0.025) * k);
  p.bg_hue = style.base_hue + 0.5f +
             static_cast<float>(rng.uniform(-0.10, 0.10) * k);
  return p;
}

void render_sample(const DatasetSpec& spec, const ClassStyle& style,
                   const SampleParams& p, float* dst) {
  const int s = spec.image_size;
  const float inv = 1.0f / static_cast<float>(s);
  const Color fg = hsv_to_rgb(p.hue, 0.85f, 0.95f);
  const Color bg_lo = hsv_to_rgb(p.bg_hue, 0.45f, 0.32f);
  const Color bg_hi = hsv_to_rgb(p.bg_hue + 0.06f, 0.50f, 0.62f);
  const float aa = 0.75f * inv;  // anti-aliasing half-width
  const bool stripes = spec.domain_id == 'B';
  const float cx = 0.5f + p.dx;
  const float cy = 0.5f + p.dy;

  const int plane = s * s;
  for (int y = 0; y < s; ++y) {
    const float fy = (static_cast<float>(y) + 0.5f) * inv;
    for (int x = 0; x < s; ++x) {
      const float fx = (static_cast<float>(x) + 0.5f) * inv;
      // Background: domain A uses a vertical gradient, domain B diagonal
      // stripes, so the two domains are visually distinct everywhere.
      float t;
      if (stripes) {
        const float stripe = (fx + fy) * 5.0f;
        t = 0.5f + 0.5f * std::sin(stripe * 6.2831853f);
      } else {
        t = fy;
      }
      Color c{bg_lo.r + (bg_hi.r - bg_lo.r) * t,
              bg_lo.g + (bg_hi.g - bg_lo.g) * t,
              bg_lo.b + (bg_hi.b - bg_lo.b) * t};
      const float d = style.sdf(fx - cx, fy - cy, p.scale);
      const float alpha = clampf(0.5f - d / (2.0f * aa), 0.0f, 1.0f);
      c.r += (fg.r - c.r) * alpha;
      c.g += (fg.g - c.g) * alpha;
      c.b += (fg.b - c.b) * alpha;
      const int idx = y * s + x;
      dst[idx] = 2.0f * c.r - 1.0f;
      dst[plane + idx] = 2.0f * c.g - 1.0f;
      dst[2 * plane + idx] = 2.0f * c.b - 1.0f;
    }
  }
}

void validate_spec(const DatasetSpec& spec) {
  if (spec.domain_id != 'A' && spec.domain_id != 'B')
    throw ConfigError("dataset spec: domain_id must be 'A' or 'B'");
  if (spec.num_classes < 2)
    throw ConfigError("dataset spec: num_classes must be >= 2");
  if (spec.image_size < 8)
    throw ConfigError("dataset spec: image_size must be >= 8");
  if (spec.channels != 3)
    throw ConfigError("dataset spec: channels must be 3");
  if (spec.diversity_knob < 0.0 || spec.diversity_knob > 1.0)
    throw ConfigError("dataset spec: diversity_knob must be in [0, 1]");
  if (spec.samples_per_class < 1)
    throw ConfigError("dataset spec: samples_per_class must be >= 1");
}

}  // namespace

nlohmann::json DatasetSpec::to_json() const {
  return {{"domain_id", std::string(1, domain_id)},
          {"num_classes", num_classes},
          {"image_size", image_size},
          {"channels", channels},
          {"diversity_knob", diversity_knob},
          {"samples_per_class", samples_per_class},
          {"seed", seed}};
}

DatasetSpec DatasetSpec::from_json(const nlohmann::json& j) {
  DatasetSpec s;
  s.domain_id = j.at("domain_id").get<std::string>().at(0);
  s.num_classes = j.at("num_classes").get<int>();
  s.image_size = j.at("image_size").get<int>();
  s.channels = j.at("channels").get<int>();
  s.diversity_knob = j.at("diversity_knob").get<double>();
  s.samples_per_class = j.at("samples_per_class").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

MatF LabeledImageSet::images_of_class(int y) const {
  Eigen::Index count = 0;
  for (Eigen::Index i = 0; i < labels.size(); ++i)
    if (labels[i] == y) ++count;
  MatF out(images.rows(), count);
  Eigen::Index j = 0;
  for (Eigen::Index i = 0; i < labels.size(); ++i)
    if (labels[i] == y) out.col(j++) = images.col(i);
  return out;
}

LabeledImageSet generate_dataset(const DatasetSpec& spec) {
  validate_spec(spec);
  const int k = spec.num_classes;
  const int n = spec.samples_per_class;
  const int dim = spec.channels * spec.image_size * spec.image_size;

  LabeledImageSet set;
  set.spec = spec;
  set.images.resize(dim, static_cast<Eigen::Index>(k) * n);
  set.labels.resize(static_cast<Eigen::Index>(k) * n);

  for (int y = 0; y < k; ++y) {
    const ClassStyle style = class_style(spec, y);
    Rng rng(derive_seed(spec.seed,
                        std::string("synthdata.") + spec.domain_id + ".class",
                        static_cast<std::uint64_t>(y)));
    for (int i = 0; i < n; ++i) {
      const SampleParams p =
          draw_sample_params(style, spec.diversity_knob, rng);
      const Eigen::Index col = static_cast<Eigen::Index>(y) * n + i;
      render_sample(spec, style, p, set.images.col(col).data());
      set.labels[col] = y;
    }
  }
  return set;
}

VecF render_canonical_image(const DatasetSpec& spec, int y) {
  validate_spec(spec);
  if (y < 0 || y >= spec.num_classes)
    throw ConfigError("render_canonical_image: class index out of range");
  const ClassStyle style = class_style(spec, y);
  Rng rng(derive_seed(spec.seed,
                      std::string("synthdata.") + spec.domain_id + ".class",
                      static_cast<std::uint64_t>(y)));
  const SampleParams p = draw_sample_params(style, 0.0, rng);
  VecF img(spec.channels * spec.image_size * spec.image_size);
  render_sample(spec, style, p, img.data());
  return img;
}

Container dataset_to_container(const LabeledImageSet& set) {
  Container c;
  c.type = "dataset";
  c.seed = set.spec.seed;
  c.provenance["spec"] = set.spec.to_json();
  c.add("images", set.images,
        {set.labels.size(), set.spec.channels, set.spec.image_size,
         set.spec.image_size});
  c.add("labels", set.labels);
  return c;
}

LabeledImageSet dataset_from_container(const Container& c) {
  if (c.type != "dataset")
    throw IntegrityError("container is not a dataset (type '" + c.type + "')");
  LabeledImageSet set;
  set.spec = DatasetSpec::from_json(c.provenance.at("spec"));
  const MatF& raw = c.floats("images");
  const Eigen::Index n = c.shape("images").at(0);
  const Eigen::Index dim =
      static_cast<Eigen::Index>(set.spec.channels) * set.spec.image_size *
      set.spec.image_size;
  if (raw.size() != n * dim)
    throw IntegrityError("dataset image payload has unexpected size");
  set.images = Eigen::Map<const MatF>(raw.data(), dim, n);
  set.labels = c.ints("labels");
  if (set.labels.size() != n)
    throw IntegrityError("dataset labels do not match image count");
  return set;
}

}  // namespace embsurg
