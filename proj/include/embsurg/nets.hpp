#pragma once

// Desk-scale frozen artifacts: a conditional generator with a class
// embedding matrix, a classifier with named feature taps, and a projection
// discriminator, plus the training loops that produce them and the
// deterministic mode-collapse injection used by the repair experiments.
//
// Checkpoints are immutable after construction; all forward/backward state
// lives in caller-owned activation structs, so inference is safe to run
// concurrently on shared checkpoints.

#include "embsurg/container.hpp"
#include "embsurg/core.hpp"
#include "embsurg/layers.hpp"
#include "embsurg/rng.hpp"
#include "embsurg/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <type_traits>
#include <map>
#include <string>
#include <vector>

namespace embsurg {

inline constexpr int kCheckpointVersion = 1;
inline constexpr Eigen::Index kInferenceChunk = 128;

// ------------------------------------------------------------- generator --

struct GeneratorConfig {
  int num_classes = 10;
  int embed_dim = 16;
  int latent_dim = 32;
  int image_size = 32;  // must be divisible by 4
  int channels = 3;
  int hidden_dim = 128;
  int base_channels = 16;
  int mid_channels = 12;
  int late_channels = 8;

  int seed_size() const { return image_size / 4; }
  int image_dim() const { return channels * image_size * image_size; }

  nlohmann::json to_json() const {
    return {{"num_classes", num_classes},   {"embed_dim", embed_dim},
            {"latent_dim", latent_dim},     {"image_size", image_size},
            {"channels", channels},         {"hidden_dim", hidden_dim},
            {"base_channels", base_channels}, {"mid_channels", mid_channels},
            {"late_channels", late_channels}};
  }
  static GeneratorConfig from_json(const nlohmann::json& j) {
    GeneratorConfig c;
    c.num_classes = j.at("num_classes");
    c.embed_dim = j.at("embed_dim");
    c.latent_dim = j.at("latent_dim");
    c.image_size = j.at("image_size");
    c.channels = j.at("channels");
    c.hidden_dim = j.at("hidden_dim");
    c.base_channels = j.at("base_channels");
    c.mid_channels = j.at("mid_channels");
    c.late_channels = j.at("late_channels");
    return c;
  }
};

// MLP on [c; z] followed by an upsampled conv head ending in tanh.
template <class T>
struct GeneratorCheckpoint {
  GeneratorConfig cfg;
  int version = kCheckpointVersion;
  Mat<T> embedding;  // [embed_dim, num_classes]; column y is class y's vector
  Dense<T> fc1, fc2;
  Conv3x3<T> conv1, conv2, conv3;

  template <class Self, class F>
  static void visit_impl(Self& self, F&& f) {
    f("embedding", self.embedding);
    f("fc1.w", self.fc1.w);
    f("fc1.b", self.fc1.b);
    f("fc2.w", self.fc2.w);
    f("fc2.b", self.fc2.b);
    f("conv1.w", self.conv1.w);
    f("conv1.b", self.conv1.b);
    f("conv2.w", self.conv2.w);
    f("conv2.b", self.conv2.b);
    f("conv3.w", self.conv3.w);
    f("conv3.b", self.conv3.b);
  }
  template <class F> void visit_params(F&& f) { visit_impl(*this, f); }
  template <class F> void visit_params(F&& f) const { visit_impl(*this, f); }

  // Checksum of the frozen body (everything except the embedding matrix).
  std::uint64_t body_checksum() const {
    std::uint64_t h = kFnvOffset;
    visit_params([&](const char* name, const Mat<T>& m) {
      if (std::string_view(name) == "embedding") return;
      h = fnv1a64(name, h);
      h = checksum(m, h);
    });
    return h;
  }
  std::uint64_t full_checksum() const {
    std::uint64_t h = kFnvOffset;
    visit_params([&](const char* name, const Mat<T>& m) {
      h = fnv1a64(name, h);
      h = checksum(m, h);
    });
    return h;
  }
};

template <class T>
struct GeneratorActs {
  Mat<T> input;                  // [embed_dim + latent_dim, n]
  Mat<T> h1pre, h1, h2pre, h2;   // dense stages
  Mat<T> up1, col1, c1pre, c1;   // conv at 2*s0
  Mat<T> up2, col2, c2pre, c2;   // conv at image_size
  Mat<T> col3, c3pre, out;       // output conv + tanh
};

template <class T>
GeneratorCheckpoint<T> init_generator(const GeneratorConfig& cfg,
                                      std::uint64_t seed) {
  if (cfg.image_size % 4 != 0 || cfg.image_size < 8)
    throw ConfigError("generator config: image_size must be a multiple of 4");
  GeneratorCheckpoint<T> g;
  g.cfg = cfg;
  const int s0 = cfg.seed_size();
  g.embedding.resize(cfg.embed_dim, cfg.num_classes);
  g.fc1.w.resize(cfg.hidden_dim, cfg.embed_dim + cfg.latent_dim);
  g.fc1.b = Mat<T>::Zero(cfg.hidden_dim, 1);
  g.fc2.w.resize(cfg.base_channels * s0 * s0, cfg.hidden_dim);
  g.fc2.b = Mat<T>::Zero(cfg.base_channels * s0 * s0, 1);
  g.conv1 = {cfg.base_channels, cfg.mid_channels,
             Mat<T>(cfg.mid_channels, cfg.base_channels * 9),
             Mat<T>::Zero(cfg.mid_channels, 1)};
  g.conv2 = {cfg.mid_channels, cfg.late_channels,
             Mat<T>(cfg.late_channels, cfg.mid_channels * 9),
             Mat<T>::Zero(cfg.late_channels, 1)};
  g.conv3 = {cfg.late_channels, cfg.channels,
             Mat<T>(cfg.channels, cfg.late_channels * 9),
             Mat<T>::Zero(cfg.channels, 1)};
  g.visit_params([&](const char* name, Mat<T>& m) {
    Rng rng(derive_seed(seed, std::string("init.g.") + name));
    if (std::string_view(name) == "embedding") {
      rng.fill_normal(m, 0.3);
    } else if (std::string_view(name).ends_with(".w")) {
      rng.fill_normal(m, std::sqrt(2.0 / static_cast<double>(m.cols())));
    }
  });
  return g;
}

template <class T>
GeneratorCheckpoint<T> zeros_like(const GeneratorCheckpoint<T>& g) {
  GeneratorCheckpoint<T> z = g;
  z.visit_params([](const char*, Mat<T>& m) { m.setZero(); });
  return z;
}

// Raw forward pass on an assembled [c; z] input batch.
template <class T>
Mat<T> generator_forward(const GeneratorCheckpoint<T>& g, Mat<T> input,
                         std::type_identity_t<GeneratorActs<T>>* acts) {
  const auto& cfg = g.cfg;
  const int s0 = cfg.seed_size();
  GeneratorActs<T> local;
  GeneratorActs<T>& a = acts ? *acts : local;
  a.input = std::move(input);
  a.h1pre = dense_fwd(g.fc1, a.input);
  a.h1 = gelu(a.h1pre);
  a.h2pre = dense_fwd(g.fc2, a.h1);
  a.h2 = gelu(a.h2pre);
  a.up1 = upsample2_fwd(a.h2, cfg.base_channels, s0, s0);
  a.c1pre = conv_fwd(g.conv1, a.up1, 2 * s0, 2 * s0, &a.col1);
  a.c1 = gelu(a.c1pre);
  a.up2 = upsample2_fwd(a.c1, cfg.mid_channels, 2 * s0, 2 * s0);
  a.c2pre = conv_fwd(g.conv2, a.up2, cfg.image_size, cfg.image_size, &a.col2);
  a.c2 = gelu(a.c2pre);
  a.c3pre = conv_fwd(g.conv3, a.c2, cfg.image_size, cfg.image_size, &a.col3);
  a.out = tanh_fwd(a.c3pre);
  return a.out;
}

// Backward pass; returns d(loss)/d(input) when want_dinput. Parameter
// gradients (excluding the embedding, which the caller owns) accumulate
// into *grads when non-null.
template <class T>
Mat<T> generator_backward(const GeneratorCheckpoint<T>& g,
                          const std::type_identity_t<GeneratorActs<T>>& a,
                          const std::type_identity_t<Mat<T>>& dout,
                          std::type_identity_t<GeneratorCheckpoint<T>>* grads,
                          bool want_dinput = true) {
  const auto& cfg = g.cfg;
  const int s0 = cfg.seed_size();
  const int s = cfg.image_size;
  Mat<T> d = tanh_bwd(a.out, dout);
  d = conv_bwd(g.conv3, a.col3, d, s, s, grads ? &grads->conv3 : nullptr);
  d = gelu_bwd(a.c2pre, std::move(d));
  d = conv_bwd(g.conv2, a.col2, d, s, s, grads ? &grads->conv2 : nullptr);
  d = upsample2_bwd(d, cfg.mid_channels, 2 * s0, 2 * s0);
  d = gelu_bwd(a.c1pre, std::move(d));
  d = conv_bwd(g.conv1, a.col1, d, 2 * s0, 2 * s0,
               grads ? &grads->conv1 : nullptr);
  d = upsample2_bwd(d, cfg.base_channels, s0, s0);
  d = gelu_bwd(a.h2pre, std::move(d));
  d = dense_bwd(g.fc2, a.h1, d, grads ? &grads->fc2 : nullptr);
  d = gelu_bwd(a.h1pre, std::move(d));
  return dense_bwd(g.fc1, a.input, d, grads ? &grads->fc1 : nullptr,
                   want_dinput);
}

template <class T>
Mat<T> assemble_generator_input(const GeneratorCheckpoint<T>& g,
                                const Vec<T>& c, const Mat<T>& z) {
  if (c.size() != g.cfg.embed_dim)
    throw ShapeError("generate: embedding has " + std::to_string(c.size()) +
                     " entries, expected " + std::to_string(g.cfg.embed_dim));
  if (z.rows() != g.cfg.latent_dim)
    throw ShapeError("generate: latent batch has " + std::to_string(z.rows()) +
                     " rows, expected " + std::to_string(g.cfg.latent_dim));
  if (!z.allFinite())
    throw std::invalid_argument("generate: latent batch contains non-finite values");
  Mat<T> input(g.cfg.embed_dim + g.cfg.latent_dim, z.cols());
  input.topRows(g.cfg.embed_dim).colwise() = c;
  input.bottomRows(g.cfg.latent_dim) = z;
  return input;
}

// Deterministic batched image synthesis for one embedding vector.
// Outputs lie in [-1, 1]; processed in chunks so arbitrarily large Z works.
template <class T>
Mat<T> generate(const GeneratorCheckpoint<T>& g, const Vec<T>& c,
                const Mat<T>& z) {
  Mat<T> input = assemble_generator_input(g, c, z);
  const Eigen::Index n = z.cols();
  if (n == 0) return Mat<T>(g.cfg.image_dim(), 0);
  Mat<T> out(g.cfg.image_dim(), n);
  for (Eigen::Index start = 0; start < n; start += kInferenceChunk) {
    const Eigen::Index len = std::min(kInferenceChunk, n - start);
    out.middleCols(start, len) =
        generator_forward(g, Mat<T>(input.middleCols(start, len)), nullptr);
  }
  return out;
}

template <class T>
Mat<T> generate_class(const GeneratorCheckpoint<T>& g, int y, const Mat<T>& z) {
  if (y < 0 || y >= g.cfg.num_classes)
    throw ShapeError("generate_class: class index out of range");
  return generate(g, Vec<T>(g.embedding.col(y)), z);
}

// ------------------------------------------------------------ classifier --

enum class FeatureTap { Pixel, MidLayer, Softmax };

inline FeatureTap parse_tap(const std::string& s) {
  if (s == "pixel") return FeatureTap::Pixel;
  if (s == "midlayer") return FeatureTap::MidLayer;
  if (s == "softmax") return FeatureTap::Softmax;
  throw ConfigError("unknown feature tap '" + s +
                    "' (expected pixel|midlayer|softmax)");
}

inline const char* tap_name(FeatureTap t) {
  switch (t) {
    case FeatureTap::Pixel: return "pixel";
    case FeatureTap::MidLayer: return "midlayer";
    case FeatureTap::Softmax: return "softmax";
  }
  return "?";
}

struct ClassifierConfig {
  int num_classes = 10;
  int image_size = 32;  // must be divisible by 8
  int channels = 3;
  int c1 = 8, c2 = 16, c3 = 32;

  int feat_dim() const { return c3 * (image_size / 8) * (image_size / 8); }
  int input_dim() const { return channels * image_size * image_size; }

  nlohmann::json to_json() const {
    return {{"num_classes", num_classes}, {"image_size", image_size},
            {"channels", channels},       {"c1", c1},
            {"c2", c2},                   {"c3", c3}};
  }
  static ClassifierConfig from_json(const nlohmann::json& j) {
    ClassifierConfig c;
    c.num_classes = j.at("num_classes");
    c.image_size = j.at("image_size");
    c.channels = j.at("channels");
    c.c1 = j.at("c1");
    c.c2 = j.at("c2");
    c.c3 = j.at("c3");
    return c;
  }
};

// Three conv blocks (conv-gelu-avgpool) and a linear head. The flattened
// output of the last block is the "midlayer" feature tap.
template <class T>
struct ClassifierCheckpoint {
  ClassifierConfig cfg;
  int version = kCheckpointVersion;
  Conv3x3<T> conv1, conv2, conv3;
  Dense<T> fc;

  template <class Self, class F>
  static void visit_impl(Self& self, F&& f) {
    f("conv1.w", self.conv1.w);
    f("conv1.b", self.conv1.b);
    f("conv2.w", self.conv2.w);
    f("conv2.b", self.conv2.b);
    f("conv3.w", self.conv3.w);
    f("conv3.b", self.conv3.b);
    f("fc.w", self.fc.w);
    f("fc.b", self.fc.b);
  }
  template <class F> void visit_params(F&& f) { visit_impl(*this, f); }
  template <class F> void visit_params(F&& f) const { visit_impl(*this, f); }

  std::uint64_t full_checksum() const {
    std::uint64_t h = kFnvOffset;
    visit_params([&](const char* name, const Mat<T>& m) {
      h = fnv1a64(name, h);
      h = checksum(m, h);
    });
    return h;
  }

  // Declared dimensionality of each feature tap for checkpoint metadata.
  std::map<std::string, int> tap_dims() const {
    return {{"pixel", cfg.input_dim()},
            {"midlayer", cfg.feat_dim()},
            {"softmax", cfg.num_classes}};
  }
};

template <class T>
struct ClassifierActs {
  Mat<T> x;  // input resized to the classifier's native resolution
  int in_h = 0, in_w = 0;  // pre-resize dims
  Mat<T> col1, c1pre, c1, pool1;
  Mat<T> col2, c2pre, c2, pool2;
  Mat<T> col3, c3pre, c3, feat;
  Mat<T> logits, probs;
};

template <class T>
ClassifierCheckpoint<T> init_classifier(const ClassifierConfig& cfg,
                                        std::uint64_t seed) {
  if (cfg.image_size % 8 != 0 || cfg.image_size < 8)
    throw ConfigError("classifier config: image_size must be a multiple of 8");
  ClassifierCheckpoint<T> p;
  p.cfg = cfg;
  p.conv1 = {cfg.channels, cfg.c1, Mat<T>(cfg.c1, cfg.channels * 9),
             Mat<T>::Zero(cfg.c1, 1)};
  p.conv2 = {cfg.c1, cfg.c2, Mat<T>(cfg.c2, cfg.c1 * 9),
             Mat<T>::Zero(cfg.c2, 1)};
  p.conv3 = {cfg.c2, cfg.c3, Mat<T>(cfg.c3, cfg.c2 * 9),
             Mat<T>::Zero(cfg.c3, 1)};
  p.fc.w.resize(cfg.num_classes, cfg.feat_dim());
  p.fc.b = Mat<T>::Zero(cfg.num_classes, 1);
  p.visit_params([&](const char* name, Mat<T>& m) {
    Rng rng(derive_seed(seed, std::string("init.p.") + name));
    if (std::string_view(name).ends_with(".w")) {
      rng.fill_normal(m, std::sqrt(2.0 / static_cast<double>(m.cols())));
    }
  });
  return p;
}

template <class T>
ClassifierCheckpoint<T> zeros_like(const ClassifierCheckpoint<T>& p) {
  ClassifierCheckpoint<T> z = p;
  z.visit_params([](const char*, Mat<T>& m) { m.setZero(); });
  return z;
}

// Infers the (square) spatial size of an image batch for this classifier.
template <class T>
int infer_input_size(const ClassifierCheckpoint<T>& p, Eigen::Index rows) {
  if (rows % p.cfg.channels != 0)
    throw ShapeError("classifier input: " + std::to_string(rows) +
                     " rows is not divisible by " +
                     std::to_string(p.cfg.channels) + " channels");
  const auto hw = rows / p.cfg.channels;
  const int side = static_cast<int>(std::lround(std::sqrt(double(hw))));
  if (static_cast<Eigen::Index>(side) * side != hw)
    throw ShapeError("classifier input: spatial extent is not square");
  return side;
}

template <class T>
Mat<T> classifier_forward(const ClassifierCheckpoint<T>& p,
                          const std::type_identity_t<Mat<T>>& images,
                          std::type_identity_t<ClassifierActs<T>>* acts) {
  const auto& cfg = p.cfg;
  const int in_size = infer_input_size(p, images.rows());
  const int s = cfg.image_size;
  ClassifierActs<T> local;
  ClassifierActs<T>& a = acts ? *acts : local;
  a.in_h = a.in_w = in_size;
  a.x = bilinear_resize(images, cfg.channels, in_size, in_size, s, s);
  a.c1pre = conv_fwd(p.conv1, a.x, s, s, &a.col1);
  a.c1 = gelu(a.c1pre);
  a.pool1 = avgpool2_fwd(a.c1, cfg.c1, s, s);
  a.c2pre = conv_fwd(p.conv2, a.pool1, s / 2, s / 2, &a.col2);
  a.c2 = gelu(a.c2pre);
  a.pool2 = avgpool2_fwd(a.c2, cfg.c2, s / 2, s / 2);
  a.c3pre = conv_fwd(p.conv3, a.pool2, s / 4, s / 4, &a.col3);
  a.c3 = gelu(a.c3pre);
  a.feat = avgpool2_fwd(a.c3, cfg.c3, s / 4, s / 4);
  a.logits = dense_fwd(p.fc, a.feat);
  return a.logits;
}

// Backward pass with gradient injection at the logits and/or the midlayer
// feature tap. Returns d(loss)/d(images) when want_dx.
template <class T>
Mat<T> classifier_backward(const ClassifierCheckpoint<T>& p,
                           const std::type_identity_t<ClassifierActs<T>>& a,
                           const std::type_identity_t<Mat<T>>* dlogits,
                           const std::type_identity_t<Mat<T>>* dfeat,
                           std::type_identity_t<ClassifierCheckpoint<T>>* grads,
                           bool want_dx = true) {
  const auto& cfg = p.cfg;
  const int s = cfg.image_size;
  Mat<T> d;
  if (dlogits) {
    d = dense_bwd(p.fc, a.feat, *dlogits, grads ? &grads->fc : nullptr);
    if (dfeat) d += *dfeat;
  } else if (dfeat) {
    d = *dfeat;
  } else {
    throw StateError("classifier_backward: no gradient injected");
  }
  d = avgpool2_bwd(d, cfg.c3, s / 4, s / 4);
  d = gelu_bwd(a.c3pre, std::move(d));
  d = conv_bwd(p.conv3, a.col3, d, s / 4, s / 4, grads ? &grads->conv3 : nullptr);
  d = avgpool2_bwd(d, cfg.c2, s / 2, s / 2);
  d = gelu_bwd(a.c2pre, std::move(d));
  d = conv_bwd(p.conv2, a.col2, d, s / 2, s / 2, grads ? &grads->conv2 : nullptr);
  d = avgpool2_bwd(d, cfg.c1, s, s);
  d = gelu_bwd(a.c1pre, std::move(d));
  d = conv_bwd(p.conv1, a.col1, d, s, s, grads ? &grads->conv1 : nullptr,
               want_dx);
  if (!want_dx) return Mat<T>();
  return bilinear_resize_bwd(d, cfg.channels, a.in_h, a.in_w, s, s);
}

template <class T>
struct ClassifyResult {
  Mat<T> probs;      // [K, n], columns sum to 1
  Mat<T> log_probs;  // [K, n], floored at log(1e-12)
};

template <class T>
ClassifyResult<T> classify(const ClassifierCheckpoint<T>& p,
                           const Mat<T>& images) {
  const Eigen::Index n = images.cols();
  ClassifyResult<T> r;
  r.probs.resize(p.cfg.num_classes, n);
  r.log_probs.resize(p.cfg.num_classes, n);
  for (Eigen::Index start = 0; start < n; start += kInferenceChunk) {
    const Eigen::Index len = std::min(kInferenceChunk, n - start);
    const Mat<T> logits =
        classifier_forward(p, Mat<T>(images.middleCols(start, len)), nullptr);
    r.probs.middleCols(start, len) = softmax_cols(logits);
    r.log_probs.middleCols(start, len) = log_softmax_cols(logits);
  }
  return r;
}

// Feature extractor φ used by the diversity objective and the metrics.
template <class T>
Mat<T> features(const ClassifierCheckpoint<T>& p, const Mat<T>& images,
                FeatureTap tap) {
  if (tap == FeatureTap::Pixel) return images;
  const Eigen::Index n = images.cols();
  const int dim = tap == FeatureTap::Softmax ? p.cfg.num_classes
                                             : p.cfg.feat_dim();
  Mat<T> out(dim, n);
  ClassifierActs<T> acts;
  for (Eigen::Index start = 0; start < n; start += kInferenceChunk) {
    const Eigen::Index len = std::min(kInferenceChunk, n - start);
    classifier_forward(p, Mat<T>(images.middleCols(start, len)), &acts);
    if (tap == FeatureTap::Softmax) {
      out.middleCols(start, len) = softmax_cols(acts.logits);
    } else {
      out.middleCols(start, len) = acts.feat;
    }
  }
  return out;
}

// VJP of column-wise softmax: given probabilities and d(loss)/d(probs),
// returns d(loss)/d(logits).
template <class T>
Mat<T> softmax_vjp(const Mat<T>& probs, const Mat<T>& dprobs) {
  Mat<T> d(probs.rows(), probs.cols());
  for (Eigen::Index j = 0; j < probs.cols(); ++j) {
    const T dot = probs.col(j).dot(dprobs.col(j));
    d.col(j) = probs.col(j).cwiseProduct(
        dprobs.col(j) - Vec<T>::Constant(probs.rows(), dot));
  }
  return d;
}

// --------------------------------------------------------- discriminator --

struct DiscriminatorConfig {
  int num_classes = 10;
  int image_size = 32;
  int channels = 3;
  int c1 = 8, c2 = 16, c3 = 32;

  int feat_dim() const { return c3 * (image_size / 8) * (image_size / 8); }

  nlohmann::json to_json() const {
    return {{"num_classes", num_classes}, {"image_size", image_size},
            {"channels", channels},       {"c1", c1},
            {"c2", c2},                   {"c3", c3}};
  }
  static DiscriminatorConfig from_json(const nlohmann::json& j) {
    DiscriminatorConfig c;
    c.num_classes = j.at("num_classes");
    c.image_size = j.at("image_size");
    c.channels = j.at("channels");
    c.c1 = j.at("c1");
    c.c2 = j.at("c2");
    c.c3 = j.at("c3");
    return c;
  }
};

// Conv trunk with a projection head: score(x, y) = w·f(x) + b + e_y·f(x).
template <class T>
struct DiscriminatorCheckpoint {
  DiscriminatorConfig cfg;
  int version = kCheckpointVersion;
  Conv3x3<T> conv1, conv2, conv3;
  Dense<T> head;   // [1, feat_dim]
  Mat<T> proj;     // [feat_dim, num_classes]

  template <class Self, class F>
  static void visit_impl(Self& self, F&& f) {
    f("conv1.w", self.conv1.w);
    f("conv1.b", self.conv1.b);
    f("conv2.w", self.conv2.w);
    f("conv2.b", self.conv2.b);
    f("conv3.w", self.conv3.w);
    f("conv3.b", self.conv3.b);
    f("head.w", self.head.w);
    f("head.b", self.head.b);
    f("proj", self.proj);
  }
  template <class F> void visit_params(F&& f) { visit_impl(*this, f); }
  template <class F> void visit_params(F&& f) const { visit_impl(*this, f); }

  std::uint64_t full_checksum() const {
    std::uint64_t h = kFnvOffset;
    visit_params([&](const char* name, const Mat<T>& m) {
      h = fnv1a64(name, h);
      h = checksum(m, h);
    });
    return h;
  }
};

template <class T>
struct DiscriminatorActs {
  Mat<T> x;
  Mat<T> col1, c1pre, c1, pool1;
  Mat<T> col2, c2pre, c2, pool2;
  Mat<T> col3, c3pre, c3, feat;
};

template <class T>
DiscriminatorCheckpoint<T> init_discriminator(const DiscriminatorConfig& cfg,
                                              std::uint64_t seed) {
  DiscriminatorCheckpoint<T> d;
  d.cfg = cfg;
  d.conv1 = {cfg.channels, cfg.c1, Mat<T>(cfg.c1, cfg.channels * 9),
             Mat<T>::Zero(cfg.c1, 1)};
  d.conv2 = {cfg.c1, cfg.c2, Mat<T>(cfg.c2, cfg.c1 * 9),
             Mat<T>::Zero(cfg.c2, 1)};
  d.conv3 = {cfg.c2, cfg.c3, Mat<T>(cfg.c3, cfg.c2 * 9),
             Mat<T>::Zero(cfg.c3, 1)};
  d.head.w.resize(1, cfg.feat_dim());
  d.head.b = Mat<T>::Zero(1, 1);
  d.proj.resize(cfg.feat_dim(), cfg.num_classes);
  d.visit_params([&](const char* name, Mat<T>& m) {
    Rng rng(derive_seed(seed, std::string("init.d.") + name));
    if (std::string_view(name) == "proj") {
      rng.fill_normal(m, std::sqrt(1.0 / static_cast<double>(m.rows())));
    } else if (std::string_view(name).ends_with(".w")) {
      rng.fill_normal(m, std::sqrt(2.0 / static_cast<double>(m.cols())));
    }
  });
  return d;
}

template <class T>
DiscriminatorCheckpoint<T> zeros_like(const DiscriminatorCheckpoint<T>& d) {
  DiscriminatorCheckpoint<T> z = d;
  z.visit_params([](const char*, Mat<T>& m) { m.setZero(); });
  return z;
}

// One real score per (image, label) pair.
template <class T>
Vec<T> discriminator_forward(const DiscriminatorCheckpoint<T>& d,
                             const std::type_identity_t<Mat<T>>& images,
                             const VecI& labels,
                             std::type_identity_t<DiscriminatorActs<T>>* acts) {
  const auto& cfg = d.cfg;
  const int s = cfg.image_size;
  if (images.rows() != cfg.channels * s * s)
    throw ShapeError("discriminator: unexpected image dimension");
  if (labels.size() != images.cols())
    throw ShapeError("discriminator: labels do not match batch size");
  DiscriminatorActs<T> local;
  DiscriminatorActs<T>& a = acts ? *acts : local;
  a.x = images;
  a.c1pre = conv_fwd(d.conv1, a.x, s, s, &a.col1);
  a.c1 = gelu(a.c1pre);
  a.pool1 = avgpool2_fwd(a.c1, cfg.c1, s, s);
  a.c2pre = conv_fwd(d.conv2, a.pool1, s / 2, s / 2, &a.col2);
  a.c2 = gelu(a.c2pre);
  a.pool2 = avgpool2_fwd(a.c2, cfg.c2, s / 2, s / 2);
  a.c3pre = conv_fwd(d.conv3, a.pool2, s / 4, s / 4, &a.col3);
  a.c3 = gelu(a.c3pre);
  a.feat = avgpool2_fwd(a.c3, cfg.c3, s / 4, s / 4);
  Vec<T> scores(images.cols());
  for (Eigen::Index i = 0; i < images.cols(); ++i) {
    scores[i] = (d.head.w.row(0) * a.feat.col(i))(0, 0) + d.head.b(0, 0) +
                d.proj.col(labels[i]).dot(a.feat.col(i));
  }
  return scores;
}

template <class T>
Mat<T> discriminator_backward(const DiscriminatorCheckpoint<T>& d,
                              const std::type_identity_t<DiscriminatorActs<T>>& a,
                              const std::type_identity_t<Vec<T>>& dscores,
                              const VecI& labels,
                              std::type_identity_t<DiscriminatorCheckpoint<T>>* grads,
                              bool want_dx = true) {
  const auto& cfg = d.cfg;
  const int s = cfg.image_size;
  Mat<T> dfeat(a.feat.rows(), a.feat.cols());
  for (Eigen::Index i = 0; i < a.feat.cols(); ++i) {
    dfeat.col(i) =
        dscores[i] * (d.head.w.row(0).transpose() + d.proj.col(labels[i]));
    if (grads) {
      grads->head.w.row(0).noalias() +=
          dscores[i] * a.feat.col(i).transpose();
      grads->head.b(0, 0) += dscores[i];
      grads->proj.col(labels[i]).noalias() += dscores[i] * a.feat.col(i);
    }
  }
  Mat<T> dd = avgpool2_bwd(dfeat, cfg.c3, s / 4, s / 4);
  dd = gelu_bwd(a.c3pre, std::move(dd));
  dd = conv_bwd(d.conv3, a.col3, dd, s / 4, s / 4,
                grads ? &grads->conv3 : nullptr);
  dd = avgpool2_bwd(dd, cfg.c2, s / 2, s / 2);
  dd = gelu_bwd(a.c2pre, std::move(dd));
  dd = conv_bwd(d.conv2, a.col2, dd, s / 2, s / 2,
                grads ? &grads->conv2 : nullptr);
  dd = avgpool2_bwd(dd, cfg.c1, s, s);
  dd = gelu_bwd(a.c1pre, std::move(dd));
  return conv_bwd(d.conv1, a.col1, dd, s, s, grads ? &grads->conv1 : nullptr,
                  want_dx);
}

// ---------------------------------------------------------- persistence --

namespace detail {

template <class Net>
Container net_to_container(const Net& net, const std::string& type,
                           const nlohmann::json& cfg_json) {
  Container c;
  c.type = type;
  c.provenance["config"] = cfg_json;
  c.provenance["version"] = net.version;
  net.visit_params([&](const char* name, const auto& m) {
    MatF f = m.template cast<float>();
    c.add(name, f);
  });
  return c;
}

template <class Net>
void net_from_container(Net& net, const Container& c, const std::string& type) {
  if (c.type != type)
    throw IntegrityError("container type '" + c.type + "' is not a " + type);
  net.version = c.provenance.value("version", 0);
  if (net.version != kCheckpointVersion)
    throw IntegrityError("unsupported checkpoint version " +
                         std::to_string(net.version));
  net.visit_params([&](const char* name, auto& m) {
    using S = typename std::decay_t<decltype(m)>::Scalar;
    const MatF& f = c.floats(name);
    if (f.rows() != m.rows() || f.cols() != m.cols())
      throw IntegrityError(std::string("checkpoint array '") + name +
                           "' has unexpected shape");
    m = f.template cast<S>();
  });
}

}  // namespace detail

template <class T>
Container checkpoint_to_container(const GeneratorCheckpoint<T>& g) {
  return detail::net_to_container(g, "generator", g.cfg.to_json());
}

template <class T>
GeneratorCheckpoint<T> generator_from_container(const Container& c) {
  GeneratorCheckpoint<T> g = init_generator<T>(
      GeneratorConfig::from_json(c.provenance.at("config")), 0);
  detail::net_from_container(g, c, "generator");
  return g;
}

template <class T>
Container checkpoint_to_container(const ClassifierCheckpoint<T>& p) {
  Container c = detail::net_to_container(p, "classifier", p.cfg.to_json());
  c.provenance["taps"] = p.tap_dims();
  return c;
}

template <class T>
ClassifierCheckpoint<T> classifier_from_container(const Container& c) {
  ClassifierCheckpoint<T> p = init_classifier<T>(
      ClassifierConfig::from_json(c.provenance.at("config")), 0);
  detail::net_from_container(p, c, "classifier");
  return p;
}

template <class T>
Container checkpoint_to_container(const DiscriminatorCheckpoint<T>& d) {
  return detail::net_to_container(d, "discriminator", d.cfg.to_json());
}

template <class T>
DiscriminatorCheckpoint<T> discriminator_from_container(const Container& c) {
  DiscriminatorCheckpoint<T> d = init_discriminator<T>(
      DiscriminatorConfig::from_json(c.provenance.at("config")), 0);
  detail::net_from_container(d, c, "discriminator");
  return d;
}

// Scalar-type conversion (float checkpoints re-run in double for the
// finite-difference gradient checks).
template <class U, class T, template <class> class Net>
Net<U> cast_checkpoint(const Net<T>& src) {
  Net<U> dst;
  // Build by serializing through the visitor to keep shapes in sync.
  dst.cfg = src.cfg;
  dst.version = src.version;
  std::vector<const Mat<T>*> srcs;
  src.visit_params([&](const char*, const Mat<T>& m) { srcs.push_back(&m); });
  std::size_t i = 0;
  dst.visit_params([&](const char*, Mat<U>& m) {
    m = srcs[i++]->template cast<U>();
  });
  return dst;
}

// -------------------------------------------------------------- training --

struct ClassifierTrainConfig {
  int iters = 1500;
  int batch = 64;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  bool verbose = false;
  ClassifierConfig arch;
};

template <class T>
ClassifierCheckpoint<T> train_classifier(const LabeledImageSet& data,
                                         ClassifierTrainConfig cfg) {
  cfg.arch.num_classes = data.spec.num_classes;
  cfg.arch.image_size = data.spec.image_size;
  cfg.arch.channels = data.spec.channels;
  ClassifierCheckpoint<T> p =
      init_classifier<T>(cfg.arch, derive_seed(cfg.seed, "clf.init"));
  ClassifierCheckpoint<T> grads = zeros_like(p);

  std::vector<Mat<T>*> params, gptrs;
  p.visit_params([&](const char*, Mat<T>& m) { params.push_back(&m); });
  grads.visit_params([&](const char*, Mat<T>& m) { gptrs.push_back(&m); });
  std::vector<const Mat<T>*> cgptrs(gptrs.begin(), gptrs.end());

  AdamOptimizer<T> adam;
  adam.lr = cfg.lr;
  adam.init(params);

  Rng rng(derive_seed(cfg.seed, "clf.batches"));
  const Eigen::Index n_data = data.size();
  Mat<T> batch(data.images.rows(), cfg.batch);
  VecI labels(cfg.batch);
  ClassifierActs<T> acts;

  for (int iter = 0; iter < cfg.iters; ++iter) {
    for (int i = 0; i < cfg.batch; ++i) {
      const auto idx = static_cast<Eigen::Index>(
          rng.below(static_cast<std::uint64_t>(n_data)));
      batch.col(i) = data.images.col(idx).template cast<T>();
      labels[i] = data.labels[idx];
    }
    classifier_forward(p, batch, &acts);
    acts.probs = softmax_cols(acts.logits);
    double loss = 0.0;
    Mat<T> dlogits = acts.probs;
    for (int i = 0; i < cfg.batch; ++i) {
      loss -= std::log(std::max(
          1e-12, static_cast<double>(acts.probs(labels[i], i))));
      dlogits(labels[i], i) -= T(1);
    }
    loss /= cfg.batch;
    dlogits /= static_cast<T>(cfg.batch);
    if (!std::isfinite(loss))
      throw TrainingError("classifier training diverged", iter);
    for (auto* gm : gptrs) gm->setZero();
    classifier_backward(p, acts, &dlogits, nullptr, &grads, false);
    adam.step(params, cgptrs);
    if (cfg.verbose && (iter + 1) % 200 == 0) {
      std::printf("[clf] iter %d loss %.4f\n", iter + 1, loss);
    }
  }
  return p;
}

enum class GanLoss { Hinge, NonSaturating };

struct GanTrainConfig {
  int iters = 3000;
  int batch = 32;
  double lr_g = 2e-4;
  double lr_d = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int snapshot_interval = 500;
  std::uint64_t seed = 0;
  GanLoss loss = GanLoss::Hinge;
  bool verbose = false;
  GeneratorConfig gen_arch;
  DiscriminatorConfig disc_arch;
};

template <class T>
struct GanTrainResult {
  GeneratorCheckpoint<T> generator;
  DiscriminatorCheckpoint<T> discriminator;
  std::vector<GeneratorCheckpoint<T>> snapshots;
  std::vector<int> snapshot_iters;
  std::vector<double> d_loss_log, g_loss_log;  // sampled every 50 iters
};

// Trains the conditional GAN. On divergence the out-parameter keeps every
// snapshot taken so far and a TrainingError is thrown.
template <class T>
void train_gan(const LabeledImageSet& data, GanTrainConfig cfg,
               GanTrainResult<T>& out) {
  cfg.gen_arch.num_classes = data.spec.num_classes;
  cfg.gen_arch.image_size = data.spec.image_size;
  cfg.gen_arch.channels = data.spec.channels;
  cfg.disc_arch.num_classes = data.spec.num_classes;
  cfg.disc_arch.image_size = data.spec.image_size;
  cfg.disc_arch.channels = data.spec.channels;
  if (cfg.snapshot_interval <= 0)
    throw ConfigError("gan training: snapshot_interval must be positive");

  auto& g = out.generator;
  auto& d = out.discriminator;
  g = init_generator<T>(cfg.gen_arch, derive_seed(cfg.seed, "gan.g.init"));
  d = init_discriminator<T>(cfg.disc_arch, derive_seed(cfg.seed, "gan.d.init"));
  GeneratorCheckpoint<T> g_grads = zeros_like(g);
  DiscriminatorCheckpoint<T> d_grads = zeros_like(d);

  std::vector<Mat<T>*> g_params, d_params, g_gptr, d_gptr;
  g.visit_params([&](const char*, Mat<T>& m) { g_params.push_back(&m); });
  g_grads.visit_params([&](const char*, Mat<T>& m) { g_gptr.push_back(&m); });
  d.visit_params([&](const char*, Mat<T>& m) { d_params.push_back(&m); });
  d_grads.visit_params([&](const char*, Mat<T>& m) { d_gptr.push_back(&m); });
  std::vector<const Mat<T>*> g_cg(g_gptr.begin(), g_gptr.end());
  std::vector<const Mat<T>*> d_cg(d_gptr.begin(), d_gptr.end());

  AdamOptimizer<T> adam_g, adam_d;
  adam_g.lr = cfg.lr_g;
  adam_g.beta1 = cfg.beta1;
  adam_g.beta2 = cfg.beta2;
  adam_g.init(g_params);
  adam_d.lr = cfg.lr_d;
  adam_d.beta1 = cfg.beta1;
  adam_d.beta2 = cfg.beta2;
  adam_d.init(d_params);

  Rng rng(derive_seed(cfg.seed, "gan.batches"));
  const Eigen::Index n_data = data.size();
  const int nb = cfg.batch;
  const int dc = cfg.gen_arch.embed_dim;
  const int dz = cfg.gen_arch.latent_dim;

  Mat<T> real(data.images.rows(), nb);
  VecI real_labels(nb), fake_labels(nb);
  Mat<T> gin(dc + dz, nb);
  GeneratorActs<T> gacts;
  DiscriminatorActs<T> dacts;

  auto sample_fake_input = [&](VecI& labels_out) {
    for (int i = 0; i < nb; ++i) {
      const int y = static_cast<int>(rng.below(cfg.gen_arch.num_classes));
      labels_out[i] = y;
      gin.col(i).head(dc) = g.embedding.col(y);
      for (int r = 0; r < dz; ++r)
        gin(dc + r, i) = static_cast<T>(rng.normal());
    }
  };

  for (int iter = 0; iter < cfg.iters; ++iter) {
    // ---- discriminator step
    for (int i = 0; i < nb; ++i) {
      const auto idx = static_cast<Eigen::Index>(
          rng.below(static_cast<std::uint64_t>(n_data)));
      real.col(i) = data.images.col(idx).template cast<T>();
      real_labels[i] = data.labels[idx];
    }
    sample_fake_input(fake_labels);
    const Mat<T> fake = generator_forward(g, gin, nullptr);

    double d_loss = 0.0;
    for (auto* gm : d_gptr) gm->setZero();
    {
      const Vec<T> sr = discriminator_forward(d, real, real_labels, &dacts);
      Vec<T> dsr(nb);
      for (int i = 0; i < nb; ++i) {
        const double s = sr[i];
        if (cfg.loss == GanLoss::Hinge) {
          d_loss += std::max(0.0, 1.0 - s);
          dsr[i] = static_cast<T>(s < 1.0 ? -1.0 / nb : 0.0);
        } else {
          d_loss += std::log1p(std::exp(-s));
          dsr[i] = static_cast<T>(-1.0 / (1.0 + std::exp(s)) / nb);
        }
      }
      discriminator_backward(d, dacts, dsr, real_labels, &d_grads, false);
    }
    {
      const Vec<T> sf = discriminator_forward(d, fake, fake_labels, &dacts);
      Vec<T> dsf(nb);
      for (int i = 0; i < nb; ++i) {
        const double s = sf[i];
        if (cfg.loss == GanLoss::Hinge) {
          d_loss += std::max(0.0, 1.0 + s);
          dsf[i] = static_cast<T>(s > -1.0 ? 1.0 / nb : 0.0);
        } else {
          d_loss += std::log1p(std::exp(s));
          dsf[i] = static_cast<T>(1.0 / (1.0 + std::exp(-s)) / nb);
        }
      }
      discriminator_backward(d, dacts, dsf, fake_labels, &d_grads, false);
    }
    d_loss /= nb;
    if (!std::isfinite(d_loss))
      throw TrainingError("gan training diverged (discriminator)", iter);
    adam_d.step(d_params, d_cg);

    // ---- generator step
    sample_fake_input(fake_labels);
    const Mat<T> fake2 = generator_forward(g, gin, &gacts);
    const Vec<T> sf = discriminator_forward(d, fake2, fake_labels, &dacts);
    double g_loss = 0.0;
    Vec<T> dsf(nb);
    for (int i = 0; i < nb; ++i) {
      const double s = sf[i];
      if (cfg.loss == GanLoss::Hinge) {
        g_loss += -s;
        dsf[i] = static_cast<T>(-1.0 / nb);
      } else {
        g_loss += std::log1p(std::exp(-s));
        dsf[i] = static_cast<T>(-1.0 / (1.0 + std::exp(s)) / nb);
      }
    }
    g_loss /= nb;
    if (!std::isfinite(g_loss))
      throw TrainingError("gan training diverged (generator)", iter);
    for (auto* gm : g_gptr) gm->setZero();
    const Mat<T> dimages =
        discriminator_backward(d, dacts, dsf, fake_labels, nullptr, true);
    const Mat<T> dinput = generator_backward(g, gacts, dimages, &g_grads);
    // The embedding gradient arrives through the input rows, scattered by
    // class label. g_gptr[0] is the embedding gradient (first visited).
    for (int i = 0; i < nb; ++i) {
      g_gptr[0]->col(fake_labels[i]) += dinput.col(i).head(dc);
    }
    adam_g.step(g_params, g_cg);

    if ((iter + 1) % 50 == 0 || iter == 0) {
      out.d_loss_log.push_back(d_loss);
      out.g_loss_log.push_back(g_loss);
    }
    if (cfg.verbose && ((iter + 1) % 200 == 0 || iter == 0)) {
      std::printf("[gan] iter %d d_loss %.4f g_loss %.4f\n", iter + 1, d_loss,
                  g_loss);
    }
    if ((iter + 1) % cfg.snapshot_interval == 0) {
      out.snapshots.push_back(g);
      out.snapshot_iters.push_back(iter + 1);
    }
  }
}

// ------------------------------------------------------------ corruption --

enum class CorruptMode { RandomFar, CrossClass, ScaleDown };

inline CorruptMode parse_corrupt_mode(const std::string& s) {
  if (s == "random-far") return CorruptMode::RandomFar;
  if (s == "cross-class") return CorruptMode::CrossClass;
  if (s == "scale-down") return CorruptMode::ScaleDown;
  throw ConfigError("unknown corruption mode '" + s +
                    "' (expected random-far|cross-class|scale-down)");
}

struct CorruptSpec {
  CorruptMode mode = CorruptMode::RandomFar;
  int source_class = -1;   // cross-class: class whose row overwrites row y
  double sigma = 0.1;      // scale-down multiplier
  std::uint64_t seed = 0;  // random-far direction
};

template <class T>
double median_embedding_norm(const GeneratorCheckpoint<T>& g) {
  std::vector<double> norms(static_cast<std::size_t>(g.embedding.cols()));
  for (Eigen::Index i = 0; i < g.embedding.cols(); ++i)
    norms[static_cast<std::size_t>(i)] = g.embedding.col(i).norm();
  std::sort(norms.begin(), norms.end());
  const std::size_t k = norms.size();
  return k % 2 == 1 ? norms[k / 2]
                    : 0.5 * (norms[k / 2 - 1] + norms[k / 2]);
}

// Deterministically injects the embedding failure under study. Only row y
// of the embedding matrix changes.
template <class T>
GeneratorCheckpoint<T> corrupt_class(const GeneratorCheckpoint<T>& g, int y,
                                     const CorruptSpec& spec) {
  if (y < 0 || y >= g.cfg.num_classes)
    throw ConfigError("corrupt_class: class index " + std::to_string(y) +
                      " out of range");
  GeneratorCheckpoint<T> out = g;
  switch (spec.mode) {
    case CorruptMode::RandomFar: {
      Rng rng(derive_seed(spec.seed, "corrupt.random-far",
                          static_cast<std::uint64_t>(y)));
      Vec<T> dir(g.cfg.embed_dim);
      for (Eigen::Index i = 0; i < dir.size(); ++i)
        dir[i] = static_cast<T>(rng.normal());
      dir /= dir.norm();
      const double dist = 5.0 * median_embedding_norm(g);
      out.embedding.col(y) = g.embedding.col(y) + static_cast<T>(dist) * dir;
      break;
    }
    case CorruptMode::CrossClass: {
      if (spec.source_class < 0 || spec.source_class >= g.cfg.num_classes)
        throw ConfigError("corrupt_class: cross-class source out of range");
      out.embedding.col(y) = g.embedding.col(spec.source_class);
      break;
    }
    case CorruptMode::ScaleDown:
      out.embedding.col(y) *= static_cast<T>(spec.sigma);
      break;
  }
  return out;
}

}  // namespace embsurg
