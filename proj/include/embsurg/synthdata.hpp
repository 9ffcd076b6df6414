#pragma once

// Procedural class-conditional shape datasets with a controllable
// intra-class diversity knob. Domain A and domain B use disjoint shape
// sets and different background texture families, so no class of one
// domain coincides with a class of the other.

#include "embsurg/container.hpp"
#include "embsurg/core.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>

namespace embsurg {

struct DatasetSpec {
  char domain_id = 'A';        // 'A' = source, 'B' = target
  int num_classes = 10;        // K >= 2
  int image_size = 32;
  int channels = 3;
  double diversity_knob = 1.0; // in [0, 1]; 0 = one canonical image per class
  int samples_per_class = 200;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static DatasetSpec from_json(const nlohmann::json& j);
};

struct LabeledImageSet {
  MatF images;   // [C*H*W, N], one sample per column, values in [-1, 1]
  VecI labels;   // [N], class indices
  DatasetSpec spec;

  Eigen::Index size() const { return labels.size(); }
  // Columns of all samples whose label equals y, in dataset order.
  MatF images_of_class(int y) const;
};

// Pure function of the spec: equal specs yield bit-identical datasets.
LabeledImageSet generate_dataset(const DatasetSpec& spec);

// One canonical (knob-independent) rendering of a single class; used by
// tests that need a known non-trivial image.
VecF render_canonical_image(const DatasetSpec& spec, int y);

Container dataset_to_container(const LabeledImageSet& set);
LabeledImageSet dataset_from_container(const Container& c);

}  // namespace embsurg
