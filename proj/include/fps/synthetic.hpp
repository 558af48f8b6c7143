#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "fps/feature_store.hpp"

namespace fps {

// Default minimum pairwise distance between class means, in units of spread.
inline constexpr double kMeanSeparation = 6.0;

// kRandom: rejection-sampled means. kRegularPolygon: 2-D means on a circle
// centered at the origin, adjacent means exactly the minimum separation apart.
enum class MeanLayout { kRandom, kRegularPolygon };

// Gaussian class clusters in two domains. The target reuses the source
// means after a rotation about their centroid (2-D only) and a translation.
struct ShiftSpec {
  std::size_t classes = 2;
  std::size_t dim = 2;
  std::size_t per_class = 200;
  double spread = 1.0;
  std::vector<double> shift_translation;  // empty = no translation
  double shift_rotation = 0.0;            // radians
  std::size_t patch_count = 0;
  double patch_noise = 0.0;
  std::uint64_t seed = 0;
  MeanLayout layout = MeanLayout::kRandom;
  double separation = kMeanSeparation;  // in units of spread

  void validate() const;
};


struct SyntheticPair {
  FeatureSet source;
  FeatureSet target;
  std::vector<std::vector<double>> source_means;
  std::vector<std::vector<double>> target_means;
};

// Source class means for `spec`; the same placement generate() uses.
std::vector<std::vector<double>> class_means(const ShiftSpec& spec);

// Both sets carry labels; samples are ordered class by class.
SyntheticPair generate(const ShiftSpec& spec);

Manifest synthetic_manifest(const ShiftSpec& spec, const std::string& domain);

}  // namespace fps
