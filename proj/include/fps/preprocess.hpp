#pragma once

#include <string>
#include <vector>

#include "fps/feature_store.hpp"

namespace fps {

inline constexpr double kDegenerateSigma = 1e-12;
inline constexpr double kDefaultStdScale = 2.5;
inline constexpr double kDefaultWeightSharpness = 5.0;

/// Per-dimension standardization fitted on the union of both domains.
struct PreprocessStats {
  std::vector<double> mu;
  std::vector<double> sigma;  // population std, same sample as mu
  double s = kDefaultStdScale;
  bool sqrt_applied = false;

  std::size_t dim() const { return mu.size(); }
  bool degenerate(std::size_t k) const { return sigma[k] < kDegenerateSigma; }

  // Stable hex digest of (mu, sigma, s, sqrt_applied).
  std::string fingerprint() const;
};

struct SampleWeights {
  std::vector<double> weights;  // mean 1
  double sharpness = kDefaultWeightSharpness;

  std::size_t size() const { return weights.size(); }
  double operator[](std::size_t i) const { return weights[i]; }

  static SampleWeights uniform(std::size_t n);
};

PreprocessStats fit_stats(const FeatureSet& source, const FeatureSet& target,
                          double s = kDefaultStdScale, bool apply_sqrt = false);

// x' = (x - mu) / sigma * s, with an optional elementwise square root first.
// Patch features receive the same transform using the pooled statistics.
FeatureSet apply_stats(const FeatureSet& set, const PreprocessStats& stats);

// w_i = 1 / sum_j exp(A * cos(x_i, x_j)), rescaled to mean 1.
SampleWeights compute_sample_weights(const FeatureSet& target,
                                     double sharpness = kDefaultWeightSharpness);

}  // namespace fps
