#include "fps/synthetic.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "fps/errors.hpp"
#include "fps/rng.hpp"

namespace fps {
namespace {

constexpr int kPlacementAttempts = 64;
constexpr int kDrawsPerMean = 4096;

double distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(s);
}

// Rejection sampling in a cube whose volume grows with the class count.
std::vector<std::vector<double>> place_means(const ShiftSpec& spec, Rng& rng) {
  const double min_sep = spec.separation * spec.spread;
  if (spec.layout == MeanLayout::kRegularPolygon) {
    const double n = static_cast<double>(spec.classes);
    const double radius = min_sep / (2.0 * std::sin(std::numbers::pi / n));
    std::vector<std::vector<double>> means;
    for (std::size_t c = 0; c < spec.classes; ++c) {
      const double a = std::numbers::pi / 2 + 2.0 * std::numbers::pi * static_cast<double>(c) / n;
      means.push_back({radius * std::cos(a), radius * std::sin(a)});
    }
    return means;
  }
  const double half_width =
      min_sep * std::max(1.0, std::pow(static_cast<double>(spec.classes),
                                       1.0 / static_cast<double>(spec.dim)));
  for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
    std::vector<std::vector<double>> means;
    while (means.size() < spec.classes) {
      bool placed = false;
      for (int draw = 0; draw < kDrawsPerMean && !placed; ++draw) {
        std::vector<double> m(spec.dim);
        for (auto& v : m) v = (2.0 * rng.uniform01() - 1.0) * half_width;
        placed = true;
        for (const auto& other : means) {
          if (distance(m, other) < min_sep) {
            placed = false;
            break;
          }
        }
        if (placed) means.push_back(std::move(m));
      }
      if (!placed) break;
    }
    if (means.size() == spec.classes) return means;
  }
  throw DataError("synthetic: could not place " + std::to_string(spec.classes) +
                  " means with separation " + std::to_string(min_sep));
}

FeatureSet draw_domain(const ShiftSpec& spec, const std::vector<std::vector<double>>& means,
                       const std::string& tag, Rng& rng) {
  FeatureSet set;
  set.n_samples = spec.classes * spec.per_class;
  set.dim = spec.dim;
  set.n_patches = spec.patch_count;
  set.class_count = static_cast<std::uint32_t>(spec.classes);
  set.domain_tag = tag;
  for (std::size_t c = 0; c < spec.classes; ++c) set.class_names.push_back("class_" + std::to_string(c));
  set.features.resize(set.n_samples * spec.dim);
  set.patch_features.resize(set.n_samples * spec.patch_count * spec.dim);
  std::vector<std::int32_t> labels(set.n_samples);

  std::vector<double> x(spec.dim);
  std::size_t i = 0;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t r = 0; r < spec.per_class; ++r, ++i) {
      labels[i] = static_cast<std::int32_t>(c);
      for (std::size_t k = 0; k < spec.dim; ++k) x[k] = means[c][k] + spec.spread * rng.normal();
      float* pooled = set.features.data() + i * spec.dim;
      if (spec.patch_count == 0) {
        for (std::size_t k = 0; k < spec.dim; ++k) pooled[k] = static_cast<float>(x[k]);
        continue;
      }
      for (std::size_t k = 0; k < spec.dim; ++k) pooled[k] = 0.0f;
      for (std::size_t p = 0; p < spec.patch_count; ++p) {
        float* patch = set.patch_features.data() + (i * spec.patch_count + p) * spec.dim;
        for (std::size_t k = 0; k < spec.dim; ++k) {
          patch[k] = static_cast<float>(x[k] + spec.patch_noise * rng.normal());
          pooled[k] += patch[k];
        }
      }
      const auto count = static_cast<float>(spec.patch_count);
      for (std::size_t k = 0; k < spec.dim; ++k) pooled[k] /= count;
    }
  }
  set.labels = std::move(labels);
  return set;
}

}  // namespace

void ShiftSpec::validate() const {
  if (classes < 2) throw DataError("ShiftSpec: classes must be >= 2");
  if (dim == 0) throw DataError("ShiftSpec: dim must be > 0");
  if (per_class == 0) throw DataError("ShiftSpec: per_class must be > 0");
  if (!(spread > 0.0)) throw DataError("ShiftSpec: spread must be > 0");
  if (!(separation > 0.0)) throw DataError("ShiftSpec: separation must be > 0");
  if (!shift_translation.empty() && shift_translation.size() != dim) {
    throw DataError("ShiftSpec: translation has " + std::to_string(shift_translation.size()) +
                    " entries, dim is " + std::to_string(dim));
  }
  if (shift_rotation != 0.0 && dim != 2) throw DataError("ShiftSpec: rotation requires dim 2");
  if (layout == MeanLayout::kRegularPolygon && dim != 2) {
    throw DataError("ShiftSpec: polygon layout requires dim 2");
  }
  if (patch_count > 0 && !(patch_noise >= 0.0)) throw DataError("ShiftSpec: patch_noise must be >= 0");
}

std::vector<std::vector<double>> class_means(const ShiftSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  return place_means(spec, rng);
}

SyntheticPair generate(const ShiftSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  SyntheticPair out;
  out.source_means = place_means(spec, rng);

  std::vector<double> centroid(spec.dim, 0.0);
  for (const auto& m : out.source_means) {
    for (std::size_t k = 0; k < spec.dim; ++k) centroid[k] += m[k] / static_cast<double>(spec.classes);
  }
  const double cr = std::cos(spec.shift_rotation);
  const double sr = std::sin(spec.shift_rotation);
  for (auto m : out.source_means) {
    if (spec.dim == 2 && spec.shift_rotation != 0.0) {
      const double u = m[0] - centroid[0];
      const double v = m[1] - centroid[1];
      m[0] = centroid[0] + cr * u - sr * v;
      m[1] = centroid[1] + sr * u + cr * v;
    }
    for (std::size_t k = 0; k < spec.shift_translation.size(); ++k) m[k] += spec.shift_translation[k];
    out.target_means.push_back(std::move(m));
  }

  Rng source_rng = rng.split();
  Rng target_rng = rng.split();
  out.source = draw_domain(spec, out.source_means, "source", source_rng);
  out.target = draw_domain(spec, out.target_means, "target", target_rng);
  return out;
}

Manifest synthetic_manifest(const ShiftSpec& spec, const std::string& domain) {
  Manifest m;
  m.dataset_name = "synthetic/" + domain;
  m.backbone_id = "none";
  m.pooling_mode = spec.patch_count > 0 ? "mean" : "none";
  m.feature_family = "general";
  m.created_by = "fps synthetic generator";
  m.seed = static_cast<std::int64_t>(spec.seed);
  return m;
}

}  // namespace fps
