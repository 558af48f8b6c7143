#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace fps {

inline constexpr std::uint32_t kContainerVersion = 1;
// magic(4) version(4) n_samples(8) n_patches(8) dim(8) label_flag(1) class_count(4)
inline constexpr std::size_t kContainerHeaderBytes = 37;
inline constexpr std::int32_t kUnlabeled = -1;

/// Frozen features for one domain.
///
/// `features` is n_samples x dim row-major. `patch_features`, when
/// n_patches > 0, is laid out [sample][patch][dim]. Pooled features are
/// stored independently of the patches; the manifest records how they
/// were pooled. Labels use kUnlabeled for samples without a label.
struct FeatureSet {
  std::size_t n_samples = 0;
  std::size_t dim = 0;
  std::size_t n_patches = 0;
  std::vector<float> features;
  std::vector<float> patch_features;
  std::optional<std::vector<std::int32_t>> labels;
  std::uint32_t class_count = 0;
  std::string domain_tag;
  std::vector<std::string> class_names;
  // Identifies the PreprocessStats applied to this set; empty for raw features.
  std::string stats_fingerprint;

  bool has_patches() const { return n_patches > 0; }
  bool has_labels() const { return labels.has_value(); }

  std::span<const float> row(std::size_t i) const {
    return {features.data() + i * dim, dim};
  }
  std::span<const float> patch(std::size_t i, std::size_t p) const {
    return {patch_features.data() + (i * n_patches + p) * dim, dim};
  }

  // Throws DataError naming the first offending sample.
  void validate() const;

  FeatureSet without_labels() const;
};

struct Manifest {
  std::string dataset_name;
  std::string backbone_id;
  std::string pooling_mode = "none";       // "mean" | "cls" | "none"
  std::string feature_family = "general";  // "relu_nonneg" | "general"
  std::string created_by;
  std::optional<std::int64_t> seed;
};

// Throws DataError when the manifest's feature_family is violated by `set`.
void validate_feature_family(const FeatureSet& set, const Manifest& manifest);

std::filesystem::path manifest_path(const std::filesystem::path& container);

// Exact on-disk size of a container with these dimensions.
std::size_t container_size_bytes(std::size_t n_samples, std::size_t n_patches, std::size_t dim,
                                 bool labeled);

void write_container(const FeatureSet& set, const Manifest& manifest,
                     const std::filesystem::path& path);

std::pair<FeatureSet, Manifest> read_container(const std::filesystem::path& path);

}  // namespace fps
