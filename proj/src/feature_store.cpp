#include "fps/feature_store.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "fps/errors.hpp"
#include "json.hpp"

namespace fps {
namespace {

constexpr std::array<char, 4> kMagic = {'F', 'P', 'S', 'B'};

class ByteWriter {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

  const std::vector<unsigned char>& buffer() const { return buf_; }
  void reserve(std::size_t n) { buf_.reserve(n); }

 private:
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<unsigned char>& buf) : buf_(buf) {}

  std::size_t offset() const { return pos_; }

  void need(std::size_t n, const char* what) const {
    if (buf_.size() - pos_ < n) {
      std::ostringstream msg;
      msg << "truncated container: " << what << " needs " << n << " bytes at offset " << pos_
          << ", file has " << buf_.size();
      throw DataError(msg.str());
    }
  }
  std::uint8_t u8() {
    need(1, "u8");
    return buf_[pos_++];
  }
  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8, "u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_++]) << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }

 private:
  const std::vector<unsigned char>& buf_;
  std::size_t pos_ = 0;
};

void check_finite(std::span<const float> values, std::size_t row_len, const char* what) {
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (!std::isfinite(values[k])) {
      std::ostringstream msg;
      msg << "non-finite " << what << " value at sample " << k / row_len;
      throw DataError(msg.str());
    }
  }
}

nlohmann::json sidecar_json(const FeatureSet& set, const Manifest& manifest) {
  nlohmann::json j;
  j["format_version"] = kContainerVersion;
  j["dataset_name"] = manifest.dataset_name;
  j["backbone_id"] = manifest.backbone_id;
  j["pooling_mode"] = manifest.pooling_mode;
  j["feature_family"] = manifest.feature_family;
  j["created_by"] = manifest.created_by;
  j["seed"] = manifest.seed ? nlohmann::json(*manifest.seed) : nlohmann::json(nullptr);
  j["domain_tag"] = set.domain_tag;
  j["class_names"] = set.class_names;
  j["stats_fingerprint"] = set.stats_fingerprint;
  return j;
}

}  // namespace

void FeatureSet::validate() const {
  if (features.size() != n_samples * dim) {
    std::ostringstream msg;
    msg << "feature matrix holds " << features.size() << " values, expected " << n_samples
        << " x " << dim;
    throw DataError(msg.str());
  }
  if (patch_features.size() != n_samples * n_patches * dim) {
    std::ostringstream msg;
    msg << "patch tensor holds " << patch_features.size() << " values, expected " << n_samples
        << " x " << n_patches << " x " << dim;
    throw DataError(msg.str());
  }
  if (dim > 0) {
    check_finite(features, dim, "feature");
    if (n_patches > 0) check_finite(patch_features, n_patches * dim, "patch feature");
  }
  if (labels) {
    if (labels->size() != n_samples) {
      throw DataError("label count " + std::to_string(labels->size()) + " != n_samples " +
                      std::to_string(n_samples));
    }
    for (std::size_t i = 0; i < labels->size(); ++i) {
      const std::int32_t y = (*labels)[i];
      if (y == kUnlabeled) continue;
      if (y < 0 || static_cast<std::uint32_t>(y) >= class_count) {
        std::ostringstream msg;
        msg << "label " << y << " at sample " << i << " outside [0, " << class_count << ")";
        throw DataError(msg.str());
      }
    }
  }
  if (!class_names.empty() && class_names.size() != class_count) {
    throw DataError("class_names has " + std::to_string(class_names.size()) + " entries but " +
                    "class_count is " + std::to_string(class_count));
  }
}

FeatureSet FeatureSet::without_labels() const {
  FeatureSet out = *this;
  out.labels.reset();
  return out;
}

void validate_feature_family(const FeatureSet& set, const Manifest& manifest) {
  if (manifest.feature_family == "general") return;
  if (manifest.feature_family != "relu_nonneg") {
    throw DataError("unknown feature_family '" + manifest.feature_family + "'");
  }
  auto scan = [](std::span<const float> values, std::size_t row_len, const char* what) {
    for (std::size_t k = 0; k < values.size(); ++k) {
      if (values[k] < 0.0f) {
        std::ostringstream msg;
        msg << "feature_family relu_nonneg violated: negative " << what << " value " << values[k]
            << " at sample " << k / row_len;
        throw DataError(msg.str());
      }
    }
  };
  if (set.dim == 0) return;
  scan(set.features, set.dim, "feature");
  if (set.has_patches()) scan(set.patch_features, set.n_patches * set.dim, "patch feature");
}

std::filesystem::path manifest_path(const std::filesystem::path& container) {
  std::filesystem::path p = container;
  p += ".json";
  return p;
}

std::size_t container_size_bytes(std::size_t n_samples, std::size_t n_patches, std::size_t dim,
                                 bool labeled) {
  return kContainerHeaderBytes + (labeled ? 4 * n_samples : 0) + 4 * n_samples * dim +
         4 * n_samples * n_patches * dim;
}

void write_container(const FeatureSet& set, const Manifest& manifest,
                     const std::filesystem::path& path) {
  set.validate();
  validate_feature_family(set, manifest);

  ByteWriter out;
  out.reserve(container_size_bytes(set.n_samples, set.n_patches, set.dim, set.has_labels()));
  out.bytes(kMagic.data(), kMagic.size());
  out.u32(kContainerVersion);
  out.u64(set.n_samples);
  out.u64(set.n_patches);
  out.u64(set.dim);
  out.u8(set.has_labels() ? 1 : 0);
  out.u32(set.class_count);
  if (set.labels) {
    for (std::int32_t y : *set.labels) out.i32(y);
  }
  for (float v : set.features) out.f32(v);
  for (float v : set.patch_features) out.f32(v);

  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open '" + path.string() + "' for writing");
    const auto& buf = out.buffer();
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw DataError("write failed for '" + path.string() + "'");
  }
  {
    const auto side = manifest_path(path);
    std::ofstream f(side, std::ios::trunc);
    if (!f) throw DataError("cannot open '" + side.string() + "' for writing");
    f << sidecar_json(set, manifest).dump(2) << '\n';
    if (!f) throw DataError("write failed for '" + side.string() + "'");
  }
}

std::pair<FeatureSet, Manifest> read_container(const std::filesystem::path& path) {
  std::vector<unsigned char> buf;
  {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open container '" + path.string() + "'");
    buf.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  }

  ByteReader in(buf);
  in.need(kMagic.size(), "magic");
  if (std::memcmp(buf.data(), kMagic.data(), kMagic.size()) != 0) {
    throw DataError("bad magic at offset 0 in '" + path.string() + "' (expected FPSB)");
  }
  for (std::size_t i = 0; i < kMagic.size(); ++i) in.u8();
  const std::uint32_t version = in.u32();
  if (version != kContainerVersion) {
    throw DataError("unsupported container version " + std::to_string(version) +
                    " at offset 4");
  }

  FeatureSet set;
  set.n_samples = in.u64();
  set.n_patches = in.u64();
  set.dim = in.u64();
  const std::uint8_t label_flag = in.u8();
  if (label_flag > 1) {
    throw DataError("label_flag " + std::to_string(label_flag) + " at offset 32 is not 0 or 1");
  }
  set.class_count = in.u32();

  // Guard the size arithmetic before allocating anything.
  const long double expected = static_cast<long double>(kContainerHeaderBytes) +
                               (label_flag ? 4.0L * set.n_samples : 0.0L) +
                               4.0L * set.n_samples * set.dim +
                               4.0L * set.n_samples * set.n_patches * set.dim;
  if (expected != static_cast<long double>(buf.size())) {
    std::ostringstream msg;
    msg << (expected > buf.size() ? "truncated" : "oversized") << " container '" << path.string()
        << "': header implies " << static_cast<unsigned long long>(expected) << " bytes, file has "
        << buf.size() << " (payload starts at offset " << kContainerHeaderBytes << ")";
    throw DataError(msg.str());
  }

  if (label_flag) {
    std::vector<std::int32_t> labels(set.n_samples);
    for (auto& y : labels) y = in.i32();
    set.labels = std::move(labels);
  }
  set.features.resize(set.n_samples * set.dim);
  for (auto& v : set.features) v = in.f32();
  set.patch_features.resize(set.n_samples * set.n_patches * set.dim);
  for (auto& v : set.patch_features) v = in.f32();

  Manifest manifest;
  const auto side = manifest_path(path);
  std::ifstream mf(side);
  if (!mf) throw DataError("missing manifest sidecar '" + side.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(mf);
    manifest.dataset_name = j.value("dataset_name", "");
    manifest.backbone_id = j.value("backbone_id", "");
    manifest.pooling_mode = j.value("pooling_mode", "none");
    manifest.feature_family = j.value("feature_family", "general");
    manifest.created_by = j.value("created_by", "");
    if (j.contains("seed") && !j["seed"].is_null()) manifest.seed = j["seed"].get<std::int64_t>();
    set.domain_tag = j.value("domain_tag", "");
    set.class_names = j.value("class_names", std::vector<std::string>{});
    set.stats_fingerprint = j.value("stats_fingerprint", "");
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest '" + side.string() + "': " + e.what());
  }

  set.validate();
  validate_feature_family(set, manifest);
  return {std::move(set), std::move(manifest)};
}

}  // namespace fps
