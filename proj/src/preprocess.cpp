#include "fps/preprocess.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <sstream>

#include "fps/errors.hpp"
#include "fps/parallel.hpp"

namespace fps {
namespace {

class Fnv1a {
 public:
  void add(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h_ ^= (v >> (8 * i)) & 0xFF;
      h_ *= 0x100000001B3ULL;
    }
  }
  void add(double v) { add(std::bit_cast<std::uint64_t>(v)); }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 0xCBF29CE484222325ULL;
};

double transformed(float raw, bool sqrt_first) {
  const double x = raw;
  return sqrt_first ? std::sqrt(x) : x;
}

void require_nonnegative(const FeatureSet& set, const char* which) {
  for (std::size_t k = 0; k < set.features.size(); ++k) {
    if (set.features[k] < 0.0f) {
      std::ostringstream msg;
      msg << "square-root transform needs non-negative features; " << which << " sample "
          << k / set.dim << " has " << set.features[k];
      throw DataError(msg.str());
    }
  }
}

constexpr std::size_t kWeightBlock = 256;

}  // namespace

std::string PreprocessStats::fingerprint() const {
  Fnv1a h;
  h.add(static_cast<std::uint64_t>(mu.size()));
  for (double v : mu) h.add(v);
  for (double v : sigma) h.add(v);
  h.add(s);
  h.add(static_cast<std::uint64_t>(sqrt_applied));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h.value()));
  return buf;
}

SampleWeights SampleWeights::uniform(std::size_t n) {
  SampleWeights w;
  w.weights.assign(n, 1.0);
  return w;
}

PreprocessStats fit_stats(const FeatureSet& source, const FeatureSet& target, double s,
                          bool apply_sqrt) {
  if (source.dim != target.dim) {
    throw DataError("dimension mismatch: source dim " + std::to_string(source.dim) +
                    ", target dim " + std::to_string(target.dim));
  }
  const std::size_t total = source.n_samples + target.n_samples;
  if (total == 0) throw DataError("cannot fit statistics on zero samples");
  if (apply_sqrt) {
    require_nonnegative(source, "source");
    require_nonnegative(target, "target");
  }

  const std::size_t d = source.dim;
  std::vector<double> mean(d, 0.0), m2(d, 0.0);
  std::size_t count = 0;
  // Welford update, one row at a time over source then target.
  auto accumulate = [&](const FeatureSet& set) {
    for (std::size_t i = 0; i < set.n_samples; ++i) {
      ++count;
      const auto row = set.row(i);
      for (std::size_t k = 0; k < d; ++k) {
        const double x = transformed(row[k], apply_sqrt);
        const double delta = x - mean[k];
        mean[k] += delta / static_cast<double>(count);
        m2[k] += delta * (x - mean[k]);
      }
    }
  };
  accumulate(source);
  accumulate(target);

  PreprocessStats stats;
  stats.mu = std::move(mean);
  stats.sigma.resize(d);
  for (std::size_t k = 0; k < d; ++k) {
    stats.sigma[k] = std::sqrt(std::max(0.0, m2[k] / static_cast<double>(count)));
  }
  stats.s = s;
  stats.sqrt_applied = apply_sqrt;
  return stats;
}

FeatureSet apply_stats(const FeatureSet& set, const PreprocessStats& stats) {
  if (set.dim != stats.dim()) {
    throw DataError("dimension mismatch: set dim " + std::to_string(set.dim) + ", stats dim " +
                    std::to_string(stats.dim()));
  }
  if (stats.sqrt_applied) {
    require_nonnegative(set, set.domain_tag.empty() ? "input" : set.domain_tag.c_str());
    for (std::size_t k = 0; k < set.patch_features.size(); ++k) {
      if (set.patch_features[k] < 0.0f) {
        throw DataError("square-root transform needs non-negative patch features; sample " +
                        std::to_string(k / (set.n_patches * set.dim)) + " is negative");
      }
    }
  }

  const std::size_t d = set.dim;
  std::vector<double> scale(d);
  for (std::size_t k = 0; k < d; ++k) {
    scale[k] = stats.degenerate(k) ? 0.0 : stats.s / stats.sigma[k];
  }
  auto transform = [&](std::vector<float>& values) {
    for (std::size_t idx = 0; idx < values.size(); ++idx) {
      const std::size_t k = idx % d;
      const double x = transformed(values[idx], stats.sqrt_applied);
      values[idx] = static_cast<float>((x - stats.mu[k]) * scale[k]);
    }
  };

  FeatureSet out = set;
  if (d > 0) {
    transform(out.features);
    transform(out.patch_features);
  }
  out.stats_fingerprint = stats.fingerprint();
  return out;
}

SampleWeights compute_sample_weights(const FeatureSet& target, double sharpness) {
  const std::size_t n = target.n_samples;
  if (n == 0) throw DataError("sample weights need at least one target sample");
  const std::size_t d = target.dim;

  // Unit-normalized rows; zero rows stay zero so their cosine with anything is 0.
  std::vector<double> unit(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = target.row(i);
    double norm2 = 0.0;
    for (std::size_t k = 0; k < d; ++k) norm2 += static_cast<double>(row[k]) * row[k];
    const double inv = norm2 > 0.0 ? 1.0 / std::sqrt(norm2) : 0.0;
    for (std::size_t k = 0; k < d; ++k) unit[i * d + k] = row[k] * inv;
  }

  // Row blocks against column blocks; each row's sum runs over j in ascending order.
  std::vector<double> raw(n, 0.0);
  const std::size_t blocks = (n + kWeightBlock - 1) / kWeightBlock;
  parallel_for(blocks, [&](std::size_t b0, std::size_t b1) {
    std::vector<double> sums(kWeightBlock);
    for (std::size_t b = b0; b < b1; ++b) {
      const std::size_t r0 = b * kWeightBlock;
      const std::size_t r1 = std::min(n, r0 + kWeightBlock);
      std::fill(sums.begin(), sums.end(), 0.0);
      for (std::size_t c0 = 0; c0 < n; c0 += kWeightBlock) {
        const std::size_t c1 = std::min(n, c0 + kWeightBlock);
        for (std::size_t i = r0; i < r1; ++i) {
          const double* xi = unit.data() + i * d;
          double acc = sums[i - r0];
          for (std::size_t j = c0; j < c1; ++j) {
            const double* xj = unit.data() + j * d;
            double dot = 0.0;
            for (std::size_t k = 0; k < d; ++k) dot += xi[k] * xj[k];
            acc += std::exp(sharpness * dot);
          }
          sums[i - r0] = acc;
        }
      }
      for (std::size_t i = r0; i < r1; ++i) raw[i] = 1.0 / sums[i - r0];
    }
  });

  SampleWeights out;
  out.sharpness = sharpness;
  // Equal raw weights normalize to exactly 1; a rounded sum would not.
  if (std::all_of(raw.begin(), raw.end(), [&](double w) { return w == raw[0]; })) {
    out.weights.assign(n, 1.0);
    return out;
  }
  double total = 0.0;
  for (double w : raw) total += w;
  out.weights.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.weights[i] = static_cast<double>(n) * raw[i] / total;
  }
  return out;
}

}  // namespace fps
