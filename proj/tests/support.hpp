#pragma once

#include <Eigen/Dense>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "doctest.h"
#include "fps/classifier.hpp"
#include "fps/feature_store.hpp"
#include "fps/rng.hpp"

namespace fps::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("fps_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::vector<float> random_floats(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(scale * rng.normal());
  return v;
}

// Random labeled or unlabeled FeatureSet; `patches` = 0 gives pooled-only.
inline FeatureSet random_set(Rng& rng, std::size_t n, std::size_t dim, std::size_t patches,
                             std::size_t classes, bool labeled) {
  FeatureSet s;
  s.n_samples = n;
  s.dim = dim;
  s.n_patches = patches;
  s.class_count = static_cast<std::uint32_t>(classes);
  s.domain_tag = "random";
  s.features = random_floats(rng, n * dim);
  s.patch_features = random_floats(rng, n * patches * dim);
  if (labeled) {
    std::vector<std::int32_t> y(n);
    for (auto& v : y) v = static_cast<std::int32_t>(rng.below(classes));
    s.labels = std::move(y);
  }
  return s;
}

inline DecisionHead random_head(Rng& rng, std::size_t dim, std::size_t classes, double scale) {
  DecisionHead h = DecisionHead::zeros(dim, classes);
  for (Eigen::Index i = 0; i < h.W.size(); ++i) h.W.data()[i] = scale * rng.normal();
  for (Eigen::Index i = 0; i < h.b.size(); ++i) h.b.data()[i] = scale * rng.normal();
  for (Eigen::Index i = 0; i < h.dW.size(); ++i) h.dW.data()[i] = scale * rng.normal();
  for (Eigen::Index i = 0; i < h.db.size(); ++i) h.db.data()[i] = scale * rng.normal();
  return h;
}

// Flat views over the four parameter blocks, in W, b, dW, db order.
inline std::vector<double*> parameters(DecisionHead& h) {
  std::vector<double*> out;
  for (Eigen::Index i = 0; i < h.W.size(); ++i) out.push_back(h.W.data() + i);
  for (Eigen::Index i = 0; i < h.b.size(); ++i) out.push_back(h.b.data() + i);
  for (Eigen::Index i = 0; i < h.dW.size(); ++i) out.push_back(h.dW.data() + i);
  for (Eigen::Index i = 0; i < h.db.size(); ++i) out.push_back(h.db.data() + i);
  return out;
}

// Central differences with step h for every parameter.
inline DecisionHead numeric_gradient(const DecisionHead& at,
                                     const std::function<double(const DecisionHead&)>& f,
                                     double h = 1e-4) {
  DecisionHead probe = at;
  DecisionHead grad = DecisionHead::zeros(at.dim(), at.num_classes());
  auto ps = parameters(probe);
  auto gs = parameters(grad);
  for (std::size_t k = 0; k < ps.size(); ++k) {
    const double orig = *ps[k];
    *ps[k] = orig + h;
    const double up = f(probe);
    *ps[k] = orig - h;
    const double down = f(probe);
    *ps[k] = orig;
    *gs[k] = (up - down) / (2.0 * h);
  }
  return grad;
}

// ||a - n|| / max(||a||, ||n||) over the stacked parameter vector; 0 when both vanish.
inline double gradient_error(const DecisionHead& analytic, const DecisionHead& numeric) {
  DecisionHead a = analytic;
  DecisionHead n = numeric;
  auto as = parameters(a);
  auto ns = parameters(n);
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t k = 0; k < as.size(); ++k) {
    diff += (*as[k] - *ns[k]) * (*as[k] - *ns[k]);
    na += *as[k] * *as[k];
    nn += *ns[k] * *ns[k];
  }
  const double scale = std::sqrt(std::max(na, nn));
  return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

inline bool same_bits(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return std::equal(a.data(), a.data() + a.size(), b.data(), [](double x, double y) {
    return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y);
  });
}

inline bool same_head_bits(const DecisionHead& a, const DecisionHead& b) {
  return same_bits(a.W, b.W) && same_bits(a.b, b.b) && same_bits(a.dW, b.dW) &&
         same_bits(a.db, b.db);
}

}  // namespace fps::testing
