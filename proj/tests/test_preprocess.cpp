#include <cmath>
#include <numeric>

#include "fps/errors.hpp"
#include "fps/preprocess.hpp"
#include "support.hpp"

using namespace fps;

namespace {

FeatureSet from_rows(const std::vector<std::vector<float>>& rows) {
  FeatureSet s;
  s.n_samples = rows.size();
  s.dim = rows.empty() ? 0 : rows[0].size();
  for (const auto& r : rows) s.features.insert(s.features.end(), r.begin(), r.end());
  return s;
}

// Two-pass population mean and std of column k over both sets.
std::pair<double, double> two_pass(const FeatureSet& a, const FeatureSet& b, std::size_t k) {
  std::vector<double> col;
  for (const FeatureSet* s : {&a, &b}) {
    for (std::size_t i = 0; i < s->n_samples; ++i) col.push_back(s->features[i * s->dim + k]);
  }
  const double mean = std::accumulate(col.begin(), col.end(), 0.0) / static_cast<double>(col.size());
  double ss = 0.0;
  for (double v : col) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(col.size()))};
}

// Direct evaluation of 1 / sum_j exp(A cos_ij), rescaled to mean 1.
std::vector<double> weights_oracle(const FeatureSet& s, double a) {
  const std::size_t n = s.n_samples;
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0.0, ni = 0.0, nj = 0.0;
      for (std::size_t k = 0; k < s.dim; ++k) {
        const double xi = s.features[i * s.dim + k];
        const double xj = s.features[j * s.dim + k];
        dot += xi * xj;
        ni += xi * xi;
        nj += xj * xj;
      }
      const double c = (ni == 0.0 || nj == 0.0) ? 0.0 : dot / std::sqrt(ni * nj);
      denom += std::exp(a * c);
    }
    w[i] = 1.0 / denom;
  }
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& v : w) v *= static_cast<double>(n) / total;
  return w;
}

}  // namespace

TEST_CASE("constant features give mu = c and degenerate sigma everywhere") {
  const FeatureSet a = from_rows({{3.5f, 3.5f}, {3.5f, 3.5f}});
  const FeatureSet b = from_rows({{3.5f, 3.5f}});
  const PreprocessStats st = fit_stats(a, b);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(st.mu[k] == 3.5);
    CHECK(st.degenerate(k));
  }
  const FeatureSet out = apply_stats(a, st);
  for (float v : out.features) CHECK(v == 0.0f);
}

TEST_CASE("values {0, 2} in both domains give mu 1, sigma 1") {
  const FeatureSet a = from_rows({{0.0f}, {2.0f}});
  const FeatureSet b = from_rows({{0.0f}, {2.0f}});
  const PreprocessStats st = fit_stats(a, b);
  CHECK(st.mu[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(st.sigma[0] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("fitted statistics match a two-pass oracle on random data") {
  Rng rng(21);
  FeatureSet a = fps::testing::random_set(rng, 50, 8, 0, 2, false);
  FeatureSet b = fps::testing::random_set(rng, 50, 8, 0, 2, false);
  for (auto& v : b.features) v = v * 3.0f + 1.0f;
  const PreprocessStats st = fit_stats(a, b);
  for (std::size_t k = 0; k < 8; ++k) {
    const auto [mean, sd] = two_pass(a, b, k);
    CHECK(st.mu[k] == doctest::Approx(mean).epsilon(1e-12));
    CHECK(st.sigma[k] == doctest::Approx(sd).epsilon(1e-12));
  }
}

TEST_CASE("single dimension formula: mu 1, sigma 2, s 2.5, x 3 gives 2.5") {
  PreprocessStats st;
  st.mu = {1.0};
  st.sigma = {2.0};
  st.s = 2.5;
  const FeatureSet out = apply_stats(from_rows({{3.0f}, {1.0f}}), st);
  CHECK(out.features[0] == 2.5f);
  CHECK(out.features[1] == 0.0f);  // x = mu maps to 0
}

TEST_CASE("fit then apply on the union standardizes to the requested scale") {
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t d = 1 + rng.below(6);
    FeatureSet a = fps::testing::random_set(rng, 30 + rng.below(40), d, 0, 2, false);
    FeatureSet b = fps::testing::random_set(rng, 30 + rng.below(40), d, 0, 2, false);
    for (auto& v : a.features) v = v * 4.0f - 2.0f;
    const PreprocessStats st = fit_stats(a, b);
    const FeatureSet ta = apply_stats(a, st);
    const FeatureSet tb = apply_stats(b, st);
    for (std::size_t k = 0; k < d; ++k) {
      const auto [mean, sd] = two_pass(ta, tb, k);
      CHECK(std::abs(mean) < 1e-6);
      CHECK(std::abs(sd - 2.5) < 1e-4);
    }
  }
}

TEST_CASE("square root is applied before standardization, to patches too") {
  FeatureSet a = from_rows({{4.0f}, {16.0f}});
  a.n_patches = 1;
  a.patch_features = {9.0f, 1.0f};
  const FeatureSet b = from_rows({{4.0f}, {16.0f}});
  const PreprocessStats st = fit_stats(a, b, 2.5, true);
  CHECK(st.sqrt_applied);
  CHECK(st.mu[0] == doctest::Approx(3.0));
  CHECK(st.sigma[0] == doctest::Approx(1.0));
  const FeatureSet out = apply_stats(a, st);
  CHECK(out.features[0] == doctest::Approx(-2.5));
  CHECK(out.features[1] == doctest::Approx(2.5));
  CHECK(out.patch_features[0] == doctest::Approx(0.0));    // sqrt(9) = mu
  CHECK(out.patch_features[1] == doctest::Approx(-5.0));   // (1 - 3) / 1 * 2.5
}

TEST_CASE("negative inputs under sqrt and dimension mismatches are rejected") {
  const FeatureSet neg = from_rows({{-1.0f}});
  const FeatureSet pos = from_rows({{1.0f}});
  CHECK_THROWS_AS(fit_stats(neg, pos, 2.5, true), DataError);
  CHECK_THROWS_AS(fit_stats(pos, from_rows({{1.0f, 2.0f}})), DataError);
  const PreprocessStats st = fit_stats(pos, pos);
  CHECK_THROWS_AS(apply_stats(from_rows({{1.0f, 2.0f}}), st), DataError);
}

TEST_CASE("fingerprint depends on every statistic") {
  PreprocessStats a;
  a.mu = {1.0, 2.0};
  a.sigma = {1.0, 1.0};
  PreprocessStats b = a;
  CHECK(a.fingerprint() == b.fingerprint());
  CHECK(a.fingerprint().size() == 16);
  b.mu[1] = std::nextafter(2.0, 3.0);
  CHECK(a.fingerprint() != b.fingerprint());
  b = a;
  b.s = 2.0;
  CHECK(a.fingerprint() != b.fingerprint());
  b = a;
  b.sqrt_applied = true;
  CHECK(a.fingerprint() != b.fingerprint());
  const FeatureSet out = apply_stats(from_rows({{1.0f, 2.0f}}), a);
  CHECK(out.stats_fingerprint == a.fingerprint());
}

TEST_CASE("sample weights: single row, identical rows, empty target") {
  const SampleWeights one = compute_sample_weights(from_rows({{0.3f, -2.0f}}));
  REQUIRE(one.size() == 1);
  CHECK(one[0] == 1.0);

  std::vector<std::vector<float>> rows(300, {0.7f, -1.3f, 2.9f});
  const SampleWeights same = compute_sample_weights(from_rows(rows));
  for (double w : same.weights) CHECK(w == 1.0);

  CHECK_THROWS_AS(compute_sample_weights(FeatureSet{}), DataError);
}

TEST_CASE("two duplicates and one orthogonal row: direct formula values") {
  const FeatureSet s = from_rows({{1.0f, 0.0f}, {1.0f, 0.0f}, {0.0f, 1.0f}});
  const SampleWeights w = compute_sample_weights(s, 5.0);
  // 3 w_i / sum w with w_dup = 1/(2e^5 + 1), w_orth = 1/(2 + e^5), evaluated at 30 digits
  CHECK(w[0] == doctest::Approx(0.753758439975294601346562103766).epsilon(1e-13));
  CHECK(w[1] == doctest::Approx(0.753758439975294601346562103766).epsilon(1e-13));
  CHECK(w[2] == doctest::Approx(1.49248312004941079730687579247).epsilon(1e-13));
  const auto oracle = weights_oracle(s, 5.0);
  for (std::size_t i = 0; i < 3; ++i) CHECK(w[i] == doctest::Approx(oracle[i]).epsilon(1e-13));
  CHECK(w[2] > w[0]);
}

TEST_CASE("zero-norm rows have cosine 0 against everything") {
  const FeatureSet s = from_rows({{0.0f, 0.0f}, {1.0f, 0.0f}, {2.0f, 0.0f}});
  const SampleWeights w = compute_sample_weights(s, 5.0);
  const auto oracle = weights_oracle(s, 5.0);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(std::isfinite(w[i]));
    CHECK(w[i] == doctest::Approx(oracle[i]).epsilon(1e-13));
  }
}

TEST_CASE("weights on random data: oracle agreement, mean 1, positivity") {
  Rng rng(8);
  for (int trial = 0; trial < 6; ++trial) {
    const std::size_t n = 1 + rng.below(600);
    const FeatureSet s = fps::testing::random_set(rng, n, 1 + rng.below(7), 0, 2, false);
    const double a = 0.5 + 5.0 * rng.uniform01();
    const SampleWeights w = compute_sample_weights(s, a);
    const auto oracle = weights_oracle(s, a);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(w[i] > 0.0);
      CHECK(w[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
      sum += w[i];
    }
    CHECK(std::abs(sum / static_cast<double>(n) - 1.0) < 1e-6);
  }
}

TEST_CASE("weights are permutation-equivariant and row-scale invariant") {
  Rng rng(12);
  const std::size_t n = 120, d = 5;
  const FeatureSet s = fps::testing::random_set(rng, n, d, 0, 2, false);
  const SampleWeights w = compute_sample_weights(s);

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
  FeatureSet p = s;
  FeatureSet scaled = s;
  for (std::size_t i = 0; i < n; ++i) {
    const float c = static_cast<float>(0.25 + 4.0 * rng.uniform01());
    for (std::size_t k = 0; k < d; ++k) {
      p.features[i * d + k] = s.features[perm[i] * d + k];
      scaled.features[i * d + k] = s.features[i * d + k] * c;
    }
  }
  const SampleWeights wp = compute_sample_weights(p);
  const SampleWeights ws = compute_sample_weights(scaled);
  for (std::size_t i = 0; i < n; ++i) {
    CHECK(wp[i] == doctest::Approx(w[perm[i]]).epsilon(1e-12));
    CHECK(ws[i] == doctest::Approx(w[i]).epsilon(1e-6));
  }
}

TEST_CASE("weights do not depend on the worker count") {
  Rng rng(13);
  const FeatureSet s = fps::testing::random_set(rng, 700, 4, 0, 2, false);
  setenv("FPS_THREADS", "1", 1);
  const SampleWeights serial = compute_sample_weights(s);
  setenv("FPS_THREADS", "4", 1);
  const SampleWeights parallel = compute_sample_weights(s);
  unsetenv("FPS_THREADS");
  CHECK(serial.weights == parallel.weights);
}
