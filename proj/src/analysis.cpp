#include "fps/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include "fps/errors.hpp"
#include "fps/preprocess.hpp"

namespace fps {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double row_distance(std::span<const float> x, std::span<const float> y) {
  double s = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double d = static_cast<double>(x[k]) - y[k];
    s += d * d;
  }
  return std::sqrt(s);
}

void check_labels(const FeatureSet& set, std::span<const std::int32_t> labels, std::size_t classes) {
  if (labels.size() != set.n_samples) {
    throw DataError("distance matrix: " + std::to_string(labels.size()) + " labels for " +
                    std::to_string(set.n_samples) + " samples");
  }
  for (std::int32_t y : labels) {
    if (y != kUnlabeled && (y < 0 || static_cast<std::size_t>(y) >= classes)) {
      throw DataError("distance matrix: label " + std::to_string(y) + " out of range");
    }
  }
}

ClassDistanceMatrix finish(const Eigen::MatrixXd& sums, const Eigen::MatrixXd& counts) {
  ClassDistanceMatrix out;
  out.mean.resize(sums.rows(), sums.cols());
  out.missing.resize(sums.rows(), sums.cols());
  for (Eigen::Index i = 0; i < sums.rows(); ++i) {
    for (Eigen::Index j = 0; j < sums.cols(); ++j) {
      out.missing(i, j) = counts(i, j) == 0.0;
      out.mean(i, j) = out.missing(i, j) ? kNaN : sums(i, j) / counts(i, j);
    }
  }
  return out;
}

double quantile(std::vector<double> sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

ClassDistanceMatrix class_distance_matrix(const FeatureSet& a, std::span<const std::int32_t> labels_a,
                                          const FeatureSet& b, std::span<const std::int32_t> labels_b,
                                          std::size_t classes) {
  if (a.dim != b.dim) throw DataError("distance matrix: dimension mismatch");
  check_labels(a, labels_a, classes);
  check_labels(b, labels_b, classes);
  const auto c = static_cast<Eigen::Index>(classes);
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(c, c);
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(c, c);
  for (std::size_t i = 0; i < a.n_samples; ++i) {
    if (labels_a[i] == kUnlabeled) continue;
    for (std::size_t j = 0; j < b.n_samples; ++j) {
      if (labels_b[j] == kUnlabeled) continue;
      sums(labels_a[i], labels_b[j]) += row_distance(a.row(i), b.row(j));
      counts(labels_a[i], labels_b[j]) += 1.0;
    }
  }
  return finish(sums, counts);
}

ClassDistanceMatrix class_distance_matrix(const FeatureSet& a, std::span<const std::int32_t> labels,
                                          std::size_t classes) {
  check_labels(a, labels, classes);
  const auto c = static_cast<Eigen::Index>(classes);
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(c, c);
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(c, c);
  for (std::size_t i = 0; i < a.n_samples; ++i) {
    if (labels[i] == kUnlabeled) continue;
    for (std::size_t j = i + 1; j < a.n_samples; ++j) {
      if (labels[j] == kUnlabeled) continue;
      const double d = row_distance(a.row(i), a.row(j));
      sums(labels[i], labels[j]) += d;
      counts(labels[i], labels[j]) += 1.0;
      sums(labels[j], labels[i]) += d;
      counts(labels[j], labels[i]) += 1.0;
    }
  }
  // Diagonal pairs were counted in both orientations; the mean is unaffected.
  return finish(sums, counts);
}

Histogram histogram(std::span<const double> values, std::size_t bins,
                    std::optional<std::pair<double, double>> range) {
  if (values.empty()) throw DataError("histogram of zero values");
  if (bins == 0) throw DataError("histogram needs at least one bin");
  Histogram h;
  if (range) {
    h.lo = range->first;
    h.hi = range->second;
  } else {
    const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    h.lo = *mn;
    h.hi = *mx;
  }
  if (!(h.hi > h.lo)) {
    h.lo -= 0.5;
    h.hi += 0.5;
  }
  h.counts.assign(bins, 0);
  const double width = (h.hi - h.lo) / static_cast<double>(bins);
  for (double v : values) {
    if (!std::isfinite(v)) throw DataError("histogram of non-finite value");
    if (v < h.lo || v > h.hi) continue;
    auto k = static_cast<std::size_t>((v - h.lo) / width);
    h.counts[std::min(k, bins - 1)] += 1;
  }
  return h;
}

double silverman_bandwidth(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n == 0) throw DataError("bandwidth of zero values");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double sd = n > 1 ? std::sqrt(var / static_cast<double>(n - 1)) : 0.0;
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double iqr = (quantile(sorted, 0.75) - quantile(sorted, 0.25)) / 1.34;
  double spread = std::min(sd, iqr);
  if (!(spread > 0.0)) spread = std::max(sd, iqr);
  if (!(spread > 0.0)) return 1e-3 * std::max(1.0, std::abs(mean));
  return 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
}

double trapezoid(std::span<const double> x, std::span<const double> y) {
  double area = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) area += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
  return area;
}

Distribution distribution_export(std::span<const double> values, std::size_t bins,
                                 bool with_density) {
  Distribution out;
  out.histogram = histogram(values, bins);
  if (!with_density) return out;

  const double h = silverman_bandwidth(values);
  out.bandwidth = h;
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  const double lo = *mn - 5.0 * h;
  const double hi = *mx + 5.0 * h;
  // At least 8 points per bandwidth keeps the trapezoid error far below 1e-3.
  const auto points = static_cast<std::size_t>(
      std::clamp(std::ceil((hi - lo) / (h / 8.0)) + 1.0, 512.0, 200000.0));
  const double step = (hi - lo) / static_cast<double>(points - 1);
  const double norm = 1.0 / (static_cast<double>(values.size()) * h * std::sqrt(2.0 * std::numbers::pi));
  out.grid.resize(points);
  out.density.assign(points, 0.0);
  for (std::size_t g = 0; g < points; ++g) {
    const double x = lo + step * static_cast<double>(g);
    out.grid[g] = x;
    double s = 0.0;
    for (double v : values) {
      const double u = (x - v) / h;
      if (std::abs(u) < 12.0) s += std::exp(-0.5 * u * u);
    }
    out.density[g] = s * norm;
  }
  return out;
}

DecisionHead plane_head(double theta, double b) {
  DecisionHead head = DecisionHead::zeros(2, 2);
  head.W(0, 0) = 0.5 * std::sin(theta);
  head.W(1, 0) = 0.5 * std::cos(theta);
  head.W(0, 1) = -head.W(0, 0);
  head.W(1, 1) = -head.W(1, 0);
  head.b(0) = 0.5 * b;
  head.b(1) = -0.5 * b;
  return head;
}

std::vector<LandscapeCell> landscape_2d(const FeatureSet& source, const FeatureSet& target,
                                        std::span<const double> theta_grid,
                                        std::span<const double> b_grid, const LossConfig& loss_cfg,
                                        double joint_beta) {
  if (!(joint_beta >= 0.0 && joint_beta <= 1.0)) throw DataError("landscape joint_beta must lie in [0, 1]");
  if (source.dim != 2 || target.dim != 2) throw DataError("landscape needs 2-D features");
  if (!source.labels) throw DataError("landscape needs source labels");
  for (const FeatureSet* set : {&source, &target}) {
    if (set->class_count > 2) throw DataError("landscape needs exactly two classes");
    if (set->labels) {
      for (std::int32_t y : *set->labels) {
        if (y > 1) throw DataError("landscape needs exactly two classes");
      }
    }
  }

  const Eigen::MatrixXd xs = feature_matrix(source);
  const Eigen::MatrixXd xt = feature_matrix(target);
  const SampleWeights weights = target.n_samples > 0
                                    ? compute_sample_weights(target, loss_cfg.weight_sharpness)
                                    : SampleWeights{};
  const double beta = joint_beta;
  const auto& ys = *source.labels;

  std::vector<LandscapeCell> cells;
  cells.reserve(theta_grid.size() * b_grid.size());
  for (double theta : theta_grid) {
    for (double b : b_grid) {
      const DecisionHead head = plane_head(theta, b);
      LandscapeCell cell;
      cell.theta = theta;
      cell.b = b;
      const auto ps = predict(head, xs, Plane::kSource);
      const auto pt = predict(head, xt, Plane::kTarget);
      cell.source_accuracy = accuracy(ps, ys);
      std::size_t hits = 0, scored = 0;
      for (std::size_t i = 0; i < ps.size(); ++i) {
        if (ys[i] == kUnlabeled) continue;
        ++scored;
        hits += ps[i] == ys[i];
      }
      if (target.labels) {
        cell.target_accuracy = accuracy(pt, *target.labels);
        for (std::size_t i = 0; i < pt.size(); ++i) {
          if ((*target.labels)[i] == kUnlabeled) continue;
          ++scored;
          hits += pt[i] == (*target.labels)[i];
        }
      }
      cell.combined_accuracy = scored ? static_cast<double>(hits) / scored : 0.0;
      cell.supervised_loss = loss_sce(head, xs, ys);
      if (target.n_samples > 0) {
        cell.unsupervised_loss = entropy_loss(softmax_rows(logits(head, xt, Plane::kTarget)),
                                              weights, loss_cfg.alpha, loss_cfg.sign);
      }
      cell.joint_loss = beta * cell.supervised_loss + (1.0 - beta) * cell.unsupervised_loss;
      cells.push_back(cell);
    }
  }
  return cells;
}

std::vector<double> sample_entropies(const DecisionHead& head, const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd logp = log_softmax_rows(logits(head, x, Plane::kTarget));
  std::vector<double> out(static_cast<std::size_t>(logp.rows()));
  for (Eigen::Index i = 0; i < logp.rows(); ++i) {
    out[static_cast<std::size_t>(i)] = -(logp.row(i).array().exp() * logp.row(i).array()).sum();
  }
  return out;
}

void write_landscape_csv(const std::vector<LandscapeCell>& cells, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open '" + path.string() + "' for writing");
  f.precision(17);
  f << "theta,b,source_accuracy,target_accuracy,combined_accuracy,supervised_loss,"
       "unsupervised_loss,joint_loss\n";
  for (const auto& c : cells) {
    f << c.theta << ',' << c.b << ',' << c.source_accuracy << ',' << c.target_accuracy << ','
      << c.combined_accuracy << ',' << c.supervised_loss << ',' << c.unsupervised_loss << ','
      << c.joint_loss << '\n';
  }
}

void write_distance_csv(const ClassDistanceMatrix& m, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open '" + path.string() + "' for writing");
  f.precision(17);
  f << "row_class,col_class,mean_distance,missing\n";
  for (Eigen::Index i = 0; i < m.mean.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.mean.cols(); ++j) {
      f << i << ',' << j << ',';
      if (!m.missing(i, j)) f << m.mean(i, j);
      f << ',' << (m.missing(i, j) ? 1 : 0) << '\n';
    }
  }
}

void write_distribution_csv(const Distribution& d, const std::filesystem::path& histogram_path,
                            const std::filesystem::path& density_path) {
  {
    std::ofstream f(histogram_path);
    if (!f) throw DataError("cannot open '" + histogram_path.string() + "' for writing");
    f.precision(17);
    f << "bin_lo,bin_hi,count\n";
    const double w = d.histogram.bin_width();
    for (std::size_t k = 0; k < d.histogram.counts.size(); ++k) {
      f << d.histogram.lo + w * k << ',' << d.histogram.lo + w * (k + 1) << ','
        << d.histogram.counts[k] << '\n';
    }
  }
  if (d.density.empty()) return;
  std::ofstream f(density_path);
  if (!f) throw DataError("cannot open '" + density_path.string() + "' for writing");
  f.precision(17);
  f << "x,density\n";
  for (std::size_t g = 0; g < d.grid.size(); ++g) f << d.grid[g] << ',' << d.density[g] << '\n';
}

}  // namespace fps
