#include "fps/selection.hpp"

#include <cmath>
#include <fstream>

#include "fps/errors.hpp"
#include "fps/parallel.hpp"

namespace fps {

double intra_class_distance(const Eigen::MatrixXd& x, std::span<const std::int32_t> labels,
                            std::size_t classes) {
  if (labels.size() != static_cast<std::size_t>(x.rows())) {
    throw DataError("intra_class_distance: label count does not match rows");
  }
  std::size_t counted = 0;
  Eigen::MatrixXd centroid = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(classes), x.cols());
  std::vector<std::size_t> counts(classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) continue;
    const auto y = static_cast<std::size_t>(labels[i]);
    if (y >= classes) throw DataError("intra_class_distance: label out of range");
    centroid.row(static_cast<Eigen::Index>(y)) += x.row(static_cast<Eigen::Index>(i));
    counts[y] += 1;
  }
  for (std::size_t c = 0; c < classes; ++c) {
    if (counts[c] > 0) centroid.row(static_cast<Eigen::Index>(c)) /= static_cast<double>(counts[c]);
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) continue;
    sum += (x.row(static_cast<Eigen::Index>(i)) - centroid.row(labels[i])).squaredNorm();
    ++counted;
  }
  return counted == 0 ? 0.0 : std::sqrt(sum / static_cast<double>(counted));
}

ICDMResult icdm(const FeatureSet& target, std::span<const std::int32_t> pseudo_labels,
                std::optional<std::span<const std::int32_t>> true_labels, std::size_t classes) {
  if (classes == 0) {
    classes = target.class_count;
    for (auto y : pseudo_labels) classes = std::max(classes, static_cast<std::size_t>(y + 1));
    if (true_labels) {
      for (auto y : *true_labels) classes = std::max(classes, static_cast<std::size_t>(y + 1));
    }
  }
  const Eigen::MatrixXd x = feature_matrix(target);
  ICDMResult r;
  r.d_intra_hat = intra_class_distance(x, pseudo_labels, classes);
  r.per_class_counts.assign(classes, 0);
  for (auto y : pseudo_labels) {
    if (y >= 0) r.per_class_counts[static_cast<std::size_t>(y)] += 1;
  }
  if (true_labels) {
    r.d_intra_true = intra_class_distance(x, *true_labels, classes);
    if (*r.d_intra_true > 0.0) r.R = r.d_intra_hat / *r.d_intra_true;
  }
  return r;
}

SweepResult sweep_alpha(const FeatureSet& source, const FeatureSet& target,
                        std::span<const double> candidates, const LossConfig& loss_template,
                        const TrainConfig& train_cfg, Alpha0Rule alpha0_rule,
                        std::optional<std::span<const std::int32_t>> target_labels) {
  if (candidates.empty()) throw DataError("sweep_alpha: no candidates");
  SweepResult result;
  result.reports.resize(candidates.size());
  const FeatureSet unlabeled = target.without_labels();

  parallel_for(candidates.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      LossConfig cfg = loss_template;
      cfg.alpha = candidates[k];
      if (alpha0_rule == Alpha0Rule::kHalfAlpha) cfg.alpha0 = candidates[k] / 2.0;
      result.reports[k] = adapt(source, unlabeled, cfg, train_cfg);
    }
  });

  const Eigen::MatrixXd x = feature_matrix(target);
  std::optional<double> d_true;
  if (target_labels) d_true = intra_class_distance(x, *target_labels, result.reports.front().final_head.num_classes());

  std::size_t best = 0;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const AdaptReport& rep = result.reports[k];
    SweepRow row;
    row.alpha = candidates[k];
    row.d_intra_hat = rep.d_intra_hat;
    if (target_labels) {
      if (*d_true > 0.0) row.R = rep.d_intra_hat / *d_true;
      row.target_accuracy = accuracy(rep.pseudo_labels, *target_labels);
    }
    result.table.push_back(row);
    const auto& cur = result.table[best];
    if (row.d_intra_hat < cur.d_intra_hat ||
        (row.d_intra_hat == cur.d_intra_hat && row.alpha < cur.alpha)) {
      best = k;
    }
  }
  result.table[best].selected = true;
  result.selected_alpha = result.table[best].alpha;
  return result;
}

void write_sweep_csv(const SweepResult& result, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open '" + path.string() + "' for writing");
  f.precision(17);
  f << "alpha,d_intra_hat,R,target_accuracy,selected\n";
  for (const auto& r : result.table) {
    f << r.alpha << ',' << r.d_intra_hat << ',';
    if (r.R) f << *r.R;
    f << ',';
    if (r.target_accuracy) f << *r.target_accuracy;
    f << ',' << (r.selected ? 1 : 0) << '\n';
  }
}

}  // namespace fps
