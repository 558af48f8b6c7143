#include "fps/classifier.hpp"

#include <cmath>
#include <fstream>

#include "fps/errors.hpp"

namespace fps {
namespace {

void check_dim(const DecisionHead& head, Eigen::Index got) {
  if (got != head.W.rows()) {
    throw DataError("dimension mismatch: head expects " + std::to_string(head.W.rows()) +
                    " features, got " + std::to_string(got));
  }
}

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) flat.push_back(m(r, c));
  return flat;
}

Eigen::MatrixXd matrix_from(const nlohmann::json& j, std::size_t rows, std::size_t cols,
                            const char* name) {
  const auto flat = j.at(name).get<std::vector<double>>();
  if (flat.size() != rows * cols) {
    throw DataError(std::string("head field ") + name + " has " + std::to_string(flat.size()) +
                    " entries, expected " + std::to_string(rows * cols));
  }
  Eigen::MatrixXd m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = flat[r * cols + c];
  return m;
}

}  // namespace

DecisionHead DecisionHead::zeros(std::size_t dim, std::size_t classes) {
  const auto d = static_cast<Eigen::Index>(dim);
  const auto c = static_cast<Eigen::Index>(classes);
  return {Eigen::MatrixXd::Zero(d, c), Eigen::VectorXd::Zero(c), Eigen::MatrixXd::Zero(d, c),
          Eigen::VectorXd::Zero(c)};
}

bool DecisionHead::all_finite() const {
  return W.allFinite() && b.allFinite() && dW.allFinite() && db.allFinite();
}

Eigen::VectorXd logits_source(const DecisionHead& head, const Eigen::VectorXd& x) {
  check_dim(head, x.size());
  return head.W.transpose() * x + head.b;
}

Eigen::VectorXd logits_target(const DecisionHead& head, const Eigen::VectorXd& x) {
  check_dim(head, x.size());
  return head.target_weights().transpose() * x + head.target_bias();
}

Eigen::MatrixXd logits(const DecisionHead& head, const Eigen::MatrixXd& x, Plane plane) {
  check_dim(head, x.cols());
  if (plane == Plane::kSource) {
    return (x * head.W).rowwise() + head.b.transpose();
  }
  return (x * head.target_weights()).rowwise() + head.target_bias().transpose();
}

Eigen::VectorXd softmax(const Eigen::VectorXd& y) {
  const Eigen::VectorXd e = (y.array() - y.maxCoeff()).exp();
  return e / e.sum();
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& y) {
  return log_softmax_rows(y).array().exp();
}

Eigen::MatrixXd log_softmax_rows(const Eigen::MatrixXd& y) {
  Eigen::MatrixXd out(y.rows(), y.cols());
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const double m = y.row(i).maxCoeff();
    const double lse = m + std::log((y.row(i).array() - m).exp().sum());
    out.row(i) = y.row(i).array() - lse;
  }
  return out;
}

std::int32_t argmax(std::span<const double> values) {
  std::int32_t best = 0;
  for (std::size_t c = 1; c < values.size(); ++c) {
    if (values[c] > values[static_cast<std::size_t>(best)]) best = static_cast<std::int32_t>(c);
  }
  return best;
}

std::vector<std::int32_t> predict(const DecisionHead& head, const Eigen::MatrixXd& x,
                                  Plane plane) {
  // Row-major copy so each sample's logits are contiguous.
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> z =
      logits(head, x, plane);
  std::vector<std::int32_t> out(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    out[static_cast<std::size_t>(i)] =
        argmax({z.data() + i * z.cols(), static_cast<std::size_t>(z.cols())});
  }
  return out;
}

std::vector<std::int32_t> predict(const DecisionHead& head, const FeatureSet& set, Plane plane) {
  return predict(head, feature_matrix(set), plane);
}

double accuracy(std::span<const std::int32_t> predicted, std::span<const std::int32_t> truth) {
  if (predicted.size() != truth.size()) {
    throw DataError("accuracy: " + std::to_string(predicted.size()) + " predictions vs " +
                    std::to_string(truth.size()) + " labels");
  }
  std::size_t hits = 0, scored = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == kUnlabeled) continue;
    ++scored;
    if (predicted[i] == truth[i]) ++hits;
  }
  return scored == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(scored);
}

Eigen::MatrixXd feature_matrix(const FeatureSet& set) {
  Eigen::MatrixXd x(set.n_samples, set.dim);
  for (std::size_t i = 0; i < set.n_samples; ++i) {
    const auto row = set.row(i);
    for (std::size_t k = 0; k < set.dim; ++k) x(i, k) = row[k];
  }
  return x;
}

Eigen::MatrixXd patch_matrix(const FeatureSet& set) {
  const std::size_t rows = set.n_samples * set.n_patches;
  Eigen::MatrixXd x(rows, set.dim);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < set.dim; ++k) x(r, k) = set.patch_features[r * set.dim + k];
  return x;
}

nlohmann::json head_to_json(const DecisionHead& head) {
  nlohmann::json j;
  j["dim"] = head.dim();
  j["classes"] = head.num_classes();
  j["layout"] = "row-major dim x classes; biases length classes";
  j["W"] = matrix_json(head.W);
  j["b"] = matrix_json(head.b.transpose());
  j["dW"] = matrix_json(head.dW);
  j["db"] = matrix_json(head.db.transpose());
  return j;
}

DecisionHead head_from_json(const nlohmann::json& j) {
  try {
    const auto d = j.at("dim").get<std::size_t>();
    const auto c = j.at("classes").get<std::size_t>();
    DecisionHead head;
    head.W = matrix_from(j, d, c, "W");
    head.b = matrix_from(j, 1, c, "b").transpose();
    head.dW = matrix_from(j, d, c, "dW");
    head.db = matrix_from(j, 1, c, "db").transpose();
    if (!head.all_finite()) throw DataError("head contains non-finite entries");
    return head;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed head JSON: ") + e.what());
  }
}

void write_head(const DecisionHead& head, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot open '" + path.string() + "' for writing");
  f << head_to_json(head).dump(2) << '\n';
}

DecisionHead read_head(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open head '" + path.string() + "'");
  try {
    return head_from_json(nlohmann::json::parse(f));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("malformed head JSON '" + path.string() + "': " + e.what());
  }
}

}  // namespace fps
