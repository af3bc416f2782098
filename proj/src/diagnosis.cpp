#include "escape/diagnosis.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <numeric>

namespace escape {

double ConfusionSummary::class_accuracy(int k) const {
  const int n = matrix.row(k).sum();
  return n ? double(matrix(k, k)) / double(n) : 0.0;
}

ConfusionSummary confusion_summary(std::span<const Prediction> predictions, std::span<const int> labels,
                                   int num_classes, double uu_threshold) {
  if (predictions.size() != labels.size())
    throw Error(ErrorKind::invalid_argument, "confusion summary needs one label per prediction");
  ConfusionSummary s;
  s.matrix = Eigen::MatrixXi::Zero(num_classes, num_classes);
  s.uu_cells = Eigen::MatrixXi::Zero(num_classes, num_classes);
  s.misclassified.assign(std::size_t(num_classes), 0);
  s.unknown_unknowns.assign(std::size_t(num_classes), 0);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const int y = labels[i], p = predictions[i].predicted;
    if (y < 0 || y >= num_classes || p < 0 || p >= num_classes)
      throw Error(ErrorKind::invalid_argument, "class index out of range in confusion summary");
    ++s.matrix(y, p);
    const double b = predictions[i].brier;
    ++s.brier_histogram[std::size_t(std::clamp(int(b * kBrierBins), 0, kBrierBins - 1))];
    if (y != p) {
      ++s.misclassified[std::size_t(y)];
      if (b >= uu_threshold) {
        ++s.unknown_unknowns[std::size_t(y)];
        ++s.uu_cells(y, p);
      }
    }
  }
  return s;
}

std::vector<PairMember> pair_subset(std::span<const Prediction> predictions, std::span<const int> labels,
                                    const ClassPair& pair) {
  if (predictions.size() != labels.size())
    throw Error(ErrorKind::invalid_argument, "pair subset needs one label per prediction");
  if (pair.negative == pair.positive) throw Error(ErrorKind::invalid_argument, "class pair needs two distinct classes");
  std::vector<PairMember> out;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const int y = labels[i];
    if (y != pair.positive && y != pair.negative) continue;
    const auto& p = predictions[i];
    bool says_positive;
    if (p.predicted == pair.positive)
      says_positive = true;
    else if (p.predicted == pair.negative)
      says_positive = false;
    else
      says_positive = p.probs[pair.positive] > p.probs[pair.negative];
    const bool is_positive = y == pair.positive;
    const auto c = is_positive ? (says_positive ? ConfusionCase::TP : ConfusionCase::FN)
                               : (says_positive ? ConfusionCase::FP : ConfusionCase::TN);
    out.push_back({i, c});
  }
  return out;
}

Matrix project_pca(const Matrix& x) {
  if (x.rows() < 2) throw Error(ErrorKind::invalid_argument, "PCA projection needs at least two rows");
  const Matrix centered = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / double(x.rows());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw Error(ErrorKind::numeric, "eigendecomposition failed");

  Matrix basis = Matrix::Zero(x.cols(), 2);
  const Index d = x.cols();
  for (Index j = 0; j < std::min<Index>(2, d); ++j) {
    Vector dir = eig.eigenvectors().col(d - 1 - j);
    for (Index i = 0; i < dir.size(); ++i) {
      if (std::abs(dir[i]) > 1e-12) {
        if (dir[i] < 0) dir = -dir;
        break;
      }
    }
    basis.col(j) = dir;
  }
  return centered * basis;
}

Matrix project_precomputed(const DatasetBundle& bundle, std::span<const Index> rows) {
  Matrix out(static_cast<Index>(rows.size()), 2);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& x = bundle.instances[std::size_t(rows[i])];
    if (!x.coords2d) throw Error(ErrorKind::invalid_argument, "instance has no precomputed coordinates", x.id);
    out(Index(i), 0) = (*x.coords2d)[0];
    out(Index(i), 1) = (*x.coords2d)[1];
  }
  return out;
}

std::vector<Index> knn(const Matrix& x, std::span<const std::string> ids, const Eigen::Ref<const Vector>& query, int k,
                       std::optional<Index> exclude) {
  if (ids.size() != std::size_t(x.rows())) throw Error(ErrorKind::invalid_argument, "knn needs one id per row");
  if (query.size() != x.cols()) throw Error(ErrorKind::invalid_argument, "knn query dimension mismatch");
  const Index population = x.rows() - (exclude ? 1 : 0);
  if (k < 1 || k > population)
    throw Error(ErrorKind::invalid_argument,
                "k=" + std::to_string(k) + " out of range for " + std::to_string(population) + " candidates");
  const Vector dist = (x.rowwise() - query.transpose()).rowwise().squaredNorm();
  std::vector<Index> order;
  order.reserve(std::size_t(x.rows()));
  for (Index i = 0; i < x.rows(); ++i)
    if (!exclude || *exclude != i) order.push_back(i);
  auto closer = [&](Index a, Index b) {
    if (dist[a] != dist[b]) return dist[a] < dist[b];
    return ids[std::size_t(a)] < ids[std::size_t(b)];
  };
  std::partial_sort(order.begin(), order.begin() + k, order.end(), closer);
  order.resize(std::size_t(k));
  return order;
}

std::vector<Index> knn(const Matrix& x, std::span<const std::string> ids, const std::string& query_id, int k) {
  auto it = std::find(ids.begin(), ids.end(), query_id);
  if (it == ids.end()) throw Error(ErrorKind::not_found, "unknown id '" + query_id + "'", query_id);
  const auto self = static_cast<Index>(it - ids.begin());
  return knn(x, ids, x.row(self).transpose(), k, self);
}

}  // namespace escape
