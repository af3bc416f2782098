#pragma once

#include "escape/bundle.hpp"
#include "escape/head.hpp"

#include <array>
#include <optional>
#include <span>
#include <vector>

namespace escape {

inline constexpr double kUnknownUnknownThreshold = 0.75;
inline constexpr int kBrierBins = 20;

struct ConfusionSummary {
  Eigen::MatrixXi matrix;  // row = true class, column = predicted class
  std::vector<int> misclassified;
  std::vector<int> unknown_unknowns;
  Eigen::MatrixXi uu_cells;
  std::array<int, kBrierBins> brier_histogram{};

  int total() const { return matrix.sum(); }
  double accuracy() const { return total() ? double(matrix.trace()) / double(total()) : 0.0; }
  double class_accuracy(int k) const;
};

ConfusionSummary confusion_summary(std::span<const Prediction> predictions, std::span<const int> labels,
                                   int num_classes, double uu_threshold = kUnknownUnknownThreshold);

struct PairMember {
  std::size_t position;  // index into the predictions passed in
  ConfusionCase confusion;
};

// Members whose true label is in the pair; out-of-pair predictions go to the pair class with higher probability.
std::vector<PairMember> pair_subset(std::span<const Prediction> predictions, std::span<const int> labels,
                                    const ClassPair& pair);

enum class Projection { pca, precomputed };

Matrix project_pca(const Matrix& x);
Matrix project_precomputed(const DatasetBundle& bundle, std::span<const Index> rows);

// Positions of the k nearest rows by Euclidean distance, ties by id; `exclude` removes the query itself.
std::vector<Index> knn(const Matrix& x, std::span<const std::string> ids, const Eigen::Ref<const Vector>& query,
                       int k, std::optional<Index> exclude = std::nullopt);
std::vector<Index> knn(const Matrix& x, std::span<const std::string> ids, const std::string& query_id, int k);

inline constexpr int kInstanceNeighbors = 5;
inline constexpr int kSegmentNeighbors = 10;

}  // namespace escape
