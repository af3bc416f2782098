#pragma once

#include "escape/core.hpp"

#include <algorithm>
#include <span>
#include <string>
#include <vector>

namespace escape {

inline constexpr double kDefaultFrexWeight = 0.2;

template <typename A, typename B>
typename A::Scalar raw_association(const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& c) {
  using Scalar = typename A::Scalar;
  if (x.size() != c.size()) throw Error(ErrorKind::invalid_argument, "raw_association dimension mismatch");
  const Scalar nx = x.norm(), nc = c.norm();
  if (nx <= Scalar(1e-12) || nc <= Scalar(1e-12)) throw Error(ErrorKind::numeric, "raw_association of a zero-norm vector");
  return std::clamp(x.dot(c) / (nx * nc), Scalar(-1), Scalar(1));
}

// Rows are instances, columns are concepts (one concept vector per row of `concepts`).
Matrix association_matrix(const Matrix& instances, const Matrix& concepts);
Matrix stack_concepts(std::span<const Concept> concepts);

// Rank 1 is the strongest score; equal scores fall back to lexicographic id order.
std::vector<int> rank_descending(const Eigen::Ref<const Vector>& scores, std::span<const std::string> ids);

// Positions sorted by rank (inverse permutation of a 1-based rank vector).
std::vector<Index> order_from_ranks(std::span<const int> ranks);

struct ExclusiveRankings {
  Matrix z;                           // N x C
  std::vector<std::vector<int>> rank; // per concept, 1-based rank per instance
  std::vector<int> top_concept;       // per instance, column index
};

ExclusiveRankings exclusive_rankings(const Matrix& assoc, std::span<const std::string> ids);

struct FrexResult {
  std::vector<double> frex;
  std::vector<int> rank;  // R_comb, 1-based
};

inline double ecdf(int rank, std::size_t n) { return double(n - std::size_t(rank) + 1) / double(n); }

FrexResult frex_combine(std::span<const int> raw_rank, std::span<const int> ex_rank, double w,
                        std::span<const std::string> ids);

enum class DisparityMode { sum, mean };

struct DisparityTerms {
  double positive_sum = 0, negative_sum = 0;
  std::size_t positive_count = 0, negative_count = 0;

  double positive_mean() const { return positive_count ? positive_sum / double(positive_count) : 0.0; }
  double negative_mean() const { return negative_count ? negative_sum / double(negative_count) : 0.0; }
  double disparity(DisparityMode mode = DisparityMode::sum) const {
    return mode == DisparityMode::sum ? positive_sum - negative_sum : positive_mean() - negative_mean();
  }
};

DisparityTerms disparity_terms(std::span<const double> frex, std::span<const int> labels, const ClassPair& pair);

double between_class_disparity(std::span<const double> frex, std::span<const int> labels, const ClassPair& pair,
                               DisparityMode mode = DisparityMode::sum);

struct AssociationTable {
  std::vector<std::string> instance_ids;
  std::vector<std::string> concept_ids;
  Matrix raw;
  Matrix z;
  Eigen::MatrixXi raw_rank;
  Eigen::MatrixXi ex_rank;
  Matrix frex;
  Eigen::MatrixXi comb_rank;
  std::vector<int> top_concept;

  Index size() const { return raw.rows(); }
  Index concept_count() const { return raw.cols(); }
  Index concept_column(const std::string& concept_id) const;  // throws not_found
  std::vector<double> frex_column(Index c) const;
  // Positions into instance_ids ordered by R_comb for concept c.
  std::vector<Index> comb_order(Index c) const;
  std::vector<Index> raw_order(Index c) const;
};

AssociationTable compute_associations(const Matrix& instances, std::vector<std::string> instance_ids,
                                      std::span<const Concept> concepts, double w = kDefaultFrexWeight);

}  // namespace escape
