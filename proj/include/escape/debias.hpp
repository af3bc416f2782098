#pragma once

#include "escape/workbench.hpp"

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace escape {

template <typename A, typename B>
VectorX<typename A::Scalar> debias_vector(const Eigen::MatrixBase<A>& v, const Eigen::MatrixBase<B>& c) {
  using Scalar = typename A::Scalar;
  if (v.size() != c.size()) throw Error(ErrorKind::invalid_argument, "debias dimension mismatch");
  const Scalar cc = c.squaredNorm();
  if (std::sqrt(cc) <= Scalar(1e-12)) throw Error(ErrorKind::numeric, "debias along a zero-norm concept");
  return v - (v.dot(c) / cc) * c;
}

// In place on the listed rows of m.
void debias_rows(Matrix& m, std::span<const Index> rows, const Eigen::Ref<const Vector>& c);

double remaining_bias_ratio(double before, double after, RbrFormula formula = RbrFormula::ratio);

// Bundle rows of `split` members of the table population, in R_comb order for concept column c.
std::vector<Index> select_candidates(const AssociationTable& table, Index c, std::span<const Index> table_rows,
                                     const DatasetBundle& bundle, Split split = Split::train);

std::vector<int> default_grid(std::size_t n_candidates);

struct CurveEvaluation {
  double accuracy_before = 0;
  double subgroup_before = 0;
  std::vector<double> accuracy_after;
  std::vector<double> subgroup_after;
};

struct DebiasCurve {
  std::string concept_id;
  std::vector<int> grid;
  std::vector<double> rbr;
  double disparity_before = 0;
  std::vector<double> disparity_after;
  std::size_t n_candidates = 0;
  std::optional<CurveEvaluation> eval;
};

DebiasCurve debias_curve(const Workbench& wb, std::span<const Concept> concepts, Index target, const ClassPair& pair,
                         std::span<const int> grid, bool evaluate);
DebiasCurve debias_curve(const Workbench& wb, std::span<const Concept> concepts, Index target, const ClassPair& pair,
                         bool evaluate);

int recommend_n(const DebiasCurve& curve, double tolerance);

enum class CandidateSource { ranked, random };

struct DebiasEvaluation {
  int n = 0;
  CandidateSource source = CandidateSource::ranked;
  double acc_before = 0, acc_after = 0;
  double subgroup_before = 0, subgroup_after = 0;
  double disparity_before = 0, disparity_after = 0;
  double rbr = 1;
  double pct_bias_mitigated = 0;
  std::vector<Index> debiased_rows;
};

DebiasEvaluation evaluate_debias(const Workbench& wb, std::span<const Concept> concepts, Index target,
                                 const ClassPair& pair, int n, CandidateSource source = CandidateSource::ranked,
                                 std::uint64_t seed = 0);

// Activations with the given rows projected off the concept; everything else untouched.
Matrix debiased_copy(const Matrix& aligned, std::span<const Index> rows, const Eigen::Ref<const Vector>& c);

void write_curve_csv(std::ostream& out, const DebiasCurve& curve);

}  // namespace escape
