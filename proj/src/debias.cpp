#include "escape/debias.hpp"

#include "escape/report.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace escape {

void debias_rows(Matrix& m, std::span<const Index> rows, const Eigen::Ref<const Vector>& c) {
  for (Index r : rows) m.row(r) = debias_vector(m.row(r).transpose(), c).transpose();
}

Matrix debiased_copy(const Matrix& aligned, std::span<const Index> rows, const Eigen::Ref<const Vector>& c) {
  Matrix out = aligned;
  debias_rows(out, rows, c);
  return out;
}

double remaining_bias_ratio(double before, double after, RbrFormula formula) {
  if (std::abs(before) <= 1e-9)
    throw Error(ErrorKind::numeric, "disparity before debiasing is too close to zero for a ratio");
  if (formula == RbrFormula::printed) return 1.0 - (after - before) / before;
  return after / before;
}

std::vector<Index> select_candidates(const AssociationTable& table, Index c, std::span<const Index> table_rows,
                                     const DatasetBundle& bundle, Split split) {
  if (table_rows.size() != std::size_t(table.size()))
    throw Error(ErrorKind::invalid_argument, "candidate selection needs one bundle row per table row");
  std::vector<Index> out;
  for (Index pos : table.comb_order(c)) {
    const Index row = table_rows[std::size_t(pos)];
    if (bundle.instances[std::size_t(row)].split == split) out.push_back(row);
  }
  return out;
}

std::vector<int> default_grid(std::size_t n_candidates) {
  std::vector<int> grid;
  for (int n : {0, 25, 50, 100, 200, 400})
    if (std::size_t(n) <= n_candidates) grid.push_back(n);
  return grid;
}

namespace {

// Everything both the curve and the single-point evaluation need about the starting state.
struct Baseline {
  std::vector<Index> train_rows;
  std::vector<int> train_labels;
  std::vector<Index> candidates;
  std::vector<Index> test_rows;
  std::vector<Index> subgroup;
  double disparity = 0;
  double accuracy = 0;
  double subgroup_accuracy = 0;
};

Baseline baseline(const Workbench& wb, std::span<const Concept> concepts, Index target, const ClassPair& pair,
                  bool evaluate) {
  if (target < 0 || std::size_t(target) >= concepts.size())
    throw Error(ErrorKind::invalid_argument, "target concept index out of range");
  check_pair(pair, wb.bundle().num_classes());
  Baseline b;
  b.train_rows = wb.bundle().rows(Split::train, pair);
  if (b.train_rows.empty()) throw Error(ErrorKind::invalid_argument, "class pair has no train instances");
  b.train_labels = wb.bundle().labels(b.train_rows);
  const auto table = wb.associations(b.train_rows, concepts);
  b.disparity = disparity_terms(table.frex_column(target), b.train_labels, pair).disparity(wb.options().disparity);
  b.candidates = select_candidates(table, target, b.train_rows, wb.bundle());
  if (b.candidates.empty()) throw Error(ErrorKind::invalid_argument, "no debias candidates");
  if (evaluate) {
    b.test_rows = wb.bundle().rows(Split::test);
    const auto test_pair = wb.bundle().rows(Split::test, pair);
    if (test_pair.empty()) throw Error(ErrorKind::invalid_argument, "class pair has no test instances");
    const auto test_table = wb.associations(test_pair, concepts);
    const auto order = test_table.comb_order(target);
    const std::size_t q = std::min<std::size_t>(std::size_t(std::max(wb.options().subgroup_q, 1)), order.size());
    for (std::size_t i = 0; i < q; ++i) b.subgroup.push_back(test_pair[std::size_t(order[i])]);
    b.accuracy = wb.accuracy(b.test_rows);
    b.subgroup_accuracy = wb.accuracy(b.subgroup);
  }
  return b;
}

double disparity_on(const Workbench& wb, const Matrix& aligned, std::span<const Concept> concepts, Index target,
                    const ClassPair& pair, const Baseline& b) {
  const auto table = wb.associations(b.train_rows, concepts, &aligned);
  return disparity_terms(table.frex_column(target), b.train_labels, pair).disparity(wb.options().disparity);
}

}  // namespace

DebiasCurve debias_curve(const Workbench& wb, std::span<const Concept> concepts, Index target, const ClassPair& pair,
                         std::span<const int> grid, bool evaluate) {
  if (grid.empty() || grid.front() != 0) throw Error(ErrorKind::invalid_argument, "debias grid must start at 0");
  if (!std::is_sorted(grid.begin(), grid.end()) || std::adjacent_find(grid.begin(), grid.end()) != grid.end())
    throw Error(ErrorKind::invalid_argument, "debias grid must be strictly ascending");

  const auto b = baseline(wb, concepts, target, pair, evaluate);
  if (std::size_t(grid.back()) > b.candidates.size())
    throw Error(ErrorKind::invalid_argument, "grid exceeds the " + std::to_string(b.candidates.size()) + " candidates");

  DebiasCurve curve;
  curve.concept_id = concepts[std::size_t(target)].id;
  curve.grid.assign(grid.begin(), grid.end());
  curve.disparity_before = b.disparity;
  curve.n_candidates = b.candidates.size();
  if (evaluate) curve.eval = CurveEvaluation{b.accuracy, b.subgroup_accuracy, {}, {}};

  const Vector& c = concepts[std::size_t(target)].vector;
  for (int n : grid) {
    if (n == 0) {
      curve.disparity_after.push_back(b.disparity);
      curve.rbr.push_back(1.0);
      if (evaluate) {
        curve.eval->accuracy_after.push_back(b.accuracy);
        curve.eval->subgroup_after.push_back(b.subgroup_accuracy);
      }
      continue;
    }
    const std::span<const Index> rows(b.candidates.data(), std::size_t(n));
    const Matrix aligned = debiased_copy(wb.instances(), rows, c);
    const double after = disparity_on(wb, aligned, concepts, target, pair, b);
    curve.disparity_after.push_back(after);
    curve.rbr.push_back(remaining_bias_ratio(b.disparity, after, wb.options().rbr));
    if (evaluate) {
      const HeadModel head = wb.train(aligned);
      curve.eval->accuracy_after.push_back(wb.accuracy(b.test_rows, &head));
      curve.eval->subgroup_after.push_back(wb.accuracy(b.subgroup, &head));
    }
  }
  return curve;
}

DebiasCurve debias_curve(const Workbench& wb, std::span<const Concept> concepts, Index target, const ClassPair& pair,
                         bool evaluate) {
  check_pair(pair, wb.bundle().num_classes());
  const auto n = wb.bundle().rows(Split::train, pair).size();
  const auto grid = default_grid(n);
  return debias_curve(wb, concepts, target, pair, grid, evaluate);
}

int recommend_n(const DebiasCurve& curve, double tolerance) {
  if (curve.grid.empty() || curve.grid.size() != curve.rbr.size())
    throw Error(ErrorKind::invalid_argument, "recommendation needs a non-empty curve");
  const double t = std::clamp(tolerance, 0.0, 1.0);
  const double n_max = std::max(1, curve.grid.back());
  std::size_t best = 0;
  double best_cost = 0;
  for (std::size_t i = 0; i < curve.grid.size(); ++i) {
    const double cost = (1.0 - t) * (curve.grid[i] / n_max) + t * curve.rbr[i];
    if (i == 0 || cost < best_cost - 1e-12) {
      best = i;
      best_cost = cost;
    }
  }
  return curve.grid[best];
}

DebiasEvaluation evaluate_debias(const Workbench& wb, std::span<const Concept> concepts, Index target,
                                 const ClassPair& pair, int n, CandidateSource source, std::uint64_t seed) {
  const auto b = baseline(wb, concepts, target, pair, true);
  if (n < 0 || std::size_t(n) > b.candidates.size())
    throw Error(ErrorKind::invalid_argument,
                "n=" + std::to_string(n) + " outside [0, " + std::to_string(b.candidates.size()) + "]");

  DebiasEvaluation e;
  e.n = n;
  e.source = source;
  e.acc_before = b.accuracy;
  e.subgroup_before = b.subgroup_accuracy;
  e.disparity_before = b.disparity;
  if (source == CandidateSource::ranked) {
    e.debiased_rows.assign(b.candidates.begin(), b.candidates.begin() + n);
  } else {
    std::vector<Index> pool = b.train_rows;
    std::mt19937_64 rng(seed);
    std::shuffle(pool.begin(), pool.end(), rng);
    e.debiased_rows.assign(pool.begin(), pool.begin() + n);
  }

  if (n == 0) {
    e.acc_after = e.acc_before;
    e.subgroup_after = e.subgroup_before;
    e.disparity_after = e.disparity_before;
  } else {
    const Matrix aligned = debiased_copy(wb.instances(), e.debiased_rows, concepts[std::size_t(target)].vector);
    e.disparity_after = disparity_on(wb, aligned, concepts, target, pair, b);
    const HeadModel head = wb.train(aligned);
    e.acc_after = wb.accuracy(b.test_rows, &head);
    e.subgroup_after = wb.accuracy(b.subgroup, &head);
  }
  e.rbr = n == 0 ? 1.0 : remaining_bias_ratio(e.disparity_before, e.disparity_after, wb.options().rbr);
  e.pct_bias_mitigated = 1.0 - e.rbr;
  return e;
}

void write_curve_csv(std::ostream& out, const DebiasCurve& curve) {
  CsvWriter csv(out);
  csv.row("n", "rbr", "disparity_after", "acc_after", "subgroup_after");
  for (std::size_t i = 0; i < curve.grid.size(); ++i) {
    if (curve.eval)
      csv.row(curve.grid[i], curve.rbr[i], curve.disparity_after[i], curve.eval->accuracy_after[i],
              curve.eval->subgroup_after[i]);
    else
      csv.row(curve.grid[i], curve.rbr[i], curve.disparity_after[i], "", "");
  }
}

}  // namespace escape
