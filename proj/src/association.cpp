#include "escape/association.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace escape {

Matrix association_matrix(const Matrix& instances, const Matrix& concepts) {
  if (concepts.rows() < 1) throw Error(ErrorKind::invalid_argument, "association needs at least one concept");
  if (instances.cols() != concepts.cols()) throw Error(ErrorKind::invalid_argument, "association dimension mismatch");
  Matrix out(instances.rows(), concepts.rows());
  for (Index i = 0; i < instances.rows(); ++i)
    for (Index c = 0; c < concepts.rows(); ++c) out(i, c) = raw_association(instances.row(i), concepts.row(c));
  return out;
}

Matrix stack_concepts(std::span<const Concept> concepts) {
  if (concepts.empty()) return Matrix(0, 0);
  Matrix m(static_cast<Index>(concepts.size()), concepts.front().vector.size());
  for (std::size_t c = 0; c < concepts.size(); ++c) {
    if (concepts[c].vector.size() != m.cols())
      throw Error(ErrorKind::invalid_argument, "concept vectors differ in dimension", concepts[c].id);
    m.row(static_cast<Index>(c)) = concepts[c].vector.transpose();
  }
  return m;
}

std::vector<int> rank_descending(const Eigen::Ref<const Vector>& scores, std::span<const std::string> ids) {
  const auto n = static_cast<std::size_t>(scores.size());
  if (ids.size() != n) throw Error(ErrorKind::invalid_argument, "ranking needs one id per score");
  std::vector<Index> order(n);
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[std::size_t(a)] < ids[std::size_t(b)];
  });
  std::vector<int> rank(n);
  for (std::size_t r = 0; r < n; ++r) rank[std::size_t(order[r])] = static_cast<int>(r + 1);
  return rank;
}

std::vector<Index> order_from_ranks(std::span<const int> ranks) {
  std::vector<Index> order(ranks.size());
  for (std::size_t i = 0; i < ranks.size(); ++i) order[std::size_t(ranks[i] - 1)] = static_cast<Index>(i);
  return order;
}

ExclusiveRankings exclusive_rankings(const Matrix& assoc, std::span<const std::string> ids) {
  const Index n = assoc.rows(), k = assoc.cols();
  if (k < 1) throw Error(ErrorKind::invalid_argument, "exclusive ranking needs at least one concept");
  ExclusiveRankings out;
  out.z = Matrix::Zero(n, k);
  out.top_concept.assign(std::size_t(n), 0);
  if (k > 1) {
    for (Index i = 0; i < n; ++i) {
      const double mu = assoc.row(i).mean();
      const double sd = std::sqrt((assoc.row(i).array() - mu).square().mean());
      if (sd < 1e-12) continue;
      out.z.row(i) = (assoc.row(i).array() - mu) / sd;
    }
  }
  for (Index i = 0; i < n; ++i) {
    Index best = 0;
    for (Index c = 1; c < k; ++c)
      if (out.z(i, c) > out.z(i, best)) best = c;
    out.top_concept[std::size_t(i)] = static_cast<int>(best);
  }
  // With a single concept every z is zero; the raw order stands in.
  const Matrix& basis = k == 1 ? assoc : out.z;
  for (Index c = 0; c < k; ++c) out.rank.push_back(rank_descending(basis.col(c), ids));
  return out;
}

FrexResult frex_combine(std::span<const int> raw_rank, std::span<const int> ex_rank, double w,
                        std::span<const std::string> ids) {
  if (!(w >= 0.0 && w <= 1.0)) throw Error(ErrorKind::invalid_argument, "FREX weight must lie in [0, 1]");
  if (raw_rank.size() != ex_rank.size()) throw Error(ErrorKind::invalid_argument, "rank vectors differ in length");
  const std::size_t n = raw_rank.size();
  FrexResult out;
  out.frex.resize(n);
  Vector scores(static_cast<Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const double e_ex = ecdf(ex_rank[i], n), e_raw = ecdf(raw_rank[i], n);
    out.frex[i] = 1.0 / (w / e_ex + (1.0 - w) / e_raw);
    scores[Index(i)] = out.frex[i];
  }
  out.rank = rank_descending(scores, ids);
  return out;
}

DisparityTerms disparity_terms(std::span<const double> frex, std::span<const int> labels, const ClassPair& pair) {
  if (frex.size() != labels.size()) throw Error(ErrorKind::invalid_argument, "disparity needs one label per score");
  if (frex.empty()) throw Error(ErrorKind::invalid_argument, "disparity over an empty population");
  if (pair.negative == pair.positive) throw Error(ErrorKind::invalid_argument, "class pair needs two distinct classes");
  DisparityTerms t;
  for (std::size_t i = 0; i < frex.size(); ++i) {
    if (labels[i] == pair.positive) {
      t.positive_sum += frex[i];
      ++t.positive_count;
    } else if (labels[i] == pair.negative) {
      t.negative_sum += frex[i];
      ++t.negative_count;
    } else {
      throw Error(ErrorKind::invalid_argument, "population member outside the class pair");
    }
  }
  return t;
}

double between_class_disparity(std::span<const double> frex, std::span<const int> labels, const ClassPair& pair,
                               DisparityMode mode) {
  return disparity_terms(frex, labels, pair).disparity(mode);
}

Index AssociationTable::concept_column(const std::string& concept_id) const {
  auto it = std::find(concept_ids.begin(), concept_ids.end(), concept_id);
  if (it == concept_ids.end()) throw Error(ErrorKind::not_found, "unknown concept '" + concept_id + "'", concept_id);
  return static_cast<Index>(it - concept_ids.begin());
}

std::vector<double> AssociationTable::frex_column(Index c) const {
  std::vector<double> out(std::size_t(frex.rows()));
  for (Index i = 0; i < frex.rows(); ++i) out[std::size_t(i)] = frex(i, c);
  return out;
}

namespace {
std::vector<Index> order_of(const Eigen::MatrixXi& ranks, Index c) {
  std::vector<int> col(std::size_t(ranks.rows()));
  for (Index i = 0; i < ranks.rows(); ++i) col[std::size_t(i)] = ranks(i, c);
  return order_from_ranks(col);
}
}  // namespace

std::vector<Index> AssociationTable::comb_order(Index c) const { return order_of(comb_rank, c); }
std::vector<Index> AssociationTable::raw_order(Index c) const { return order_of(raw_rank, c); }

AssociationTable compute_associations(const Matrix& instances, std::vector<std::string> instance_ids,
                                      std::span<const Concept> concepts, double w) {
  if (instance_ids.size() != std::size_t(instances.rows()))
    throw Error(ErrorKind::invalid_argument, "association needs one id per instance row");
  AssociationTable t;
  t.instance_ids = std::move(instance_ids);
  for (const auto& c : concepts) t.concept_ids.push_back(c.id);
  const Index n = instances.rows(), k = static_cast<Index>(concepts.size());
  t.raw = association_matrix(instances, stack_concepts(concepts));
  auto ex = exclusive_rankings(t.raw, t.instance_ids);
  t.z = std::move(ex.z);
  t.top_concept = std::move(ex.top_concept);
  t.raw_rank.resize(n, k);
  t.ex_rank.resize(n, k);
  t.comb_rank.resize(n, k);
  t.frex.resize(n, k);
  for (Index c = 0; c < k; ++c) {
    const auto raw_rank = rank_descending(t.raw.col(c), t.instance_ids);
    const auto& ex_rank = ex.rank[std::size_t(c)];
    const auto fr = frex_combine(raw_rank, ex_rank, w, t.instance_ids);
    for (Index i = 0; i < n; ++i) {
      t.raw_rank(i, c) = raw_rank[std::size_t(i)];
      t.ex_rank(i, c) = ex_rank[std::size_t(i)];
      t.frex(i, c) = fr.frex[std::size_t(i)];
      t.comb_rank(i, c) = fr.rank[std::size_t(i)];
    }
  }
  return t;
}

}  // namespace escape
