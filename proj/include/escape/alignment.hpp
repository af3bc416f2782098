#pragma once

#include "escape/core.hpp"

#include <span>
#include <string>
#include <vector>

namespace escape {

template <typename Scalar>
struct Normalizer {
  VectorX<Scalar> mean;
  VectorX<Scalar> std;

  Index dim() const { return mean.size(); }
};

inline constexpr double kStdFloor = 1e-8;

template <typename Derived>
Normalizer<typename Derived::Scalar> fit_normalizer(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  if (x.rows() < 2) throw Error(ErrorKind::invalid_argument, "fit_normalizer needs at least two rows");
  Normalizer<Scalar> n;
  n.mean = x.colwise().mean().transpose();
  n.std = ((x.rowwise() - n.mean.transpose()).array().square().colwise().mean().sqrt().transpose())
              .max(Scalar(kStdFloor))
              .matrix();
  return n;
}

template <typename Derived>
MatrixX<typename Derived::Scalar> normalize_instances(const Eigen::MatrixBase<Derived>& x,
                                                      const Normalizer<typename Derived::Scalar>& n) {
  if (x.cols() != n.dim())
    throw Error(ErrorKind::invalid_argument, "matrix has " + std::to_string(x.cols()) + " columns, normalizer has " +
                                                 std::to_string(n.dim()));
  return ((x.rowwise() - n.mean.transpose()).array().rowwise() / n.std.transpose().array()).matrix();
}

// Segments live in their own subspace; they are mapped with the instance statistics.
template <typename Derived>
MatrixX<typename Derived::Scalar> project_segments(const Eigen::MatrixBase<Derived>& s,
                                                   const Normalizer<typename Derived::Scalar>& n) {
  return normalize_instances(s, n);
}

template <typename Derived>
MatrixX<typename Derived::Scalar> denormalize(const Eigen::MatrixBase<Derived>& z,
                                              const Normalizer<typename Derived::Scalar>& n) {
  return ((z.array().rowwise() * n.std.transpose().array()).matrix().rowwise() + n.mean.transpose());
}

inline constexpr double kZeroNorm = 1e-12;

template <typename Derived>
VectorX<typename Derived::Scalar> concept_vector(std::span<const Index> rows,
                                                 const Eigen::MatrixBase<Derived>& aligned_segments) {
  using Scalar = typename Derived::Scalar;
  if (rows.empty()) throw Error(ErrorKind::invalid_argument, "concept needs at least one segment");
  VectorX<Scalar> c = VectorX<Scalar>::Zero(aligned_segments.cols());
  for (Index r : rows) {
    if (r < 0 || r >= aligned_segments.rows()) throw Error(ErrorKind::invalid_argument, "segment row out of range");
    c += aligned_segments.row(r).transpose();
  }
  c /= Scalar(rows.size());
  if (c.norm() <= Scalar(kZeroNorm))
    throw Error(ErrorKind::numeric, "concept centroid has zero norm");
  return c;
}

}  // namespace escape
