#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace escape {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using Index = Eigen::Index;

enum class ErrorKind { invalid_argument, validation, not_found, io, numeric };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message, std::string entity_id = {})
      : std::runtime_error(message), kind_(kind), entity_id_(std::move(entity_id)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& entity_id() const noexcept { return entity_id_; }

 private:
  ErrorKind kind_;
  std::string entity_id_;
};

std::string_view to_string(ErrorKind kind);

enum class Split { train, test };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct ClassPair {
  int negative = 0;
  int positive = 1;
};

// Throws unless both indices are distinct and below num_classes.
void check_pair(const ClassPair& pair, int num_classes);

enum class ConfusionCase { TN, FP, FN, TP };

std::string_view to_string(ConfusionCase c);

struct Concept {
  std::string id;
  std::string name;
  std::vector<std::string> segment_ids;
  Vector vector;
};

}  // namespace escape
