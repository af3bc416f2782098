#include "escape/core.hpp"

namespace escape {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::validation: return "validation";
    case ErrorKind::not_found: return "not_found";
    case ErrorKind::io: return "io";
    case ErrorKind::numeric: return "numeric";
  }
  return "unknown";
}

std::string_view to_string(Split split) { return split == Split::train ? "train" : "test"; }

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "test") return Split::test;
  throw Error(ErrorKind::invalid_argument, "unknown split '" + std::string(text) + "'");
}

void check_pair(const ClassPair& pair, int num_classes) {
  auto valid = [&](int k) { return k >= 0 && k < num_classes; };
  if (!valid(pair.negative) || !valid(pair.positive))
    throw Error(ErrorKind::invalid_argument, "class pair index out of range");
  if (pair.negative == pair.positive)
    throw Error(ErrorKind::invalid_argument, "class pair needs two distinct classes");
}

std::string_view to_string(ConfusionCase c) {
  switch (c) {
    case ConfusionCase::TN: return "TN";
    case ConfusionCase::FP: return "FP";
    case ConfusionCase::FN: return "FN";
    case ConfusionCase::TP: return "TP";
  }
  return "?";
}

}  // namespace escape
