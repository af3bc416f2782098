#pragma once

#include "escape/core.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace escape {

enum class HeadKind { linear, mlp };
enum class GradientTarget { probability, logit };

struct HeadHyper {
  double lr = 1.0;
  int iters = 1000;
  double l2 = 0.1;
  std::uint64_t seed = 0;
  HeadKind kind = HeadKind::linear;
  int hidden = 32;
};

struct HeadMetadata {
  std::uint64_t seed = 0;
  int iterations = 0;
  double lr = 0;
  double l2 = 0;
  double initial_loss = 0;
  double final_loss = 0;
  std::vector<double> loss_history;  // not persisted
};

struct HeadModel {
  HeadKind kind = HeadKind::linear;
  Matrix weights;  // K x D, or K x H for the hidden-layer head
  Vector bias;
  Matrix hidden_weights;  // H x D, mlp only
  Vector hidden_bias;
  HeadMetadata meta;

  int num_classes() const { return static_cast<int>(weights.rows()); }
  Index dim() const { return kind == HeadKind::linear ? weights.cols() : hidden_weights.cols(); }

  Vector logits(const Eigen::Ref<const Vector>& v) const;
  Vector probabilities(const Eigen::Ref<const Vector>& v) const;
  Matrix batch_probabilities(const Matrix& x) const;  // row per instance
};

HeadModel train_head(const Matrix& x, std::span<const int> labels, int num_classes, const HeadHyper& hyper);

// Mean cross-entropy plus the L2 penalty used during training.
double training_loss(const HeadModel& head, const Matrix& x, std::span<const int> labels, double l2);

struct Prediction {
  Vector probs;
  int predicted = 0;
  double brier = 0;
};

template <typename Derived>
double brier_score(const Eigen::MatrixBase<Derived>& probs, int label) {
  double s = 0;
  for (Index k = 0; k < probs.size(); ++k) {
    const double d = double(probs[k]) - (k == label ? 1.0 : 0.0);
    s += d * d;
  }
  return s / 2.0;
}

int argmax(const Eigen::Ref<const Vector>& v);

Prediction predict(const HeadModel& head, const Eigen::Ref<const Vector>& v, int label);
std::vector<Prediction> predict_rows(const HeadModel& head, const Matrix& x, std::span<const Index> rows,
                                     std::span<const int> labels);

Vector prob_gradient(const HeadModel& head, const Eigen::Ref<const Vector>& v, int k);
Vector logit_gradient(const HeadModel& head, const Eigen::Ref<const Vector>& v, int k);

struct Influence {
  double positive_fraction = 0;
  double mean_derivative = 0;
  std::size_t size = 0;
};

Influence concept_influence(const HeadModel& head, const Matrix& instances, const Eigen::Ref<const Vector>& v_c, int k,
                            GradientTarget target = GradientTarget::probability);

std::string head_to_json(const HeadModel& head);
HeadModel head_from_json(const std::string& text);
void save_head(const HeadModel& head, const std::filesystem::path& file);
HeadModel load_head(const std::filesystem::path& file);

}  // namespace escape
