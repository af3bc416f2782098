#pragma once

#include "escape/alignment.hpp"
#include "escape/association.hpp"
#include "escape/bundle.hpp"
#include "escape/diagnosis.hpp"
#include "escape/head.hpp"

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace escape {

enum class RbrFormula { ratio, printed };

struct AnalysisOptions {
  HeadHyper head;
  double frex_weight = kDefaultFrexWeight;
  double uu_threshold = kUnknownUnknownThreshold;
  int subgroup_q = 50;
  DisparityMode disparity = DisparityMode::sum;
  RbrFormula rbr = RbrFormula::ratio;
  GradientTarget influence_target = GradientTarget::probability;
};

// Aligned activations plus the head trained on them. Immutable once built.
class Workbench {
 public:
  Workbench(std::shared_ptr<const DatasetBundle> bundle, AnalysisOptions options);

  const DatasetBundle& bundle() const { return *bundle_; }
  const std::shared_ptr<const DatasetBundle>& bundle_ptr() const { return bundle_; }
  const AnalysisOptions& options() const { return options_; }
  const Normalizer<double>& normalizer() const { return normalizer_; }
  const Matrix& instances() const { return instances_; }
  const Matrix& segments() const { return segments_; }
  const HeadModel& head() const { return head_; }

  // Same normalizer and segments, replaced instance activations, head retrained on the new train rows.
  Workbench with_instances(Matrix aligned) const;

  HeadModel train(const Matrix& aligned) const;
  Concept make_concept(std::string id, std::string name, std::vector<std::string> segment_ids) const;

  std::vector<std::string> ids(std::span<const Index> rows) const;
  Matrix gather(std::span<const Index> rows, const Matrix* source = nullptr) const;
  std::vector<Prediction> predictions(std::span<const Index> rows, const HeadModel* head = nullptr) const;
  double accuracy(std::span<const Index> rows, const HeadModel* head = nullptr) const;
  AssociationTable associations(std::span<const Index> rows, std::span<const Concept> concepts,
                                const Matrix* source = nullptr) const;

  // Rows the diagnosis views report on: the test split, or everything when there is none.
  std::vector<Index> evaluation_rows() const;

 private:
  Workbench() = default;

  std::shared_ptr<const DatasetBundle> bundle_;
  AnalysisOptions options_;
  Normalizer<double> normalizer_;
  Matrix instances_;
  Matrix segments_;
  HeadModel head_;
};

}  // namespace escape
