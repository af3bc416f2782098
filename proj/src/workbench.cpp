#include "escape/workbench.hpp"

namespace escape {

Workbench::Workbench(std::shared_ptr<const DatasetBundle> bundle, AnalysisOptions options)
    : bundle_(std::move(bundle)), options_(options) {
  const auto train_rows = bundle_->rows(Split::train);
  if (train_rows.size() < 2) throw Error(ErrorKind::invalid_argument, "bundle needs at least two train instances");
  Matrix fit_rows(static_cast<Index>(train_rows.size()), bundle_->dim);
  for (std::size_t i = 0; i < train_rows.size(); ++i) fit_rows.row(Index(i)) = bundle_->instance_matrix.row(train_rows[i]);
  normalizer_ = fit_normalizer(fit_rows);
  instances_ = normalize_instances(bundle_->instance_matrix, normalizer_);
  segments_ = bundle_->segment_matrix.rows() ? project_segments(bundle_->segment_matrix, normalizer_)
                                             : Matrix(0, bundle_->dim);
  head_ = train(instances_);
}

Workbench Workbench::with_instances(Matrix aligned) const {
  if (aligned.rows() != instances_.rows() || aligned.cols() != instances_.cols())
    throw Error(ErrorKind::invalid_argument, "replacement activations have the wrong shape");
  Workbench w;
  w.bundle_ = bundle_;
  w.options_ = options_;
  w.normalizer_ = normalizer_;
  w.segments_ = segments_;
  w.instances_ = std::move(aligned);
  w.head_ = w.train(w.instances_);
  return w;
}

HeadModel Workbench::train(const Matrix& aligned) const {
  const auto rows = bundle_->rows(Split::train);
  const auto labels = bundle_->labels(rows);
  return train_head(gather(rows, &aligned), labels, bundle_->num_classes(), options_.head);
}

Concept Workbench::make_concept(std::string id, std::string name, std::vector<std::string> segment_ids) const {
  if (segment_ids.empty()) throw Error(ErrorKind::invalid_argument, "concept needs at least one segment", id);
  std::vector<Index> rows;
  for (const auto& s : segment_ids) rows.push_back(bundle_->segment_row(s));
  Concept c;
  try {
    c.vector = concept_vector(std::span<const Index>(rows), segments_);
  } catch (const Error& e) {
    throw Error(e.kind(), e.what(), id);
  }
  c.id = std::move(id);
  c.name = std::move(name);
  c.segment_ids = std::move(segment_ids);
  return c;
}

std::vector<std::string> Workbench::ids(std::span<const Index> rows) const {
  std::vector<std::string> out;
  out.reserve(rows.size());
  for (Index r : rows) out.push_back(bundle_->instances[std::size_t(r)].id);
  return out;
}

Matrix Workbench::gather(std::span<const Index> rows, const Matrix* source) const {
  const Matrix& m = source ? *source : instances_;
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(Index(i)) = m.row(rows[i]);
  return out;
}

std::vector<Prediction> Workbench::predictions(std::span<const Index> rows, const HeadModel* head) const {
  std::vector<int> labels;
  labels.reserve(rows.size());
  for (Index r : rows) labels.push_back(bundle_->instances[std::size_t(r)].label);
  return predict_rows(head ? *head : head_, instances_, rows, labels);
}

double Workbench::accuracy(std::span<const Index> rows, const HeadModel* head) const {
  if (rows.empty()) return 0.0;
  const auto preds = predictions(rows, head);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (preds[i].predicted == bundle_->instances[std::size_t(rows[i])].label) ++correct;
  return double(correct) / double(rows.size());
}

AssociationTable Workbench::associations(std::span<const Index> rows, std::span<const Concept> concepts,
                                         const Matrix* source) const {
  return compute_associations(gather(rows, source), ids(rows), concepts, options_.frex_weight);
}

std::vector<Index> Workbench::evaluation_rows() const {
  auto rows = bundle_->rows(Split::test);
  if (rows.empty()) rows = bundle_->rows(Split::train);
  return rows;
}

}  // namespace escape
