#include "escape/head.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace escape {

namespace {

void softmax_rows(Matrix& z) {
  for (Index i = 0; i < z.rows(); ++i) {
    z.row(i).array() -= z.row(i).maxCoeff();
    z.row(i) = z.row(i).array().exp().matrix();
    z.row(i) /= z.row(i).sum();
  }
}

Vector softmax(Vector z) {
  z.array() -= z.maxCoeff();
  z = z.array().exp().matrix();
  return z / z.sum();
}

void check_dim(const HeadModel& head, Index n) {
  if (n != head.dim())
    throw Error(ErrorKind::invalid_argument,
                "vector has dimension " + std::to_string(n) + ", head expects " + std::to_string(head.dim()));
}

Matrix logits_rows(const HeadModel& head, const Matrix& x, Matrix* hidden = nullptr) {
  if (head.kind == HeadKind::linear) return (x * head.weights.transpose()).rowwise() + head.bias.transpose();
  Matrix h = ((x * head.hidden_weights.transpose()).rowwise() + head.hidden_bias.transpose()).array().tanh().matrix();
  Matrix z = (h * head.weights.transpose()).rowwise() + head.bias.transpose();
  if (hidden) *hidden = std::move(h);
  return z;
}

double cross_entropy(const Matrix& p, std::span<const int> labels) {
  double s = 0;
  for (Index i = 0; i < p.rows(); ++i) s -= std::log(std::max(p(i, labels[std::size_t(i)]), 1e-300));
  return s / double(p.rows());
}

double penalty(const HeadModel& head, double l2) {
  double s = head.weights.squaredNorm();
  if (head.kind == HeadKind::mlp) s += head.hidden_weights.squaredNorm();
  return 0.5 * l2 * s;
}

// Back-propagates a per-logit gradient g (length K) to the input.
Vector input_gradient(const HeadModel& head, const Eigen::Ref<const Vector>& v, const Vector& g) {
  if (head.kind == HeadKind::linear) return head.weights.transpose() * g;
  const Vector h = (head.hidden_weights * v + head.hidden_bias).array().tanh().matrix();
  const Vector back = ((head.weights.transpose() * g).array() * (1.0 - h.array().square())).matrix();
  return head.hidden_weights.transpose() * back;
}

}  // namespace

Vector HeadModel::logits(const Eigen::Ref<const Vector>& v) const {
  check_dim(*this, v.size());
  if (kind == HeadKind::linear) return weights * v + bias;
  const Vector h = (hidden_weights * v + hidden_bias).array().tanh().matrix();
  return weights * h + bias;
}

Vector HeadModel::probabilities(const Eigen::Ref<const Vector>& v) const { return softmax(logits(v)); }

Matrix HeadModel::batch_probabilities(const Matrix& x) const {
  check_dim(*this, x.cols());
  Matrix z = logits_rows(*this, x);
  softmax_rows(z);
  return z;
}

double training_loss(const HeadModel& head, const Matrix& x, std::span<const int> labels, double l2) {
  return cross_entropy(head.batch_probabilities(x), labels) + penalty(head, l2);
}

HeadModel train_head(const Matrix& x, std::span<const int> labels, int num_classes, const HeadHyper& hyper) {
  if (std::size_t(x.rows()) != labels.size()) throw Error(ErrorKind::invalid_argument, "one label per row required");
  if (x.rows() == 0) throw Error(ErrorKind::invalid_argument, "cannot train on an empty matrix");
  std::set<int> present;
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw Error(ErrorKind::invalid_argument, "label out of range");
    present.insert(y);
  }
  if (present.size() < 2) throw Error(ErrorKind::invalid_argument, "training needs at least two classes present");
  if (hyper.iters < 0 || !(hyper.lr > 0)) throw Error(ErrorKind::invalid_argument, "invalid head hyperparameters");

  const Index n = x.rows(), d = x.cols(), k = num_classes;
  std::mt19937_64 rng(hyper.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill = [&](Matrix& m, double scale) {
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * normal(rng);
  };

  HeadModel head;
  head.kind = hyper.kind;
  if (hyper.kind == HeadKind::linear) {
    head.weights.resize(k, d);
    fill(head.weights, 0.01);
  } else {
    if (hyper.hidden < 1) throw Error(ErrorKind::invalid_argument, "hidden width must be positive");
    head.hidden_weights.resize(hyper.hidden, d);
    fill(head.hidden_weights, 1.0 / std::sqrt(double(d)));
    head.hidden_bias = Vector::Zero(hyper.hidden);
    head.weights.resize(k, hyper.hidden);
    fill(head.weights, 1.0 / std::sqrt(double(hyper.hidden)));
  }
  head.bias = Vector::Zero(k);

  Matrix y = Matrix::Zero(n, k);
  for (Index i = 0; i < n; ++i) y(i, labels[std::size_t(i)]) = 1.0;

  auto& meta = head.meta;
  meta.seed = hyper.seed;
  meta.iterations = hyper.iters;
  meta.lr = hyper.lr;
  meta.l2 = hyper.l2;
  meta.loss_history.reserve(std::size_t(hyper.iters) + 1);

  Matrix hidden;
  for (int it = 0;; ++it) {
    Matrix p = logits_rows(head, x, &hidden);
    softmax_rows(p);
    const double loss = cross_entropy(p, labels) + penalty(head, hyper.l2);
    if (!std::isfinite(loss)) throw Error(ErrorKind::numeric, "training loss became non-finite");
    meta.loss_history.push_back(loss);
    if (it == hyper.iters) break;

    const Matrix g = (p - y) / double(n);
    if (head.kind == HeadKind::linear) {
      head.weights -= hyper.lr * (g.transpose() * x + hyper.l2 * head.weights);
      head.bias -= hyper.lr * g.colwise().sum().transpose();
    } else {
      const Matrix gh = ((g * head.weights).array() * (1.0 - hidden.array().square())).matrix();
      head.weights -= hyper.lr * (g.transpose() * hidden + hyper.l2 * head.weights);
      head.bias -= hyper.lr * g.colwise().sum().transpose();
      head.hidden_weights -= hyper.lr * (gh.transpose() * x + hyper.l2 * head.hidden_weights);
      head.hidden_bias -= hyper.lr * gh.colwise().sum().transpose();
    }
  }
  meta.initial_loss = meta.loss_history.front();
  meta.final_loss = meta.loss_history.back();
  if (meta.final_loss > meta.initial_loss)
    throw Error(ErrorKind::numeric, "training loss increased; learning rate too large");
  return head;
}

int argmax(const Eigen::Ref<const Vector>& v) {
  Index best = 0;
  for (Index k = 1; k < v.size(); ++k)
    if (v[k] > v[best]) best = k;
  return static_cast<int>(best);
}

Prediction predict(const HeadModel& head, const Eigen::Ref<const Vector>& v, int label) {
  Prediction p;
  p.probs = head.probabilities(v);
  p.predicted = argmax(p.probs);
  p.brier = brier_score(p.probs, label);
  return p;
}

std::vector<Prediction> predict_rows(const HeadModel& head, const Matrix& x, std::span<const Index> rows,
                                     std::span<const int> labels) {
  if (rows.size() != labels.size()) throw Error(ErrorKind::invalid_argument, "one label per row required");
  Matrix sub(static_cast<Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) sub.row(Index(i)) = x.row(rows[i]);
  const Matrix p = head.batch_probabilities(sub);
  std::vector<Prediction> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out[i].probs = p.row(Index(i)).transpose();
    out[i].predicted = argmax(out[i].probs);
    out[i].brier = brier_score(out[i].probs, labels[i]);
  }
  return out;
}

Vector prob_gradient(const HeadModel& head, const Eigen::Ref<const Vector>& v, int k) {
  if (k < 0 || k >= head.num_classes()) throw Error(ErrorKind::invalid_argument, "class index out of range");
  const Vector p = head.probabilities(v);
  Vector g = -p[k] * p;
  g[k] += p[k];
  return input_gradient(head, v, g);
}

Vector logit_gradient(const HeadModel& head, const Eigen::Ref<const Vector>& v, int k) {
  if (k < 0 || k >= head.num_classes()) throw Error(ErrorKind::invalid_argument, "class index out of range");
  check_dim(head, v.size());
  Vector g = Vector::Zero(head.num_classes());
  g[k] = 1.0;
  return input_gradient(head, v, g);
}

Influence concept_influence(const HeadModel& head, const Matrix& instances, const Eigen::Ref<const Vector>& v_c, int k,
                            GradientTarget target) {
  if (instances.rows() == 0) throw Error(ErrorKind::invalid_argument, "influence over an empty instance set");
  const double norm = v_c.norm();
  if (norm <= 1e-12) throw Error(ErrorKind::numeric, "influence along a zero-norm concept");
  const Vector dir = v_c / norm;
  Influence out;
  out.size = std::size_t(instances.rows());
  std::size_t positive = 0;
  double total = 0;
  for (Index i = 0; i < instances.rows(); ++i) {
    const Vector v = instances.row(i).transpose();
    const Vector g = target == GradientTarget::probability ? prob_gradient(head, v, k) : logit_gradient(head, v, k);
    const double d = g.dot(dir);
    if (d > 0) ++positive;
    total += d;
  }
  out.positive_fraction = double(positive) / double(out.size);
  out.mean_derivative = total / double(out.size);
  return out;
}

namespace {

nlohmann::json matrix_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

Matrix matrix_from(const nlohmann::json& j) {
  const Index r = j.at("rows").get<Index>(), c = j.at("cols").get<Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (std::size_t(r * c) != data.size()) throw Error(ErrorKind::validation, "head matrix has the wrong size", "head.json");
  Matrix m(r, c);
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

Vector vector_from(const nlohmann::json& j) {
  const auto data = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(data.data(), Index(data.size()));
}

}  // namespace

std::string head_to_json(const HeadModel& head) {
  nlohmann::json j;
  j["kind"] = head.kind == HeadKind::linear ? "linear" : "mlp";
  j["weights"] = matrix_json(head.weights);
  j["bias"] = std::vector<double>(head.bias.data(), head.bias.data() + head.bias.size());
  if (head.kind == HeadKind::mlp) {
    j["hidden_weights"] = matrix_json(head.hidden_weights);
    j["hidden_bias"] = std::vector<double>(head.hidden_bias.data(), head.hidden_bias.data() + head.hidden_bias.size());
  }
  j["metadata"] = {{"seed", head.meta.seed},          {"iterations", head.meta.iterations},
                   {"learning_rate", head.meta.lr},    {"l2", head.meta.l2},
                   {"initial_loss", head.meta.initial_loss}, {"final_loss", head.meta.final_loss}};
  return j.dump(1);
}

HeadModel head_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    HeadModel h;
    const auto kind = j.at("kind").get<std::string>();
    if (kind != "linear" && kind != "mlp") throw Error(ErrorKind::validation, "unknown head kind", "head.json");
    h.kind = kind == "linear" ? HeadKind::linear : HeadKind::mlp;
    h.weights = matrix_from(j.at("weights"));
    h.bias = vector_from(j.at("bias"));
    if (h.kind == HeadKind::mlp) {
      h.hidden_weights = matrix_from(j.at("hidden_weights"));
      h.hidden_bias = vector_from(j.at("hidden_bias"));
    }
    const auto& m = j.at("metadata");
    h.meta.seed = m.at("seed").get<std::uint64_t>();
    h.meta.iterations = m.at("iterations").get<int>();
    h.meta.lr = m.at("learning_rate").get<double>();
    h.meta.l2 = m.at("l2").get<double>();
    h.meta.initial_loss = m.at("initial_loss").get<double>();
    h.meta.final_loss = m.at("final_loss").get<double>();
    if (h.bias.size() != h.weights.rows()) throw Error(ErrorKind::validation, "bias length mismatch", "head.json");
    return h;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::validation, std::string("malformed head: ") + e.what(), "head.json");
  }
}

void save_head(const HeadModel& head, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + file.string(), file.filename().string());
  out << head_to_json(head) << '\n';
}

HeadModel load_head(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorKind::io, "missing file " + file.string(), file.filename().string());
  std::stringstream ss;
  ss << in.rdbuf();
  return head_from_json(ss.str());
}

}  // namespace escape
