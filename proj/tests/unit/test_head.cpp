#include "support.hpp"

#include "../gradcheck.hpp"

using namespace testing;

namespace {

HeadModel hand_head() {
  const auto& o = oracle()["softmax3"];
  HeadModel h;
  h.weights = to_matrix(o["weights"]);
  h.bias = to_vector(o["bias"]);
  return h;
}

struct Blobs {
  Matrix x;
  std::vector<int> y;
};

// Two 2-D blobs 8 sigma apart (4 sigma from the boundary each).
Blobs blobs(std::uint64_t seed) {
  const Matrix noise = gaussian(200, 2, seed);
  Blobs b{Matrix(200, 2), std::vector<int>(200)};
  for (Index i = 0; i < 200; ++i) {
    const int y = int(i % 2);
    b.y[std::size_t(i)] = y;
    b.x.row(i) = noise.row(i) + Eigen::RowVector2d(y ? 4.0 : -4.0, 0.0);
  }
  return b;
}

double accuracy(const HeadModel& h, const Matrix& x, const std::vector<int>& y) {
  int ok = 0;
  for (Index i = 0; i < x.rows(); ++i) ok += argmax(h.probabilities(Vector(x.row(i)))) == y[std::size_t(i)];
  return double(ok) / double(x.rows());
}

}  // namespace

TEST_CASE("softmax and brier on hand values") {
  const auto& o = oracle()["softmax3"];
  const auto h = hand_head();
  const Vector v = to_vector(o["v"]);
  const auto p = predict(h, v, o["label"].get<int>());
  CHECK((p.probs - to_vector(o["probs"])).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(p.brier == doctest::Approx(o["brier"].get<double>()).epsilon(1e-12));
  CHECK(p.predicted == argmax(to_vector(o["probs"])));
  CHECK((prob_gradient(h, v, 0) - to_vector(o["prob_gradient_k0"])).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((logit_gradient(h, v, 1) - h.weights.row(1).transpose()).norm() == 0.0);

  CHECK(brier_score(Eigen::Vector2d(0.5, 0.5), 0) == doctest::Approx(0.25));
  CHECK(oracle()["brier_uniform_binary"].get<double>() == 0.25);
  CHECK(brier_score(Eigen::Vector3d(1, 0, 0), 0) == 0.0);
  CHECK(brier_score(Eigen::Vector3d(0, 1, 0), 0) == 1.0);
}

TEST_CASE("degenerate heads") {
  HeadModel zero;
  zero.weights = Matrix::Zero(4, 3);
  zero.bias = Vector::Zero(4);
  const Vector p = zero.probabilities(Vector::Ones(3));
  CHECK((p.array() - 0.25).abs().maxCoeff() < 1e-15);
  CHECK(argmax(p) == 0);

  zero.bias[2] = 800.0;  // large logit saturates without overflow
  const Vector s = zero.probabilities(Vector::Ones(3));
  CHECK(s[2] == doctest::Approx(1.0));
  CHECK(s.allFinite());
}

TEST_CASE("training separates blobs and the loss never rises") {
  const auto b = blobs(1);
  HeadHyper hyper;
  const auto h = train_head(b.x, b.y, 2, hyper);
  CHECK(accuracy(h, b.x, b.y) >= 0.99);
  CHECK(h.meta.final_loss < h.meta.initial_loss);
  REQUIRE(h.meta.loss_history.size() == std::size_t(hyper.iters + 1));
  for (std::size_t i = 1; i < h.meta.loss_history.size(); ++i)
    CHECK(h.meta.loss_history[i] <= h.meta.loss_history[i - 1] + 1e-12);
  CHECK(training_loss(h, b.x, b.y, hyper.l2) == doctest::Approx(h.meta.final_loss).epsilon(1e-12));

  hyper.kind = HeadKind::mlp;
  hyper.lr = 0.5;
  const auto m = train_head(b.x, b.y, 2, hyper);
  CHECK(accuracy(m, b.x, b.y) >= 0.99);
  CHECK(m.meta.final_loss < m.meta.initial_loss);
}

TEST_CASE("training is deterministic per seed") {
  const auto b = blobs(2);
  HeadHyper hyper;
  hyper.iters = 50;
  hyper.seed = 5;
  const auto a = train_head(b.x, b.y, 2, hyper);
  const auto c = train_head(b.x, b.y, 2, hyper);
  CHECK(a.weights == c.weights);
  CHECK(a.bias == c.bias);
  hyper.seed = 6;
  CHECK(train_head(b.x, b.y, 2, hyper).weights != a.weights);
}

TEST_CASE("training rejects bad input") {
  const auto b = blobs(3);
  std::vector<int> one_class(200, 0);
  CHECK_THROWS_AS(train_head(b.x, one_class, 2, {}), Error);
  CHECK_THROWS_AS(train_head(b.x, std::vector<int>(3, 0), 2, {}), Error);
  HeadHyper huge;
  huge.lr = 100.0;  // overshoots on the first step
  try {
    train_head(b.x, b.y, 2, huge);
    FAIL("expected divergence to be reported");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::numeric);
  }
}

TEST_CASE("analytic gradients match finite differences") {
  const auto b = blobs(4);
  const Matrix x3 = gaussian(150, 5, 8);
  std::vector<int> y3(150);
  for (Index i = 0; i < 150; ++i) y3[std::size_t(i)] = x3(i, 0) > 0.5 ? 2 : (x3(i, 1) > 0 ? 1 : 0);

  HeadHyper hyper;
  CHECK(check::gradient_error(hand_head(), 20, 1) <= 1e-4);
  CHECK(check::gradient_error(train_head(b.x, b.y, 2, hyper), 20, 2) <= 1e-4);
  CHECK(check::gradient_error(train_head(x3, y3, 3, hyper), 20, 3) <= 1e-4);
  hyper.kind = HeadKind::mlp;
  hyper.lr = 0.5;
  CHECK(check::gradient_error(train_head(x3, y3, 3, hyper), 20, 4) <= 1e-4);
  hyper.hidden = 3;
  CHECK(check::gradient_error(train_head(b.x, b.y, 2, hyper), 20, 5) <= 1e-4);
}

TEST_CASE("logit gradient of the hidden-layer head matches finite differences") {
  const Matrix x = gaussian(80, 4, 12);
  std::vector<int> y(80);
  for (Index i = 0; i < 80; ++i) y[std::size_t(i)] = x(i, 0) + x(i, 2) > 0;
  HeadHyper hyper;
  hyper.kind = HeadKind::mlp;
  hyper.lr = 0.5;
  hyper.hidden = 8;
  const auto h = train_head(x, y, 2, hyper);
  const Vector v = gaussian(1, 4, 13).row(0).transpose();
  const Vector g = logit_gradient(h, v, 1);
  for (Index j = 0; j < 4; ++j) {
    Vector up = v, down = v;
    up[j] += 1e-5;
    down[j] -= 1e-5;
    CHECK(g[j] == doctest::Approx((h.logits(up)[1] - h.logits(down)[1]) / 2e-5).epsilon(1e-6));
  }
}

TEST_CASE("concept influence equals directional finite differences") {
  const auto h = hand_head();
  const Matrix pts = gaussian(30, 4, 21);
  const Vector vc = gaussian(1, 4, 22).row(0).transpose() * 3.0;
  const Vector dir = vc.normalized();
  for (int k = 0; k < 3; ++k) {
    int positive = 0;
    double total = 0;
    for (Index i = 0; i < pts.rows(); ++i) {
      const Vector v = pts.row(i).transpose();
      const double d = (h.probabilities(Vector(v + 1e-5 * dir))[k] - h.probabilities(Vector(v - 1e-5 * dir))[k]) / 2e-5;
      positive += d > 0;
      total += d;
    }
    const auto inf = concept_influence(h, pts, vc, k);
    CHECK(inf.size == 30);
    CHECK(inf.positive_fraction == doctest::Approx(positive / 30.0));
    CHECK(inf.mean_derivative == doctest::Approx(total / 30.0).epsilon(1e-6));
  }
  CHECK_THROWS_AS(concept_influence(h, Matrix(0, 4), vc, 0), Error);
  CHECK_THROWS_AS(concept_influence(h, pts, Vector::Zero(4), 0), Error);
  CHECK_THROWS_AS(concept_influence(h, pts, vc, 3), Error);
}

TEST_CASE("planted concept pushes false negatives toward the contaminated class") {
  // FN instances of the contaminated class are predicted as the other class; the planted
  // concept should raise p(contaminated) more often than a random direction does.
  double planted_sum = 0, random_sum = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto p = planted(seed);
    const auto rows = p.wb->evaluation_rows();
    const auto members = pair_subset(p.wb->predictions(rows), p.bundle->labels(rows), p.pair);
    std::vector<Index> fn;
    for (const auto& m : members)
      if (m.confusion == ConfusionCase::FN) fn.push_back(rows[m.position]);
    REQUIRE_FALSE(fn.empty());
    const Matrix x = p.wb->gather(fn);
    const int contaminated = p.syn.truth.biased_class[0];
    planted_sum += concept_influence(p.wb->head(), x, p.concepts[0].vector, contaminated).positive_fraction;
    const Vector r = gaussian(1, x.cols(), 1000 + seed).row(0).transpose();
    random_sum += concept_influence(p.wb->head(), x, r, contaminated).positive_fraction;
  }
  CAPTURE(planted_sum / 10);
  CAPTURE(random_sum / 10);
  CHECK(planted_sum > random_sum);
}

TEST_CASE("head persists through json") {
  const auto b = blobs(6);
  HeadHyper hyper;
  hyper.iters = 20;
  hyper.seed = 77;
  for (auto kind : {HeadKind::linear, HeadKind::mlp}) {
    hyper.kind = kind;
    hyper.lr = kind == HeadKind::mlp ? 0.5 : 1.0;
    const auto h = train_head(b.x, b.y, 2, hyper);
    TempDir dir("head");
    save_head(h, dir.path / "head.json");
    const auto back = load_head(dir.path / "head.json");
    CHECK(back.kind == h.kind);
    CHECK(back.weights == h.weights);
    CHECK(back.bias == h.bias);
    CHECK(back.hidden_weights == h.hidden_weights);
    CHECK(back.meta.seed == 77);
    CHECK(back.meta.final_loss == h.meta.final_loss);
    const Vector v = b.x.row(3).transpose();
    CHECK(back.probabilities(v) == h.probabilities(v));
  }
  CHECK_THROWS_AS(head_from_json(R"({"kind": "forest"})"), Error);
  CHECK_THROWS_AS(load_head("/nonexistent/head.json"), Error);
}
