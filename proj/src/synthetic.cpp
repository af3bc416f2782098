#include "escape/synthetic.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

namespace escape {

std::vector<PlantedConcept> PlantConfig::default_planted_concepts() {
  return {
      {"planted", {0.02, 0.3}, {}, 4.0, -1, 0.0},
      {"lookalike", {0.015, 0.015}, {}, 9.73, 0, 0.6},
      {"context", {0.1, 0.1}, {}, 6.0, -1, 0.0},
  };
}

namespace {

std::string make_id(char prefix, std::size_t n, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%0*zu", prefix, width, n);
  return buf;
}

void check_config(const PlantConfig& c) {
  auto bad = [](const std::string& m) { throw Error(ErrorKind::invalid_argument, "infeasible plant config: " + m); };
  const auto k = std::size_t(c.num_classes);
  if (c.num_classes < 2) bad("need at least two classes");
  if (c.dim < c.num_classes + 1 + int(c.concepts.size())) bad("dim must be at least classes + concepts + 1");
  if (c.n_train < 1 || c.n_test < 0) bad("instance counts must be positive");
  if (!(c.noise_sigma >= 0) || !(c.segment_noise >= 0) || !(c.offset_scale >= 0)) bad("noise scales must be >= 0");
  if (!(c.shared_fraction >= 0 && c.shared_fraction < 1)) bad("shared_fraction must lie in [0, 1)");
  if (c.min_concept_segments < 1 || c.background_segments < 0) bad("segment counts out of range");
  for (std::size_t i = 0; i < c.concepts.size(); ++i) {
    const auto& p = c.concepts[i];
    if (p.train_rates.size() != k) bad(p.name + ": one train rate per class");
    if (!p.test_rates.empty() && p.test_rates.size() != k) bad(p.name + ": one test rate per class");
    for (double r : p.train_rates)
      if (!(r >= 0 && r <= 1)) bad(p.name + ": rates must lie in [0, 1]");
    for (double r : p.test_rates)
      if (!(r >= 0 && r <= 1)) bad(p.name + ": rates must lie in [0, 1]");
    if (!(p.strength > 0)) bad(p.name + ": strength must be positive");
    if (p.overlaps >= int(i)) bad(p.name + ": can only overlap an earlier concept");
    if (!(p.overlap >= 0 && p.overlap < 1)) bad(p.name + ": overlap must lie in [0, 1)");
  }
}

// Modified Gram-Schmidt over the columns.
Matrix orthonormal_columns(Matrix m) {
  for (Index j = 0; j < m.cols(); ++j) {
    for (Index i = 0; i < j; ++i) m.col(j) -= m.col(i).dot(m.col(j)) * m.col(i);
    const double n = m.col(j).norm();
    if (n < 1e-10) throw Error(ErrorKind::numeric, "degenerate basis draw");
    m.col(j) /= n;
  }
  return m;
}

Matrix through_float(const Matrix& m) { return m.cast<float>().cast<double>(); }

}  // namespace

Synthetic generate(const PlantConfig& cfg) {
  check_config(cfg);
  const int d = cfg.dim, k = cfg.num_classes;
  const auto nc = cfg.concepts.size();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  auto gaussian = [&](Index n) {
    Vector v(n);
    for (Index i = 0; i < n; ++i) v[i] = normal(rng);
    return v;
  };

  Matrix draws(d, k + 1 + Index(nc));
  for (Index i = 0; i < draws.rows(); ++i)
    for (Index j = 0; j < draws.cols(); ++j) draws(i, j) = normal(rng);
  const Matrix basis = orthonormal_columns(draws);

  Matrix means(k, d);
  for (int c = 0; c < k; ++c) means.row(c) = cfg.class_separation * basis.col(c).transpose();
  const Vector shared = basis.col(k);
  Matrix directions(Index(nc), d);
  for (std::size_t c = 0; c < nc; ++c) {
    Vector v = std::sqrt(cfg.shared_fraction) * shared +
               std::sqrt(1.0 - cfg.shared_fraction) * basis.col(k + 1 + Index(c));
    const auto& p = cfg.concepts[c];
    if (p.overlaps >= 0) {
      v = p.overlap * directions.row(p.overlaps).transpose() + std::sqrt(1.0 - p.overlap * p.overlap) * v;
      v.normalize();
    }
    directions.row(Index(c)) = v.transpose();
  }
  const Vector offset = cfg.offset_scale * gaussian(d).cwiseAbs();

  struct Draft {
    Split split;
    int label;
    std::vector<int> carried;
    Vector x;
  };
  std::vector<Draft> drafts;
  for (Split split : {Split::train, Split::test}) {
    std::vector<Draft> block;
    const int per_class = split == Split::train ? cfg.n_train : cfg.n_test;
    for (int label = 0; label < k; ++label) {
      for (int i = 0; i < per_class; ++i) {
        Draft dr{split, label, {}, {}};
        for (std::size_t c = 0; c < nc; ++c) {
          const auto& p = cfg.concepts[c];
          double rate;
          if (split == Split::train)
            rate = p.train_rates[std::size_t(label)];
          else if (!p.test_rates.empty())
            rate = p.test_rates[std::size_t(label)];
          else
            rate = std::accumulate(p.train_rates.begin(), p.train_rates.end(), 0.0) / double(k);
          if (uniform(rng) < rate) dr.carried.push_back(int(c));
        }
        dr.x = offset + means.row(label).transpose() + cfg.noise_sigma * gaussian(d);
        for (int c : dr.carried) dr.x += cfg.concepts[std::size_t(c)].strength * directions.row(c).transpose();
        block.push_back(std::move(dr));
      }
    }
    std::shuffle(block.begin(), block.end(), rng);
    for (auto& dr : block) drafts.push_back(std::move(dr));
  }

  Synthetic out;
  auto& b = out.bundle;
  auto& gt = out.truth;
  b.dim = d;
  for (int c = 0; c < k; ++c) b.classes.push_back("class" + std::to_string(c));
  b.instance_matrix.resize(Index(drafts.size()), d);
  for (std::size_t i = 0; i < drafts.size(); ++i) {
    b.instances.push_back({make_id('x', i, 5), drafts[i].split, drafts[i].label, std::nullopt, std::nullopt});
    b.instance_matrix.row(Index(i)) = drafts[i].x.transpose();
    gt.memberships.push_back(drafts[i].carried);
  }

  std::vector<Vector> seg_rows;
  gt.concept_segments.assign(nc, {});
  auto add_segment = [&](std::size_t instance, Vector v) {
    const auto id = make_id('s', seg_rows.size(), 6);
    b.segments.push_back({id, b.instances[instance].id, std::nullopt, std::nullopt});
    seg_rows.push_back(std::move(v));
    return id;
  };
  auto concept_patch = [&](std::size_t c) {
    return Vector(offset + cfg.concepts[c].strength * directions.row(Index(c)).transpose() +
                  cfg.segment_noise * gaussian(d));
  };
  for (std::size_t i = 0; i < drafts.size(); ++i) {
    for (int c : drafts[i].carried) gt.concept_segments[std::size_t(c)].push_back(add_segment(i, concept_patch(std::size_t(c))));
    for (int s = 0; s < cfg.background_segments; ++s)
      add_segment(i, offset + means.row(drafts[i].label).transpose() + cfg.noise_sigma * gaussian(d));
  }
  // Rare concepts still get enough exemplar segments to define a concept from.
  for (std::size_t c = 0; c < nc; ++c) {
    std::vector<std::size_t> hosts;
    for (std::size_t i = 0; i < drafts.size(); ++i)
      if (std::find(drafts[i].carried.begin(), drafts[i].carried.end(), int(c)) != drafts[i].carried.end())
        hosts.push_back(i);
    if (hosts.empty()) hosts.push_back(0);
    for (std::size_t j = 0; gt.concept_segments[c].size() < std::size_t(cfg.min_concept_segments); ++j)
      gt.concept_segments[c].push_back(add_segment(hosts[j % hosts.size()], concept_patch(c)));
  }
  b.segment_matrix.resize(Index(seg_rows.size()), d);
  for (std::size_t s = 0; s < seg_rows.size(); ++s) b.segment_matrix.row(Index(s)) = seg_rows[s].transpose();

  // Stored as float32 on disk; rounding here keeps write/load exact.
  b.instance_matrix = through_float(b.instance_matrix);
  b.segment_matrix = through_float(b.segment_matrix);
  b.reindex();

  gt.rng_algorithm = "mt19937_64; std::normal_distribution<double> and std::uniform_real_distribution<double> (libstdc++)";
  gt.seed = cfg.seed;
  gt.directions = directions;
  for (const auto& p : cfg.concepts) {
    gt.concept_names.push_back(p.name);
    const auto hi = std::max_element(p.train_rates.begin(), p.train_rates.end());
    const auto lo = std::min_element(p.train_rates.begin(), p.train_rates.end());
    gt.biased_class.push_back(*hi - *lo > 1e-12 ? int(hi - p.train_rates.begin()) : -1);
  }
  return out;
}

std::set<std::string> GroundTruth::carriers(const DatasetBundle& bundle, int concept_index,
                                            std::span<const Index> rows) const {
  std::set<std::string> out;
  for (Index r : rows) {
    const auto& m = memberships[std::size_t(r)];
    if (std::find(m.begin(), m.end(), concept_index) != m.end()) out.insert(bundle.instances[std::size_t(r)].id);
  }
  return out;
}

double precision_at_k(std::span<const std::string> ranking, const std::set<std::string>& truth, int k) {
  if (k < 1) throw Error(ErrorKind::invalid_argument, "precision@k needs k >= 1");
  const std::size_t top = std::min(ranking.size(), std::size_t(k));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < top; ++i)
    if (truth.contains(ranking[i])) ++hits;
  return double(hits) / double(k);
}

PlantConfig load_plant_config(const std::filesystem::path& file, std::uint64_t seed) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorKind::io, "missing file " + file.string(), file.filename().string());
  PlantConfig c;
  c.seed = seed;
  try {
    const auto j = nlohmann::json::parse(in);
    c.dim = j.value("dim", c.dim);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.n_train = j.value("n_train", c.n_train);
    c.n_test = j.value("n_test", c.n_test);
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.class_separation = j.value("class_separation", c.class_separation);
    c.offset_scale = j.value("offset_scale", c.offset_scale);
    c.shared_fraction = j.value("shared_fraction", c.shared_fraction);
    c.segment_noise = j.value("segment_noise", c.segment_noise);
    c.min_concept_segments = j.value("min_concept_segments", c.min_concept_segments);
    c.background_segments = j.value("background_segments", c.background_segments);
    if (j.contains("concepts")) {
      c.concepts.clear();
      for (const auto& p : j["concepts"]) {
        PlantedConcept pc;
        pc.name = p.at("name").get<std::string>();
        pc.train_rates = p.at("train_rates").get<std::vector<double>>();
        pc.test_rates = p.value("test_rates", std::vector<double>{});
        pc.strength = p.value("strength", pc.strength);
        pc.overlaps = p.value("overlaps", pc.overlaps);
        pc.overlap = p.value("overlap", pc.overlap);
        c.concepts.push_back(std::move(pc));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::validation, std::string("malformed plant config: ") + e.what(), file.filename().string());
  }
  check_config(c);
  return c;
}

void write_ground_truth(const Synthetic& s, const std::filesystem::path& file) {
  using nlohmann::json;
  const auto& gt = s.truth;
  json j;
  j["rng"] = gt.rng_algorithm;
  j["seed"] = gt.seed;
  json concepts = json::array();
  for (std::size_t c = 0; c < gt.concept_names.size(); ++c) {
    json e{{"name", gt.concept_names[c]}, {"segment_ids", gt.concept_segments[c]}};
    e["biased_class"] = gt.biased_class[c] >= 0 ? json(s.bundle.classes[std::size_t(gt.biased_class[c])]) : json(nullptr);
    concepts.push_back(std::move(e));
  }
  j["concepts"] = std::move(concepts);
  json members = json::object();
  for (std::size_t i = 0; i < gt.memberships.size(); ++i) {
    if (gt.memberships[i].empty()) continue;
    json names = json::array();
    for (int c : gt.memberships[i]) names.push_back(gt.concept_names[std::size_t(c)]);
    members[s.bundle.instances[i].id] = std::move(names);
  }
  j["memberships"] = std::move(members);
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + file.string(), file.filename().string());
  out << j.dump(1) << '\n';
}

}  // namespace escape
