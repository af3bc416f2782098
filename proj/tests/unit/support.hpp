#pragma once

#include "escape/debias.hpp"
#include "escape/report.hpp"
#include "escape/synthetic.hpp"

#include <json.hpp>

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

namespace testing {

using namespace escape;

inline const nlohmann::json& oracle() {
  static const nlohmann::json j = [] {
    std::ifstream f(std::filesystem::path(ESCAPE_FIXTURES) / "oracle.json");
    REQUIRE(f.good());
    return nlohmann::json::parse(f);
  }();
  return j;
}

inline Matrix to_matrix(const nlohmann::json& rows) {
  Matrix m(Index(rows.size()), Index(rows.at(0).size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = rows[std::size_t(i)][std::size_t(j)].get<double>();
  return m;
}

inline Vector to_vector(const nlohmann::json& v) {
  Vector out(Index(v.size()));
  for (Index i = 0; i < out.size(); ++i) out[i] = v[std::size_t(i)].get<double>();
  return out;
}

inline Matrix gaussian(Index rows, Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = n(rng);
  return m;
}

// Scratch directory removed on scope exit.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() / ("escape-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

struct Planted {
  Synthetic syn;
  std::shared_ptr<const DatasetBundle> bundle;
  std::unique_ptr<Workbench> wb;
  std::vector<Concept> concepts;
  ClassPair pair{0, 1};
};

inline Planted planted(std::uint64_t seed, PlantConfig cfg = {}) {
  cfg.seed = seed;
  Planted p;
  p.syn = generate(cfg);
  p.bundle = std::make_shared<const DatasetBundle>(p.syn.bundle);
  AnalysisOptions o;
  o.head.seed = seed;
  p.wb = std::make_unique<Workbench>(p.bundle, o);
  for (std::size_t c = 0; c < p.syn.truth.concept_names.size(); ++c)
    p.concepts.push_back(
        p.wb->make_concept("c" + std::to_string(c), p.syn.truth.concept_names[c], p.syn.truth.concept_segments[c]));
  return p;
}

}  // namespace testing
