#pragma once

#include "escape/bundle.hpp"

#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace escape {

struct PlantedConcept {
  std::string name;
  std::vector<double> train_rates;  // carriage probability per class
  std::vector<double> test_rates;   // empty: every class gets the mean train rate
  double strength = 4.0;
  int overlaps = -1;  // earlier concept whose direction this one partially reuses
  double overlap = 0.0;
};

struct PlantConfig {
  std::uint64_t seed = 0;
  int dim = 64;
  int num_classes = 2;
  int n_train = 400;  // per class
  int n_test = 200;   // per class
  double noise_sigma = 1.0;
  double class_separation = 1.0;
  double offset_scale = 3.0;     // shared positive activation offset, as in post-ReLU features
  double shared_fraction = 0.25;  // squared weight of the common component in every concept direction
  double segment_noise = 0.3;
  int min_concept_segments = 20;
  int background_segments = 1;  // per instance
  std::vector<PlantedConcept> concepts = default_planted_concepts();

  // One concept tied to class 1 (0.3 vs 0.02, strength 4), a look-alike sharing part of its
  // direction, and a label-neutral context concept.
  static std::vector<PlantedConcept> default_planted_concepts();
};

struct GroundTruth {
  std::string rng_algorithm;
  std::uint64_t seed = 0;
  std::vector<std::string> concept_names;
  std::vector<int> biased_class;  // -1 when rates are equal across classes
  std::vector<std::vector<std::string>> concept_segments;
  std::vector<std::vector<int>> memberships;  // per instance, concept indices carried
  Matrix directions;                          // one unit row per concept

  std::set<std::string> carriers(const DatasetBundle& bundle, int concept_index, std::span<const Index> rows) const;
};

struct Synthetic {
  DatasetBundle bundle;
  GroundTruth truth;
};

Synthetic generate(const PlantConfig& config);

PlantConfig load_plant_config(const std::filesystem::path& file, std::uint64_t seed);
void write_ground_truth(const Synthetic& s, const std::filesystem::path& file);

double precision_at_k(std::span<const std::string> ranking, const std::set<std::string>& truth, int k);

}  // namespace escape
