#pragma once

#include "escape/debias.hpp"
#include "escape/workbench.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <vector>

namespace escape {

using Json = nlohmann::json;

// One bundle per process. Every mutation builds a fresh immutable State and swaps it in,
// so readers keep working on the snapshot they started with.
class Session {
 public:
  Session(std::shared_ptr<const DatasetBundle> bundle, AnalysisOptions options);

  std::uint64_t seed() const { return seed_; }

  Json overview() const;
  Json select_pair(const ClassPair& pair, std::optional<Projection> projection = std::nullopt);
  Json instances() const;
  Json neighbors(const std::string& instance_id, int k = kInstanceNeighbors) const;
  Json segment_workspace(const Json& request) const;

  Json create_concept(const std::string& name, std::vector<std::string> segment_ids);
  Json delete_concept(const std::string& concept_id);
  Json concepts() const;
  Json concept_detail(const std::string& concept_id) const;

  Json curve(const std::string& concept_id, bool evaluate) const;
  Json recommend(const std::string& concept_id, double tolerance) const;
  Json apply_debias(const std::string& concept_id, int n);

  std::string concept_set_hash() const;
  HeadModel head() const;

 private:
  struct State {
    std::shared_ptr<const Workbench> wb;
    ClassPair pair;
    Projection projection = Projection::pca;
    std::vector<Concept> concepts;
    std::uint64_t next_concept = 1;
    std::uint64_t generation = 0;  // bumps whenever activations or the head change
    Json applied = Json::array();
  };

  std::shared_ptr<const State> snapshot() const;
  void publish(std::shared_ptr<const State> next);
  Json pair_payload(const State& s) const;
  Index concept_index(const State& s, const std::string& concept_id) const;
  std::shared_ptr<const AssociationTable> train_table(const State& s) const;
  std::shared_ptr<const DebiasCurve> cached_curve(const State& s, const std::string& concept_id, bool evaluate) const;
  static std::string hash_of(const std::vector<Concept>& concepts);

  std::uint64_t seed_;
  mutable std::shared_mutex state_mutex_;
  std::shared_ptr<const State> state_;
  std::mutex writer_;

  mutable std::mutex cache_mutex_;
  mutable std::map<std::string, std::shared_ptr<const AssociationTable>> table_cache_;
  mutable std::map<std::string, std::shared_ptr<const DebiasCurve>> curve_cache_;
};

}  // namespace escape
