#pragma once

#include "escape/core.hpp"

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace escape {

struct Instance {
  std::string id;
  Split split = Split::train;
  int label = 0;
  std::optional<std::string> image_path;
  std::optional<std::array<double, 2>> coords2d;
};

struct BBox {
  double x = 0, y = 0, w = 0, h = 0;
};

struct Segment {
  std::string id;
  std::string instance_id;
  std::optional<BBox> bbox;
  std::optional<std::string> image_path;
};

struct DatasetBundle {
  int dim = 0;
  std::vector<std::string> classes;
  std::vector<Instance> instances;
  std::vector<Segment> segments;
  Matrix instance_matrix;
  Matrix segment_matrix;

  int num_classes() const { return static_cast<int>(classes.size()); }

  // Must be called after the id lists change; lookups use the maps it builds.
  void reindex();

  std::optional<Index> find_instance(const std::string& id) const;
  std::optional<Index> find_segment(const std::string& id) const;
  Index instance_row(const std::string& id) const;  // throws not_found
  Index segment_row(const std::string& id) const;   // throws not_found

  std::vector<Index> rows(Split split) const;
  std::vector<Index> rows(Split split, const ClassPair& pair) const;
  std::vector<int> labels(const std::vector<Index>& rows) const;
  bool has_all_coords() const;

 private:
  std::unordered_map<std::string, Index> instance_index_;
  std::unordered_map<std::string, Index> segment_index_;
};

std::vector<std::string> validate_bundle(const DatasetBundle& bundle);

DatasetBundle load_bundle(const std::filesystem::path& dir);
void write_bundle(const DatasetBundle& bundle, const std::filesystem::path& dir);

// Batch concept definitions: a JSON list of {name, segment_ids}, or an object holding such a list under "concepts".
struct ConceptSpec {
  std::string name;
  std::vector<std::string> segment_ids;
};

std::vector<ConceptSpec> load_concept_specs(const std::filesystem::path& file);

// Raw little-endian float32 matrix files.
Matrix read_f32(const std::filesystem::path& file, Index rows, Index cols, const std::string& entity);
void write_f32(const std::filesystem::path& file, const Matrix& m);

}  // namespace escape
