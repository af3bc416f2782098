#include "escape/bundle.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_set>

namespace escape {

namespace fs = std::filesystem;
using nlohmann::json;

void DatasetBundle::reindex() {
  instance_index_.clear();
  segment_index_.clear();
  for (std::size_t i = 0; i < instances.size(); ++i) instance_index_.emplace(instances[i].id, static_cast<Index>(i));
  for (std::size_t i = 0; i < segments.size(); ++i) segment_index_.emplace(segments[i].id, static_cast<Index>(i));
}

std::optional<Index> DatasetBundle::find_instance(const std::string& id) const {
  auto it = instance_index_.find(id);
  if (it == instance_index_.end()) return std::nullopt;
  return it->second;
}

std::optional<Index> DatasetBundle::find_segment(const std::string& id) const {
  auto it = segment_index_.find(id);
  if (it == segment_index_.end()) return std::nullopt;
  return it->second;
}

Index DatasetBundle::instance_row(const std::string& id) const {
  if (auto r = find_instance(id)) return *r;
  throw Error(ErrorKind::not_found, "unknown instance '" + id + "'", id);
}

Index DatasetBundle::segment_row(const std::string& id) const {
  if (auto r = find_segment(id)) return *r;
  throw Error(ErrorKind::not_found, "unknown segment '" + id + "'", id);
}

std::vector<Index> DatasetBundle::rows(Split split) const {
  std::vector<Index> out;
  for (std::size_t i = 0; i < instances.size(); ++i)
    if (instances[i].split == split) out.push_back(static_cast<Index>(i));
  return out;
}

std::vector<Index> DatasetBundle::rows(Split split, const ClassPair& pair) const {
  std::vector<Index> out;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& x = instances[i];
    if (x.split == split && (x.label == pair.negative || x.label == pair.positive)) out.push_back(static_cast<Index>(i));
  }
  return out;
}

std::vector<int> DatasetBundle::labels(const std::vector<Index>& rows) const {
  std::vector<int> out;
  out.reserve(rows.size());
  for (Index r : rows) out.push_back(instances[static_cast<std::size_t>(r)].label);
  return out;
}

bool DatasetBundle::has_all_coords() const {
  if (instances.empty()) return false;
  for (const auto& x : instances)
    if (!x.coords2d) return false;
  return true;
}

namespace {

struct Violation {
  std::string entity;
  std::string message;
};

std::vector<Violation> find_violations(const DatasetBundle& b) {
  std::vector<Violation> out;
  if (b.dim <= 0) out.push_back({"manifest", "dim must be positive"});
  if (b.classes.empty()) out.push_back({"manifest", "no classes declared"});

  std::unordered_set<std::string> seen;
  for (const auto& x : b.instances) {
    if (!seen.insert(x.id).second) out.push_back({x.id, "duplicate instance id"});
    if (x.label < 0 || x.label >= b.num_classes()) out.push_back({x.id, "label does not index into classes"});
    if (x.coords2d && (!std::isfinite((*x.coords2d)[0]) || !std::isfinite((*x.coords2d)[1])))
      out.push_back({x.id, "coords2d not finite"});
  }
  std::unordered_set<std::string> seg_seen;
  for (const auto& s : b.segments) {
    if (!seg_seen.insert(s.id).second) out.push_back({s.id, "duplicate segment id"});
    if (!seen.contains(s.instance_id)) out.push_back({s.id, "references absent instance '" + s.instance_id + "'"});
    if (s.bbox && !(s.bbox->w > 0 && s.bbox->h > 0)) out.push_back({s.id, "bbox needs w>0 and h>0"});
  }

  auto check_matrix = [&](const Matrix& m, std::size_t expected, const char* what, auto id_of) {
    if (static_cast<std::size_t>(m.rows()) != expected) {
      out.push_back({what, std::string(what) + " matrix has " + std::to_string(m.rows()) + " rows, expected " +
                               std::to_string(expected)});
      return;
    }
    if (m.rows() > 0 && m.cols() != b.dim) {
      out.push_back({what, std::string(what) + " matrix has " + std::to_string(m.cols()) + " columns, dim is " +
                               std::to_string(b.dim)});
      return;
    }
    for (Index i = 0; i < m.rows(); ++i)
      if (!m.row(i).allFinite()) out.push_back({id_of(i), "non-finite activation in row " + std::to_string(i)});
  };
  check_matrix(b.instance_matrix, b.instances.size(), "instances",
               [&](Index i) { return b.instances[static_cast<std::size_t>(i)].id; });
  check_matrix(b.segment_matrix, b.segments.size(), "segments",
               [&](Index i) { return b.segments[static_cast<std::size_t>(i)].id; });
  return out;
}

[[noreturn]] void fail(const std::string& entity, const std::string& message, ErrorKind kind = ErrorKind::validation) {
  throw Error(kind, entity + ": " + message, entity);
}

template <typename T>
T field(const json& j, const char* key, const std::string& entity) {
  auto it = j.find(key);
  if (it == j.end()) fail(entity, std::string("missing field '") + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    fail(entity, std::string("field '") + key + "' has the wrong type");
  }
}

}  // namespace

std::vector<std::string> validate_bundle(const DatasetBundle& bundle) {
  std::vector<std::string> out;
  for (auto& v : find_violations(bundle)) out.push_back(v.entity + ": " + v.message);
  return out;
}

Matrix read_f32(const fs::path& file, Index rows, Index cols, const std::string& entity) {
  std::error_code ec;
  if (!fs::exists(file, ec)) fail(entity, "missing file " + file.string(), ErrorKind::io);
  const auto bytes = fs::file_size(file, ec);
  if (ec) fail(entity, "cannot stat " + file.string(), ErrorKind::io);
  const std::uintmax_t row_bytes = static_cast<std::uintmax_t>(cols) * sizeof(float);
  if (row_bytes == 0 || bytes % row_bytes != 0)
    fail(entity, "byte length not divisible by 4*dim (" + std::to_string(bytes) + " bytes, dim " +
                     std::to_string(cols) + ")");
  if (bytes / row_bytes != static_cast<std::uintmax_t>(rows))
    fail(entity, "holds " + std::to_string(bytes / row_bytes) + " rows but manifest declares " + std::to_string(rows));

  std::vector<float> buf(static_cast<std::size_t>(rows * cols));
  std::ifstream in(file, std::ios::binary);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!in) fail(entity, "short read on " + file.string(), ErrorKind::io);
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& f : buf) {
      auto u = std::bit_cast<std::uint32_t>(f);
      u = __builtin_bswap32(u);
      f = std::bit_cast<float>(u);
    }
  }
  Matrix m(rows, cols);
  for (Index i = 0; i < rows * cols; ++i) m.data()[i] = static_cast<double>(buf[static_cast<std::size_t>(i)]);
  return m;
}

void write_f32(const fs::path& file, const Matrix& m) {
  std::vector<float> buf(static_cast<std::size_t>(m.size()));
  for (Index i = 0; i < m.size(); ++i) {
    float f = static_cast<float>(m.data()[i]);
    if constexpr (std::endian::native == std::endian::big)
      f = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(f)));
    buf[static_cast<std::size_t>(i)] = f;
  }
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + file.string(), file.filename().string());
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

DatasetBundle load_bundle(const fs::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) fail("manifest.json", "missing file " + manifest_path.string(), ErrorKind::io);
  json m;
  try {
    m = json::parse(in);
  } catch (const json::parse_error& e) {
    fail("manifest.json", std::string("malformed JSON: ") + e.what());
  }

  if (field<int>(m, "version", "manifest.json") != 1) fail("manifest.json", "unsupported version");

  DatasetBundle b;
  b.dim = field<int>(m, "dim", "manifest.json");
  if (b.dim <= 0) fail("manifest.json", "dim must be positive");
  b.classes = field<std::vector<std::string>>(m, "classes", "manifest.json");

  const auto instances = field<json>(m, "instances", "manifest.json");
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& j = instances[i];
    const std::string where = j.contains("id") && j["id"].is_string() ? j["id"].get<std::string>()
                                                                       : "instances[" + std::to_string(i) + "]";
    Instance x;
    x.id = field<std::string>(j, "id", where);
    try {
      x.split = parse_split(field<std::string>(j, "split", where));
    } catch (const Error&) {
      fail(where, "split must be train or test");
    }
    x.label = field<int>(j, "label", where);
    if (j.contains("image") && !j["image"].is_null()) x.image_path = field<std::string>(j, "image", where);
    if (j.contains("coords2d") && !j["coords2d"].is_null()) {
      auto c = field<std::vector<double>>(j, "coords2d", where);
      if (c.size() != 2) fail(where, "coords2d needs two numbers");
      x.coords2d = std::array<double, 2>{c[0], c[1]};
    }
    b.instances.push_back(std::move(x));
  }

  const auto segments = m.contains("segments") ? m["segments"] : json::array();
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& j = segments[i];
    const std::string where = j.contains("id") && j["id"].is_string() ? j["id"].get<std::string>()
                                                                       : "segments[" + std::to_string(i) + "]";
    Segment s;
    s.id = field<std::string>(j, "id", where);
    s.instance_id = field<std::string>(j, "instance_id", where);
    if (j.contains("bbox") && !j["bbox"].is_null()) {
      auto v = field<std::vector<double>>(j, "bbox", where);
      if (v.size() != 4) fail(where, "bbox needs four numbers");
      s.bbox = BBox{v[0], v[1], v[2], v[3]};
    }
    if (j.contains("image") && !j["image"].is_null()) s.image_path = field<std::string>(j, "image", where);
    b.segments.push_back(std::move(s));
  }

  b.instance_matrix = read_f32(dir / "instances.f32", static_cast<Index>(b.instances.size()), b.dim, "instances.f32");
  if (b.segments.empty() && !fs::exists(dir / "segments.f32"))
    b.segment_matrix = Matrix(0, b.dim);
  else
    b.segment_matrix = read_f32(dir / "segments.f32", static_cast<Index>(b.segments.size()), b.dim, "segments.f32");

  auto violations = find_violations(b);
  if (!violations.empty()) fail(violations.front().entity, violations.front().message);
  b.reindex();
  return b;
}

void write_bundle(const DatasetBundle& b, const fs::path& dir) {
  fs::create_directories(dir);
  json m;
  m["version"] = 1;
  m["dim"] = b.dim;
  m["classes"] = b.classes;
  json instances = json::array();
  for (const auto& x : b.instances) {
    json j{{"id", x.id}, {"split", std::string(to_string(x.split))}, {"label", x.label}};
    if (x.image_path) j["image"] = *x.image_path;
    if (x.coords2d) j["coords2d"] = {(*x.coords2d)[0], (*x.coords2d)[1]};
    instances.push_back(std::move(j));
  }
  m["instances"] = std::move(instances);
  json segments = json::array();
  for (const auto& s : b.segments) {
    json j{{"id", s.id}, {"instance_id", s.instance_id}};
    if (s.bbox) j["bbox"] = {s.bbox->x, s.bbox->y, s.bbox->w, s.bbox->h};
    if (s.image_path) j["image"] = *s.image_path;
    segments.push_back(std::move(j));
  }
  m["segments"] = std::move(segments);

  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write manifest in " + dir.string(), "manifest.json");
  out << m.dump(1) << '\n';
  write_f32(dir / "instances.f32", b.instance_matrix);
  write_f32(dir / "segments.f32", b.segment_matrix);
}

std::vector<ConceptSpec> load_concept_specs(const fs::path& file) {
  const std::string entity = file.filename().string();
  std::ifstream in(file);
  if (!in) fail(entity, "missing file " + file.string(), ErrorKind::io);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    fail(entity, std::string("malformed JSON: ") + e.what());
  }
  if (j.is_object() && j.contains("concepts")) j = j["concepts"];
  if (!j.is_array()) fail(entity, "expected a list of concepts");
  std::vector<ConceptSpec> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string where = entity + "[" + std::to_string(i) + "]";
    ConceptSpec c;
    c.name = field<std::string>(j[i], "name", where);
    c.segment_ids = field<std::vector<std::string>>(j[i], "segment_ids", where);
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace escape
