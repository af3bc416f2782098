#include "escape/service.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

namespace escape {

namespace {

Json to_json(const ConfusionSummary& s) {
  Json matrix = Json::array(), uu = Json::array();
  for (Index r = 0; r < s.matrix.rows(); ++r) {
    Json row = Json::array(), uu_row = Json::array();
    for (Index c = 0; c < s.matrix.cols(); ++c) {
      row.push_back(s.matrix(r, c));
      uu_row.push_back(s.uu_cells(r, c));
    }
    matrix.push_back(std::move(row));
    uu.push_back(std::move(uu_row));
  }
  return {{"matrix", matrix},
          {"misclassified", s.misclassified},
          {"unknown_unknowns", s.unknown_unknowns},
          {"uu_cells", uu},
          {"brier_histogram", s.brier_histogram},
          {"total", s.total()},
          {"accuracy", s.accuracy()}};
}

Json to_json(const Influence& f) {
  return {{"positive_fraction", f.positive_fraction}, {"mean_derivative", f.mean_derivative}, {"size", f.size}};
}

std::vector<double> to_std(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

}  // namespace

Session::Session(std::shared_ptr<const DatasetBundle> bundle, AnalysisOptions options)
    : seed_(options.head.seed) {
  auto s = std::make_shared<State>();
  s->wb = std::make_shared<const Workbench>(std::move(bundle), options);
  s->pair = ClassPair{0, 1};
  s->projection = s->wb->bundle().has_all_coords() ? Projection::precomputed : Projection::pca;
  state_ = std::move(s);
}

std::shared_ptr<const Session::State> Session::snapshot() const {
  std::shared_lock lock(state_mutex_);
  return state_;
}

void Session::publish(std::shared_ptr<const State> next) {
  {
    std::unique_lock lock(state_mutex_);
    state_ = std::move(next);
  }
  std::lock_guard lock(cache_mutex_);
  table_cache_.clear();
  curve_cache_.clear();
}

std::string Session::hash_of(const std::vector<Concept>& concepts) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](const std::string& s) {
    for (unsigned char c : s) h = (h ^ c) * 1099511628211ull;
    h = (h ^ 0xff) * 1099511628211ull;
  };
  for (const auto& c : concepts) {
    mix(c.id);
    for (const auto& s : c.segment_ids) mix(s);
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string Session::concept_set_hash() const { return hash_of(snapshot()->concepts); }

HeadModel Session::head() const { return snapshot()->wb->head(); }

Index Session::concept_index(const State& s, const std::string& concept_id) const {
  for (std::size_t i = 0; i < s.concepts.size(); ++i)
    if (s.concepts[i].id == concept_id) return Index(i);
  throw Error(ErrorKind::not_found, "unknown concept '" + concept_id + "'", concept_id);
}

std::shared_ptr<const AssociationTable> Session::train_table(const State& s) const {
  const std::string key = std::to_string(s.generation) + ":" + std::to_string(s.pair.negative) + "," +
                          std::to_string(s.pair.positive) + ":" + hash_of(s.concepts);
  {
    std::lock_guard lock(cache_mutex_);
    if (auto it = table_cache_.find(key); it != table_cache_.end()) return it->second;
  }
  const auto rows = s.wb->bundle().rows(Split::train, s.pair);
  auto table = std::make_shared<const AssociationTable>(s.wb->associations(rows, s.concepts));
  std::lock_guard lock(cache_mutex_);
  table_cache_.emplace(key, table);
  return table;
}

std::shared_ptr<const DebiasCurve> Session::cached_curve(const State& s, const std::string& concept_id,
                                                         bool evaluate) const {
  const Index c = concept_index(s, concept_id);
  const std::string key = std::to_string(s.generation) + ":" + std::to_string(s.pair.negative) + "," +
                          std::to_string(s.pair.positive) + ":" + hash_of(s.concepts) + ":" + concept_id +
                          (evaluate ? ":eval" : "");
  {
    std::lock_guard lock(cache_mutex_);
    if (auto it = curve_cache_.find(key); it != curve_cache_.end()) return it->second;
  }
  auto curve = std::make_shared<const DebiasCurve>(debias_curve(*s.wb, s.concepts, c, s.pair, evaluate));
  std::lock_guard lock(cache_mutex_);
  curve_cache_.emplace(key, curve);
  return curve;
}

Json Session::overview() const {
  const auto s = snapshot();
  const auto& wb = *s->wb;
  const auto& b = wb.bundle();
  const auto rows = wb.evaluation_rows();
  const auto labels = b.labels(rows);
  const auto preds = wb.predictions(rows);
  const auto summary = confusion_summary(preds, labels, b.num_classes(), wb.options().uu_threshold);

  Json per_class = Json::array();
  for (int k = 0; k < b.num_classes(); ++k) {
    per_class.push_back({{"class", b.classes[std::size_t(k)]},
                         {"count", summary.matrix.row(k).sum()},
                         {"correct", summary.matrix(k, k)},
                         {"accuracy", summary.class_accuracy(k)},
                         {"misclassified", summary.misclassified[std::size_t(k)]},
                         {"unknown_unknowns", summary.unknown_unknowns[std::size_t(k)]}});
  }
  return {{"seed", seed_},
          {"split", b.rows(Split::test).empty() ? "train" : "test"},
          {"classes", b.classes},
          {"accuracy", summary.accuracy()},
          {"per_class", per_class},
          {"confusion", to_json(summary)},
          {"uu_threshold", wb.options().uu_threshold},
          {"head", {{"final_loss", wb.head().meta.final_loss}, {"iterations", wb.head().meta.iterations}}},
          {"debias_applied", s->applied}};
}

Json Session::pair_payload(const State& s) const {
  const auto& wb = *s.wb;
  const auto& b = wb.bundle();
  const auto rows = wb.evaluation_rows();
  const auto labels = b.labels(rows);
  const auto preds = wb.predictions(rows);
  const auto members = pair_subset(preds, labels, s.pair);

  std::vector<Index> member_rows;
  for (const auto& m : members) member_rows.push_back(rows[m.position]);
  Matrix coords = Matrix::Zero(Index(member_rows.size()), 2);
  if (s.projection == Projection::precomputed)
    coords = project_precomputed(b, member_rows);
  else if (member_rows.size() >= 2)
    coords = project_pca(wb.gather(member_rows));

  Json out = Json::array();
  std::map<std::string, int> counts{{"TN", 0}, {"FP", 0}, {"FN", 0}, {"TP", 0}};
  for (std::size_t i = 0; i < members.size(); ++i) {
    const auto& p = preds[members[i].position];
    const auto& x = b.instances[std::size_t(member_rows[i])];
    const std::string c(to_string(members[i].confusion));
    ++counts[c];
    Json j{{"id", x.id},       {"label", x.label},    {"predicted", p.predicted}, {"case", c},
           {"brier", p.brier}, {"probs", to_std(p.probs)}, {"x", coords(Index(i), 0)}, {"y", coords(Index(i), 1)}};
    if (x.image_path) j["image"] = *x.image_path;
    out.push_back(std::move(j));
  }
  return {{"seed", seed_},
          {"pair", {{"negative", s.pair.negative}, {"positive", s.pair.positive}}},
          {"projection", s.projection == Projection::pca ? "pca" : "precomputed"},
          {"case_counts", counts},
          {"members", out}};
}

Json Session::select_pair(const ClassPair& pair, std::optional<Projection> projection) {
  std::lock_guard writer(writer_);
  const auto cur = snapshot();
  check_pair(pair, cur->wb->bundle().num_classes());
  auto next = std::make_shared<State>(*cur);
  next->pair = pair;
  if (projection) {
    if (*projection == Projection::precomputed && !cur->wb->bundle().has_all_coords())
      throw Error(ErrorKind::invalid_argument, "bundle carries no precomputed coordinates");
    next->projection = *projection;
  }
  publish(next);
  return pair_payload(*next);
}

Json Session::instances() const { return pair_payload(*snapshot()); }

Json Session::neighbors(const std::string& instance_id, int k) const {
  const auto s = snapshot();
  const auto& wb = *s->wb;
  const auto& b = wb.bundle();
  const Index self = b.instance_row(instance_id);
  const auto rows = b.rows(b.instances[std::size_t(self)].split);
  const auto ids = wb.ids(rows);
  const Matrix x = wb.gather(rows);
  const auto near = knn(x, ids, instance_id, k);
  const auto preds = wb.predictions(rows);
  Json out = Json::array();
  for (Index p : near) {
    const auto& inst = b.instances[std::size_t(rows[std::size_t(p)])];
    out.push_back({{"id", inst.id},
                   {"distance", (x.row(p) - wb.instances().row(self)).norm()},
                   {"label", inst.label},
                   {"predicted", preds[std::size_t(p)].predicted}});
  }
  return {{"seed", seed_}, {"id", instance_id}, {"k", k}, {"neighbors", out}};
}

Json Session::segment_workspace(const Json& request) const {
  const auto s = snapshot();
  const auto& wb = *s->wb;
  const auto& b = wb.bundle();

  // instance id -> confusion case for the current pair
  std::map<std::string, std::string> case_of;
  {
    const auto rows = wb.evaluation_rows();
    const auto preds = wb.predictions(rows);
    for (const auto& m : pair_subset(preds, b.labels(rows), s->pair))
      case_of[b.instances[std::size_t(rows[m.position])].id] = std::string(to_string(m.confusion));
  }

  std::set<std::string> selected;
  if (request.contains("instance_ids")) {
    for (const auto& id : request["instance_ids"].get<std::vector<std::string>>()) {
      b.instance_row(id);
      selected.insert(id);
    }
  } else {
    std::set<std::string> cases;
    for (const auto& c : request.value("cases", std::vector<std::string>{})) {
      if (c != "TN" && c != "FP" && c != "FN" && c != "TP")
        throw Error(ErrorKind::invalid_argument, "unknown confusion case '" + c + "'", c);
      cases.insert(c);
    }
    for (const auto& [id, c] : case_of)
      if (cases.contains(c)) selected.insert(id);
  }

  std::vector<Index> seg_rows;
  for (std::size_t i = 0; i < b.segments.size(); ++i)
    if (selected.contains(b.segments[i].instance_id)) seg_rows.push_back(Index(i));
  Matrix aligned(Index(seg_rows.size()), b.dim);
  std::vector<std::string> seg_ids;
  for (std::size_t i = 0; i < seg_rows.size(); ++i) {
    aligned.row(Index(i)) = wb.segments().row(seg_rows[i]);
    seg_ids.push_back(b.segments[std::size_t(seg_rows[i])].id);
  }
  const Matrix coords = seg_rows.size() >= 2 ? project_pca(aligned) : Matrix(Matrix::Zero(Index(seg_rows.size()), 2));

  Json segs = Json::array();
  for (std::size_t i = 0; i < seg_rows.size(); ++i) {
    const auto& seg = b.segments[std::size_t(seg_rows[i])];
    auto it = case_of.find(seg.instance_id);
    Json j{{"id", seg.id},
           {"instance_id", seg.instance_id},
           {"case", it == case_of.end() ? Json(nullptr) : Json(it->second)},
           {"x", coords(Index(i), 0)},
           {"y", coords(Index(i), 1)}};
    if (seg.bbox) j["bbox"] = {seg.bbox->x, seg.bbox->y, seg.bbox->w, seg.bbox->h};
    if (seg.image_path) j["image"] = *seg.image_path;
    segs.push_back(std::move(j));
  }
  Json out{{"seed", seed_}, {"segments", segs}};

  if (request.contains("group_of")) {
    const auto anchor = request["group_of"].get<std::string>();
    const int k = request.value("k", kSegmentNeighbors);
    const Index anchor_row = b.segment_row(anchor);
    auto pos = std::find(seg_ids.begin(), seg_ids.end(), anchor);
    std::vector<Index> near;
    Json group = Json::array();
    if (pos != seg_ids.end()) {
      for (Index p : knn(aligned, seg_ids, anchor, k)) group.push_back(seg_ids[std::size_t(p)]);
    } else {
      std::vector<std::string> all_ids;
      for (const auto& sg : b.segments) all_ids.push_back(sg.id);
      for (Index p : knn(wb.segments(), all_ids, wb.segments().row(anchor_row).transpose(), k, anchor_row))
        group.push_back(all_ids[std::size_t(p)]);
    }
    out["group"] = {{"anchor", anchor}, {"k", k}, {"ids", group}};
  }
  return out;
}

Json Session::create_concept(const std::string& name, std::vector<std::string> segment_ids) {
  std::lock_guard writer(writer_);
  const auto cur = snapshot();
  auto next = std::make_shared<State>(*cur);
  const std::string id = "c" + std::to_string(next->next_concept++);
  auto c = cur->wb->make_concept(id, name, std::move(segment_ids));
  Json out{{"seed", seed_},
           {"id", c.id},
           {"name", c.name},
           {"norm", c.vector.norm()},
           {"member_count", c.segment_ids.size()}};
  next->concepts.push_back(std::move(c));
  out["concept_set_hash"] = hash_of(next->concepts);
  publish(next);
  return out;
}

Json Session::delete_concept(const std::string& concept_id) {
  std::lock_guard writer(writer_);
  const auto cur = snapshot();
  const Index c = concept_index(*cur, concept_id);
  auto next = std::make_shared<State>(*cur);
  next->concepts.erase(next->concepts.begin() + c);
  publish(next);
  return {{"seed", seed_}, {"deleted", concept_id}, {"concept_set_hash", hash_of(next->concepts)}};
}

Json Session::concepts() const {
  const auto s = snapshot();
  Json list = Json::array();
  if (!s->concepts.empty()) {
    const auto& wb = *s->wb;
    const auto& b = wb.bundle();
    const auto table = train_table(*s);
    const auto train_rows = b.rows(Split::train, s->pair);
    const auto train_labels = b.labels(train_rows);

    const auto rows = wb.evaluation_rows();
    const auto preds = wb.predictions(rows);
    std::vector<Index> fn_rows, fp_rows;
    for (const auto& m : pair_subset(preds, b.labels(rows), s->pair)) {
      if (m.confusion == ConfusionCase::FN) fn_rows.push_back(rows[m.position]);
      if (m.confusion == ConfusionCase::FP) fp_rows.push_back(rows[m.position]);
    }
    const Matrix fn = wb.gather(fn_rows), fp = wb.gather(fp_rows);
    const auto target = wb.options().influence_target;

    for (std::size_t c = 0; c < s->concepts.size(); ++c) {
      const auto& concept_ = s->concepts[c];
      const auto terms = disparity_terms(table->frex_column(Index(c)), train_labels, s->pair);
      // Each error group is scored toward the class the head wrongly chose.
      Json fn_inf = fn_rows.empty() ? Json(nullptr)
                                    : to_json(concept_influence(wb.head(), fn, concept_.vector, s->pair.negative, target));
      Json fp_inf = fp_rows.empty() ? Json(nullptr)
                                    : to_json(concept_influence(wb.head(), fp, concept_.vector, s->pair.positive, target));
      list.push_back({{"id", concept_.id},
                      {"name", concept_.name},
                      {"member_count", concept_.segment_ids.size()},
                      {"disparity", terms.disparity(wb.options().disparity)},
                      {"influence_fn", fn_inf},
                      {"influence_fp", fp_inf},
                      {"fn_count", fn_rows.size()},
                      {"fp_count", fp_rows.size()}});
    }
  }
  return {{"seed", seed_},
          {"pair", {{"negative", s->pair.negative}, {"positive", s->pair.positive}}},
          {"concept_set_hash", hash_of(s->concepts)},
          {"concepts", list}};
}

Json Session::concept_detail(const std::string& concept_id) const {
  const auto s = snapshot();
  const Index c = concept_index(*s, concept_id);
  const auto& wb = *s->wb;
  const auto& b = wb.bundle();
  const auto table = train_table(*s);
  const auto train_rows = b.rows(Split::train, s->pair);
  const auto terms = disparity_terms(table->frex_column(c), b.labels(train_rows), s->pair);
  constexpr std::size_t kListLength = 20;

  Json top_train = Json::array();
  for (Index p : table->comb_order(c)) {
    if (top_train.size() == kListLength) break;
    const auto& x = b.instances[std::size_t(train_rows[std::size_t(p)])];
    top_train.push_back({{"id", x.id}, {"label", x.label}, {"frex", table->frex(p, c)}, {"rank", table->comb_rank(p, c)}});
  }

  Json top_errors = Json::array();
  const auto test_rows = b.rows(Split::test, s->pair);
  if (!test_rows.empty()) {
    const auto test_table = wb.associations(test_rows, s->concepts);
    const auto preds = wb.predictions(test_rows);
    for (Index p : test_table.comb_order(c)) {
      if (top_errors.size() == kListLength) break;
      const auto& pr = preds[std::size_t(p)];
      const auto& x = b.instances[std::size_t(test_rows[std::size_t(p)])];
      if (pr.predicted == x.label) continue;
      top_errors.push_back({{"id", x.id},
                            {"label", x.label},
                            {"predicted", pr.predicted},
                            {"brier", pr.brier},
                            {"frex", test_table.frex(p, c)},
                            {"rank", test_table.comb_rank(p, c)}});
    }
  }

  const auto& concept_ = s->concepts[std::size_t(c)];
  return {{"seed", seed_},
          {"id", concept_.id},
          {"name", concept_.name},
          {"segment_ids", concept_.segment_ids},
          {"disparity", terms.disparity(wb.options().disparity)},
          {"bars",
           {{"positive", {{"class", s->pair.positive}, {"sum", terms.positive_sum}, {"mean", terms.positive_mean()},
                          {"count", terms.positive_count}}},
            {"negative", {{"class", s->pair.negative}, {"sum", terms.negative_sum}, {"mean", terms.negative_mean()},
                          {"count", terms.negative_count}}}}},
          {"top_train", top_train},
          {"top_misclassified_test", top_errors}};
}

Json Session::curve(const std::string& concept_id, bool evaluate) const {
  const auto s = snapshot();
  const auto c = cached_curve(*s, concept_id, evaluate);
  Json out{{"seed", seed_},
           {"concept_id", c->concept_id},
           {"grid", c->grid},
           {"rbr", c->rbr},
           {"disparity_before", c->disparity_before},
           {"disparity_after", c->disparity_after},
           {"n_candidates", c->n_candidates}};
  if (c->eval)
    out["eval"] = {{"accuracy_before", c->eval->accuracy_before},
                   {"subgroup_before", c->eval->subgroup_before},
                   {"accuracy_after", c->eval->accuracy_after},
                   {"subgroup_after", c->eval->subgroup_after}};
  return out;
}

Json Session::recommend(const std::string& concept_id, double tolerance) const {
  if (!(tolerance >= 0.0 && tolerance <= 1.0))
    throw Error(ErrorKind::invalid_argument, "tolerance must lie in [0, 1]");
  const auto s = snapshot();
  const auto c = cached_curve(*s, concept_id, false);
  const int n = recommend_n(*c, tolerance);
  const auto at = std::size_t(std::find(c->grid.begin(), c->grid.end(), n) - c->grid.begin());
  return {{"seed", seed_}, {"concept_id", concept_id}, {"t", tolerance}, {"n", n}, {"rbr", c->rbr[at]}};
}

Json Session::apply_debias(const std::string& concept_id, int n) {
  std::lock_guard writer(writer_);
  const auto cur = snapshot();
  const Index c = concept_index(*cur, concept_id);
  const auto e = evaluate_debias(*cur->wb, cur->concepts, c, cur->pair, n);

  auto next = std::make_shared<State>(*cur);
  next->wb = std::make_shared<const Workbench>(
      cur->wb->with_instances(debiased_copy(cur->wb->instances(), e.debiased_rows, cur->concepts[std::size_t(c)].vector)));
  ++next->generation;

  char text[256];
  std::snprintf(text, sizeof text,
                "Debiasing %d instances for %s changed the between-class disparity from %.4g to %.4g "
                "(%.1f%% of the bias removed); accuracy %.4f -> %.4f.",
                n, cur->concepts[std::size_t(c)].name.c_str(), e.disparity_before, e.disparity_after,
                100.0 * e.pct_bias_mitigated, e.acc_before, e.acc_after);
  Json out{{"seed", seed_},
           {"concept_id", concept_id},
           {"n", n},
           {"before", {{"accuracy", e.acc_before}, {"subgroup_accuracy", e.subgroup_before}, {"disparity", e.disparity_before}}},
           {"after", {{"accuracy", e.acc_after}, {"subgroup_accuracy", e.subgroup_after}, {"disparity", e.disparity_after}}},
           {"rbr", e.rbr},
           {"pct_bias_mitigated", e.pct_bias_mitigated},
           {"summary", text}};
  next->applied.push_back({{"concept_id", concept_id}, {"n", n}, {"rbr", e.rbr}});
  publish(next);
  return out;
}

}  // namespace escape
