#include "support.hpp"

#include "escape/server.hpp"

#include <httplib.h>

#include <atomic>
#include <thread>

using namespace testing;

namespace {

struct Fixture {
  Planted p = planted(0);
  AnalysisOptions options = [] {
    AnalysisOptions o;
    o.head.seed = 0;
    return o;
  }();
  Session session{p.bundle, options};

  Json planted_concept() { return session.create_concept("planted", p.syn.truth.concept_segments[0]); }
};

}  // namespace

TEST_CASE("overview passes the confusion summary through") {
  Fixture f;
  const auto o = f.session.overview();
  const auto rows = f.p.wb->evaluation_rows();
  const auto s = confusion_summary(f.p.wb->predictions(rows), f.p.bundle->labels(rows), 2);
  CHECK(o["accuracy"].get<double>() == s.accuracy());
  CHECK(o["confusion"]["matrix"][0][1].get<int>() == s.matrix(0, 1));
  CHECK(o["confusion"]["unknown_unknowns"].get<std::vector<int>>() == s.unknown_unknowns);
  CHECK(o["confusion"]["uu_cells"][1][0].get<int>() == s.uu_cells(1, 0));
  CHECK(o["per_class"][1]["misclassified"].get<int>() == s.misclassified[1]);
  CHECK(o["seed"].get<std::uint64_t>() == 0);
  CHECK(o.dump() == f.session.overview().dump());
}

TEST_CASE("pair payload partitions the test split") {
  Fixture f;
  const auto j = f.session.select_pair({0, 1}, Projection::pca);
  const auto& members = j["members"];
  CHECK(members.size() == f.p.bundle->rows(Split::test).size());
  int total = 0;
  for (auto& [k, v] : j["case_counts"].items()) total += v.get<int>();
  CHECK(total == int(members.size()));

  const auto rows = f.p.wb->evaluation_rows();
  const Matrix coords = project_pca(f.p.wb->gather(rows));
  for (std::size_t i = 0; i < members.size(); i += 37) {
    CHECK(members[i]["x"].get<double>() == coords(Index(i), 0));
    CHECK(members[i]["y"].get<double>() == coords(Index(i), 1));
  }
  CHECK(f.session.instances().dump() == j.dump());
  CHECK_THROWS_AS(f.session.select_pair({0, 0}), Error);
  CHECK_THROWS_AS(f.session.select_pair({0, 1}, Projection::precomputed), Error);
}

TEST_CASE("neighbors stay in the split and exclude the query") {
  Fixture f;
  const auto j = f.session.neighbors("x00800", 5);
  REQUIRE(j["neighbors"].size() == 5);
  double last = 0;
  for (const auto& n : j["neighbors"]) {
    CHECK(n["id"].get<std::string>() != "x00800");
    CHECK(f.p.bundle->instances[std::size_t(f.p.bundle->instance_row(n["id"]))].split == Split::test);
    CHECK(n["distance"].get<double>() >= last);
    last = n["distance"].get<double>();
  }
  CHECK_THROWS_AS(f.session.neighbors("nobody", 5), Error);
}

TEST_CASE("segment workspace") {
  Fixture f;
  CHECK(f.session.segment_workspace(Json{{"cases", Json::array()}})["segments"].empty());
  const auto fn = f.session.segment_workspace(Json{{"cases", {"FN"}}});
  REQUIRE(fn["segments"].size() > 10);
  for (const auto& s : fn["segments"]) CHECK(s["case"] == "FN");
  CHECK(fn.dump() == f.session.segment_workspace(Json{{"cases", {"FN"}}}).dump());

  const auto anchor = fn["segments"][0]["id"].get<std::string>();
  const auto g = f.session.segment_workspace(Json{{"cases", {"FN"}}, {"group_of", anchor}});
  CHECK(g["group"]["ids"].size() == std::size_t(kSegmentNeighbors));
  CHECK(g["group"]["k"] == 10);
  CHECK_THROWS_AS(f.session.segment_workspace(Json{{"cases", {"XX"}}}), Error);
}

TEST_CASE("concept lifecycle") {
  Fixture f;
  CHECK(f.session.concepts()["concepts"].empty());
  const std::string empty_hash = f.session.concept_set_hash();

  const auto single = f.session.create_concept("one", {"s000001"});
  CHECK(single["norm"].get<double>() ==
        doctest::Approx(f.p.wb->segments().row(f.p.bundle->segment_row("s000001")).norm()));
  const auto c = f.planted_concept();
  const auto dup = f.session.create_concept("planted", f.p.syn.truth.concept_segments[0]);
  CHECK(c["id"] != dup["id"]);
  CHECK(c["member_count"].get<std::size_t>() == f.p.syn.truth.concept_segments[0].size());
  CHECK(c["norm"].get<double>() == doctest::Approx(f.p.concepts[0].vector.norm()).epsilon(1e-12));
  CHECK(f.session.concept_set_hash() != empty_hash);

  f.session.delete_concept(single["id"]);
  f.session.delete_concept(dup["id"]);
  CHECK_THROWS_AS(f.session.delete_concept(dup["id"]), Error);
  CHECK_THROWS_AS(f.session.create_concept("ghost", {"s999999"}), Error);
  CHECK_THROWS_AS(f.session.create_concept("none", {}), Error);

  // with the planted concept alone, overview numbers equal a direct computation
  const auto list = f.session.concepts()["concepts"];
  REQUIRE(list.size() == 1);
  const auto rows = f.p.bundle->rows(Split::train, f.p.pair);
  std::vector<Concept> only{f.p.concepts[0]};
  const auto t = f.p.wb->associations(rows, only);
  const double d = between_class_disparity(t.frex_column(0), f.p.bundle->labels(rows), f.p.pair);
  CHECK(list[0]["disparity"].get<double>() == doctest::Approx(d).epsilon(1e-12));
  CHECK(d > 0);  // lands on the contaminated (positive) side

  const auto eval_rows = f.p.wb->evaluation_rows();
  const auto members = pair_subset(f.p.wb->predictions(eval_rows), f.p.bundle->labels(eval_rows), f.p.pair);
  std::vector<Index> fn;
  for (const auto& m : members)
    if (m.confusion == ConfusionCase::FN) fn.push_back(eval_rows[m.position]);
  const auto inf = concept_influence(f.p.wb->head(), f.p.wb->gather(fn), f.p.concepts[0].vector, 0);
  CHECK(list[0]["influence_fn"]["positive_fraction"].get<double>() == inf.positive_fraction);
  CHECK(list[0]["fn_count"].get<std::size_t>() == fn.size());

  const auto detail = f.session.concept_detail(c["id"]);
  const auto& bars = detail["bars"];
  CHECK(bars["positive"]["sum"].get<double>() - bars["negative"]["sum"].get<double>() ==
        doctest::Approx(detail["disparity"].get<double>()));
  const auto top = detail["top_train"];
  REQUIRE(top.size() == 20);
  for (std::size_t i = 0; i < top.size(); ++i) CHECK(top[i]["rank"].get<int>() == int(i + 1));
  const auto carriers = f.p.syn.truth.carriers(*f.p.bundle, 0, rows);
  int hits = 0;
  for (const auto& x : top) hits += carriers.contains(x["id"].get<std::string>());
  CHECK(hits / 20.0 > double(carriers.size()) / double(rows.size()));
  for (const auto& x : detail["top_misclassified_test"]) CHECK(x["label"] != x["predicted"]);
  CHECK_THROWS_AS(f.session.concept_detail("c99"), Error);
}

TEST_CASE("debias endpoints") {
  Fixture f;
  const auto id = f.planted_concept()["id"].get<std::string>();
  const auto curve = f.session.curve(id, false);
  CHECK(curve["rbr"][0].get<double>() == 1.0);
  CHECK(curve["grid"][0].get<int>() == 0);
  CHECK(f.session.curve(id, false).dump() == curve.dump());
  CHECK(f.session.recommend(id, 0.0)["n"].get<int>() == 0);
  const int n = f.session.recommend(id, 0.5)["n"].get<int>();
  CHECK_THROWS_AS(f.session.recommend(id, 1.5), Error);

  const double before = f.session.overview()["accuracy"].get<double>();
  const auto applied = f.session.apply_debias(id, n);
  std::vector<Concept> only{f.p.concepts[0]};
  const auto oracle_eval = evaluate_debias(*f.p.wb, only, 0, f.p.pair, n);
  CHECK(applied["after"]["accuracy"].get<double>() == oracle_eval.acc_after);
  CHECK(applied["after"]["subgroup_accuracy"].get<double>() == oracle_eval.subgroup_after);
  CHECK(applied["before"]["accuracy"].get<double>() == before);
  CHECK(f.session.overview()["accuracy"].get<double>() == oracle_eval.acc_after);
  CHECK(f.session.overview()["debias_applied"].size() == 1);
  CHECK_FALSE(applied["summary"].get<std::string>().empty());
  // the curve is recomputed against the new activations
  CHECK(f.session.curve(id, false).dump() != curve.dump());
}

TEST_CASE("readers see either the old or the new snapshot while a debias is applied") {
  Fixture f;
  const auto id = f.planted_concept()["id"].get<std::string>();
  const double before = f.session.overview()["accuracy"].get<double>();
  std::vector<Concept> only{f.p.concepts[0]};
  const double after = evaluate_debias(*f.p.wb, only, 0, f.p.pair, 200).acc_after;

  std::atomic<bool> done{false};
  std::thread writer([&] {
    f.session.apply_debias(id, 200);
    done = true;
  });
  int reads = 0;
  bool consistent = true;
  while (!done || reads == 0) {
    const double a = f.session.overview()["accuracy"].get<double>();
    consistent = consistent && (a == before || a == after);
    ++reads;
  }
  writer.join();
  CHECK(consistent);
  CHECK(f.session.overview()["accuracy"].get<double>() == after);
}

TEST_CASE("http routes") {
  Fixture f;
  HttpServer server(f.session);
  const int port = server.bind("127.0.0.1", 0);
  REQUIRE(port > 0);
  std::thread loop([&] { server.listen(); });
  httplib::Client client("127.0.0.1", port);
  for (int i = 0; i < 100 && !server.running(); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(10));

  auto get = client.Get("/api/overview");
  REQUIRE(get);
  CHECK(get->status == 200);
  CHECK(Json::parse(get->body)["accuracy"].get<double>() == f.session.overview()["accuracy"].get<double>());

  const Json body{{"name", "planted"}, {"segment_ids", f.p.syn.truth.concept_segments[0]}};
  auto created = client.Post("/api/concepts", body.dump(), "application/json");
  REQUIRE(created);
  CHECK(created->status == 200);
  const auto id = Json::parse(created->body)["id"].get<std::string>();

  auto listed = client.Get("/api/concepts");
  REQUIRE(listed);
  CHECK(Json::parse(listed->body)["concepts"].size() == 1);
  auto rec = client.Get(("/api/concepts/" + id + "/recommend?t=0").c_str());
  REQUIRE(rec);
  CHECK(Json::parse(rec->body)["n"] == 0);
  auto curve = client.Get(("/api/concepts/" + id + "/curve").c_str());
  REQUIRE(curve);
  CHECK(curve->status == 200);
  auto pair = client.Post("/api/pair", R"({"negative": 0, "positive": 1})", "application/json");
  REQUIRE(pair);
  CHECK(pair->status == 200);
  auto ws = client.Post("/api/segments/workspace", R"({"cases": ["TP"]})", "application/json");
  REQUIRE(ws);
  CHECK(ws->status == 200);
  auto nb = client.Get("/api/instances/x00800/neighbors?k=3");
  REQUIRE(nb);
  CHECK(Json::parse(nb->body)["neighbors"].size() == 3);

  auto missing = client.Get("/api/concepts/c42");
  REQUIRE(missing);
  CHECK(missing->status == 404);
  CHECK(Json::parse(missing->body)["entity_id"] == "c42");
  auto bad_json = client.Post("/api/pair", "{oops", "application/json");
  REQUIRE(bad_json);
  CHECK(bad_json->status == 400);
  auto bad_t = client.Get(("/api/concepts/" + id + "/recommend?t=3").c_str());
  REQUIRE(bad_t);
  CHECK(bad_t->status == 400);
  auto no_route = client.Get("/api/nowhere");
  REQUIRE(no_route);
  CHECK(no_route->status == 404);
  CHECK(Json::parse(no_route->body)["error"] == "not_found");

  auto applied = client.Post("/api/debias", Json{{"concept_id", id}, {"n", 50}}.dump(), "application/json");
  REQUIRE(applied);
  CHECK(applied->status == 200);
  auto deleted = client.Delete(("/api/concepts/" + id).c_str());
  REQUIRE(deleted);
  CHECK(deleted->status == 200);

  server.stop();
  loop.join();
}
