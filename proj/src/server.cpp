#include "escape/server.hpp"

#include <httplib.h>

#include <functional>

namespace escape {

namespace {

int status_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::not_found: return 404;
    case ErrorKind::numeric: return 422;
    default: return 400;
  }
}

void send(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& error, const std::string& detail,
                const std::string& entity = {}) {
  Json body{{"error", error}, {"detail", detail}};
  if (!entity.empty()) body["entity_id"] = entity;
  send(res, status, body);
}

using Handler = std::function<Json(const httplib::Request&)>;

httplib::Server::Handler wrap(Handler h) {
  return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
    try {
      send(res, 200, h(req));
    } catch (const Error& e) {
      send_error(res, status_for(e.kind()), std::string(to_string(e.kind())), e.what(), e.entity_id());
    } catch (const nlohmann::json::exception& e) {
      send_error(res, 400, "bad_request", e.what());
    } catch (const std::invalid_argument& e) {
      send_error(res, 400, "bad_request", e.what());
    } catch (const std::out_of_range& e) {
      send_error(res, 400, "bad_request", e.what());
    }
  };
}

Json body_of(const httplib::Request& req) {
  if (req.body.empty()) return Json::object();
  return Json::parse(req.body);
}

bool truthy(const std::string& v) { return v == "1" || v == "true" || v == "yes"; }

}  // namespace

struct HttpServer::Impl {
  Session& session;
  httplib::Server server;

  explicit Impl(Session& s) : session(s) { routes(); }

  void routes() {
    auto& S = session;
    server.Get("/api/overview", wrap([&S](const httplib::Request&) { return S.overview(); }));
    server.Post("/api/pair", wrap([&S](const httplib::Request& req) {
                  const auto b = body_of(req);
                  ClassPair pair{b.at("negative").get<int>(), b.at("positive").get<int>()};
                  std::optional<Projection> projection;
                  if (b.contains("projection")) {
                    const auto p = b["projection"].get<std::string>();
                    if (p != "pca" && p != "precomputed")
                      throw Error(ErrorKind::invalid_argument, "projection must be pca or precomputed");
                    projection = p == "pca" ? Projection::pca : Projection::precomputed;
                  }
                  return S.select_pair(pair, projection);
                }));
    server.Get("/api/instances", wrap([&S](const httplib::Request&) { return S.instances(); }));
    server.Get(R"(/api/instances/([^/]+)/neighbors)", wrap([&S](const httplib::Request& req) {
                 const int k = req.has_param("k") ? std::stoi(req.get_param_value("k")) : kInstanceNeighbors;
                 return S.neighbors(req.matches[1], k);
               }));
    server.Post("/api/segments/workspace",
                wrap([&S](const httplib::Request& req) { return S.segment_workspace(body_of(req)); }));
    server.Post("/api/concepts", wrap([&S](const httplib::Request& req) {
                  const auto b = body_of(req);
                  return S.create_concept(b.at("name").get<std::string>(),
                                          b.at("segment_ids").get<std::vector<std::string>>());
                }));
    server.Get("/api/concepts", wrap([&S](const httplib::Request&) { return S.concepts(); }));
    server.Get(R"(/api/concepts/([^/]+))",
               wrap([&S](const httplib::Request& req) { return S.concept_detail(req.matches[1]); }));
    server.Delete(R"(/api/concepts/([^/]+))",
                  wrap([&S](const httplib::Request& req) { return S.delete_concept(req.matches[1]); }));
    server.Get(R"(/api/concepts/([^/]+)/curve)", wrap([&S](const httplib::Request& req) {
                 const bool evaluate = req.has_param("evaluate") && truthy(req.get_param_value("evaluate"));
                 return S.curve(req.matches[1], evaluate);
               }));
    server.Get(R"(/api/concepts/([^/]+)/recommend)", wrap([&S](const httplib::Request& req) {
                 const double t = req.has_param("t") ? std::stod(req.get_param_value("t")) : 0.5;
                 return S.recommend(req.matches[1], t);
               }));
    server.Post("/api/debias", wrap([&S](const httplib::Request& req) {
                  const auto b = body_of(req);
                  return S.apply_debias(b.at("concept_id").get<std::string>(), b.at("n").get<int>());
                }));
    server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
      if (res.body.empty()) send_error(res, res.status, "not_found", "no route for " + req.method + " " + req.path);
    });
  }
};

HttpServer::HttpServer(Session& session) : impl_(std::make_unique<Impl>(session)) {}
HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  return impl_->server.bind_to_port(host, port) ? port : -1;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }
void HttpServer::stop() { impl_->server.stop(); }
bool HttpServer::running() const { return impl_->server.is_running(); }

}  // namespace escape
