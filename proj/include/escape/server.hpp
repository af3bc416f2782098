#pragma once

#include "escape/service.hpp"

#include <memory>
#include <string>

namespace escape {

// HTTP front end over a Session. Routes live under /api; bodies are JSON.
class HttpServer {
 public:
  explicit HttpServer(Session& session);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Port 0 picks a free port. Returns the bound port, or -1.
  int bind(const std::string& host, int port);
  void listen();  // blocks until stop()
  void stop();
  bool running() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace escape
