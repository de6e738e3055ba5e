#pragma once

// HTTP+JSON front for SessionManager.
//
//   GET  /api/v1/health
//   POST /api/v1/sessions                        {"participant_id", "interface", "trials"?}
//   GET  /api/v1/sessions/{id}
//   GET  /api/v1/sessions/{id}/next
//   POST /api/v1/sessions/{id}/responses         {"trial_index", "response": {...}, "response_ms"?}
//   GET  /api/v1/sessions/{id}/export
//
// Errors are {"api_version", "error", "field"?} with 400 (validation), 404 (unknown session),
// 409 (out-of-order or conflicting answer).

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "hmix/elicit/session.hpp"

namespace httplib {
class Server;
}

namespace hmix {

class ElicitServer {
 public:
  // `static_dir`, when set, is served at "/" (the browser bundle).
  explicit ElicitServer(SessionManager& sessions, std::optional<std::filesystem::path> static_dir = {});
  ~ElicitServer();

  ElicitServer(const ElicitServer&) = delete;
  ElicitServer& operator=(const ElicitServer&) = delete;

  // Binds and serves until stop(); blocks.
  bool listen(const std::string& host, int port);
  // Binds to a free port and returns it; call run() afterwards.
  int bind_any(const std::string& host);
  bool run();
  void stop();
  bool running() const;
  void wait_until_ready() const;

 private:
  void install_routes();

  SessionManager& sessions_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace hmix
