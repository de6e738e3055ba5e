#include "hmix/elicit/server.hpp"

#include "httplib.h"

#include "hmix/errors.hpp"

namespace hmix {

using nlohmann::json;

namespace {

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json error_body(const std::string& message, const std::string& field = {}) {
  json j{{"api_version", kApiVersion}, {"error", message}};
  if (!field.empty()) j["field"] = field;
  return j;
}

json record_json(const Record& r) { return serialize_record(r); }

// Runs a handler and maps toolkit errors onto status codes.
template <class F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const ValidationError& e) {
    reply(res, 400, error_body(e.what(), e.field()));
  } catch (const ParseError& e) {
    reply(res, 400, error_body(e.what()));
  } catch (const NotFoundError& e) {
    reply(res, 404, error_body(e.what()));
  } catch (const ConflictError& e) {
    reply(res, 409, error_body(e.what()));
  } catch (const json::exception& e) {
    reply(res, 400, error_body(std::string("malformed JSON: ") + e.what()));
  } catch (const std::exception& e) {
    reply(res, 500, error_body(e.what()));
  }
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) throw ValidationError("body", "expected a JSON object");
  json j = json::parse(req.body);
  if (!j.is_object()) throw ValidationError("body", "expected a JSON object");
  return j;
}

}  // namespace

ElicitServer::ElicitServer(SessionManager& sessions, std::optional<std::filesystem::path> static_dir)
    : sessions_(sessions), server_(std::make_unique<httplib::Server>()) {
  install_routes();
  if (static_dir && !server_->set_mount_point("/", static_dir->string()))
    throw NotFoundError("static directory not found: " + static_dir->string());
}

ElicitServer::~ElicitServer() { stop(); }

void ElicitServer::install_routes() {
  auto& s = *server_;

  s.Get("/api/v1/health", [this](const httplib::Request&, httplib::Response& res) {
    reply(res, 200,
          {{"api_version", kApiVersion},
           {"status", "ok"},
           {"sessions", sessions_.session_ids().size()},
           {"pairs", sessions_.pool().pairs.size()},
           {"inference_stimuli", sessions_.pool().inference.size()}});
  });

  s.Post("/api/v1/sessions", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = parse_body(req);
      if (!body.contains("participant_id") || !body["participant_id"].is_string())
        throw ValidationError("participant_id", "required string");
      if (!body.contains("interface") || !body["interface"].is_string())
        throw ValidationError("interface", "required string");
      std::optional<std::size_t> trials;
      if (body.contains("trials") && !body["trials"].is_null()) {
        if (!body["trials"].is_number_unsigned()) throw ValidationError("trials", "must be a positive integer");
        trials = body["trials"].get<std::size_t>();
      }
      const SessionPlan plan = sessions_.create_session(body["participant_id"].get<std::string>(),
                                                        parse_session_kind(body["interface"].get<std::string>()), trials);
      json out = to_json(plan);
      out.erase("trials");
      out.erase("display_seed");
      out.erase("repeat_positions");
      out["api_version"] = kApiVersion;
      out["trial_count"] = plan.trials.size();
      reply(res, 201, out);
    });
  });

  s.Get("/api/v1/sessions/:id", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string& id = req.path_params.at("id");
      const SessionPlan plan = sessions_.plan(id);
      const auto cursor = sessions_.cursor(id);
      reply(res, 200,
            {{"api_version", kApiVersion},
             {"session_id", id},
             {"participant_id", plan.participant_id},
             {"interface", to_string(plan.kind)},
             {"trial_count", plan.trials.size()},
             {"next_trial", cursor},
             {"complete", cursor >= plan.trials.size()},
             {"created_at", plan.created_at}});
    });
  });

  s.Get("/api/v1/sessions/:id/next", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, sessions_.next_trial(req.path_params.at("id"))); });
  });

  s.Post("/api/v1/sessions/:id/responses", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = parse_body(req);
      if (!body.contains("trial_index") || !body["trial_index"].is_number_unsigned())
        throw ValidationError("trial_index", "required nonnegative integer");
      if (!body.contains("response") || !body["response"].is_object())
        throw ValidationError("response", "required object");
      std::optional<std::int64_t> ms;
      if (body.contains("response_ms") && !body["response_ms"].is_null()) {
        if (!body["response_ms"].is_number_integer()) throw ValidationError("response_ms", "must be an integer");
        ms = body["response_ms"].get<std::int64_t>();
      }
      const auto r = sessions_.submit_response(req.path_params.at("id"), body["trial_index"].get<std::uint32_t>(),
                                               body["response"], ms);
      reply(res, 200,
            {{"api_version", kApiVersion},
             {"status", r.status == AppendStatus::kStored ? "stored" : "duplicate"},
             {"next_trial", r.next_trial},
             {"complete", r.complete}});
    });
  });

  s.Get("/api/v1/sessions/:id/export", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string& id = req.path_params.at("id");
      const SessionExport ex = sessions_.export_session(id);
      if (req.has_param("format") && req.get_param_value("format") == "hmix") {
        std::ostringstream out;
        export_hmix(ex.records, out);
        res.set_header("X-Session-Open", ex.open ? "true" : "false");
        res.set_content(out.str(), "text/plain");
        return;
      }
      json lines = json::array();
      for (const auto& r : ex.records) lines.push_back(record_json(r));
      reply(res, 200,
            {{"api_version", kApiVersion},
             {"session_id", id},
             {"open", ex.open},
             {"format", kHmixHeader},
             {"records", std::move(lines)}});
    });
  });
}

bool ElicitServer::listen(const std::string& host, int port) { return server_->listen(host, port); }

int ElicitServer::bind_any(const std::string& host) { return server_->bind_to_any_port(host); }

bool ElicitServer::run() { return server_->listen_after_bind(); }

void ElicitServer::stop() {
  if (server_) server_->stop();
}

bool ElicitServer::running() const { return server_->is_running(); }

void ElicitServer::wait_until_ready() const { server_->wait_until_ready(); }

}  // namespace hmix
