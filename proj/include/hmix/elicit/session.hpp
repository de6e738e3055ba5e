#pragma once

// Elicitation sessions: plan generation, trial payloads, response conversion and persistence.

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "json.hpp"

#include "hmix/elicit/pool.hpp"
#include "hmix/hmixdata.hpp"

namespace hmix {

inline constexpr std::string_view kApiVersion = "hmix-api-v1";

enum class SessionKind { kConstruct, kSelectShuffled, kInferCoefficient, kSoftLabel };
std::string to_string(SessionKind kind);
SessionKind parse_session_kind(std::string_view name);

struct PlannedTrial {
  std::size_t stimulus = 0;  // pair index (construct/select) or inference index (infer/soft-label)
  std::optional<std::uint32_t> repeat_of;
};

struct SessionPlan {
  std::string session_id;
  std::string participant_id;
  SessionKind kind = SessionKind::kInferCoefficient;
  std::vector<PlannedTrial> trials;
  std::optional<double> start_lambda;  // construct only: 0.1 or 0.9
  std::uint64_t display_seed = 0;
  std::string created_at;  // UTC, ISO 8601

  // Record kind for judgment sessions; nullopt for soft-label sessions.
  std::optional<InterfaceKind> interface_kind() const;
  std::vector<std::uint32_t> repeat_positions() const;
};

struct PlanOptions {
  std::size_t selection_trials = 32;  // the last two are repeats
  std::size_t inference_trials = 60;  // 59-62; repeats of trials 15 and 20 at the end
  std::size_t soft_label_trials = 30;
};

// Throws ValidationError when the plan breaks a structural invariant for its kind.
void validate_plan(const SessionPlan& plan, const StimulusPool& pool, const PlanOptions& options = {});

// Shuffled plan for one participant. Throws ValidationError when the pool is too small.
SessionPlan create_plan(std::string session_id, std::string participant_id, SessionKind kind,
                        std::optional<double> start_lambda, const StimulusPool& pool, Rng& rng,
                        const PlanOptions& options = {});

nlohmann::json to_json(const SessionPlan& plan);
SessionPlan plan_from_json(const nlohmann::json& j);

struct SubmitResult {
  AppendStatus status = AppendStatus::kStored;
  std::uint32_t next_trial = 0;
  bool complete = false;
};

struct SessionExport {
  std::vector<Record> records;
  bool open = true;
};

// Thread-safe: mutations on one session are serialized; different sessions proceed in parallel.
class SessionManager {
 public:
  // With a state directory, plans are written to <state>/sessions/ and records to
  // <state>/records.hmix, and both are reloaded on construction.
  SessionManager(std::shared_ptr<const StimulusPool> pool, std::optional<std::filesystem::path> state_dir = {},
                 std::uint64_t seed = 1, PlanOptions options = {});

  SessionPlan create_session(const std::string& participant_id, SessionKind kind,
                             std::optional<std::size_t> trials = std::nullopt);
  SessionPlan plan(const std::string& session_id) const;
  std::uint32_t cursor(const std::string& session_id) const;

  // Payload for the current trial, or {"complete": true}. Repeated calls return the same payload.
  nlohmann::json next_trial(const std::string& session_id);
  // Payload for an arbitrary trial index (already answered or current).
  nlohmann::json trial_payload(const std::string& session_id, std::uint32_t trial_index) const;

  // Rejects out-of-order trials (ConflictError) and malformed payloads (ValidationError).
  // Re-sending an answered trial with the same answer is acknowledged as a duplicate; the response time
  // is not part of that comparison.
  SubmitResult submit_response(const std::string& session_id, std::uint32_t trial_index,
                               const nlohmann::json& response, std::optional<std::int64_t> response_ms = {});

  SessionExport export_session(const std::string& session_id) const;

  std::vector<std::string> session_ids() const;
  const StimulusPool& pool() const noexcept { return *pool_; }
  JudgmentStore& store() noexcept { return *store_; }

 private:
  struct SessionState {
    SessionPlan plan;
    std::uint32_t cursor = 0;
    std::map<std::uint32_t, std::chrono::steady_clock::time_point> served;
    std::mutex mutex;
  };

  std::shared_ptr<SessionState> find(const std::string& session_id) const;
  Record make_record(const SessionState& state, std::uint32_t trial_index, const nlohmann::json& response,
                     std::int64_t response_ms) const;
  bool display_flipped(const SessionPlan& plan, std::uint32_t trial_index) const;
  MixedStimulus trial_stimulus(const SessionPlan& plan, std::uint32_t trial_index) const;

  std::shared_ptr<const StimulusPool> pool_;
  std::optional<std::filesystem::path> state_dir_;
  std::uint64_t seed_;
  PlanOptions options_;
  std::unique_ptr<JudgmentStore> store_;
  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<SessionState>> sessions_;
  std::size_t created_ = 0;
  std::size_t construct_created_ = 0;
};

}  // namespace hmix
