#include "hmix/elicit/session.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <fstream>
#include <numeric>
#include <set>

#include "hmix/elicit/image_io.hpp"
#include "hmix/errors.hpp"
#include "hmix/text.hpp"

namespace hmix {

using nlohmann::json;

namespace {

constexpr std::size_t kInferMin = 59;
constexpr std::size_t kInferMax = 62;
// Zero-based positions of the originals repeated at the end of coefficient-inference sessions.
constexpr std::uint32_t kInferRepeatA = 14;
constexpr std::uint32_t kInferRepeatB = 19;
constexpr int kDisplaySize = 256;

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Fisher-Yates over uniform01 so orders do not depend on the standard library's shuffle.
template <class T>
void shuffle_in_place(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(v[i - 1], v[std::min(j, i - 1)]);
  }
}

bool on_inference_grid(double lambda) {
  for (const auto& g : inference_grid())
    if (g.value() == lambda) return true;
  return false;
}

std::size_t grid_index(double lambda) {
  const auto grid = default_sweep_grid();
  for (std::size_t i = 0; i < grid.size(); ++i)
    if (grid[i].value() == lambda) return i;
  throw ValidationError("start_lambda", "not on the sweep grid");
}

const json& require(const json& obj, const char* field) {
  if (!obj.is_object()) throw ValidationError("response", "must be a JSON object");
  const auto it = obj.find(field);
  if (it == obj.end() || it->is_null()) throw ValidationError(std::string("response.") + field, "required");
  return *it;
}

double require_number(const json& obj, const char* field, double lo, double hi) {
  const json& v = require(obj, field);
  if (!v.is_number()) throw ValidationError(std::string("response.") + field, "must be a number");
  const double x = v.get<double>();
  if (!(x >= lo && x <= hi))
    throw ValidationError(std::string("response.") + field,
                          "must be in [" + format_decimal(lo) + ", " + format_decimal(hi) + "]");
  return x;
}

int class_by_name(const std::vector<std::string>& names, const json& v, const std::string& field) {
  if (!v.is_string()) throw ValidationError(field, "must be a class name");
  const auto s = v.get<std::string>();
  const auto it = std::find(names.begin(), names.end(), s);
  if (it == names.end()) throw ValidationError(field, "unknown class '" + s + "'");
  return static_cast<int>(it - names.begin());
}

Record without_time(Record r) {
  std::visit([](auto& j) { j.response_ms = 0; }, r);
  return r;
}

void write_atomically(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp);
    out << text;
    if (!out) throw Error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

std::string to_string(SessionKind kind) {
  switch (kind) {
    case SessionKind::kConstruct: return "construct";
    case SessionKind::kSelectShuffled: return "select-shuffled";
    case SessionKind::kInferCoefficient: return "infer-coefficient";
    case SessionKind::kSoftLabel: return "soft-label";
  }
  return "?";
}

SessionKind parse_session_kind(std::string_view name) {
  for (auto k : {SessionKind::kConstruct, SessionKind::kSelectShuffled, SessionKind::kInferCoefficient,
                 SessionKind::kSoftLabel})
    if (to_string(k) == name) return k;
  throw ValidationError("interface", "unknown interface '" + std::string(name) + "'");
}

std::optional<InterfaceKind> SessionPlan::interface_kind() const {
  switch (kind) {
    case SessionKind::kConstruct:
      return start_lambda && *start_lambda == 0.9 ? InterfaceKind::kConstructStartHigh
                                                  : InterfaceKind::kConstructStartLow;
    case SessionKind::kSelectShuffled: return InterfaceKind::kSelectShuffled;
    case SessionKind::kInferCoefficient: return InterfaceKind::kInferCoefficient;
    case SessionKind::kSoftLabel: return std::nullopt;
  }
  return std::nullopt;
}

std::vector<std::uint32_t> SessionPlan::repeat_positions() const {
  std::vector<std::uint32_t> out;
  for (std::uint32_t i = 0; i < trials.size(); ++i)
    if (trials[i].repeat_of) out.push_back(i);
  return out;
}

void validate_plan(const SessionPlan& plan, const StimulusPool& pool, const PlanOptions& options) {
  if (!is_valid_identifier(plan.session_id)) throw ValidationError("session_id", "invalid identifier");
  if (!is_valid_identifier(plan.participant_id)) throw ValidationError("participant_id", "invalid identifier");
  const std::size_t n = plan.trials.size();
  const bool selection = plan.kind == SessionKind::kConstruct || plan.kind == SessionKind::kSelectShuffled;
  const std::size_t universe = selection ? pool.pairs.size() : pool.inference.size();

  if (plan.kind == SessionKind::kConstruct) {
    if (!plan.start_lambda || (*plan.start_lambda != 0.1 && *plan.start_lambda != 0.9))
      throw ValidationError("start_lambda", "construct sessions start at 0.1 or 0.9");
  } else if (plan.start_lambda) {
    throw ValidationError("start_lambda", "only construct sessions have a start point");
  }

  std::size_t repeats = 0;
  if (selection) {
    if (n != options.selection_trials)
      throw ValidationError("trials", "selection sessions have " + std::to_string(options.selection_trials) + " trials");
    repeats = 2;
  } else if (plan.kind == SessionKind::kInferCoefficient) {
    if (n < kInferMin || n > kInferMax) throw ValidationError("trials", "inference sessions have 59-62 trials");
    repeats = 2;
  } else if (n == 0) {
    throw ValidationError("trials", "empty plan");
  }

  std::set<std::size_t> seen;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = plan.trials[i];
    if (t.stimulus >= universe) throw ValidationError("trials", "stimulus reference out of range");
    if (i + repeats < n) {
      if (t.repeat_of) throw ValidationError("trials", "repeat before the final trials");
      if (!seen.insert(t.stimulus).second) throw ValidationError("trials", "stimulus shown twice");
      if (plan.kind == SessionKind::kInferCoefficient && !on_inference_grid(pool.inference[t.stimulus].lambda_f))
        throw ValidationError("trials", "inference stimulus off the coefficient grid");
    } else {
      if (!t.repeat_of || *t.repeat_of >= n - repeats) throw ValidationError("trials", "final trials must repeat earlier ones");
      if (plan.trials[*t.repeat_of].stimulus != t.stimulus) throw ValidationError("trials", "repeat shows a different stimulus");
    }
  }
  if (repeats == 2) {
    const auto a = *plan.trials[n - 2].repeat_of;
    const auto b = *plan.trials[n - 1].repeat_of;
    if (a == b) throw ValidationError("trials", "the two repeats duplicate the same trial");
    if (plan.kind == SessionKind::kInferCoefficient && (a != kInferRepeatA || b != kInferRepeatB))
      throw ValidationError("trials", "inference repeats must show trials 15 and 20");
  }
}

SessionPlan create_plan(std::string session_id, std::string participant_id, SessionKind kind,
                        std::optional<double> start_lambda, const StimulusPool& pool, Rng& rng,
                        const PlanOptions& options) {
  SessionPlan plan;
  plan.session_id = std::move(session_id);
  plan.participant_id = std::move(participant_id);
  plan.kind = kind;
  plan.start_lambda = start_lambda;
  plan.created_at = utc_now();
  plan.display_seed = rng();

  const bool selection = kind == SessionKind::kConstruct || kind == SessionKind::kSelectShuffled;
  std::size_t n = selection ? options.selection_trials
                            : (kind == SessionKind::kInferCoefficient ? options.inference_trials : options.soft_label_trials);
  const std::size_t repeats = kind == SessionKind::kSoftLabel ? 0 : 2;
  if (n < repeats + 1) throw ValidationError("trials", "plan too short");
  if (kind == SessionKind::kInferCoefficient && (n < kInferMin || n > kInferMax))
    throw ValidationError("trials", "inference sessions have 59-62 trials");

  std::vector<std::size_t> candidates;
  if (selection) {
    candidates.resize(pool.pairs.size());
    std::iota(candidates.begin(), candidates.end(), 0);
  } else {
    for (std::size_t i = 0; i < pool.inference.size(); ++i)
      if (kind == SessionKind::kSoftLabel || on_inference_grid(pool.inference[i].lambda_f)) candidates.push_back(i);
  }
  const std::size_t distinct = n - repeats;
  if (candidates.size() < distinct)
    throw ValidationError("pool", "needs at least " + std::to_string(distinct) + " distinct " +
                                      (selection ? "pairs" : "inference stimuli") + ", has " +
                                      std::to_string(candidates.size()));
  shuffle_in_place(candidates, rng);
  for (std::size_t i = 0; i < distinct; ++i) plan.trials.push_back({candidates[i], std::nullopt});

  std::vector<std::uint32_t> originals;
  if (kind == SessionKind::kInferCoefficient) {
    originals = {kInferRepeatA, kInferRepeatB};
  } else if (selection) {
    const auto a = static_cast<std::uint32_t>(uniform01(rng) * static_cast<double>(distinct));
    auto b = static_cast<std::uint32_t>(uniform01(rng) * static_cast<double>(distinct - 1));
    if (b >= a) ++b;
    originals = {a, b};
  }
  for (auto o : originals) plan.trials.push_back({plan.trials[o].stimulus, o});

  validate_plan(plan, pool, options);
  return plan;
}

json to_json(const SessionPlan& plan) {
  json trials = json::array();
  for (const auto& t : plan.trials) {
    json e{{"stimulus", t.stimulus}};
    if (t.repeat_of) e["repeat_of"] = *t.repeat_of;
    trials.push_back(std::move(e));
  }
  return {{"session_id", plan.session_id},
          {"participant_id", plan.participant_id},
          {"interface", to_string(plan.kind)},
          {"start_lambda", plan.start_lambda ? json(*plan.start_lambda) : json(nullptr)},
          {"display_seed", plan.display_seed},
          {"created_at", plan.created_at},
          {"repeat_positions", plan.repeat_positions()},
          {"trials", std::move(trials)}};
}

SessionPlan plan_from_json(const json& j) {
  try {
    SessionPlan plan;
    plan.session_id = j.at("session_id").get<std::string>();
    plan.participant_id = j.at("participant_id").get<std::string>();
    plan.kind = parse_session_kind(j.at("interface").get<std::string>());
    if (!j.at("start_lambda").is_null()) plan.start_lambda = j.at("start_lambda").get<double>();
    plan.display_seed = j.at("display_seed").get<std::uint64_t>();
    plan.created_at = j.at("created_at").get<std::string>();
    for (const auto& t : j.at("trials")) {
      PlannedTrial pt{t.at("stimulus").get<std::size_t>(), std::nullopt};
      if (t.contains("repeat_of")) pt.repeat_of = t.at("repeat_of").get<std::uint32_t>();
      plan.trials.push_back(pt);
    }
    return plan;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("session plan: ") + e.what());
  }
}

SessionManager::SessionManager(std::shared_ptr<const StimulusPool> pool, std::optional<std::filesystem::path> state_dir,
                               std::uint64_t seed, PlanOptions options)
    : pool_(std::move(pool)), state_dir_(std::move(state_dir)), seed_(seed), options_(options) {
  if (!pool_) throw ValidationError("pool", "missing stimulus pool");
  pool_->validate();
  if (!state_dir_) {
    store_ = std::make_unique<JudgmentStore>();
    return;
  }
  std::filesystem::create_directories(*state_dir_ / "sessions");
  store_ = JudgmentStore::open(*state_dir_ / "records.hmix");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(*state_dir_ / "sessions"))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    std::ifstream in(f);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw SchemaError(f.string() + ": " + e.what());
    }
    auto state = std::make_shared<SessionState>();
    state->plan = plan_from_json(j);
    validate_plan(state->plan, *pool_, options_);
    state->cursor = static_cast<std::uint32_t>(store_->session_records(state->plan.session_id).size());
    if (state->plan.kind == SessionKind::kConstruct) ++construct_created_;
    ++created_;
    sessions_.emplace(state->plan.session_id, std::move(state));
  }
}

SessionPlan SessionManager::create_session(const std::string& participant_id, SessionKind kind,
                                           std::optional<std::size_t> trials) {
  if (!is_valid_identifier(participant_id)) throw ValidationError("participant_id", "invalid identifier");
  PlanOptions opts = options_;
  if (trials) {
    if (kind == SessionKind::kInferCoefficient) opts.inference_trials = *trials;
    else if (kind == SessionKind::kSoftLabel) opts.soft_label_trials = *trials;
    else if (*trials != opts.selection_trials)
      throw ValidationError("trials", "selection sessions have " + std::to_string(opts.selection_trials) + " trials");
  }
  auto state = std::make_shared<SessionState>();
  {
    std::unique_lock lock(sessions_mutex_);
    char prefix[16];
    std::snprintf(prefix, sizeof prefix, "s%06zu-", created_ + 1);
    const std::string id = prefix + participant_id;
    std::optional<double> start;
    // Start conditions alternate across construct sessions, beginning with the high start.
    if (kind == SessionKind::kConstruct) start = construct_created_ % 2 == 0 ? 0.9 : 0.1;
    Rng rng(seed_ ^ fnv1a64(id));
    state->plan = create_plan(id, participant_id, kind, start, *pool_, rng, opts);
    if (state_dir_)
      write_atomically(*state_dir_ / "sessions" / (id + ".json"), to_json(state->plan).dump(1) + "\n");
    ++created_;
    if (kind == SessionKind::kConstruct) ++construct_created_;
    sessions_.emplace(id, state);
  }
  return state->plan;
}

std::shared_ptr<SessionManager::SessionState> SessionManager::find(const std::string& session_id) const {
  std::shared_lock lock(sessions_mutex_);
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw NotFoundError("unknown session " + session_id);
  return it->second;
}

SessionPlan SessionManager::plan(const std::string& session_id) const { return find(session_id)->plan; }

std::uint32_t SessionManager::cursor(const std::string& session_id) const {
  auto s = find(session_id);
  std::lock_guard lock(s->mutex);
  return s->cursor;
}

std::vector<std::string> SessionManager::session_ids() const {
  std::shared_lock lock(sessions_mutex_);
  std::vector<std::string> out;
  for (const auto& [id, s] : sessions_) out.push_back(id);
  return out;
}

bool SessionManager::display_flipped(const SessionPlan& plan, std::uint32_t trial_index) const {
  // FNV alone mixes a changed last digit poorly; one generator step spreads it.
  Rng rng(fnv1a64("flip:" + std::to_string(trial_index), plan.display_seed));
  return rng() >> 63;
}

MixedStimulus SessionManager::trial_stimulus(const SessionPlan& plan, std::uint32_t trial_index) const {
  const auto& t = plan.trials.at(trial_index);
  const auto& s = pool_->inference.at(t.stimulus);
  return pool_->stimulus(s.pair, s.lambda_f);
}

json SessionManager::trial_payload(const std::string& session_id, std::uint32_t trial_index) const {
  auto state = find(session_id);
  const SessionPlan& plan = state->plan;
  if (trial_index >= plan.trials.size()) throw NotFoundError("trial " + std::to_string(trial_index) + " out of range");
  const bool flipped = display_flipped(plan, trial_index);
  json p{{"api_version", kApiVersion},
         {"session_id", plan.session_id},
         {"interface", to_string(plan.kind)},
         {"trial_index", trial_index},
         {"trial_count", plan.trials.size()},
         {"complete", false},
         {"display", {{"min_size_px", kDisplaySize}, {"upscale", "nearest"}}}};

  const auto& names = pool_->class_names;
  if (plan.kind == SessionKind::kConstruct || plan.kind == SessionKind::kSelectShuffled) {
    const auto& pair = pool_->pairs.at(plan.trials[trial_index].stimulus);
    const int ca = pool_->endpoint(pair.endpoint_a).cls;
    const int cb = pool_->endpoint(pair.endpoint_b).cls;
    p["class_names"] = flipped ? json::array({names[cb], names[ca]}) : json::array({names[ca], names[cb]});
    const auto grid = default_sweep_grid();
    const auto sweep = pool_->sweep(plan.trials[trial_index].stimulus, grid);
    const std::size_t m = sweep.size();
    // Display slot i carries weight grid[i] on the first displayed class.
    std::vector<std::size_t> order(m);
    for (std::size_t i = 0; i < m; ++i) order[i] = flipped ? m - 1 - i : i;
    if (plan.kind == SessionKind::kSelectShuffled) {
      Rng rng(fnv1a64("shuffle:" + std::to_string(trial_index), plan.display_seed));
      shuffle_in_place(order, rng);
    }
    json images = json::array();
    for (std::size_t k : order)
      images.push_back({{"id", "g" + std::to_string(k)}, {"src", png_data_url(sweep[k].mixed_image)}});
    p["images"] = std::move(images);
    if (plan.kind == SessionKind::kConstruct) p["start_index"] = grid_index(*plan.start_lambda);
  } else {
    const auto stim = trial_stimulus(plan, trial_index);
    p["image"] = png_data_url(stim.mixed_image);
    if (plan.kind == SessionKind::kInferCoefficient) {
      p["class_names"] = flipped ? json::array({names[stim.class_b], names[stim.class_a]})
                                 : json::array({names[stim.class_a], names[stim.class_b]});
    } else {
      p["class_names"] = names;
    }
  }
  return p;
}

json SessionManager::next_trial(const std::string& session_id) {
  auto state = find(session_id);
  std::uint32_t t = 0;
  {
    std::lock_guard lock(state->mutex);
    t = state->cursor;
    if (t >= state->plan.trials.size())
      return {{"api_version", kApiVersion}, {"session_id", session_id}, {"complete", true},
              {"trial_count", state->plan.trials.size()}};
    state->served.try_emplace(t, std::chrono::steady_clock::now());
  }
  return trial_payload(session_id, t);
}

Record SessionManager::make_record(const SessionState& state, std::uint32_t trial_index, const json& response,
                                   std::int64_t response_ms) const {
  const SessionPlan& plan = state.plan;
  const PlannedTrial& t = plan.trials.at(trial_index);
  const bool flipped = display_flipped(plan, trial_index);
  const auto& names = pool_->class_names;

  if (plan.kind == SessionKind::kSoftLabel) {
    const auto stim = trial_stimulus(plan, trial_index);
    SoftLabelJudgment s;
    s.participant_id = plan.participant_id;
    s.session_id = plan.session_id;
    s.trial_index = trial_index;
    s.stimulus = {stim.pair_id, stim.endpoint_a_id, stim.endpoint_b_id, stim.class_a, stim.class_b,
                  stim.lambda_f.value()};
    s.top1_class = class_by_name(names, require(response, "top1"), "response.top1");
    s.top1_prob = require_number(response, "top1_prob", 0.0, 100.0);
    if (response.contains("top2") && !response["top2"].is_null()) {
      s.top2_class = class_by_name(names, response["top2"], "response.top2");
      s.top2_prob = require_number(response, "top2_prob", 0.0, 100.0);
    } else if (response.contains("top2_prob") && !response["top2_prob"].is_null() &&
               response["top2_prob"] != json(0) && response["top2_prob"] != json(0.0)) {
      throw ValidationError("response.top2_prob", "given without top2");
    }
    if (response.contains("ruled_out") && !response["ruled_out"].is_null()) {
      if (!response["ruled_out"].is_array()) throw ValidationError("response.ruled_out", "must be an array");
      for (const auto& c : response["ruled_out"]) {
        if (!s.ruled_out.insert(class_by_name(names, c, "response.ruled_out")).second)
          throw ValidationError("response.ruled_out", "duplicate class");
      }
    }
    s.response_ms = response_ms;
    try {
      validate(s);
    } catch (const ValidationError& e) {
      throw ValidationError("response." + e.field(), e.what());
    }
    return s;
  }

  Judgment j;
  j.participant_id = plan.participant_id;
  j.session_id = plan.session_id;
  j.trial_index = trial_index;
  j.kind = *plan.interface_kind();
  j.is_repeat = t.repeat_of.has_value();
  j.repeat_of = t.repeat_of;
  j.response_ms = response_ms;

  if (plan.kind == SessionKind::kInferCoefficient) {
    const auto stim = trial_stimulus(plan, trial_index);
    j.stimulus = {stim.pair_id, stim.endpoint_a_id, stim.endpoint_b_id, stim.class_a, stim.class_b,
                  stim.lambda_f.value()};
    // `mix` is the weight on the class displayed first.
    const MixCoefficient mix(require_number(response, "mix", 0.0, 1.0));
    j.lambda_h = flipped ? mix.complement_value() : mix.value();
    j.confidence = require_number(response, "confidence", 0.0, 1.0);
  } else {
    const auto& pair = pool_->pairs.at(t.stimulus);
    j.stimulus = {pair.pair_id, pair.endpoint_a, pair.endpoint_b, pool_->endpoint(pair.endpoint_a).cls,
                  pool_->endpoint(pair.endpoint_b).cls,
                  plan.kind == SessionKind::kConstruct ? *plan.start_lambda : 0.5};
    const auto grid = default_sweep_grid();
    const std::size_t m = grid.size();
    std::size_t k = 0;
    if (plan.kind == SessionKind::kConstruct) {
      const json& v = require(response, "index");
      if (!v.is_number_integer()) throw ValidationError("response.index", "must be an integer");
      const auto i = v.get<std::int64_t>();
      if (i < 0 || i >= static_cast<std::int64_t>(m))
        throw ValidationError("response.index", "must be in [0, " + std::to_string(m - 1) + "]");
      k = flipped ? m - 1 - static_cast<std::size_t>(i) : static_cast<std::size_t>(i);
    } else {
      const json& v = require(response, "image_id");
      const std::string id = v.is_string() ? v.get<std::string>() : std::string();
      const auto parsed = id.size() > 1 && id[0] == 'g' ? parse_integer(std::string_view(id).substr(1)) : std::nullopt;
      if (!parsed || *parsed < 0 || *parsed >= static_cast<std::int64_t>(m) || id != "g" + std::to_string(*parsed))
        throw ValidationError("response.image_id", "not an image of this trial");
      k = static_cast<std::size_t>(*parsed);
    }
    j.lambda_h = grid[k].value();
  }
  validate(j);
  return j;
}

SubmitResult SessionManager::submit_response(const std::string& session_id, std::uint32_t trial_index,
                                             const json& response, std::optional<std::int64_t> response_ms) {
  auto state = find(session_id);
  std::lock_guard lock(state->mutex);
  const std::size_t n = state->plan.trials.size();
  if (response_ms && *response_ms < 0) throw ValidationError("response_ms", "must be nonnegative");

  if (trial_index < state->cursor) {
    const Record candidate = make_record(*state, trial_index, response, response_ms.value_or(0));
    const auto stored = store_->find({state->plan.participant_id, session_id, trial_index});
    if (!stored || without_time(*stored) != without_time(candidate))
      throw ConflictError("trial " + std::to_string(trial_index) + " was already answered differently");
    return {AppendStatus::kDuplicate, state->cursor, state->cursor >= n};
  }
  if (trial_index >= n) throw ConflictError("session has only " + std::to_string(n) + " trials");
  if (trial_index > state->cursor)
    throw ConflictError("trial " + std::to_string(trial_index) + " submitted before trial " +
                        std::to_string(state->cursor));

  std::int64_t ms = 0;
  if (response_ms) {
    ms = *response_ms;
  } else if (const auto it = state->served.find(trial_index); it != state->served.end()) {
    ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - it->second).count();
  }
  const Record record = make_record(*state, trial_index, response, ms);
  const AppendStatus status = store_->append(record);
  state->served.erase(trial_index);
  ++state->cursor;
  return {status, state->cursor, state->cursor >= n};
}

SessionExport SessionManager::export_session(const std::string& session_id) const {
  auto state = find(session_id);
  std::lock_guard lock(state->mutex);
  return {store_->session_records(session_id), state->cursor < state->plan.trials.size()};
}

}  // namespace hmix
