#include <algorithm>
#include <istream>
#include <ostream>
#include <sstream>

#include "hmix/errors.hpp"
#include "hmix/hmixdata.hpp"
#include "hmix/text.hpp"

namespace hmix {

namespace {

constexpr std::string_view kNone = "-";

struct KindName {
  InterfaceKind kind;
  std::string_view name;
};

constexpr KindName kKindNames[] = {
    {InterfaceKind::kConstructStartLow, "construct-start-low"},
    {InterfaceKind::kConstructStartHigh, "construct-start-high"},
    {InterfaceKind::kSelectShuffled, "select-shuffled"},
    {InterfaceKind::kInferCoefficient, "infer-coefficient"},
};

void check_id(const std::string& field, const std::string& value) {
  if (!is_valid_identifier(value)) {
    throw ValidationError(field, "invalid identifier '" + value + "'");
  }
}

void check_unit(const std::string& field, double value) {
  if (!(value >= 0.0 && value <= 1.0)) {
    throw ValidationError(field, "must lie in [0,1], got " + format_decimal(value));
  }
}

void validate_stimulus(const StimulusInfo& s) {
  check_id("pair_id", s.pair_id);
  check_id("endpoint_a", s.endpoint_a);
  check_id("endpoint_b", s.endpoint_b);
  if (s.class_a < 0) {
    throw ValidationError("class_a", "negative class index");
  }
  if (s.class_b < 0) {
    throw ValidationError("class_b", "negative class index");
  }
  if (s.class_a == s.class_b) {
    throw ValidationError("class_b", "endpoint classes must differ");
  }
  check_unit("lambda_f", s.lambda_f);
}

class FieldReader {
 public:
  FieldReader(std::vector<std::string_view> fields, std::size_t line) : fields_(std::move(fields)), line_(line) {}

  std::string_view raw(std::size_t i) const { return fields_.at(i); }

  std::string text(std::size_t i, const char* name) const {
    std::string value(fields_.at(i));
    if (!is_valid_identifier(value)) {
      fail(name, "invalid identifier '" + value + "'");
    }
    return value;
  }

  double decimal(std::size_t i, const char* name) const {
    auto v = parse_decimal(fields_.at(i));
    if (!v) {
      fail(name, "not a decimal: '" + std::string(fields_.at(i)) + "'");
    }
    return *v;
  }

  std::int64_t integer(std::size_t i, const char* name) const {
    auto v = parse_integer(fields_.at(i));
    if (!v) {
      fail(name, "not an integer: '" + std::string(fields_.at(i)) + "'");
    }
    return *v;
  }

  bool none(std::size_t i) const { return fields_.at(i) == kNone; }

  [[noreturn]] void fail(const char* name, const std::string& message) const {
    throw ParseError(line_, std::string(name) + ": " + message);
  }

 private:
  std::vector<std::string_view> fields_;
  std::size_t line_;
};

std::uint32_t to_trial(const FieldReader& r, std::size_t i, const char* name) {
  auto v = r.integer(i, name);
  if (v < 0 || v > static_cast<std::int64_t>(UINT32_MAX)) {
    r.fail(name, "out of range");
  }
  return static_cast<std::uint32_t>(v);
}

int to_class(const FieldReader& r, std::size_t i, const char* name) {
  auto v = r.integer(i, name);
  if (v < 0 || v > 1 << 20) {
    r.fail(name, "class index out of range");
  }
  return static_cast<int>(v);
}

void append_stimulus(std::ostringstream& out, const StimulusInfo& s) {
  out << s.pair_id << '\t' << s.endpoint_a << '\t' << s.endpoint_b << '\t' << s.class_a << '\t' << s.class_b
      << '\t' << format_decimal(s.lambda_f);
}

StimulusInfo read_stimulus(const FieldReader& r, std::size_t first) {
  StimulusInfo s;
  s.pair_id = r.text(first, "pair_id");
  s.endpoint_a = r.text(first + 1, "endpoint_a");
  s.endpoint_b = r.text(first + 2, "endpoint_b");
  s.class_a = to_class(r, first + 3, "class_a");
  s.class_b = to_class(r, first + 4, "class_b");
  s.lambda_f = r.decimal(first + 5, "lambda_f");
  return s;
}

}  // namespace

std::string to_string(InterfaceKind kind) {
  for (const auto& entry : kKindNames) {
    if (entry.kind == kind) {
      return std::string(entry.name);
    }
  }
  return "unknown";
}

InterfaceKind parse_interface_kind(std::string_view name) {
  for (const auto& entry : kKindNames) {
    if (entry.name == name) {
      return entry.kind;
    }
  }
  throw ValidationError("kind", "unknown interface kind '" + std::string(name) + "'");
}

bool is_selection_kind(InterfaceKind kind) {
  return kind != InterfaceKind::kInferCoefficient;
}

void validate(const Judgment& j) {
  check_id("participant_id", j.participant_id);
  check_id("session_id", j.session_id);
  validate_stimulus(j.stimulus);
  check_unit("lambda_h", j.lambda_h);
  if (j.confidence) {
    check_unit("confidence", *j.confidence);
    if (is_selection_kind(j.kind)) {
      throw ValidationError("confidence", "selection interfaces do not record confidence");
    }
  } else if (!is_selection_kind(j.kind)) {
    throw ValidationError("confidence", "coefficient-inference judgments require a confidence");
  }
  if (j.is_repeat != j.repeat_of.has_value()) {
    throw ValidationError("repeat_of", "repeat flag and repeat_of must agree");
  }
  if (j.repeat_of && *j.repeat_of >= j.trial_index) {
    throw ValidationError("repeat_of", "a repeat must reference an earlier trial");
  }
  if (j.response_ms < 0) {
    throw ValidationError("response_ms", "negative duration");
  }
}

void validate(const SoftLabelJudgment& j) {
  check_id("participant_id", j.participant_id);
  check_id("session_id", j.session_id);
  validate_stimulus(j.stimulus);
  if (j.top1_class < 0) {
    throw ValidationError("top1_class", "negative class index");
  }
  if (!(j.top1_prob >= 0.0 && j.top1_prob <= 100.0)) {
    throw ValidationError("top1_prob", "must lie in [0,100]");
  }
  if (!(j.top2_prob >= 0.0 && j.top2_prob <= 100.0)) {
    throw ValidationError("top2_prob", "must lie in [0,100]");
  }
  if (j.top2_class) {
    if (*j.top2_class < 0) {
      throw ValidationError("top2_class", "negative class index");
    }
    if (*j.top2_class == j.top1_class) {
      throw ValidationError("top2_class", "top-2 class must differ from top-1 class");
    }
  } else if (j.top2_prob != 0.0) {
    throw ValidationError("top2_prob", "probability given without a top-2 class");
  }
  if (j.top1_prob + j.top2_prob > 100.0) {
    throw ValidationError("top2_prob", "top-1 and top-2 probabilities exceed 100");
  }
  for (int c : j.ruled_out) {
    if (c < 0) {
      throw ValidationError("ruled_out", "negative class index");
    }
    if (c == j.top1_class || (j.top2_class && c == *j.top2_class)) {
      throw ValidationError("ruled_out", "class " + std::to_string(c) + " is both ruled out and selected");
    }
  }
  if (j.response_ms < 0) {
    throw ValidationError("response_ms", "negative duration");
  }
}

void validate(const Record& record) {
  std::visit([](const auto& r) { validate(r); }, record);
}

RecordKey key_of(const Record& record) {
  return std::visit(
      [](const auto& r) { return RecordKey{r.participant_id, r.session_id, r.trial_index}; }, record);
}

std::string serialize_record(const Record& record) {
  std::ostringstream out;
  if (const auto* j = std::get_if<Judgment>(&record)) {
    out << "J\t" << j->participant_id << '\t' << j->session_id << '\t' << j->trial_index << '\t'
        << to_string(j->kind) << '\t';
    append_stimulus(out, j->stimulus);
    out << '\t' << format_decimal(j->lambda_h) << '\t'
        << (j->confidence ? format_decimal(*j->confidence) : std::string(kNone)) << '\t' << (j->is_repeat ? 1 : 0)
        << '\t' << (j->repeat_of ? std::to_string(*j->repeat_of) : std::string(kNone)) << '\t' << j->response_ms;
    return out.str();
  }
  const auto& s = std::get<SoftLabelJudgment>(record);
  out << "S\t" << s.participant_id << '\t' << s.session_id << '\t' << s.trial_index << '\t';
  append_stimulus(out, s.stimulus);
  out << '\t' << s.top1_class << '\t' << format_decimal(s.top1_prob) << '\t'
      << (s.top2_class ? std::to_string(*s.top2_class) : std::string(kNone)) << '\t' << format_decimal(s.top2_prob)
      << '\t';
  if (s.ruled_out.empty()) {
    out << kNone;
  } else {
    bool first = true;
    for (int c : s.ruled_out) {
      out << (first ? "" : ",") << c;
      first = false;
    }
  }
  out << '\t' << s.response_ms;
  return out.str();
}

Record parse_record(std::string_view line, std::size_t line_number) {
  auto fields = split(line, '\t');
  if (fields.empty() || fields[0].empty()) {
    throw ParseError(line_number, "empty record");
  }
  if (fields[0] == "J") {
    if (fields.size() != 16) {
      throw ParseError(line_number, "judgment record needs 16 fields, found " + std::to_string(fields.size()));
    }
    FieldReader r(std::move(fields), line_number);
    Judgment j;
    j.participant_id = r.text(1, "participant_id");
    j.session_id = r.text(2, "session_id");
    j.trial_index = to_trial(r, 3, "trial_index");
    try {
      j.kind = parse_interface_kind(r.raw(4));
    } catch (const ValidationError& e) {
      r.fail("kind", e.what());
    }
    j.stimulus = read_stimulus(r, 5);
    j.lambda_h = r.decimal(11, "lambda_h");
    if (!r.none(12)) {
      j.confidence = r.decimal(12, "confidence");
    }
    auto repeat = r.integer(13, "is_repeat");
    if (repeat != 0 && repeat != 1) {
      r.fail("is_repeat", "must be 0 or 1");
    }
    j.is_repeat = repeat == 1;
    if (!r.none(14)) {
      j.repeat_of = to_trial(r, 14, "repeat_of");
    }
    j.response_ms = r.integer(15, "response_ms");
    try {
      validate(j);
    } catch (const ValidationError& e) {
      throw ParseError(line_number, e.what());
    }
    return j;
  }
  if (fields[0] == "S") {
    if (fields.size() != 16) {
      throw ParseError(line_number, "soft-label record needs 16 fields, found " + std::to_string(fields.size()));
    }
    FieldReader r(std::move(fields), line_number);
    SoftLabelJudgment s;
    s.participant_id = r.text(1, "participant_id");
    s.session_id = r.text(2, "session_id");
    s.trial_index = to_trial(r, 3, "trial_index");
    s.stimulus = read_stimulus(r, 4);
    s.top1_class = to_class(r, 10, "top1_class");
    s.top1_prob = r.decimal(11, "top1_prob");
    if (!r.none(12)) {
      s.top2_class = to_class(r, 12, "top2_class");
    }
    s.top2_prob = r.decimal(13, "top2_prob");
    if (!r.none(14)) {
      for (auto part : split(r.raw(14), ',')) {
        auto c = parse_integer(part);
        if (!c || *c < 0) {
          r.fail("ruled_out", "bad class index '" + std::string(part) + "'");
        }
        s.ruled_out.insert(static_cast<int>(*c));
      }
    }
    s.response_ms = r.integer(15, "response_ms");
    try {
      validate(s);
    } catch (const ValidationError& e) {
      throw ParseError(line_number, e.what());
    }
    return s;
  }
  throw ParseError(line_number, "unknown record type '" + std::string(fields[0]) + "'");
}

void export_hmix(std::span<const Record> records, std::ostream& out) {
  out << kHmixHeader << '\n';
  for (const auto& record : records) {
    out << serialize_record(record) << '\n';
  }
}

void export_hmix(std::span<const Record> records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error("cannot open " + path.string() + " for writing");
  }
  export_hmix(records, out);
  if (!out) {
    throw Error("failed writing " + path.string());
  }
}

std::vector<Record> import_hmix(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) {
    throw ParseError(1, "missing header");
  }
  if (!line.empty() && line.back() == '\r') {
    line.pop_back();
  }
  if (line != kHmixHeader) {
    throw SchemaError("line 1: expected header '" + std::string(kHmixHeader) + "', found '" + line + "'");
  }
  std::vector<Record> records;
  std::size_t line_number = 1;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.empty()) {
      throw ParseError(line_number, "empty record");
    }
    records.push_back(parse_record(line, line_number));
  }
  return records;
}

std::vector<Record> import_hmix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw NotFoundError("cannot open " + path.string());
  }
  return import_hmix(in);
}

std::vector<Judgment> judgments_of(std::span<const Record> records) {
  std::vector<Judgment> out;
  for (const auto& r : records) {
    if (const auto* j = std::get_if<Judgment>(&r)) {
      out.push_back(*j);
    }
  }
  return out;
}

std::vector<SoftLabelJudgment> soft_labels_of(std::span<const Record> records) {
  std::vector<SoftLabelJudgment> out;
  for (const auto& r : records) {
    if (const auto* s = std::get_if<SoftLabelJudgment>(&r)) {
      out.push_back(*s);
    }
  }
  return out;
}

// --- JudgmentStore ---------------------------------------------------------------------------

std::unique_ptr<JudgmentStore> JudgmentStore::open(const std::filesystem::path& path) {
  auto store = std::make_unique<JudgmentStore>();
  bool exists = std::filesystem::exists(path) && std::filesystem::file_size(path) > 0;
  if (exists) {
    for (auto& record : import_hmix(path)) {
      store->append_locked(record);
    }
  }
  store->log_ = std::make_unique<std::ofstream>(path, std::ios::binary | std::ios::app);
  if (!*store->log_) {
    throw Error("cannot open " + path.string() + " for appending");
  }
  if (!exists) {
    *store->log_ << kHmixHeader << '\n';
    store->log_->flush();
  }
  return store;
}

AppendStatus JudgmentStore::append(const Record& record) {
  validate(record);
  std::unique_lock lock(mutex_);
  auto status = append_locked(record);
  if (status == AppendStatus::kStored && log_) {
    *log_ << serialize_record(record) << '\n';
    log_->flush();
    if (!*log_) {
      throw Error("failed to persist record");
    }
  }
  return status;
}

AppendStatus JudgmentStore::append_locked(const Record& record) {
  auto key = key_of(record);
  if (auto it = index_.find(key); it != index_.end()) {
    if (records_[it->second] == record) {
      return AppendStatus::kDuplicate;
    }
    throw ConflictError("record for participant '" + key.participant_id + "', session '" + key.session_id +
                        "', trial " + std::to_string(key.trial_index) + " already stored with a different payload");
  }
  index_.emplace(std::move(key), records_.size());
  records_.push_back(record);
  return AppendStatus::kStored;
}

std::vector<Record> JudgmentStore::records() const {
  std::shared_lock lock(mutex_);
  return records_;
}

std::vector<Judgment> JudgmentStore::judgments() const {
  std::shared_lock lock(mutex_);
  return judgments_of(records_);
}

std::vector<SoftLabelJudgment> JudgmentStore::soft_labels() const {
  std::shared_lock lock(mutex_);
  return soft_labels_of(records_);
}

std::vector<Record> JudgmentStore::session_records(const std::string& session_id) const {
  std::shared_lock lock(mutex_);
  std::vector<Record> out;
  for (const auto& r : records_) {
    if (key_of(r).session_id == session_id) {
      out.push_back(r);
    }
  }
  return out;
}

std::optional<Record> JudgmentStore::find(const RecordKey& key) const {
  std::shared_lock lock(mutex_);
  auto it = index_.find(key);
  if (it == index_.end()) {
    return std::nullopt;
  }
  return records_[it->second];
}

std::size_t JudgmentStore::size() const {
  std::shared_lock lock(mutex_);
  return records_.size();
}

}  // namespace hmix
