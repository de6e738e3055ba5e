#pragma once

// H-Mix data model: judgment records, the append-only store, the hmix-v1 file format and the
// analyses run over elicited judgments.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

namespace hmix {

enum class InterfaceKind {
  kConstructStartLow,
  kConstructStartHigh,
  kSelectShuffled,
  kInferCoefficient,
};

std::string to_string(InterfaceKind kind);
InterfaceKind parse_interface_kind(std::string_view name);
// Construct, select-shuffled: judgments are grid selections without confidence.
bool is_selection_kind(InterfaceKind kind);

// Identifies the stimulus a record answers. lambda_f and lambda_h are weights on endpoint a.
struct StimulusInfo {
  std::string pair_id;
  std::string endpoint_a;
  std::string endpoint_b;
  int class_a = 0;
  int class_b = 1;
  double lambda_f = 0.5;

  friend bool operator==(const StimulusInfo&, const StimulusInfo&) = default;
};

struct Judgment {
  std::string participant_id;
  std::string session_id;
  std::uint32_t trial_index = 0;
  InterfaceKind kind = InterfaceKind::kInferCoefficient;
  StimulusInfo stimulus;
  double lambda_h = 0.5;
  std::optional<double> confidence;
  bool is_repeat = false;
  std::optional<std::uint32_t> repeat_of;
  std::int64_t response_ms = 0;

  friend bool operator==(const Judgment&, const Judgment&) = default;
};

// Category report on a 0-100 scale.
struct SoftLabelJudgment {
  std::string participant_id;
  std::string session_id;
  std::uint32_t trial_index = 0;
  StimulusInfo stimulus;
  int top1_class = 0;
  double top1_prob = 100.0;
  std::optional<int> top2_class;
  double top2_prob = 0.0;
  std::set<int> ruled_out;
  std::int64_t response_ms = 0;

  friend bool operator==(const SoftLabelJudgment&, const SoftLabelJudgment&) = default;
};

using Record = std::variant<Judgment, SoftLabelJudgment>;

// Throws ValidationError naming the first offending field.
void validate(const Judgment& judgment);
void validate(const SoftLabelJudgment& judgment);
void validate(const Record& record);

struct RecordKey {
  std::string participant_id;
  std::string session_id;
  std::uint32_t trial_index = 0;

  friend auto operator<=>(const RecordKey&, const RecordKey&) = default;
};
RecordKey key_of(const Record& record);

inline constexpr std::string_view kHmixHeader = "hmix-v1";

std::string serialize_record(const Record& record);
// `line_number` is only used for error messages.
Record parse_record(std::string_view line, std::size_t line_number);

enum class AppendStatus { kStored, kDuplicate };

// Append-only record log. Appends are linearized by an internal lock; reads take a shared lock and
// return copies. When opened on a file, each accepted record is written and flushed before
// append() returns.
class JudgmentStore {
 public:
  JudgmentStore() = default;
  static std::unique_ptr<JudgmentStore> open(const std::filesystem::path& path);

  JudgmentStore(const JudgmentStore&) = delete;
  JudgmentStore& operator=(const JudgmentStore&) = delete;

  AppendStatus append(const Record& record);

  std::vector<Record> records() const;
  std::vector<Judgment> judgments() const;
  std::vector<SoftLabelJudgment> soft_labels() const;
  std::vector<Record> session_records(const std::string& session_id) const;
  std::optional<Record> find(const RecordKey& key) const;
  std::size_t size() const;

 private:
  AppendStatus append_locked(const Record& record);

  mutable std::shared_mutex mutex_;
  std::vector<Record> records_;
  std::map<RecordKey, std::size_t> index_;
  std::unique_ptr<std::ofstream> log_;
};

void export_hmix(std::span<const Record> records, std::ostream& out);
void export_hmix(std::span<const Record> records, const std::filesystem::path& path);
std::vector<Record> import_hmix(std::istream& in);
std::vector<Record> import_hmix(const std::filesystem::path& path);

std::vector<Judgment> judgments_of(std::span<const Record> records);
std::vector<SoftLabelJudgment> soft_labels_of(std::span<const Record> records);

// ---------------------------------------------------------------------------------------------
// Aggregation

// Percentile with linear interpolation between closest ranks; q in [0,1]. `values` need not be sorted.
double percentile(std::vector<double> values, double q);
double median(std::vector<double> values);

enum class GroupBy { kClassPair, kStimulus, kGlobal };

struct BucketStats {
  double lambda_f = 0.0;
  std::size_t n = 0;
  double median = 0.0;
  double mean = 0.0;
  double p25 = 0.0;
  double p75 = 0.0;
  std::size_t confidence_n = 0;
  double confidence_mean = 0.0;
  double confidence_sd = 0.0;
};

struct AggregateCurve {
  // "3-7" for class pairs (lower class first, coefficients re-oriented onto it), pair id for
  // stimulus grouping, "all" for global.
  std::string group;
  std::vector<BucketStats> buckets;  // ascending lambda_f
  std::vector<double> missing_buckets;
};

struct AggregateOptions {
  GroupBy group_by = GroupBy::kClassPair;
  // Only judgments of these kinds; empty means all kinds.
  std::vector<InterfaceKind> kinds{InterfaceKind::kInferCoefficient};
  bool include_repeats = false;
  // Coefficients expected in every group; absent ones are listed in missing_buckets.
  std::vector<double> expected_grid;
};

std::vector<AggregateCurve> aggregate_relabelings(std::span<const Judgment> judgments,
                                                  const AggregateOptions& options = {});

// Confidence folded by symmetry: rows keyed by min(lambda_f, 1 - lambda_f).
struct ConfidenceRow {
  double folded_coefficient = 0.0;  // 0.1, 0.25, 0.5 for the standard grid
  double distance_from_half = 0.0;  // |0.5 - lambda_f|
  std::size_t n = 0;
  std::size_t participants = 0;
  double mean = 0.0;
  double sd = 0.0;              // sample sd over judgments
  double participant_sd = 0.0;  // sample sd of per-participant means
};

std::vector<ConfidenceRow> confidence_by_coefficient(std::span<const Judgment> judgments,
                                                     bool include_repeats = false);

// ---------------------------------------------------------------------------------------------
// High-relabel flagging over grid-selection judgments

enum class CentralTendency { kMean, kMedian };

struct FlagOptions {
  double threshold = 0.15;
  CentralTendency central = CentralTendency::kMean;
  // Treat both construct start conditions as a single "construct" interface.
  bool pool_construct = true;
  bool include_repeats = false;
};

struct FlagResult {
  // interface name ("construct", "select-shuffled", or a specific construct condition) -> pairs
  std::map<std::string, std::vector<std::string>> per_interface;
  std::map<std::string, std::map<std::string, double>> central_values;
  std::vector<std::string> across_interfaces;
  std::vector<std::string> any_interface;
};

FlagResult flag_high_relabel(std::span<const Judgment> judgments, const FlagOptions& options = {});

// ---------------------------------------------------------------------------------------------
// Endpoint ambiguity

// Shannon entropy (nats) of normalized counts. Rejects negative or all-zero counts.
double label_entropy(std::span<const double> counts);
double label_entropy(std::span<const std::int64_t> counts);

class LabelFrequencyTable {
 public:
  void set(const std::string& image_id, std::vector<std::int64_t> counts);
  const std::vector<std::int64_t>* find(const std::string& image_id) const;
  std::size_t size() const noexcept { return rows_.size(); }
  int num_classes() const noexcept { return num_classes_; }
  const std::map<std::string, std::vector<std::int64_t>>& rows() const noexcept { return rows_; }

  // CSV: header "image_id,count_0,...,count_{K-1}", one row per image.
  static LabelFrequencyTable read(std::istream& in);
  static LabelFrequencyTable read(const std::filesystem::path& path);
  void write(std::ostream& out) const;

 private:
  std::map<std::string, std::vector<std::int64_t>> rows_;
  int num_classes_ = 0;
};

enum class EntropyBucket { kBothHigh, kBothLow, kMixed };
std::string to_string(EntropyBucket bucket);

EntropyBucket classify_endpoints(double entropy_a, double entropy_b, double hi, double lo);

struct EntropyBucketStats {
  EntropyBucket bucket = EntropyBucket::kMixed;
  std::size_t n = 0;
  std::size_t confidence_n = 0;
  double mean_confidence = 0.0;
  double mean_relabel = 0.0;  // mean |lambda_h - lambda_f|
};

struct EntropyAnalysis {
  std::vector<EntropyBucketStats> buckets;  // both-high, both-low, mixed
  std::vector<std::string> skipped;         // stimulus ids with a missing endpoint entry
};

EntropyAnalysis entropy_bucket_analysis(std::span<const Judgment> judgments, const LabelFrequencyTable& table,
                                        double hi = 0.5, double lo = 0.1);

// ---------------------------------------------------------------------------------------------
// Repeat-trial consistency

struct RepeatConsistency {
  InterfaceKind kind = InterfaceKind::kInferCoefficient;
  std::size_t pairs = 0;
  double median_lambda_diff = 0.0;
  std::optional<double> median_confidence_diff;
};

// Empty when no repeat judgment can be matched to its original.
std::vector<RepeatConsistency> repeat_consistency(std::span<const Judgment> judgments);

}  // namespace hmix
