#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>

#include "hmix/errors.hpp"
#include "hmix/hmixdata.hpp"
#include "hmix/text.hpp"

namespace hmix {

namespace {

// Buckets are keyed on coefficients rounded to 1e-6 so re-oriented values (1 - 0.9) land with 0.1.
double bucket_key(double lambda) {
  return std::round(lambda * 1e6) / 1e6;
}

// Order-independent mean: sums ascending values.
double sorted_mean(const std::vector<double>& sorted) {
  if (sorted.empty()) {
    return 0.0;
  }
  return std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(sorted.size());
}

double sorted_sd(const std::vector<double>& sorted, double mean) {
  if (sorted.size() < 2) {
    return 0.0;
  }
  double ss = 0.0;
  for (double v : sorted) {
    ss += (v - mean) * (v - mean);
  }
  return std::sqrt(ss / static_cast<double>(sorted.size() - 1));
}

double percentile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.size() == 1) {
    return sorted.front();
  }
  double pos = q * static_cast<double>(sorted.size() - 1);
  auto lo = static_cast<std::size_t>(std::floor(pos));
  auto hi = std::min(lo + 1, sorted.size() - 1);
  double frac = pos - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

bool kind_selected(const std::vector<InterfaceKind>& kinds, InterfaceKind kind) {
  return kinds.empty() || std::find(kinds.begin(), kinds.end(), kind) != kinds.end();
}

}  // namespace

double percentile(std::vector<double> values, double q) {
  if (values.empty()) {
    throw ValidationError("values", "percentile of an empty sample");
  }
  if (!(q >= 0.0 && q <= 1.0)) {
    throw ValidationError("q", "percentile rank must lie in [0,1]");
  }
  std::sort(values.begin(), values.end());
  return percentile_sorted(values, q);
}

double median(std::vector<double> values) {
  return percentile(std::move(values), 0.5);
}

std::vector<AggregateCurve> aggregate_relabelings(std::span<const Judgment> judgments,
                                                  const AggregateOptions& options) {
  struct Samples {
    std::vector<double> lambdas;
    std::vector<double> confidences;
  };
  std::map<std::string, std::map<double, Samples>> groups;

  for (const auto& j : judgments) {
    if (!kind_selected(options.kinds, j.kind) || (j.is_repeat && !options.include_repeats)) {
      continue;
    }
    double lambda_f = j.stimulus.lambda_f;
    double lambda_h = j.lambda_h;
    std::string group;
    switch (options.group_by) {
      case GroupBy::kClassPair: {
        int lo = j.stimulus.class_a;
        int hi = j.stimulus.class_b;
        if (lo > hi) {
          std::swap(lo, hi);
          lambda_f = 1.0 - lambda_f;
          lambda_h = 1.0 - lambda_h;
        }
        group = std::to_string(lo) + "-" + std::to_string(hi);
        break;
      }
      case GroupBy::kStimulus:
        group = j.stimulus.pair_id;
        break;
      case GroupBy::kGlobal:
        group = "all";
        break;
    }
    auto& samples = groups[group][bucket_key(lambda_f)];
    samples.lambdas.push_back(lambda_h);
    if (j.confidence) {
      samples.confidences.push_back(*j.confidence);
    }
  }

  std::vector<AggregateCurve> curves;
  for (auto& [group, buckets] : groups) {
    AggregateCurve curve;
    curve.group = group;
    for (auto& [lambda_f, samples] : buckets) {
      std::sort(samples.lambdas.begin(), samples.lambdas.end());
      std::sort(samples.confidences.begin(), samples.confidences.end());
      BucketStats stats;
      stats.lambda_f = lambda_f;
      stats.n = samples.lambdas.size();
      stats.median = percentile_sorted(samples.lambdas, 0.5);
      stats.p25 = percentile_sorted(samples.lambdas, 0.25);
      stats.p75 = percentile_sorted(samples.lambdas, 0.75);
      stats.mean = sorted_mean(samples.lambdas);
      stats.confidence_n = samples.confidences.size();
      stats.confidence_mean = sorted_mean(samples.confidences);
      stats.confidence_sd = sorted_sd(samples.confidences, stats.confidence_mean);
      curve.buckets.push_back(stats);
    }
    for (double expected : options.expected_grid) {
      if (!buckets.contains(bucket_key(expected))) {
        curve.missing_buckets.push_back(expected);
      }
    }
    curves.push_back(std::move(curve));
  }
  return curves;
}

std::vector<ConfidenceRow> confidence_by_coefficient(std::span<const Judgment> judgments, bool include_repeats) {
  struct Acc {
    std::vector<double> values;
    std::map<std::string, std::vector<double>> by_participant;
  };
  std::map<double, Acc> rows;
  for (const auto& j : judgments) {
    if (!j.confidence || (j.is_repeat && !include_repeats)) {
      continue;
    }
    double folded = bucket_key(std::min(j.stimulus.lambda_f, 1.0 - j.stimulus.lambda_f));
    auto& acc = rows[folded];
    acc.values.push_back(*j.confidence);
    acc.by_participant[j.participant_id].push_back(*j.confidence);
  }
  std::vector<ConfidenceRow> out;
  for (auto& [folded, acc] : rows) {
    std::sort(acc.values.begin(), acc.values.end());
    ConfidenceRow row;
    row.folded_coefficient = folded;
    row.distance_from_half = bucket_key(0.5 - folded);
    row.n = acc.values.size();
    row.participants = acc.by_participant.size();
    row.mean = sorted_mean(acc.values);
    row.sd = sorted_sd(acc.values, row.mean);
    std::vector<double> participant_means;
    for (auto& [pid, values] : acc.by_participant) {
      std::sort(values.begin(), values.end());
      participant_means.push_back(sorted_mean(values));
    }
    std::sort(participant_means.begin(), participant_means.end());
    row.participant_sd = sorted_sd(participant_means, sorted_mean(participant_means));
    out.push_back(row);
  }
  return out;
}

FlagResult flag_high_relabel(std::span<const Judgment> judgments, const FlagOptions& options) {
  std::map<std::string, std::map<std::string, std::vector<double>>> selections;
  for (const auto& j : judgments) {
    if (!is_selection_kind(j.kind) || (j.is_repeat && !options.include_repeats)) {
      continue;
    }
    std::string iface = to_string(j.kind);
    if (options.pool_construct && j.kind != InterfaceKind::kSelectShuffled) {
      iface = "construct";
    }
    selections[iface][j.stimulus.pair_id].push_back(j.lambda_h);
  }

  FlagResult result;
  std::map<std::string, std::size_t> flag_counts;
  for (auto& [iface, pairs] : selections) {
    auto& flagged = result.per_interface[iface];
    for (auto& [pair_id, values] : pairs) {
      std::sort(values.begin(), values.end());
      double central = options.central == CentralTendency::kMean ? sorted_mean(values)
                                                                  : percentile_sorted(values, 0.5);
      result.central_values[iface][pair_id] = central;
      if (std::abs(central - 0.5) >= options.threshold - 1e-12) {
        flagged.push_back(pair_id);
        ++flag_counts[pair_id];
      }
    }
  }
  for (const auto& [pair_id, count] : flag_counts) {
    result.any_interface.push_back(pair_id);
    if (count == selections.size()) {
      result.across_interfaces.push_back(pair_id);
    }
  }
  return result;
}

double label_entropy(std::span<const double> counts) {
  double total = 0.0;
  for (double c : counts) {
    if (!(c >= 0.0) || !std::isfinite(c)) {
      throw ValidationError("counts", "counts must be nonnegative");
    }
    total += c;
  }
  if (total <= 0.0) {
    throw ValidationError("counts", "at least one count must be positive");
  }
  double h = 0.0;
  for (double c : counts) {
    if (c > 0.0) {
      double p = c / total;
      h -= p * std::log(p);
    }
  }
  return std::clamp(h, 0.0, std::log(static_cast<double>(counts.size())));
}

double label_entropy(std::span<const std::int64_t> counts) {
  std::vector<double> as_double(counts.begin(), counts.end());
  return label_entropy(std::span<const double>(as_double));
}

void LabelFrequencyTable::set(const std::string& image_id, std::vector<std::int64_t> counts) {
  if (!is_valid_identifier(image_id)) {
    throw ValidationError("image_id", "invalid identifier '" + image_id + "'");
  }
  if (counts.empty()) {
    throw ValidationError("counts", "no class counts");
  }
  if (num_classes_ != 0 && static_cast<int>(counts.size()) != num_classes_) {
    throw ValidationError("counts", "expected " + std::to_string(num_classes_) + " counts");
  }
  bool positive = false;
  for (auto c : counts) {
    if (c < 0) {
      throw ValidationError("counts", "negative count for " + image_id);
    }
    positive = positive || c > 0;
  }
  if (!positive) {
    throw ValidationError("counts", "all-zero counts for " + image_id);
  }
  num_classes_ = static_cast<int>(counts.size());
  rows_[image_id] = std::move(counts);
}

const std::vector<std::int64_t>* LabelFrequencyTable::find(const std::string& image_id) const {
  auto it = rows_.find(image_id);
  return it == rows_.end() ? nullptr : &it->second;
}

LabelFrequencyTable LabelFrequencyTable::read(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) {
    throw ParseError(1, "missing header");
  }
  auto header = split(line, ',');
  if (header.size() < 2 || header[0] != "image_id") {
    throw ParseError(1, "header must start with image_id");
  }
  std::size_t k = header.size() - 1;
  LabelFrequencyTable table;
  std::size_t line_number = 1;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.empty()) {
      continue;
    }
    auto fields = split(line, ',');
    if (fields.size() != k + 1) {
      throw ParseError(line_number, "expected " + std::to_string(k + 1) + " columns");
    }
    std::vector<std::int64_t> counts;
    for (std::size_t i = 1; i < fields.size(); ++i) {
      auto v = parse_integer(fields[i]);
      if (!v) {
        throw ParseError(line_number, "bad count '" + std::string(fields[i]) + "'");
      }
      counts.push_back(*v);
    }
    try {
      table.set(std::string(fields[0]), std::move(counts));
    } catch (const ValidationError& e) {
      throw ParseError(line_number, e.what());
    }
  }
  return table;
}

LabelFrequencyTable LabelFrequencyTable::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw NotFoundError("cannot open " + path.string());
  }
  return read(in);
}

void LabelFrequencyTable::write(std::ostream& out) const {
  out << "image_id";
  for (int k = 0; k < num_classes_; ++k) {
    out << ",count_" << k;
  }
  out << '\n';
  for (const auto& [id, counts] : rows_) {
    out << id;
    for (auto c : counts) {
      out << ',' << c;
    }
    out << '\n';
  }
}

std::string to_string(EntropyBucket bucket) {
  switch (bucket) {
    case EntropyBucket::kBothHigh:
      return "both-high";
    case EntropyBucket::kBothLow:
      return "both-low";
    case EntropyBucket::kMixed:
      return "mixed";
  }
  return "mixed";
}

EntropyBucket classify_endpoints(double entropy_a, double entropy_b, double hi, double lo) {
  if (entropy_a >= hi && entropy_b >= hi) {
    return EntropyBucket::kBothHigh;
  }
  if (entropy_a <= lo && entropy_b <= lo) {
    return EntropyBucket::kBothLow;
  }
  return EntropyBucket::kMixed;
}

EntropyAnalysis entropy_bucket_analysis(std::span<const Judgment> judgments, const LabelFrequencyTable& table,
                                        double hi, double lo) {
  struct Acc {
    std::vector<double> confidences;
    std::vector<double> relabels;
  };
  std::map<EntropyBucket, Acc> acc;
  std::set<std::string> skipped;
  for (const auto& j : judgments) {
    if (j.is_repeat) {
      continue;
    }
    const auto* a = table.find(j.stimulus.endpoint_a);
    const auto* b = table.find(j.stimulus.endpoint_b);
    if (a == nullptr || b == nullptr) {
      skipped.insert(j.stimulus.pair_id + "@" + format_decimal(j.stimulus.lambda_f));
      continue;
    }
    auto bucket = classify_endpoints(label_entropy(std::span<const std::int64_t>(*a)),
                                     label_entropy(std::span<const std::int64_t>(*b)), hi, lo);
    auto& slot = acc[bucket];
    slot.relabels.push_back(std::abs(j.lambda_h - j.stimulus.lambda_f));
    if (j.confidence) {
      slot.confidences.push_back(*j.confidence);
    }
  }
  EntropyAnalysis out;
  for (auto bucket : {EntropyBucket::kBothHigh, EntropyBucket::kBothLow, EntropyBucket::kMixed}) {
    EntropyBucketStats stats;
    stats.bucket = bucket;
    if (auto it = acc.find(bucket); it != acc.end()) {
      std::sort(it->second.confidences.begin(), it->second.confidences.end());
      std::sort(it->second.relabels.begin(), it->second.relabels.end());
      stats.n = it->second.relabels.size();
      stats.confidence_n = it->second.confidences.size();
      stats.mean_confidence = sorted_mean(it->second.confidences);
      stats.mean_relabel = sorted_mean(it->second.relabels);
    }
    out.buckets.push_back(stats);
  }
  out.skipped.assign(skipped.begin(), skipped.end());
  return out;
}

std::vector<RepeatConsistency> repeat_consistency(std::span<const Judgment> judgments) {
  std::map<std::pair<std::string, std::uint32_t>, const Judgment*> by_trial;
  for (const auto& j : judgments) {
    by_trial[{j.session_id, j.trial_index}] = &j;
  }
  struct Diffs {
    std::vector<double> lambdas;
    std::vector<double> confidences;
  };
  std::map<InterfaceKind, Diffs> diffs;
  for (const auto& j : judgments) {
    if (!j.is_repeat || !j.repeat_of) {
      continue;
    }
    auto it = by_trial.find({j.session_id, *j.repeat_of});
    if (it == by_trial.end()) {
      continue;
    }
    const Judgment& original = *it->second;
    auto& d = diffs[j.kind];
    d.lambdas.push_back(std::abs(j.lambda_h - original.lambda_h));
    if (j.confidence && original.confidence) {
      d.confidences.push_back(std::abs(*j.confidence - *original.confidence));
    }
  }
  std::vector<RepeatConsistency> out;
  for (auto& [kind, d] : diffs) {
    RepeatConsistency rc;
    rc.kind = kind;
    rc.pairs = d.lambdas.size();
    rc.median_lambda_diff = median(d.lambdas);
    if (!d.confidences.empty()) {
      rc.median_confidence_diff = median(d.confidences);
    }
    out.push_back(rc);
  }
  return out;
}

}  // namespace hmix
