#include "hmix/traineval/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "hmix/errors.hpp"
#include "hmix/text.hpp"

namespace hmix {

namespace {

std::vector<ClassPair> all_pairs(int num_classes) {
  std::vector<ClassPair> pairs;
  for (int a = 0; a < num_classes; ++a) {
    for (int b = a + 1; b < num_classes; ++b) {
      pairs.emplace_back(a, b);
    }
  }
  return pairs;
}

double round_to(double v, double step) {
  return step > 0.0 ? std::round(v / step) * step : v;
}

}  // namespace

std::vector<MixedStimulus> build_augmenting_set(const Dataset& endpoints, std::size_t count, std::uint64_t seed,
                                                std::span<const MixCoefficient> grid) {
  if (grid.empty()) {
    throw ValidationError("grid", "coefficient grid is empty");
  }
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(endpoints.num_classes));
  for (std::size_t i = 0; i < endpoints.size(); ++i) {
    by_class[static_cast<std::size_t>(endpoints.labels[i])].push_back(i);
  }
  auto pairs = all_pairs(endpoints.num_classes);
  std::erase_if(pairs, [&](const ClassPair& p) {
    return by_class[static_cast<std::size_t>(p.first)].empty() || by_class[static_cast<std::size_t>(p.second)].empty();
  });
  if (pairs.empty() && count > 0) {
    throw ValidationError("endpoints", "endpoint pool needs images of at least two classes");
  }
  Rng rng(seed);
  std::vector<MixedStimulus> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto [ca, cb] = pairs[i % pairs.size()];
    // Alternate orientation across passes over the pair list.
    if ((i / pairs.size()) % 2 == 1) {
      std::swap(ca, cb);
    }
    const auto& pool_a = by_class[static_cast<std::size_t>(ca)];
    const auto& pool_b = by_class[static_cast<std::size_t>(cb)];
    std::size_t ia = pool_a[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(pool_a.size()))];
    std::size_t ib = pool_b[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(pool_b.size()))];
    MixedStimulus s;
    s.endpoint_a_id = endpoints.ids[ia];
    s.endpoint_b_id = endpoints.ids[ib];
    s.pair_id = s.endpoint_a_id + ":" + s.endpoint_b_id;
    s.class_a = ca;
    s.class_b = cb;
    s.lambda_f = grid[(i / pairs.size()) % grid.size()];
    s.mixed_image = data_mix(endpoints.image(ia), endpoints.image(ib), s.lambda_f);
    out.push_back(std::move(s));
  }
  return out;
}

void validate(const SimulationSpec& spec) {
  if (spec.judgments_per_stimulus < 1 || spec.participants < 1) {
    throw ValidationError("simulation", "need at least one participant and one judgment per stimulus");
  }
  if (spec.confidence_means.empty()) {
    throw ValidationError("confidence_means", "must not be empty");
  }
  for (const auto& [fold, mean] : spec.confidence_means) {
    if (!(fold >= 0.0 && fold <= 0.5) || !(mean >= 0.0 && mean <= 1.0)) {
      throw ValidationError("confidence_means", "keys must lie in [0,0.5] and means in [0,1]");
    }
  }
  if (!(spec.steepness_min <= spec.steepness_max) || !(spec.midpoint_min <= spec.midpoint_max) ||
      spec.lambda_noise_sd < 0.0 || spec.confidence_noise_sd < 0.0) {
    throw ValidationError("simulation", "ranges must be ordered and noise nonnegative");
  }
}

double expected_confidence(const SimulationSpec& spec, double lambda_f) {
  double fold = std::min(lambda_f, 1.0 - lambda_f);
  const auto& m = spec.confidence_means;
  auto hi = m.lower_bound(fold);
  if (hi == m.end()) {
    return std::prev(hi)->second;
  }
  if (hi->first == fold || hi == m.begin()) {
    return hi->second;
  }
  auto lo = std::prev(hi);
  double t = (fold - lo->first) / (hi->first - lo->first);
  return lo->second + t * (hi->second - lo->second);
}

SimulatedHumans simulate_judgments(std::span<const MixedStimulus> stimuli, int num_classes,
                                   const SimulationSpec& spec) {
  validate(spec);
  Rng rng(spec.seed);
  SimulatedHumans out;
  for (const auto& pair : all_pairs(num_classes)) {
    LogisticParams p;
    p.lower = 0.0;
    p.upper = 1.0;
    p.steepness = spec.steepness_min + (spec.steepness_max - spec.steepness_min) * uniform01(rng);
    p.midpoint = spec.midpoint_min + (spec.midpoint_max - spec.midpoint_min) * uniform01(rng);
    out.boundaries[pair] = p;
  }

  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::uint32_t> next_trial(static_cast<std::size_t>(spec.participants), 0);
  std::size_t turn = 0;
  auto participant = [](std::size_t p) { return "sim-" + std::to_string(p); };

  for (const auto& s : stimuli) {
    if (s.class_a == s.class_b || s.class_a < 0 || s.class_b < 0 || s.class_a >= num_classes ||
        s.class_b >= num_classes) {
      throw ValidationError("stimulus", "classes must be distinct and within range");
    }
    double lf = s.lambda_f.value();
    double truth = s.class_a < s.class_b ? out.boundaries.at({s.class_a, s.class_b})(lf)
                                         : 1.0 - out.boundaries.at({s.class_b, s.class_a})(1.0 - lf);
    StimulusInfo info{s.pair_id, s.endpoint_a_id, s.endpoint_b_id, s.class_a, s.class_b, lf};
    double mean_conf = expected_confidence(spec, lf);

    for (int r = 0; r < spec.judgments_per_stimulus; ++r) {
      std::size_t p = turn++ % static_cast<std::size_t>(spec.participants);
      double omega = std::clamp(round_to(mean_conf + spec.confidence_noise_sd * normal(rng), spec.slider_step), 0.0, 1.0);
      double sd = spec.lambda_noise_sd * (1.0 + spec.low_confidence_gain * (1.0 - omega));
      double lh = std::clamp(round_to(truth + sd * normal(rng), spec.slider_step), 0.0, 1.0);
      Judgment j;
      j.participant_id = participant(p);
      j.session_id = participant(p) + "-infer";
      j.trial_index = next_trial[p]++;
      j.kind = InterfaceKind::kInferCoefficient;
      j.stimulus = info;
      j.lambda_h = lh;
      j.confidence = omega;
      j.response_ms = 2000 + static_cast<std::int64_t>(uniform01(rng) * 6000);
      out.judgments.push_back(std::move(j));
    }

    if (spec.soft_labels) {
      std::size_t p = turn++ % static_cast<std::size_t>(spec.participants);
      double omega = std::clamp(mean_conf + spec.confidence_noise_sd * normal(rng), 0.0, 1.0);
      double lh = std::clamp(truth + spec.lambda_noise_sd * normal(rng), 0.0, 1.0);
      bool a_first = lh >= 0.5;
      double scale = 0.6 + 0.4 * omega;
      SoftLabelJudgment sj;
      sj.participant_id = participant(p);
      sj.session_id = participant(p) + "-soft";
      sj.trial_index = next_trial[p]++;
      sj.stimulus = info;
      sj.top1_class = a_first ? s.class_a : s.class_b;
      sj.top1_prob = std::round(100.0 * std::max(lh, 1.0 - lh) * scale);
      double p2 = std::round(100.0 * std::min(lh, 1.0 - lh) * scale);
      if (p2 > 0.0) {
        sj.top2_class = a_first ? s.class_b : s.class_a;
        sj.top2_prob = p2;
      }
      for (int k = 0; k < num_classes; ++k) {
        if (k != s.class_a && k != s.class_b && uniform01(rng) < 0.5) {
          sj.ruled_out.insert(k);
        }
      }
      sj.response_ms = 4000 + static_cast<std::int64_t>(uniform01(rng) * 8000);
      out.soft_labels.push_back(std::move(sj));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------------------------

SyntheticFixture build_synthetic_fixture() {
  constexpr int kClasses = 10;
  const auto pairs = all_pairs(kClasses);
  SyntheticFixture fx;
  auto pair_id = [](const ClassPair& p) { return "pair-" + std::to_string(p.first) + "-" + std::to_string(p.second); };
  auto endpoint = [](const ClassPair& p, char side) {
    return "img-" + std::to_string(p.first) + "-" + std::to_string(p.second) + "-" + side;
  };
  auto stimulus = [&](const ClassPair& p, double lf) {
    return StimulusInfo{pair_id(p), endpoint(p, 'a'), endpoint(p, 'b'), p.first, p.second, lf};
  };

  // Endpoint ambiguity: pair index mod 3 selects both-high, both-low or mixed endpoints.
  auto bucket_of = [](std::size_t idx) {
    return idx % 3 == 0 ? EntropyBucket::kBothHigh : (idx % 3 == 1 ? EntropyBucket::kBothLow : EntropyBucket::kMixed);
  };
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    std::vector<std::int64_t> sharp(kClasses, 0);
    std::vector<std::int64_t> spread(kClasses, 0);
    sharp[static_cast<std::size_t>(p.first)] = 50;
    spread[static_cast<std::size_t>(p.first)] = 25;
    spread[static_cast<std::size_t>(p.second)] = 25;
    auto bucket = bucket_of(i);
    fx.frequencies.set(endpoint(p, 'a'), bucket == EntropyBucket::kBothLow ? sharp : spread);
    auto sharp_b = sharp;
    std::swap(sharp_b[static_cast<std::size_t>(p.first)], sharp_b[static_cast<std::size_t>(p.second)]);
    fx.frequencies.set(endpoint(p, 'b'), bucket == EntropyBucket::kBothHigh ? spread : sharp_b);
  }

  // Grid-selection sessions. Centers are in tenths: planted pairs sit 0.3 from the middle in both
  // interfaces, decoys in only one, the rest at most 0.1 away.
  const std::set<std::size_t> planted{0, 5, 10, 15, 20, 25, 30, 35, 40};
  const std::set<std::size_t> construct_only{2, 7, 12, 17};
  const std::set<std::size_t> select_only{3, 8, 13};
  auto center = [&](std::size_t idx, bool construct) -> int {
    bool up = idx % 2 == 0;
    if (planted.count(idx)) {
      return up ? 8 : 2;
    }
    if (construct && construct_only.count(idx)) {
      return up ? 7 : 3;
    }
    if (!construct && select_only.count(idx)) {
      return up ? 7 : 3;
    }
    return 4 + static_cast<int>(idx % 3);
  };
  for (std::size_t idx : planted) {
    fx.flagged_across.push_back(pair_id(pairs[idx]));
    fx.flagged_construct.push_back(pair_id(pairs[idx]));
    fx.flagged_select.push_back(pair_id(pairs[idx]));
  }
  for (std::size_t idx : construct_only) {
    fx.flagged_construct.push_back(pair_id(pairs[idx]));
  }
  for (std::size_t idx : select_only) {
    fx.flagged_select.push_back(pair_id(pairs[idx]));
  }
  std::sort(fx.flagged_across.begin(), fx.flagged_across.end());
  std::sort(fx.flagged_construct.begin(), fx.flagged_construct.end());
  std::sort(fx.flagged_select.begin(), fx.flagged_select.end());

  const InterfaceKind selection_kinds[] = {InterfaceKind::kConstructStartLow, InterfaceKind::kConstructStartHigh,
                                           InterfaceKind::kSelectShuffled};
  // Repeat differences in tenths cycle 0,1,1,2 so every kind's median is 0.1.
  const int repeat_tenths[] = {0, 1, 1, 2};
  std::map<std::pair<InterfaceKind, std::size_t>, int> seen;
  for (int k = 0; k < 3; ++k) {
    InterfaceKind kind = selection_kinds[k];
    bool construct = kind != InterfaceKind::kSelectShuffled;
    double start = kind == InterfaceKind::kConstructStartLow ? 0.1 : (kind == InterfaceKind::kConstructStartHigh ? 0.9 : 0.5);
    for (int p = 0; p < 6; ++p) {
      std::string participant = "r" + std::to_string(p);
      std::string session = participant + "-" + to_string(kind);
      std::vector<int> chosen;
      std::vector<std::size_t> pair_of;
      for (std::uint32_t t = 0; t < 30; ++t) {
        std::size_t idx = (static_cast<std::size_t>(p % 3) * 15 + t) % pairs.size();
        int occurrence = seen[{kind, idx}]++;
        int tenths = center(idx, construct) + (occurrence % 2 == 0 ? 1 : -1);
        chosen.push_back(tenths);
        pair_of.push_back(idx);
        Judgment j;
        j.participant_id = participant;
        j.session_id = session;
        j.trial_index = t;
        j.kind = kind;
        j.stimulus = stimulus(pairs[idx], start);
        j.lambda_h = tenths / 10.0;
        j.response_ms = 3000 + static_cast<std::int64_t>(t) * 37;
        fx.entropy_counts[bucket_of(idx)]++;
        fx.records.emplace_back(std::move(j));
      }
      const std::uint32_t originals[] = {3, 11};
      for (int r = 0; r < 2; ++r) {
        std::uint32_t orig = originals[r];
        int d = repeat_tenths[(p * 2 + r) % 4];
        int tenths = chosen[orig] <= 5 ? chosen[orig] + d : chosen[orig] - d;
        Judgment j;
        j.participant_id = participant;
        j.session_id = session;
        j.trial_index = 30 + static_cast<std::uint32_t>(r);
        j.kind = kind;
        j.stimulus = stimulus(pairs[pair_of[orig]], start);
        j.lambda_h = tenths / 10.0;
        j.is_repeat = true;
        j.repeat_of = orig;
        j.response_ms = 2500;
        fx.records.emplace_back(std::move(j));
      }
      fx.repeat_lambda_median[kind] = 0.1;
    }
  }

  // Coefficient-inference sessions: 60 base trials plus repeats of trials 15 and 20 (1-based).
  const double grid[] = {0.1, 0.25, 0.5, 0.75, 0.9};
  fx.confidence_means = {{0.1, 0.79}, {0.25, 0.72}, {0.5, 0.63}};
  const double lambda_repeat[2][8] = {{0.02, 0.03, 0.04, 0.05, 0.06, 0.04, 0.01, 0.07},
                                      {0.04, 0.02, 0.05, 0.04, 0.03, 0.08, 0.04, 0.06}};
  const double confidence_repeat[2][8] = {{0.05, 0.02, 0.1, 0.05, 0.03, 0.07, 0.05, 0.08},
                                          {0.04, 0.05, 0.06, 0.01, 0.05, 0.09, 0.02, 0.05}};
  fx.repeat_lambda_median[InterfaceKind::kInferCoefficient] = 0.04;
  fx.repeat_confidence_median = 0.05;
  std::map<double, int> row_count;
  for (int q = 0; q < 8; ++q) {
    std::string participant = "q" + std::to_string(q);
    std::string session = participant + "-infer";
    std::vector<Judgment> base;
    for (std::uint32_t t = 0; t < 60; ++t) {
      std::size_t g = static_cast<std::size_t>(q) * 60 + t;
      std::size_t idx = (g * 7) % pairs.size();
      double lf = grid[g % 5];
      double fold = std::round(std::min(lf, 1.0 - lf) * 1e6) / 1e6;
      int occurrence = row_count[fold]++;
      LogisticParams truth{0.0, 1.0, 8.0 + 2.0 * static_cast<double>(idx % 5), 0.4 + 0.05 * static_cast<double>(idx % 5)};
      double lh = std::clamp(std::round((truth(lf) + 0.03 * std::sin(static_cast<double>(g))) * 100.0) / 100.0, 0.0, 1.0);
      Judgment j;
      j.participant_id = participant;
      j.session_id = session;
      j.trial_index = t;
      j.kind = InterfaceKind::kInferCoefficient;
      j.stimulus = stimulus(pairs[idx], lf);
      j.lambda_h = lh;
      j.confidence = fx.confidence_means.at(fold) + (occurrence % 2 == 0 ? 0.06 : -0.06);
      j.response_ms = 5000 + static_cast<std::int64_t>(g % 17) * 113;
      fx.entropy_counts[bucket_of(idx)]++;
      base.push_back(j);
      fx.records.emplace_back(std::move(j));
    }
    const std::uint32_t originals[] = {14, 19};
    for (int r = 0; r < 2; ++r) {
      Judgment j = base[originals[r]];
      double d = lambda_repeat[r][q];
      j.lambda_h = j.lambda_h + d <= 1.0 ? j.lambda_h + d : j.lambda_h - d;
      double c = confidence_repeat[r][q];
      j.confidence = *j.confidence + c <= 1.0 ? *j.confidence + c : *j.confidence - c;
      j.trial_index = 60 + static_cast<std::uint32_t>(r);
      j.is_repeat = true;
      j.repeat_of = originals[r];
      fx.records.emplace_back(std::move(j));
    }
  }

  // Soft-label sessions.
  const double soft_grid[] = {0.25, 0.5, 0.75};
  for (int s = 0; s < 4; ++s) {
    std::string participant = "s" + std::to_string(s);
    for (std::uint32_t t = 0; t < 25; ++t) {
      const auto& p = pairs[(static_cast<std::size_t>(s) * 25 + t) % pairs.size()];
      double lf = soft_grid[t % 3];
      SoftLabelJudgment sj;
      sj.participant_id = participant;
      sj.session_id = participant + "-soft";
      sj.trial_index = t;
      sj.stimulus = stimulus(p, lf);
      sj.top1_class = lf >= 0.5 ? p.first : p.second;
      sj.top1_prob = 60.0;
      sj.top2_class = lf >= 0.5 ? p.second : p.first;
      sj.top2_prob = 25.0;
      for (int k = 0; k < kClasses && sj.ruled_out.size() < 2; ++k) {
        if (k != p.first && k != p.second) {
          sj.ruled_out.insert(k);
        }
      }
      sj.response_ms = 7000;
      fx.records.emplace_back(std::move(sj));
    }
  }
  return fx;
}

}  // namespace hmix
