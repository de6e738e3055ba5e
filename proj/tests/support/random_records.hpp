#pragma once

#include <string>
#include <vector>

#include "hmix/hmixdata.hpp"
#include "hmix/mixcore.hpp"

namespace hmix::fixtures {

inline std::string random_id(Rng& rng, const std::string& prefix) {
  static constexpr char kChars[] = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789._:-";
  std::string id = prefix;
  int len = 1 + static_cast<int>(uniform01(rng) * 8);
  for (int i = 0; i < len; ++i) {
    id += kChars[static_cast<std::size_t>(uniform01(rng) * (sizeof(kChars) - 1))];
  }
  return id;
}

// Unrounded doubles, so the round trip exercises shortest-decimal formatting.
inline StimulusInfo random_stimulus(Rng& rng) {
  StimulusInfo s;
  s.pair_id = random_id(rng, "p");
  s.endpoint_a = random_id(rng, "a");
  s.endpoint_b = random_id(rng, "b");
  s.class_a = static_cast<int>(uniform01(rng) * 10);
  s.class_b = (s.class_a + 1 + static_cast<int>(uniform01(rng) * 9)) % 10;
  s.lambda_f = uniform01(rng) < 0.2 ? 0.1 * static_cast<int>(uniform01(rng) * 11) : uniform01(rng);
  return s;
}

inline Record random_record(Rng& rng, std::uint32_t trial) {
  if (uniform01(rng) < 0.7) {
    Judgment j;
    j.participant_id = random_id(rng, "u");
    j.session_id = random_id(rng, "s");
    j.trial_index = trial;
    j.kind = static_cast<InterfaceKind>(static_cast<int>(uniform01(rng) * 4));
    j.stimulus = random_stimulus(rng);
    j.lambda_h = uniform01(rng);
    if (!is_selection_kind(j.kind)) {
      j.confidence = uniform01(rng);
    }
    if (trial > 0 && uniform01(rng) < 0.1) {
      j.is_repeat = true;
      j.repeat_of = static_cast<std::uint32_t>(uniform01(rng) * trial);
    }
    j.response_ms = static_cast<std::int64_t>(uniform01(rng) * 1e7);
    return j;
  }
  SoftLabelJudgment s;
  s.participant_id = random_id(rng, "u");
  s.session_id = random_id(rng, "s");
  s.trial_index = trial;
  s.stimulus = random_stimulus(rng);
  s.top1_class = static_cast<int>(uniform01(rng) * 10);
  s.top1_prob = uniform01(rng) * 100.0;
  if (uniform01(rng) < 0.7) {
    s.top2_class = (s.top1_class + 1 + static_cast<int>(uniform01(rng) * 9)) % 10;
    s.top2_prob = uniform01(rng) * (100.0 - s.top1_prob);
  }
  for (int c = 0; c < 10; ++c) {
    bool selected = c == s.top1_class || (s.top2_class && c == *s.top2_class);
    if (!selected && uniform01(rng) < 0.3) {
      s.ruled_out.insert(c);
    }
  }
  s.response_ms = static_cast<std::int64_t>(uniform01(rng) * 1e7);
  return s;
}

inline std::vector<Record> random_records(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Record> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(random_record(rng, static_cast<std::uint32_t>(i)));
  }
  return out;
}

}  // namespace hmix::fixtures
