#include "hmix/labelpolicy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hmix/errors.hpp"
#include "hmix/text.hpp"

namespace hmix {

namespace {

struct PolicyName {
  PolicyKind kind;
  std::string_view name;
  std::string_view display;
};

constexpr PolicyName kPolicyNames[] = {
    {PolicyKind::kNoAug, "no-aug", "No Aug"},
    {PolicyKind::kRandom, "random", "Random"},
    {PolicyKind::kUniform, "uniform", "Uniform"},
    {PolicyKind::kMixup, "mixup", "mixup"},
    {PolicyKind::kRelabel, "relabel", "Relabel"},
    {PolicyKind::kRelabelOmegaAggregated, "relabel-omega-aggregated", "Relabel & omega"},
    {PolicyKind::kRelabelOmegaSeparated, "relabel-omega-separated", "Separated with omega"},
    {PolicyKind::kTop2Clamp, "top2clamp", "Top-2 Clamp"},
    {PolicyKind::kBoundaryFit, "boundary-fit", "Human-Fits"},
};

constexpr double kLambdaMatchTolerance = 1e-9;

// A judgment's coefficients re-oriented onto the stimulus' endpoint a.
struct Oriented {
  double lambda_h;
  std::optional<double> confidence;
};

std::optional<bool> orientation(const StimulusInfo& info, const MixedStimulus& stimulus) {
  if (info.pair_id != stimulus.pair_id) {
    return std::nullopt;
  }
  double lf = stimulus.lambda_f.value();
  if (info.endpoint_a == stimulus.endpoint_a_id && info.class_a == stimulus.class_a &&
      std::abs(info.lambda_f - lf) <= kLambdaMatchTolerance) {
    return false;
  }
  if (info.endpoint_a == stimulus.endpoint_b_id && info.class_a == stimulus.class_b &&
      std::abs((1.0 - info.lambda_f) - lf) <= kLambdaMatchTolerance) {
    return true;
  }
  return std::nullopt;
}

std::vector<Oriented> matching_judgments(const MixedStimulus& stimulus, std::span<const Judgment> judgments) {
  std::vector<Oriented> out;
  for (const auto& j : judgments) {
    if (j.kind != InterfaceKind::kInferCoefficient) {
      continue;
    }
    auto flipped = orientation(j.stimulus, stimulus);
    if (!flipped) {
      continue;
    }
    out.push_back({*flipped ? 1.0 - j.lambda_h : j.lambda_h, j.confidence});
  }
  return out;
}

double central_value(std::vector<double> values, CentralTendency central) {
  std::sort(values.begin(), values.end());
  if (central == CentralTendency::kMedian) {
    return median(values);
  }
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

void require_classes(int class_a, int class_b, int num_classes) {
  if (num_classes <= 0) {
    throw ValidationError("K", "class count must be positive");
  }
  if (class_a < 0 || class_a >= num_classes) {
    throw ValidationError("class_a", "class " + std::to_string(class_a) + " out of range");
  }
  if (class_b < 0 || class_b >= num_classes) {
    throw ValidationError("class_b", "class " + std::to_string(class_b) + " out of range");
  }
  if (class_a == class_b) {
    throw ValidationError("class_b", "endpoint classes must differ");
  }
}

}  // namespace

double SmoothingSpec::alpha(double omega) const {
  return a * std::pow(b, omega);
}

void SmoothingSpec::validate() const {
  if (!(a > 0.0) || !std::isfinite(a)) {
    throw ValidationError("a", "smoothing scale must be positive");
  }
  if (!(b > 0.0 && b < 1.0)) {
    throw ValidationError("b", "smoothing base must lie in (0,1)");
  }
}

std::string to_string(PolicyKind policy) {
  for (const auto& p : kPolicyNames) {
    if (p.kind == policy) {
      return std::string(p.name);
    }
  }
  return "unknown";
}

std::string display_name(PolicyKind policy) {
  for (const auto& p : kPolicyNames) {
    if (p.kind == policy) {
      return std::string(p.display);
    }
  }
  return "unknown";
}

PolicyKind parse_policy(std::string_view name) {
  for (const auto& p : kPolicyNames) {
    if (p.name == name) {
      return p.kind;
    }
  }
  throw ValidationError("policy", "unknown policy '" + std::string(name) + "'");
}

bool needs_judgments(PolicyKind policy) {
  return policy == PolicyKind::kRelabel || policy == PolicyKind::kRelabelOmegaAggregated ||
         policy == PolicyKind::kRelabelOmegaSeparated || policy == PolicyKind::kTop2Clamp;
}

LabelDistribution mixup_label(int class_a, int class_b, MixCoefficient lambda, int num_classes) {
  require_classes(class_a, class_b, num_classes);
  std::vector<double> probs(static_cast<std::size_t>(num_classes), 0.0);
  probs[static_cast<std::size_t>(class_a)] = lambda.value();
  probs[static_cast<std::size_t>(class_b)] = lambda.complement_value();
  return LabelDistribution(std::move(probs));
}

LabelDistribution smooth_additive(const LabelDistribution& label, double alpha) {
  if (!(alpha >= 0.0)) {
    throw ValidationError("alpha", "smoothing strength must be nonnegative");
  }
  const double k = label.num_classes();
  std::vector<double> out(label.probs().begin(), label.probs().end());
  if (std::isinf(alpha)) {
    std::fill(out.begin(), out.end(), 1.0 / k);
    return LabelDistribution(std::move(out));
  }
  for (double& p : out) {
    p = (p + alpha / k) / (1.0 + alpha);
  }
  return LabelDistribution(std::move(out));
}

LabelDistribution smooth_with_confidence(const LabelDistribution& label, double omega, const SmoothingSpec& spec) {
  if (!(omega >= 0.0 && omega <= 1.0)) {
    throw ValidationError("omega", "confidence must lie in [0,1], got " + format_decimal(omega));
  }
  spec.validate();
  return smooth_additive(label, spec.alpha(omega));
}

LabelDistribution clamp_soft_label(const SoftLabelJudgment& judgment, int num_classes, double redistribution) {
  if (judgment.top1_prob + judgment.top2_prob > 100.0) {
    throw ValidationError("top2_prob", "top-1 and top-2 probabilities exceed 100");
  }
  validate(judgment);
  if (!(redistribution >= 0.0 && redistribution <= 1.0)) {
    throw ValidationError("redistribution", "must lie in [0,1]");
  }
  auto in_range = [&](int c) { return c >= 0 && c < num_classes; };
  if (!in_range(judgment.top1_class) || (judgment.top2_class && !in_range(*judgment.top2_class))) {
    throw ValidationError("top1_class", "class out of range for K=" + std::to_string(num_classes));
  }

  const double p1 = judgment.top1_prob / 100.0;
  const double p2 = judgment.top2_class ? judgment.top2_prob / 100.0 : 0.0;
  const double leftover = std::max(0.0, 1.0 - p1 - p2);

  std::vector<int> possible;
  for (int c = 0; c < num_classes; ++c) {
    bool selected = c == judgment.top1_class || (judgment.top2_class && c == *judgment.top2_class);
    if (!selected && !judgment.ruled_out.contains(c)) {
      possible.push_back(c);
    }
  }

  std::vector<double> probs(static_cast<std::size_t>(num_classes), 0.0);
  double spread = possible.empty() ? 0.0 : leftover * redistribution;
  for (int c : possible) {
    probs[static_cast<std::size_t>(c)] = spread / static_cast<double>(possible.size());
  }
  double remainder = leftover - spread;
  double top_total = p1 + p2;
  double share1 = 1.0;
  if (judgment.top2_class) {
    share1 = top_total > 0.0 ? p1 / top_total : 0.5;
  }
  probs[static_cast<std::size_t>(judgment.top1_class)] = p1 + remainder * share1;
  if (judgment.top2_class) {
    probs[static_cast<std::size_t>(*judgment.top2_class)] = p2 + remainder * (1.0 - share1);
  }
  return LabelDistribution::normalized(std::move(probs));
}

std::vector<LabelDistribution> build_labels(PolicyKind policy, const MixedStimulus& stimulus,
                                            const PolicyInputs& inputs, Rng& rng) {
  const int k = inputs.num_classes;
  require_classes(stimulus.class_a, stimulus.class_b, k);
  switch (policy) {
    case PolicyKind::kNoAug:
      return {};
    case PolicyKind::kRandom: {
      auto cls = static_cast<int>(uniform01(rng) * k);
      return {LabelDistribution::one_hot(std::min(cls, k - 1), k)};
    }
    case PolicyKind::kUniform:
      return {LabelDistribution::uniform(k)};
    case PolicyKind::kMixup:
      return {mixup_label(stimulus.class_a, stimulus.class_b, stimulus.lambda_f, k)};
    case PolicyKind::kBoundaryFit: {
      if (inputs.fits == nullptr) {
        throw ValidationError("fits", "boundary-fit policy needs a boundary-fit map");
      }
      auto mapped = apply_boundary(*inputs.fits, stimulus.class_a, stimulus.class_b, stimulus.lambda_f);
      if (!mapped) {
        throw ValidationError("fits", "boundary-fit policy has no fit for classes " +
                                          std::to_string(stimulus.class_a) + "-" + std::to_string(stimulus.class_b));
      }
      return {mixup_label(stimulus.class_a, stimulus.class_b, *mapped, k)};
    }
    case PolicyKind::kTop2Clamp: {
      std::vector<LabelDistribution> labels;
      for (const auto& s : inputs.soft_labels) {
        if (orientation(s.stimulus, stimulus)) {
          labels.push_back(clamp_soft_label(s, k, inputs.redistribution));
        }
      }
      if (labels.empty()) {
        throw ValidationError("soft_labels", "top2clamp policy needs a soft-label report for " +
                                                 stimulus.stimulus_id());
      }
      std::vector<double> avg(static_cast<std::size_t>(k), 0.0);
      for (const auto& l : labels) {
        for (int c = 0; c < k; ++c) {
          avg[static_cast<std::size_t>(c)] += l[c] / static_cast<double>(labels.size());
        }
      }
      return {LabelDistribution::normalized(std::move(avg))};
    }
    case PolicyKind::kRelabel:
    case PolicyKind::kRelabelOmegaAggregated:
    case PolicyKind::kRelabelOmegaSeparated: {
      auto matched = matching_judgments(stimulus, inputs.judgments);
      if (matched.empty()) {
        throw ValidationError("judgments", to_string(policy) + " policy needs coefficient judgments for " +
                                               stimulus.stimulus_id());
      }
      if (policy == PolicyKind::kRelabelOmegaSeparated) {
        std::vector<LabelDistribution> labels;
        for (const auto& m : matched) {
          if (!m.confidence) {
            throw ValidationError("confidence", "relabel-omega-separated needs a confidence per judgment");
          }
          labels.push_back(smooth_with_confidence(
              mixup_label(stimulus.class_a, stimulus.class_b, MixCoefficient(m.lambda_h), k), *m.confidence,
              inputs.smoothing));
        }
        return labels;
      }
      std::vector<double> lambdas;
      std::vector<double> omegas;
      for (const auto& m : matched) {
        lambdas.push_back(m.lambda_h);
        if (m.confidence) {
          omegas.push_back(*m.confidence);
        }
      }
      auto two_hot = mixup_label(stimulus.class_a, stimulus.class_b,
                                 MixCoefficient(std::clamp(central_value(lambdas, inputs.central), 0.0, 1.0)), k);
      if (policy == PolicyKind::kRelabel) {
        return {two_hot};
      }
      if (omegas.empty()) {
        throw ValidationError("confidence", "relabel-omega-aggregated needs confidences");
      }
      return {smooth_with_confidence(two_hot, std::clamp(central_value(omegas, inputs.central), 0.0, 1.0),
                                     inputs.smoothing)};
    }
  }
  throw ValidationError("policy", "unhandled policy");
}

std::vector<TrainingPair> build_training_label(PolicyKind policy, const MixedStimulus& stimulus,
                                               const PolicyInputs& inputs, Rng& rng) {
  std::vector<TrainingPair> out;
  for (auto& label : build_labels(policy, stimulus, inputs, rng)) {
    out.push_back({stimulus.mixed_image, std::move(label)});
  }
  return out;
}

}  // namespace hmix
