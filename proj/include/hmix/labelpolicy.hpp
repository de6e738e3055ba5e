#pragma once

// Label construction for mixed stimuli under each compared label scheme.

#include <span>
#include <string>
#include <vector>

#include "hmix/boundaryfit.hpp"
#include "hmix/hmixdata.hpp"
#include "hmix/mixcore.hpp"

namespace hmix {

// Confidence omega becomes an additive-smoothing strength alpha = a * b^omega.
struct SmoothingSpec {
  double a = 50.0;
  double b = 0.0001;

  double alpha(double omega) const;
  void validate() const;
};

enum class PolicyKind {
  kNoAug,
  kRandom,
  kUniform,
  kMixup,
  kRelabel,
  kRelabelOmegaAggregated,
  kRelabelOmegaSeparated,
  kTop2Clamp,
  kBoundaryFit,
};

std::string to_string(PolicyKind policy);
// Row label used in comparison tables ("Human-Fits" for boundary-fit, ...).
std::string display_name(PolicyKind policy);
PolicyKind parse_policy(std::string_view name);
// Policies that need elicited judgments for every mixed stimulus.
bool needs_judgments(PolicyKind policy);

// Two-hot: lambda on class_a, 1 - lambda on class_b.
LabelDistribution mixup_label(int class_a, int class_b, MixCoefficient lambda, int num_classes);

// (y_k + alpha/K) / (1 + alpha) with alpha = spec.alpha(omega).
LabelDistribution smooth_with_confidence(const LabelDistribution& label, double omega, const SmoothingSpec& spec);
// Same construction for an explicit alpha >= 0.
LabelDistribution smooth_additive(const LabelDistribution& label, double alpha);

// Top-2 Clamp: leftover mass 1 - p1 - p2 is spread by `redistribution` over the classes neither
// selected nor ruled out; the rest goes back to the top-1/top-2 classes in proportion p1:p2.
LabelDistribution clamp_soft_label(const SoftLabelJudgment& judgment, int num_classes, double redistribution = 0.1);

struct PolicyInputs {
  int num_classes = 10;
  std::span<const Judgment> judgments;
  std::span<const SoftLabelJudgment> soft_labels;
  const BoundaryMap* fits = nullptr;
  SmoothingSpec smoothing;
  CentralTendency central = CentralTendency::kMean;
  double redistribution = 0.1;
};

struct TrainingPair {
  ImageTensor input;
  LabelDistribution label;
};

// Labels a mixed stimulus. Most policies emit one pair; relabel-omega-separated emits one per judgment
// and no-aug emits none. Judgments for other stimuli are ignored; coefficients of judgments recorded
// in the opposite endpoint orientation are flipped. Throws ValidationError when a policy's inputs are
// missing.
std::vector<TrainingPair> build_training_label(PolicyKind policy, const MixedStimulus& stimulus,
                                               const PolicyInputs& inputs, Rng& rng);

// Label only, for callers that keep the image elsewhere.
std::vector<LabelDistribution> build_labels(PolicyKind policy, const MixedStimulus& stimulus,
                                            const PolicyInputs& inputs, Rng& rng);

}  // namespace hmix
