#pragma once

// Simulated participants for desk-scale experiments, and the synthetic H-Mix fixture with planted
// statistics used by the analysis checks.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "hmix/boundaryfit.hpp"
#include "hmix/hmixdata.hpp"
#include "hmix/mixcore.hpp"
#include "hmix/traineval/dataset.hpp"

namespace hmix {

// Mixed stimuli over class pairs drawn from an endpoint pool. Pairs cycle over all unordered class
// pairs; coefficients cycle over `grid`.
std::vector<MixedStimulus> build_augmenting_set(const Dataset& endpoints, std::size_t count, std::uint64_t seed,
                                                std::span<const MixCoefficient> grid);

struct SimulationSpec {
  std::uint64_t seed = 17;
  int judgments_per_stimulus = 2;
  int participants = 40;
  // Per class pair ground-truth boundary l(x) = 1 / (1 + exp(-k (x - m))).
  double steepness_min = 6.0;
  double steepness_max = 16.0;
  double midpoint_min = 0.35;
  double midpoint_max = 0.65;
  // Inference noise sd is lambda_noise_sd * (1 + low_confidence_gain * (1 - omega)).
  double lambda_noise_sd = 0.05;
  double low_confidence_gain = 2.0;
  // Mean confidence by folded coefficient min(l, 1 - l); linear in between.
  std::map<double, double> confidence_means{{0.1, 0.79}, {0.25, 0.72}, {0.5, 0.63}};
  double confidence_noise_sd = 0.12;
  double slider_step = 0.01;
  // Also emit one soft-label report per stimulus.
  bool soft_labels = true;
};

void validate(const SimulationSpec& spec);
double expected_confidence(const SimulationSpec& spec, double lambda_f);

struct SimulatedHumans {
  std::vector<Judgment> judgments;
  std::vector<SoftLabelJudgment> soft_labels;
  std::map<ClassPair, LogisticParams> boundaries;  // lower class first
};

SimulatedHumans simulate_judgments(std::span<const MixedStimulus> stimuli, int num_classes,
                                   const SimulationSpec& spec);

// Analysis fixture with planted statistics.
struct SyntheticFixture {
  std::vector<Record> records;
  LabelFrequencyTable frequencies;
  // folded coefficient -> mean confidence over non-repeat inference judgments
  std::map<double, double> confidence_means;
  std::vector<std::string> flagged_across;     // sorted pair ids
  std::vector<std::string> flagged_construct;  // sorted
  std::vector<std::string> flagged_select;     // sorted
  std::map<InterfaceKind, double> repeat_lambda_median;
  double repeat_confidence_median = 0.0;
  // Entropy bucket -> number of inference judgments
  std::map<EntropyBucket, std::size_t> entropy_counts;
};

SyntheticFixture build_synthetic_fixture();

}  // namespace hmix
