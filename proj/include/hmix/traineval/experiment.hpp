#pragma once

// Training runs, multi-seed comparisons and smoothing hyperparameter search.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "hmix/boundaryfit.hpp"
#include "hmix/errors.hpp"
#include "hmix/labelpolicy.hpp"
#include "hmix/mixcore.hpp"
#include "hmix/traineval/dataset.hpp"
#include "hmix/traineval/metrics.hpp"
#include "hmix/traineval/model.hpp"
#include "hmix/traineval/simulate.hpp"

namespace hmix {

inline constexpr std::string_view kTrainConfigVersion = "hmix-train-config-v1";
inline constexpr std::string_view kReportVersion = "hmix-report-v1";

// Raised when training diverges.
class TrainingError : public Error {
 public:
  using Error::Error;
};

enum class MixupMode { kFiniteAugmentingSet, kPerBatchSampling };
std::string to_string(MixupMode mode);
MixupMode parse_mixup_mode(std::string_view name);

enum class LrSchedule { kConstant, kCosine };

// How the random-label baseline is drawn in the finite set.
enum class RandomLabelMode { kPerEpoch, kFixed };

struct TrainConfig {
  std::string name;  // row label; defaults to the policy's display name
  PolicyKind policy = PolicyKind::kNoAug;
  MixupMode mode = MixupMode::kFiniteAugmentingSet;
  CoefficientDistribution coefficients = BetaDistribution{1.0, 1.0};
  std::vector<int> hidden{64};
  int epochs = 20;
  int batch_size = 64;
  double learning_rate = 0.02;
  // Cosine decays from learning_rate to 0 over all steps.
  LrSchedule lr_schedule = LrSchedule::kConstant;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  SmoothingSpec smoothing;
  CentralTendency central = CentralTendency::kMean;
  double redistribution = 0.1;
  RandomLabelMode random_labels = RandomLabelMode::kPerEpoch;
  double fgsm_epsilon = 8.0 / 255.0;
  int calibration_bins = 15;

  void validate() const;
  std::string row_name() const;
};

struct DataSpec {
  std::string source = "shapes";  // "shapes" or "cifar10"
  std::uint64_t seed = 1;
  // shapes
  std::size_t train_size = 2000;
  std::size_t eval_size = 1000;
  std::size_t endpoint_pool_size = 1000;
  ShapesOptions shapes;
  // cifar10
  std::vector<std::string> cifar_train_files;
  std::size_t train_limit = 7000;
  std::string cifar_eval_file;
  std::size_t eval_offset = 0;
  std::size_t eval_limit = 3000;
  std::string eval_frequencies;  // CSV frequency table keyed "<prefix>-<record index>"
  std::string endpoint_file;     // images referenced by the H-Mix file's endpoint ids
  std::string endpoint_prefix = "test";
  // finite augmenting set
  std::size_t augment_size = 900;
  std::string hmix_file;
  std::string fits_file;
  // Simulated participants when no H-Mix file is given.
  std::optional<SimulationSpec> simulation;
  // Fit per-pair boundaries from the judgments when no fits file is given.
  bool fit_boundaries = true;

  void validate() const;
};

struct ExperimentConfig {
  DataSpec data;
  std::vector<TrainConfig> rows;
  std::size_t workers = 1;
};

// Parses "hmix-train-config-v1" JSON. Rows inherit the "defaults" object. Relative file paths are
// resolved against `base_dir`. Throws SchemaError on a version mismatch and ValidationError on bad values.
ExperimentConfig parse_experiment_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
nlohmann::json to_json(const TrainConfig& config);
nlohmann::json to_json(const DataSpec& spec);
// Hex FNV-1a of the canonical JSON of the data spec and the row.
std::string config_hash(const DataSpec& data, const TrainConfig& row);

struct ExperimentData {
  Dataset train;
  Dataset eval;
  std::vector<MixedStimulus> augmenting;
  std::vector<Judgment> judgments;
  std::vector<SoftLabelJudgment> soft_labels;
  BoundaryMap fits;
  std::map<ClassPair, LogisticParams> true_boundaries;  // simulation only
  LabelFrequencyTable eval_frequencies;
};

ExperimentData prepare_data(const DataSpec& spec);

struct RunMetrics {
  double ce = 0.0;
  std::size_t ce_clamped = 0;
  double fgsm_err = 0.0;  // robust error, percent
  double calib_rms = 0.0;
  double ece = 0.0;
  double accuracy = 0.0;
};

struct TrainResult {
  Mlp model;
  std::vector<double> epoch_loss;
  std::vector<double> sampled_lambdas;  // per-batch coefficients in per-batch mode
};

// One seed. Deterministic for a given config, data and seed.
TrainResult train(const TrainConfig& config, const ExperimentData& data, std::uint64_t seed);
RunMetrics evaluate(const Mlp& model, const Dataset& eval, const TrainConfig& config);

struct RowReport {
  std::string name;
  PolicyKind policy = PolicyKind::kNoAug;
  std::string config_hash;
  std::vector<std::uint64_t> seeds;       // completed seeds, in config order
  std::vector<RunMetrics> per_seed;       // aligned with seeds
  std::vector<std::pair<std::uint64_t, std::string>> failures;
  SeedSummary ce;
  SeedSummary fgsm_err;
  SeedSummary calib_rms;
  SeedSummary ece;
  SeedSummary accuracy;
};

struct ComparisonReport {
  std::vector<RowReport> rows;
};

// Runs rows x seeds on up to `workers` threads; a failing run is recorded and the rest continue.
ComparisonReport run_comparison(const std::vector<TrainConfig>& rows, const DataSpec& data_spec,
                                const ExperimentData& data, std::size_t workers);

nlohmann::json to_json(const ComparisonReport& report);
// Tab-separated table: row, CE, FGSM error %, calibration RMS, ECE, accuracy (mean and CI half-width).
std::string format_table(const ComparisonReport& report);

struct GridEntry {
  double a = 0.0;
  double b = 0.0;
  double score = 0.0;
};

struct GridSearchResult {
  SmoothingSpec best;
  double best_score = 0.0;
  std::vector<GridEntry> entries;  // a-major grid order
};

// Minimizes `score` over the grid; ties keep the first pair in a-major order.
GridSearchResult grid_search_smoothing(std::span<const double> a_grid, std::span<const double> b_grid,
                                       const std::function<double(const SmoothingSpec&)>& score);

// Score = held-out soft CE of a model trained with `config` (first seed) under the candidate smoothing.
std::function<double(const SmoothingSpec&)> held_out_scorer(const TrainConfig& config, const ExperimentData& data,
                                                            const Dataset& held_out);

std::vector<double> default_a_grid();
std::vector<double> default_b_grid();

}  // namespace hmix
