#include "hmix/traineval/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "hmix/text.hpp"

namespace hmix {

using nlohmann::json;

std::string to_string(MixupMode mode) {
  return mode == MixupMode::kFiniteAugmentingSet ? "finite-augmenting-set" : "per-batch-sampling";
}

MixupMode parse_mixup_mode(std::string_view name) {
  if (name == "finite-augmenting-set") {
    return MixupMode::kFiniteAugmentingSet;
  }
  if (name == "per-batch-sampling") {
    return MixupMode::kPerBatchSampling;
  }
  throw ValidationError("mode", "unknown mixup mode '" + std::string(name) + "'");
}

namespace {

bool per_batch_capable(PolicyKind p) {
  switch (p) {
    case PolicyKind::kNoAug:
    case PolicyKind::kRandom:
    case PolicyKind::kUniform:
    case PolicyKind::kMixup:
    case PolicyKind::kBoundaryFit:
      return true;
    default:
      return false;
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (seeds.empty()) {
    throw ValidationError("seeds", "seed list must not be empty");
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ValidationError("learning_rate", "must be positive");
  }
  if (epochs <= 0) {
    throw ValidationError("epochs", "must be positive");
  }
  if (batch_size <= 0) {
    throw ValidationError("batch_size", "must be positive");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ValidationError("momentum", "must lie in [0,1)");
  }
  if (!(weight_decay >= 0.0)) {
    throw ValidationError("weight_decay", "must be nonnegative");
  }
  if (!(fgsm_epsilon >= 0.0 && fgsm_epsilon <= 1.0)) {
    throw ValidationError("fgsm_epsilon", "must lie in [0,1]");
  }
  if (calibration_bins <= 0) {
    throw ValidationError("calibration_bins", "must be positive");
  }
  if (!(redistribution >= 0.0 && redistribution <= 1.0)) {
    throw ValidationError("redistribution", "must lie in [0,1]");
  }
  for (int w : hidden) {
    if (w <= 0) {
      throw ValidationError("hidden", "layer widths must be positive");
    }
  }
  smoothing.validate();
  hmix::validate(coefficients);
  if (mode == MixupMode::kPerBatchSampling && !per_batch_capable(policy)) {
    throw ValidationError("policy", to_string(policy) +
                                        " labels need judgments for each stimulus and cannot run with per-batch sampling");
  }
}

std::string TrainConfig::row_name() const {
  return name.empty() ? display_name(policy) : name;
}

void DataSpec::validate() const {
  if (source == "shapes") {
    if (train_size == 0 || eval_size == 0) {
      throw ValidationError("data", "train_size and eval_size must be positive");
    }
  } else if (source == "cifar10") {
    if (cifar_train_files.empty() || cifar_eval_file.empty()) {
      throw ValidationError("data", "cifar10 source needs train_files and eval_file");
    }
  } else {
    throw ValidationError("source", "unknown data source '" + source + "'");
  }
  if (simulation) {
    hmix::validate(*simulation);
  }
}

// ---------------------------------------------------------------------------------------------
// Config JSON

namespace {

void check_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!j.is_object()) {
    throw ValidationError(where, "expected an object");
  }
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ValidationError(where, "unknown key '" + key + "'");
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) {
    return;
  }
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(key, std::string("bad value: ") + e.what());
  }
}

std::string resolve(const std::string& file, const std::filesystem::path& base) {
  if (file.empty() || base.empty() || std::filesystem::path(file).is_absolute()) {
    return file;
  }
  return (base / file).lexically_normal().string();
}

json coefficients_json(const CoefficientDistribution& d) {
  if (const auto* beta = std::get_if<BetaDistribution>(&d)) {
    return {{"beta", {beta->alpha, beta->beta}}};
  }
  const auto& disc = std::get<DiscreteDistribution>(d);
  return {{"values", disc.values}, {"weights", disc.weights}};
}

CoefficientDistribution parse_coefficients(const json& j) {
  check_keys(j, {"beta", "values", "weights"}, "coefficients");
  if (j.contains("beta")) {
    auto p = j.at("beta").get<std::vector<double>>();
    if (p.size() != 2) {
      throw ValidationError("coefficients", "beta needs [alpha, beta]");
    }
    return BetaDistribution{p[0], p[1]};
  }
  DiscreteDistribution d;
  read(j, "values", d.values);
  read(j, "weights", d.weights);
  return d;
}

SimulationSpec parse_simulation(const json& j) {
  check_keys(j,
             {"seed", "judgments_per_stimulus", "participants", "steepness", "midpoint", "lambda_noise_sd",
              "low_confidence_gain", "confidence_means", "confidence_noise_sd", "slider_step", "soft_labels"},
             "simulation");
  SimulationSpec s;
  read(j, "seed", s.seed);
  read(j, "judgments_per_stimulus", s.judgments_per_stimulus);
  read(j, "participants", s.participants);
  if (j.contains("steepness")) {
    auto r = j.at("steepness").get<std::vector<double>>();
    if (r.size() != 2) {
      throw ValidationError("steepness", "expected [min, max]");
    }
    s.steepness_min = r[0];
    s.steepness_max = r[1];
  }
  if (j.contains("midpoint")) {
    auto r = j.at("midpoint").get<std::vector<double>>();
    if (r.size() != 2) {
      throw ValidationError("midpoint", "expected [min, max]");
    }
    s.midpoint_min = r[0];
    s.midpoint_max = r[1];
  }
  read(j, "lambda_noise_sd", s.lambda_noise_sd);
  read(j, "low_confidence_gain", s.low_confidence_gain);
  if (j.contains("confidence_means")) {
    s.confidence_means.clear();
    for (const auto& [key, value] : j.at("confidence_means").items()) {
      auto fold = parse_decimal(key);
      if (!fold) {
        throw ValidationError("confidence_means", "key '" + key + "' is not a number");
      }
      s.confidence_means[*fold] = value.get<double>();
    }
  }
  read(j, "confidence_noise_sd", s.confidence_noise_sd);
  read(j, "slider_step", s.slider_step);
  read(j, "soft_labels", s.soft_labels);
  return s;
}

json simulation_json(const SimulationSpec& s) {
  json means = json::object();
  for (const auto& [fold, mean] : s.confidence_means) {
    means[format_decimal(fold)] = mean;
  }
  return {{"seed", s.seed},
          {"judgments_per_stimulus", s.judgments_per_stimulus},
          {"participants", s.participants},
          {"steepness", {s.steepness_min, s.steepness_max}},
          {"midpoint", {s.midpoint_min, s.midpoint_max}},
          {"lambda_noise_sd", s.lambda_noise_sd},
          {"low_confidence_gain", s.low_confidence_gain},
          {"confidence_means", means},
          {"confidence_noise_sd", s.confidence_noise_sd},
          {"slider_step", s.slider_step},
          {"soft_labels", s.soft_labels}};
}

DataSpec parse_data(const json& j, const std::filesystem::path& base) {
  check_keys(j,
             {"source", "seed", "train_size", "eval_size", "endpoint_pool_size", "shapes", "cifar10", "augment_size",
              "hmix_file", "fits_file", "simulation", "fit_boundaries"},
             "data");
  DataSpec d;
  read(j, "source", d.source);
  read(j, "seed", d.seed);
  read(j, "train_size", d.train_size);
  read(j, "eval_size", d.eval_size);
  read(j, "endpoint_pool_size", d.endpoint_pool_size);
  if (j.contains("shapes")) {
    const auto& s = j.at("shapes");
    check_keys(s, {"noise_sd", "max_ambiguity", "annotators", "annotator_noise", "ambiguous_fraction"}, "shapes");
    read(s, "noise_sd", d.shapes.noise_sd);
    read(s, "max_ambiguity", d.shapes.max_ambiguity);
    read(s, "annotators", d.shapes.annotators);
    read(s, "annotator_noise", d.shapes.annotator_noise);
    read(s, "ambiguous_fraction", d.shapes.ambiguous_fraction);
  }
  if (j.contains("cifar10")) {
    const auto& c = j.at("cifar10");
    check_keys(c,
               {"train_files", "train_limit", "eval_file", "eval_offset", "eval_limit", "eval_frequencies",
                "endpoint_file", "endpoint_prefix"},
               "cifar10");
    read(c, "train_files", d.cifar_train_files);
    for (auto& f : d.cifar_train_files) {
      f = resolve(f, base);
    }
    read(c, "train_limit", d.train_limit);
    read(c, "eval_file", d.cifar_eval_file);
    d.cifar_eval_file = resolve(d.cifar_eval_file, base);
    read(c, "eval_offset", d.eval_offset);
    read(c, "eval_limit", d.eval_limit);
    read(c, "eval_frequencies", d.eval_frequencies);
    d.eval_frequencies = resolve(d.eval_frequencies, base);
    read(c, "endpoint_file", d.endpoint_file);
    d.endpoint_file = resolve(d.endpoint_file, base);
    read(c, "endpoint_prefix", d.endpoint_prefix);
  }
  read(j, "augment_size", d.augment_size);
  read(j, "hmix_file", d.hmix_file);
  d.hmix_file = resolve(d.hmix_file, base);
  read(j, "fits_file", d.fits_file);
  d.fits_file = resolve(d.fits_file, base);
  if (j.contains("simulation")) {
    d.simulation = parse_simulation(j.at("simulation"));
  }
  read(j, "fit_boundaries", d.fit_boundaries);
  d.validate();
  return d;
}

TrainConfig parse_row(const json& j) {
  check_keys(j,
             {"name", "policy", "mode", "coefficients", "hidden", "epochs", "batch_size", "learning_rate", "momentum",
              "weight_decay", "lr_schedule", "seeds", "smoothing", "central", "redistribution", "random_labels", "fgsm_epsilon",
              "calibration_bins"},
             "row");
  TrainConfig c;
  read(j, "name", c.name);
  if (j.contains("policy")) {
    c.policy = parse_policy(j.at("policy").get<std::string>());
  }
  if (j.contains("mode")) {
    c.mode = parse_mixup_mode(j.at("mode").get<std::string>());
  }
  if (j.contains("coefficients")) {
    c.coefficients = parse_coefficients(j.at("coefficients"));
  }
  read(j, "hidden", c.hidden);
  read(j, "epochs", c.epochs);
  read(j, "batch_size", c.batch_size);
  read(j, "learning_rate", c.learning_rate);
  read(j, "momentum", c.momentum);
  read(j, "weight_decay", c.weight_decay);
  if (j.contains("lr_schedule")) {
    auto v = j.at("lr_schedule").get<std::string>();
    if (v == "constant") {
      c.lr_schedule = LrSchedule::kConstant;
    } else if (v == "cosine") {
      c.lr_schedule = LrSchedule::kCosine;
    } else {
      throw ValidationError("lr_schedule", "expected constant or cosine");
    }
  }
  read(j, "seeds", c.seeds);
  if (j.contains("smoothing")) {
    const auto& s = j.at("smoothing");
    check_keys(s, {"a", "b"}, "smoothing");
    read(s, "a", c.smoothing.a);
    read(s, "b", c.smoothing.b);
  }
  if (j.contains("central")) {
    auto v = j.at("central").get<std::string>();
    if (v == "mean") {
      c.central = CentralTendency::kMean;
    } else if (v == "median") {
      c.central = CentralTendency::kMedian;
    } else {
      throw ValidationError("central", "expected mean or median");
    }
  }
  read(j, "redistribution", c.redistribution);
  if (j.contains("random_labels")) {
    auto v = j.at("random_labels").get<std::string>();
    if (v == "per-epoch") {
      c.random_labels = RandomLabelMode::kPerEpoch;
    } else if (v == "fixed") {
      c.random_labels = RandomLabelMode::kFixed;
    } else {
      throw ValidationError("random_labels", "expected per-epoch or fixed");
    }
  }
  read(j, "fgsm_epsilon", c.fgsm_epsilon);
  read(j, "calibration_bins", c.calibration_bins);
  c.validate();
  return c;
}

}  // namespace

json to_json(const TrainConfig& c) {
  return {{"name", c.row_name()},
          {"policy", to_string(c.policy)},
          {"mode", to_string(c.mode)},
          {"coefficients", coefficients_json(c.coefficients)},
          {"hidden", c.hidden},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"lr_schedule", c.lr_schedule == LrSchedule::kConstant ? "constant" : "cosine"},
          {"seeds", c.seeds},
          {"smoothing", {{"a", c.smoothing.a}, {"b", c.smoothing.b}}},
          {"central", c.central == CentralTendency::kMean ? "mean" : "median"},
          {"redistribution", c.redistribution},
          {"random_labels", c.random_labels == RandomLabelMode::kPerEpoch ? "per-epoch" : "fixed"},
          {"fgsm_epsilon", c.fgsm_epsilon},
          {"calibration_bins", c.calibration_bins}};
}

json to_json(const DataSpec& d) {
  json j = {{"source", d.source},
            {"seed", d.seed},
            {"augment_size", d.augment_size},
            {"hmix_file", d.hmix_file},
            {"fits_file", d.fits_file},
            {"fit_boundaries", d.fit_boundaries}};
  if (d.source == "shapes") {
    j["train_size"] = d.train_size;
    j["eval_size"] = d.eval_size;
    j["endpoint_pool_size"] = d.endpoint_pool_size;
    j["shapes"] = {{"noise_sd", d.shapes.noise_sd},
                   {"max_ambiguity", d.shapes.max_ambiguity},
                   {"annotators", d.shapes.annotators},
                   {"annotator_noise", d.shapes.annotator_noise},
                   {"ambiguous_fraction", d.shapes.ambiguous_fraction}};
  } else {
    j["cifar10"] = {{"train_files", d.cifar_train_files}, {"train_limit", d.train_limit},
                    {"eval_file", d.cifar_eval_file},     {"eval_offset", d.eval_offset},
                    {"eval_limit", d.eval_limit},         {"eval_frequencies", d.eval_frequencies},
                    {"endpoint_file", d.endpoint_file},   {"endpoint_prefix", d.endpoint_prefix}};
  }
  if (d.simulation) {
    j["simulation"] = simulation_json(*d.simulation);
  }
  return j;
}

std::string config_hash(const DataSpec& data, const TrainConfig& row) {
  json j = {{"version", kTrainConfigVersion}, {"data", to_json(data)}, {"row", to_json(row)}};
  return hex64(fnv1a64(j.dump()));
}

ExperimentConfig parse_experiment_config(const json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object() || !j.contains("version") || !j.at("version").is_string() ||
      j.at("version").get<std::string>() != kTrainConfigVersion) {
    throw SchemaError("config version must be '" + std::string(kTrainConfigVersion) + "'");
  }
  check_keys(j, {"version", "data", "defaults", "rows", "workers"}, "config");
  ExperimentConfig cfg;
  cfg.data = parse_data(j.value("data", json::object()), base_dir);
  json defaults = j.value("defaults", json::object());
  if (!defaults.is_object()) {
    throw ValidationError("defaults", "expected an object");
  }
  if (!j.contains("rows") || !j.at("rows").is_array() || j.at("rows").empty()) {
    throw ValidationError("rows", "config needs a nonempty rows array");
  }
  for (const auto& row : j.at("rows")) {
    if (!row.is_object()) {
      throw ValidationError("rows", "each row must be an object");
    }
    json merged = defaults;
    merged.update(row);
    cfg.rows.push_back(parse_row(merged));
  }
  read(j, "workers", cfg.workers);
  if (cfg.workers == 0) {
    throw ValidationError("workers", "must be positive");
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw NotFoundError("cannot open " + path.string());
  }
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
  return parse_experiment_config(j, path.parent_path());
}

// ---------------------------------------------------------------------------------------------
// Data

namespace {

void append(Dataset& into, const Dataset& from) {
  into.reserve(into.size() + from.size());
  for (std::size_t i = 0; i < from.size(); ++i) {
    into.push_back(from.image(i), from.target(i), from.ids[i], from.labels[i]);
  }
}

// Reconstructs the mixed stimuli referenced by elicited records; both orientations of the same
// image map onto one stimulus.
std::vector<MixedStimulus> stimuli_from_records(const std::vector<Judgment>& judgments,
                                                const std::vector<SoftLabelJudgment>& soft, const Dataset& endpoints) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < endpoints.size(); ++i) {
    index.emplace(endpoints.ids[i], i);
  }
  std::map<std::tuple<std::string, std::string, long long>, MixedStimulus> unique;
  auto add = [&](const StimulusInfo& s) {
    std::string a = s.endpoint_a;
    std::string b = s.endpoint_b;
    int ca = s.class_a;
    int cb = s.class_b;
    double lf = s.lambda_f;
    if (b < a) {
      std::swap(a, b);
      std::swap(ca, cb);
      lf = 1.0 - lf;
    }
    auto key = std::make_tuple(a, b, std::llround(lf * 1e9));
    if (unique.count(key)) {
      return;
    }
    auto ia = index.find(a);
    auto ib = index.find(b);
    if (ia == index.end() || ib == index.end()) {
      throw ValidationError("endpoint", "endpoint image '" + (ia == index.end() ? a : b) + "' is not in the pool");
    }
    MixedStimulus m;
    m.pair_id = s.pair_id;
    m.endpoint_a_id = a;
    m.endpoint_b_id = b;
    m.class_a = ca;
    m.class_b = cb;
    m.lambda_f = MixCoefficient(lf);
    m.mixed_image = data_mix(endpoints.image(ia->second), endpoints.image(ib->second), m.lambda_f);
    unique.emplace(key, std::move(m));
  };
  for (const auto& j : judgments) {
    if (j.kind == InterfaceKind::kInferCoefficient) {
      add(j.stimulus);
    }
  }
  for (const auto& s : soft) {
    add(s.stimulus);
  }
  std::vector<MixedStimulus> out;
  for (auto& [key, m] : unique) {
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace

ExperimentData prepare_data(const DataSpec& spec) {
  spec.validate();
  ExperimentData data;
  Dataset endpoints;
  if (spec.source == "shapes") {
    data.train = generate_shapes(spec.train_size, spec.seed, spec.shapes, false, "train").data;
    auto eval = generate_shapes(spec.eval_size, spec.seed + 1, spec.shapes, true, "eval");
    data.eval = std::move(eval.data);
    data.eval_frequencies = std::move(eval.frequencies);
    endpoints = generate_shapes(spec.endpoint_pool_size, spec.seed + 2, spec.shapes, true, "endpoint").data;
  } else {
    std::size_t remaining = spec.train_limit;
    for (const auto& f : spec.cifar_train_files) {
      if (remaining == 0) {
        break;
      }
      auto part = read_cifar10(f, 0, remaining, std::filesystem::path(f).stem().string());
      remaining -= part.size();
      if (data.train.size() == 0) {
        data.train = std::move(part);
      } else {
        append(data.train, part);
      }
    }
    data.train.finalize();
    data.eval = read_cifar10(spec.cifar_eval_file, spec.eval_offset, spec.eval_limit, spec.endpoint_prefix);
    if (!spec.eval_frequencies.empty()) {
      data.eval_frequencies = LabelFrequencyTable::read(std::filesystem::path(spec.eval_frequencies));
      apply_frequency_targets(data.eval, data.eval_frequencies);
    }
    if (!spec.endpoint_file.empty()) {
      endpoints = read_cifar10(spec.endpoint_file, 0, static_cast<std::size_t>(-1), spec.endpoint_prefix);
    }
  }

  if (!spec.hmix_file.empty()) {
    auto records = import_hmix(std::filesystem::path(spec.hmix_file));
    data.judgments = judgments_of(records);
    data.soft_labels = soft_labels_of(records);
    data.augmenting = stimuli_from_records(data.judgments, data.soft_labels, endpoints);
  } else if (endpoints.size() > 0 && spec.augment_size > 0) {
    auto grid = inference_grid();
    data.augmenting = build_augmenting_set(endpoints, spec.augment_size, spec.seed + 3, grid);
    if (spec.simulation) {
      auto sim = simulate_judgments(data.augmenting, endpoints.num_classes, *spec.simulation);
      data.judgments = std::move(sim.judgments);
      data.soft_labels = std::move(sim.soft_labels);
      data.true_boundaries = std::move(sim.boundaries);
    }
  }

  if (!spec.fits_file.empty()) {
    data.fits = read_fits(std::filesystem::path(spec.fits_file));
  } else if (spec.fit_boundaries && !data.judgments.empty()) {
    data.fits = fit_all_pairs(data.judgments).fits;
  }
  return data;
}

// ---------------------------------------------------------------------------------------------
// Training

namespace {

struct AugmentedColumns {
  Eigen::MatrixXd images;   // D x S, one column per stimulus
  std::vector<std::size_t> stimulus;  // per labeled example
  Eigen::MatrixXd labels;   // K x M
};

AugmentedColumns label_augmenting_set(const TrainConfig& config, const ExperimentData& data, Rng& label_rng,
                                      bool with_images) {
  AugmentedColumns out;
  const int k = data.train.num_classes;
  PolicyInputs inputs;
  inputs.num_classes = k;
  inputs.judgments = data.judgments;
  inputs.soft_labels = data.soft_labels;
  inputs.fits = &data.fits;
  inputs.smoothing = config.smoothing;
  inputs.central = config.central;
  inputs.redistribution = config.redistribution;

  std::vector<LabelDistribution> labels;
  for (std::size_t s = 0; s < data.augmenting.size(); ++s) {
    for (auto& l : build_labels(config.policy, data.augmenting[s], inputs, label_rng)) {
      labels.push_back(std::move(l));
      out.stimulus.push_back(s);
    }
  }
  out.labels.resize(k, static_cast<Eigen::Index>(labels.size()));
  for (std::size_t m = 0; m < labels.size(); ++m) {
    auto p = labels[m].probs();
    std::copy(p.begin(), p.end(), out.labels.col(static_cast<Eigen::Index>(m)).data());
  }
  if (with_images) {
    out.images.resize(data.train.input_dim(), static_cast<Eigen::Index>(data.augmenting.size()));
    for (std::size_t s = 0; s < data.augmenting.size(); ++s) {
      const auto& img = data.augmenting[s].mixed_image;
      if (static_cast<int>(img.size()) != data.train.input_dim()) {
        throw ShapeError("mixed stimulus shape does not match the training images");
      }
      auto px = img.data();
      std::copy(px.begin(), px.end(), out.images.col(static_cast<Eigen::Index>(s)).data());
    }
  }
  return out;
}

void check_loss(double loss, int epoch, std::size_t batch, const TrainConfig& config) {
  if (!std::isfinite(loss)) {
    throw TrainingError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                        std::to_string(batch + 1) + " (learning_rate=" + format_decimal(config.learning_rate) +
                        ", policy=" + to_string(config.policy) + ")");
  }
}

}  // namespace

TrainResult train(const TrainConfig& config, const ExperimentData& data, std::uint64_t seed) {
  config.validate();
  const Dataset& tr = data.train;
  if (tr.size() == 0) {
    throw ValidationError("data", "training set is empty");
  }
  Rng rng(seed);
  TrainResult result{Mlp(MlpSpec{tr.input_dim(), config.hidden, tr.num_classes}, rng), {}, {}};
  SgdMomentum opt(config.learning_rate, config.momentum, config.weight_decay);
  Rng label_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const auto bs = static_cast<std::size_t>(config.batch_size);
  const auto d = static_cast<Eigen::Index>(tr.input_dim());
  const auto k = static_cast<Eigen::Index>(tr.num_classes);
  std::vector<DenseLayer> grads;

  bool finite_mode = config.mode == MixupMode::kFiniteAugmentingSet && config.policy != PolicyKind::kNoAug;
  AugmentedColumns aug;
  if (finite_mode) {
    aug = label_augmenting_set(config, data, label_rng, true);
  }

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (finite_mode && epoch > 0 && config.policy == PolicyKind::kRandom &&
        config.random_labels == RandomLabelMode::kPerEpoch) {
      aug.labels = label_augmenting_set(config, data, label_rng, false).labels;
    }
    const std::size_t total = tr.size() + (finite_mode ? aug.stimulus.size() : 0);
    const std::size_t steps_per_epoch = (total + bs - 1) / bs;
    std::vector<std::size_t> order(total);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < total; begin += bs) {
      auto n = static_cast<Eigen::Index>(std::min(bs, total - begin));
      Eigen::MatrixXd x(d, n);
      Eigen::MatrixXd t(k, n);
      for (Eigen::Index c = 0; c < n; ++c) {
        std::size_t idx = order[begin + static_cast<std::size_t>(c)];
        if (idx < tr.size()) {
          x.col(c) = tr.inputs.col(static_cast<Eigen::Index>(idx));
          t.col(c) = tr.targets.col(static_cast<Eigen::Index>(idx));
        } else {
          std::size_t m = idx - tr.size();
          x.col(c) = aug.images.col(static_cast<Eigen::Index>(aug.stimulus[m]));
          t.col(c) = aug.labels.col(static_cast<Eigen::Index>(m));
        }
      }

      if (config.mode == MixupMode::kPerBatchSampling && config.policy != PolicyKind::kNoAug) {
        MixCoefficient lambda = sample_lambda(config.coefficients, rng);
        result.sampled_lambdas.push_back(lambda.value());
        std::vector<Eigen::Index> partner(static_cast<std::size_t>(n));
        std::iota(partner.begin(), partner.end(), 0);
        std::shuffle(partner.begin(), partner.end(), rng);
        Eigen::MatrixXd xm(d, n);
        Eigen::MatrixXd tm(k, n);
        for (Eigen::Index c = 0; c < n; ++c) {
          Eigen::Index o = partner[static_cast<std::size_t>(c)];
          xm.col(c) = lambda.value() * x.col(c) + lambda.complement_value() * x.col(o);
          switch (config.policy) {
            case PolicyKind::kMixup:
              tm.col(c) = lambda.value() * t.col(c) + lambda.complement_value() * t.col(o);
              break;
            case PolicyKind::kBoundaryFit: {
              int ya = tr.labels[order[begin + static_cast<std::size_t>(c)]];
              int yb = tr.labels[order[begin + static_cast<std::size_t>(o)]];
              MixCoefficient g = lambda;
              if (ya != yb) {
                if (auto fitted = apply_boundary(data.fits, ya, yb, lambda)) {
                  g = *fitted;
                }
              }
              tm.col(c) = g.value() * t.col(c) + g.complement_value() * t.col(o);
              break;
            }
            case PolicyKind::kUniform:
              tm.col(c).setConstant(1.0 / static_cast<double>(k));
              break;
            case PolicyKind::kRandom:
              tm.col(c).setZero();
              tm(std::min<Eigen::Index>(static_cast<Eigen::Index>(uniform01(label_rng) * static_cast<double>(k)), k - 1),
                 c) = 1.0;
              break;
            default:
              throw ValidationError("policy", "unsupported policy for per-batch sampling");
          }
        }
        x = std::move(xm);
        t = std::move(tm);
      }

      if (config.lr_schedule == LrSchedule::kCosine) {
        double progress = static_cast<double>(static_cast<std::size_t>(epoch) * steps_per_epoch + batches) /
                          static_cast<double>(static_cast<std::size_t>(config.epochs) * steps_per_epoch);
        opt.set_learning_rate(0.5 * config.learning_rate * (1.0 + std::cos(std::numbers::pi * progress)));
      }
      double loss = result.model.loss_and_gradients(x, t, &grads);
      check_loss(loss, epoch, batches, config);
      opt.step(result.model, grads);
      loss_sum += loss;
      ++batches;
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
  }
  return result;
}

RunMetrics evaluate(const Mlp& model, const Dataset& eval, const TrainConfig& config) {
  Eigen::MatrixXd probs = model.probabilities(eval.inputs);
  RunMetrics m;
  auto ce = soft_ce(probs, eval.targets);
  m.ce = ce.value;
  m.ce_clamped = ce.clamped;
  m.fgsm_err = fgsm_error_percent(model, eval, config.fgsm_epsilon);
  m.calib_rms = calibration_error(probs, eval.targets, config.calibration_bins, CalibrationFlavor::kRms);
  m.ece = calibration_error(probs, eval.targets, config.calibration_bins, CalibrationFlavor::kEce);
  m.accuracy = accuracy(probs, eval.targets);
  for (double v : {m.ce, m.fgsm_err, m.calib_rms, m.ece, m.accuracy}) {
    if (!std::isfinite(v)) {
      throw TrainingError("non-finite evaluation metric");
    }
  }
  return m;
}

// ---------------------------------------------------------------------------------------------
// Comparison

ComparisonReport run_comparison(const std::vector<TrainConfig>& rows, const DataSpec& data_spec,
                                const ExperimentData& data, std::size_t workers) {
  struct Task {
    std::size_t row;
    std::size_t seed;
  };
  std::vector<Task> tasks;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t s = 0; s < rows[r].seeds.size(); ++s) {
      tasks.push_back({r, s});
    }
  }
  std::vector<std::optional<RunMetrics>> results(tasks.size());
  std::vector<std::string> errors(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      const auto& cfg = rows[tasks[i].row];
      try {
        auto trained = train(cfg, data, cfg.seeds[tasks[i].seed]);
        results[i] = evaluate(trained.model, data.eval, cfg);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    std::size_t n = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(tasks.size(), 1));
    for (std::size_t w = 1; w < n; ++w) {
      pool.emplace_back(worker);
    }
    worker();
  }

  ComparisonReport report;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    RowReport row;
    row.name = rows[r].row_name();
    row.policy = rows[r].policy;
    row.config_hash = config_hash(data_spec, rows[r]);
    report.rows.push_back(std::move(row));
  }
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    auto& row = report.rows[tasks[i].row];
    std::uint64_t seed = rows[tasks[i].row].seeds[tasks[i].seed];
    if (results[i]) {
      row.seeds.push_back(seed);
      row.per_seed.push_back(*results[i]);
    } else {
      row.failures.emplace_back(seed, errors[i]);
    }
  }
  for (auto& row : report.rows) {
    auto collect = [&](auto field) {
      std::vector<double> v;
      for (const auto& m : row.per_seed) {
        v.push_back(m.*field);
      }
      return summarize_seeds(v);
    };
    row.ce = collect(&RunMetrics::ce);
    row.fgsm_err = collect(&RunMetrics::fgsm_err);
    row.calib_rms = collect(&RunMetrics::calib_rms);
    row.ece = collect(&RunMetrics::ece);
    row.accuracy = collect(&RunMetrics::accuracy);
  }
  return report;
}

json to_json(const ComparisonReport& report) {
  json rows = json::array();
  for (const auto& row : report.rows) {
    auto summary = [](const SeedSummary& s) {
      return json{{"n", s.n}, {"mean", s.mean}, {"sd", s.sd}, {"ci95_half_width", s.ci_half_width}};
    };
    json per_seed = json::array();
    for (std::size_t i = 0; i < row.per_seed.size(); ++i) {
      const auto& m = row.per_seed[i];
      per_seed.push_back({{"seed", row.seeds[i]},
                          {"ce", m.ce},
                          {"ce_clamped", m.ce_clamped},
                          {"fgsm_err_pct", m.fgsm_err},
                          {"calib_rms", m.calib_rms},
                          {"ece", m.ece},
                          {"accuracy", m.accuracy}});
    }
    json failures = json::array();
    for (const auto& [seed, error] : row.failures) {
      failures.push_back({{"seed", seed}, {"error", error}});
    }
    rows.push_back({{"name", row.name},
                    {"policy", to_string(row.policy)},
                    {"config_hash", row.config_hash},
                    {"per_seed", per_seed},
                    {"summary",
                     {{"ce", summary(row.ce)},
                      {"fgsm_err_pct", summary(row.fgsm_err)},
                      {"calib_rms", summary(row.calib_rms)},
                      {"ece", summary(row.ece)},
                      {"accuracy", summary(row.accuracy)}}},
                    {"failures", failures}});
  }
  return {{"version", kReportVersion}, {"rows", rows}};
}

std::string format_table(const ComparisonReport& report) {
  std::ostringstream out;
  out << "row\tseeds\tCE\tCE_ci95\tFGSM_err_pct\tFGSM_err_pct_ci95\tcalib_rms\tcalib_rms_ci95\tece\tece_ci95\t"
         "accuracy\taccuracy_ci95\tfailures\n";
  auto cell = [](double v) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(4);
    s << v;
    return s.str();
  };
  for (const auto& row : report.rows) {
    out << row.name << '\t' << row.per_seed.size();
    for (const auto* s : {&row.ce, &row.fgsm_err, &row.calib_rms, &row.ece, &row.accuracy}) {
      out << '\t' << cell(s->mean) << '\t' << cell(s->ci_half_width);
    }
    out << '\t' << row.failures.size() << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------------------------
// Smoothing search

GridSearchResult grid_search_smoothing(std::span<const double> a_grid, std::span<const double> b_grid,
                                       const std::function<double(const SmoothingSpec&)>& score) {
  if (a_grid.empty() || b_grid.empty()) {
    throw ValidationError("grid", "smoothing grids must not be empty");
  }
  GridSearchResult result;
  bool first = true;
  for (double a : a_grid) {
    for (double b : b_grid) {
      SmoothingSpec spec{a, b};
      spec.validate();
      double s = score(spec);
      result.entries.push_back({a, b, s});
      if (first || s < result.best_score) {
        result.best = spec;
        result.best_score = s;
        first = false;
      }
    }
  }
  return result;
}

std::function<double(const SmoothingSpec&)> held_out_scorer(const TrainConfig& config, const ExperimentData& data,
                                                            const Dataset& held_out) {
  return [&config, &data, &held_out](const SmoothingSpec& spec) {
    TrainConfig c = config;
    c.smoothing = spec;
    auto trained = train(c, data, c.seeds.front());
    return soft_ce(trained.model, held_out).value;
  };
}

std::vector<double> default_a_grid() {
  return {5, 10, 15, 25, 50, 100};
}

std::vector<double> default_b_grid() {
  return {0.00001, 0.0001, 0.001, 0.01, 0.1};
}

}  // namespace hmix
