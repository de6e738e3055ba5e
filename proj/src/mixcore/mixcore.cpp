#include "hmix/mixcore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hmix/errors.hpp"
#include "hmix/text.hpp"

namespace hmix {

double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

MixCoefficient::MixCoefficient(double value) : value_(value), complement_(1.0 - value) {
  if (!(value >= 0.0 && value <= 1.0)) {
    throw ValidationError("lambda", "mixing coefficient must lie in [0,1], got " + format_decimal(value));
  }
}

ImageTensor::ImageTensor(int height, int width, int channels, std::vector<double> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
  if (height <= 0 || width <= 0 || channels <= 0) {
    throw ShapeError("image dimensions must be positive");
  }
  if (data_.size() != static_cast<std::size_t>(height) * width * channels) {
    throw ShapeError("image data length " + std::to_string(data_.size()) + " != " + std::to_string(height) +
                     "x" + std::to_string(width) + "x" + std::to_string(channels));
  }
  for (double v : data_) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ValidationError("data", "intensity outside [0,1]: " + format_decimal(v));
    }
  }
}

ImageTensor ImageTensor::filled(int height, int width, int channels, double value) {
  return ImageTensor(height, width, channels,
                     std::vector<double>(static_cast<std::size_t>(height) * width * channels, value));
}

ImageTensor ImageTensor::from_bytes(int height, int width, int channels, std::span<const std::uint8_t> bytes) {
  std::vector<double> data(bytes.size());
  std::transform(bytes.begin(), bytes.end(), data.begin(), [](std::uint8_t b) { return b / 255.0; });
  return ImageTensor(height, width, channels, std::move(data));
}

std::vector<std::uint8_t> ImageTensor::to_bytes() const {
  std::vector<std::uint8_t> out(data_.size());
  std::transform(data_.begin(), data_.end(), out.begin(),
                 [](double v) { return static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5)); });
  return out;
}

LabelDistribution::LabelDistribution(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.empty()) {
    throw ValidationError("probs", "label distribution needs at least one class");
  }
  double sum = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw ValidationError("probs", "negative or non-finite probability " + format_decimal(p));
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > kSumTolerance) {
    throw ValidationError("probs", "probabilities sum to " + format_decimal(sum));
  }
}

LabelDistribution LabelDistribution::one_hot(int cls, int num_classes) {
  if (num_classes <= 0 || cls < 0 || cls >= num_classes) {
    throw ValidationError("class", "class " + std::to_string(cls) + " out of range for K=" +
                                       std::to_string(num_classes));
  }
  std::vector<double> probs(static_cast<std::size_t>(num_classes), 0.0);
  probs[static_cast<std::size_t>(cls)] = 1.0;
  return LabelDistribution(std::move(probs));
}

LabelDistribution LabelDistribution::uniform(int num_classes) {
  if (num_classes <= 0) {
    throw ValidationError("K", "class count must be positive");
  }
  return LabelDistribution(std::vector<double>(static_cast<std::size_t>(num_classes), 1.0 / num_classes));
}

LabelDistribution LabelDistribution::normalized(std::vector<double> weights) {
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw ValidationError("weights", "negative or non-finite weight");
    }
    total += w;
  }
  if (total <= 0.0) {
    throw ValidationError("weights", "weights sum to zero");
  }
  for (double& w : weights) {
    w /= total;
  }
  return LabelDistribution(std::move(weights));
}

int LabelDistribution::argmax() const {
  return static_cast<int>(std::max_element(probs_.begin(), probs_.end()) - probs_.begin());
}

std::string MixedStimulus::stimulus_id() const {
  return pair_id + "@" + format_decimal(lambda_f.value());
}

namespace {

// Convex combination with both weights taken from the coefficient, clamped into the endpoint range so
// convexity holds exactly despite rounding. Addition order does not matter for the mirrored call
// because IEEE addition is commutative.
inline double mix_value(double a, double b, const MixCoefficient& lambda) {
  double v = lambda.value() * a + lambda.complement_value() * b;
  return std::clamp(v, std::min(a, b), std::max(a, b));
}

}  // namespace

ImageTensor data_mix(const ImageTensor& x_a, const ImageTensor& x_b, MixCoefficient lambda_f) {
  if (!x_a.same_shape(x_b)) {
    throw ShapeError("cannot mix images of shape " + std::to_string(x_a.height()) + "x" +
                     std::to_string(x_a.width()) + "x" + std::to_string(x_a.channels()) + " and " +
                     std::to_string(x_b.height()) + "x" + std::to_string(x_b.width()) + "x" +
                     std::to_string(x_b.channels()));
  }
  auto a = x_a.data();
  auto b = x_b.data();
  std::vector<double> out(a.size());
  for (std::size_t p = 0; p < a.size(); ++p) {
    out[p] = mix_value(a[p], b[p], lambda_f);
  }
  return ImageTensor(x_a.height(), x_a.width(), x_a.channels(), std::move(out));
}

LabelDistribution label_mix(const LabelDistribution& y_a, const LabelDistribution& y_b, MixCoefficient lambda_g) {
  if (y_a.num_classes() != y_b.num_classes()) {
    throw ShapeError("label class counts differ: " + std::to_string(y_a.num_classes()) + " vs " +
                     std::to_string(y_b.num_classes()));
  }
  auto a = y_a.probs();
  auto b = y_b.probs();
  std::vector<double> out(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    out[k] = mix_value(a[k], b[k], lambda_g);
  }
  return LabelDistribution(std::move(out));
}

void validate(const CoefficientDistribution& distribution) {
  if (const auto* beta = std::get_if<BetaDistribution>(&distribution)) {
    if (!(beta->alpha > 0.0) || !(beta->beta > 0.0) || !std::isfinite(beta->alpha) || !std::isfinite(beta->beta)) {
      throw ValidationError("distribution", "Beta parameters must be positive");
    }
    return;
  }
  const auto& discrete = std::get<DiscreteDistribution>(distribution);
  if (discrete.values.empty()) {
    throw ValidationError("distribution", "discrete coefficient set is empty");
  }
  for (double v : discrete.values) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ValidationError("distribution", "discrete coefficient outside [0,1]");
    }
  }
  if (!discrete.weights.empty()) {
    if (discrete.weights.size() != discrete.values.size()) {
      throw ValidationError("distribution", "weights and values differ in length");
    }
    double total = 0.0;
    for (double w : discrete.weights) {
      if (!(w >= 0.0)) {
        throw ValidationError("distribution", "negative weight");
      }
      total += w;
    }
    if (total <= 0.0) {
      throw ValidationError("distribution", "weights sum to zero");
    }
  }
}

MixCoefficient sample_lambda(const CoefficientDistribution& distribution, Rng& rng) {
  validate(distribution);
  if (const auto* beta = std::get_if<BetaDistribution>(&distribution)) {
    if (beta->alpha == 1.0 && beta->beta == 1.0) {
      return MixCoefficient(uniform01(rng));
    }
    std::gamma_distribution<double> ga(beta->alpha, 1.0);
    std::gamma_distribution<double> gb(beta->beta, 1.0);
    double x = ga(rng);
    double y = gb(rng);
    double total = x + y;
    return MixCoefficient(total > 0.0 ? std::clamp(x / total, 0.0, 1.0) : 0.5);
  }
  const auto& discrete = std::get<DiscreteDistribution>(distribution);
  double u = uniform01(rng);
  if (discrete.weights.empty()) {
    auto idx = static_cast<std::size_t>(u * static_cast<double>(discrete.values.size()));
    return MixCoefficient(discrete.values[std::min(idx, discrete.values.size() - 1)]);
  }
  double total = std::accumulate(discrete.weights.begin(), discrete.weights.end(), 0.0);
  double target = u * total;
  double running = 0.0;
  for (std::size_t i = 0; i < discrete.values.size(); ++i) {
    running += discrete.weights[i];
    if (target < running && discrete.weights[i] > 0.0) {
      return MixCoefficient(discrete.values[i]);
    }
  }
  for (std::size_t i = discrete.values.size(); i-- > 0;) {
    if (discrete.weights[i] > 0.0) {
      return MixCoefficient(discrete.values[i]);
    }
  }
  return MixCoefficient(discrete.values.back());
}

std::vector<MixCoefficient> default_sweep_grid() {
  std::vector<MixCoefficient> grid;
  grid.reserve(11);
  for (int i = 0; i <= 10; ++i) {
    grid.emplace_back(i / 10.0);
  }
  return grid;
}

std::vector<MixCoefficient> inference_grid() {
  return {MixCoefficient(0.1), MixCoefficient(0.25), MixCoefficient(0.5), MixCoefficient(0.75),
          MixCoefficient(0.9)};
}

std::vector<MixedStimulus> sweep_stimuli(const Endpoint& a, const Endpoint& b, const std::string& pair_id,
                                         std::span<const MixCoefficient> grid) {
  if (grid.empty()) {
    throw ValidationError("grid", "sweep grid is empty");
  }
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (!(grid[i - 1].value() < grid[i].value())) {
      throw ValidationError("grid", "sweep grid must be strictly ascending");
    }
  }
  if (a.cls == b.cls) {
    throw ValidationError("class_b", "endpoints must come from different classes");
  }
  std::vector<MixedStimulus> out;
  out.reserve(grid.size());
  for (const auto& lambda : grid) {
    MixedStimulus s;
    s.pair_id = pair_id;
    s.endpoint_a_id = a.id;
    s.endpoint_b_id = b.id;
    s.class_a = a.cls;
    s.class_b = b.cls;
    s.lambda_f = lambda;
    s.mixed_image = data_mix(a.image, b.image, lambda);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace hmix
