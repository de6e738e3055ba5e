#pragma once

// Decoupled data/label mixing kernels.
//
// A mixed input is f(x_a, x_b, lambda_f) = lambda_f * x_a + (1 - lambda_f) * x_b and a mixed label
// is g(y_a, y_b, lambda_g) = lambda_g * y_a + (1 - lambda_g) * y_b. Classical mixup ties
// lambda_g = lambda_f; the rest of the toolkit lets the two differ.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace hmix {

using Rng = std::mt19937_64;

// Uniform double in [0, 1) built from the top 53 bits; identical across standard libraries.
double uniform01(Rng& rng);

// A convex weight in [0,1]. The complement is stored alongside the value so that
// `lambda.complement().complement()` and mirrored mixes are bit-identical.
class MixCoefficient {
 public:
  explicit MixCoefficient(double value);

  double value() const noexcept { return value_; }
  double complement_value() const noexcept { return complement_; }
  MixCoefficient complement() const noexcept { return MixCoefficient(complement_, value_, 0); }

  friend bool operator==(const MixCoefficient& a, const MixCoefficient& b) noexcept {
    return a.value_ == b.value_;
  }

 private:
  MixCoefficient(double value, double complement, int) noexcept
      : value_(value), complement_(complement) {}

  double value_;
  double complement_;
};

// Dense H x W x C image, row-major (y, x, c), intensities in [0,1].
class ImageTensor {
 public:
  ImageTensor() = default;
  ImageTensor(int height, int width, int channels, std::vector<double> data);

  static ImageTensor filled(int height, int width, int channels, double value);
  static ImageTensor from_bytes(int height, int width, int channels, std::span<const std::uint8_t> bytes);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::span<const double> data() const noexcept { return data_; }

  double at(int y, int x, int c) const { return data_[index(y, x, c)]; }
  std::size_t index(int y, int x, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  bool same_shape(const ImageTensor& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }

  // Quantizes to 8-bit, round-half-up.
  std::vector<std::uint8_t> to_bytes() const;

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

// Probability vector over K classes.
class LabelDistribution {
 public:
  static constexpr double kSumTolerance = 1e-9;

  explicit LabelDistribution(std::vector<double> probs);

  static LabelDistribution one_hot(int cls, int num_classes);
  static LabelDistribution uniform(int num_classes);
  // Divides by the sum; rejects negative entries or a zero total.
  static LabelDistribution normalized(std::vector<double> weights);

  int num_classes() const noexcept { return static_cast<int>(probs_.size()); }
  std::span<const double> probs() const noexcept { return probs_; }
  double operator[](int k) const { return probs_[static_cast<std::size_t>(k)]; }
  int argmax() const;

  friend bool operator==(const LabelDistribution&, const LabelDistribution&) = default;

 private:
  std::vector<double> probs_;
};

// Identity of one endpoint image.
struct Endpoint {
  std::string id;
  int cls = 0;
  ImageTensor image;
};

struct MixedStimulus {
  std::string pair_id;
  std::string endpoint_a_id;
  std::string endpoint_b_id;
  int class_a = 0;
  int class_b = 1;
  MixCoefficient lambda_f{0.5};
  ImageTensor mixed_image;

  // "<pair_id>@<lambda_f>" with lambda in shortest decimal form.
  std::string stimulus_id() const;
};

ImageTensor data_mix(const ImageTensor& x_a, const ImageTensor& x_b, MixCoefficient lambda_f);
LabelDistribution label_mix(const LabelDistribution& y_a, const LabelDistribution& y_b,
                            MixCoefficient lambda_g);

struct BetaDistribution {
  double alpha = 1.0;
  double beta = 1.0;
};

// Draws from `values` with probability proportional to `weights` (uniform when weights is empty).
struct DiscreteDistribution {
  std::vector<double> values;
  std::vector<double> weights;
};

using CoefficientDistribution = std::variant<BetaDistribution, DiscreteDistribution>;

// Throws ValidationError for nonpositive Beta parameters or a malformed discrete set.
void validate(const CoefficientDistribution& distribution);
MixCoefficient sample_lambda(const CoefficientDistribution& distribution, Rng& rng);

// The eleven-point sweep 0.0, 0.1, ..., 1.0.
std::vector<MixCoefficient> default_sweep_grid();
// The five coefficients used for coefficient-inference stimuli.
std::vector<MixCoefficient> inference_grid();

std::vector<MixedStimulus> sweep_stimuli(const Endpoint& a, const Endpoint& b, const std::string& pair_id,
                                         std::span<const MixCoefficient> grid);

}  // namespace hmix
