#pragma once

// Evaluation metrics: soft-label cross-entropy, FGSM robustness, calibration error and seed statistics.

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "hmix/mixcore.hpp"
#include "hmix/traineval/dataset.hpp"
#include "hmix/traineval/model.hpp"

namespace hmix {

inline constexpr double kProbabilityFloor = 1e-12;

struct SoftCeResult {
  double value = 0.0;
  // Predicted probabilities below the floor on classes the target supports.
  std::size_t clamped = 0;
};

// Mean over columns of -sum_k t_k ln max(p_k, 1e-12).
SoftCeResult soft_ce(const Eigen::MatrixXd& probabilities, const Eigen::MatrixXd& targets);
SoftCeResult soft_ce(const Mlp& model, const Dataset& eval);

// clip(x + epsilon * sign(grad_x CE(model(x), target)), 0, 1)
ImageTensor fgsm_attack(const Mlp& model, const ImageTensor& x, const LabelDistribution& target, double epsilon);
// Column-wise batch version; returns D x N adversarial inputs.
Eigen::MatrixXd fgsm_batch(const Mlp& model, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                           double epsilon);

// Percent of examples misclassified (against the argmax of their targets) after an FGSM attack toward
// the one-hot of that reference class. Throws if any adversarial pixel leaves [0,1].
double fgsm_error_percent(const Mlp& model, const Dataset& eval, double epsilon, std::size_t chunk = 512);

enum class CalibrationFlavor { kEce, kRms };

// Equal-width confidence bins over [0,1]; the last bin is closed. Empty bins are skipped.
double calibration_error(std::span<const double> confidences, std::span<const bool> correct, int bins,
                         CalibrationFlavor flavor);
// Confidence = max predicted probability; correctness against the argmax of the eval targets.
double calibration_error(const Eigen::MatrixXd& probabilities, const Eigen::MatrixXd& targets, int bins,
                         CalibrationFlavor flavor);

double accuracy(const Eigen::MatrixXd& probabilities, const Eigen::MatrixXd& targets);

// Argmax of each column, lowest index on ties.
std::vector<int> argmax_columns(const Eigen::MatrixXd& m);

struct SeedSummary {
  std::size_t n = 0;
  double mean = 0.0;
  double sd = 0.0;
  double ci_half_width = 0.0;  // t_{0.975, n-1} * sd / sqrt(n); 0 when n < 2
};

SeedSummary summarize_seeds(std::span<const double> values, double confidence = 0.95);

struct ChiSquareResult {
  double statistic = 0.0;
  int degrees_of_freedom = 0;
  double p_value = 1.0;
};

// Goodness of fit of values in [0,1] against the uniform law over `bins` equal-width bins.
ChiSquareResult chi_square_uniform(std::span<const double> values, int bins);

}  // namespace hmix
