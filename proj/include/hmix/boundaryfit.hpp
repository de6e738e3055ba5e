#pragma once

// Category-boundary fitting: a 4-parameter logistic from generating coefficient lambda_f to the
// coefficient humans report, fitted per class pair.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "hmix/hmixdata.hpp"
#include "hmix/mixcore.hpp"

namespace hmix {

// l(x) = lower + (upper - lower) / (1 + exp(-steepness * (x - midpoint)))
struct LogisticParams {
  double lower = 0.0;
  double upper = 1.0;
  double steepness = 10.0;
  double midpoint = 0.5;

  double operator()(double x) const;
  friend bool operator==(const LogisticParams&, const LogisticParams&) = default;
};

struct CurvePoint {
  double lambda_f = 0.0;
  double lambda_h = 0.0;
};

struct FitOptions {
  int max_iterations = 300;
  // Box on the asymptotes. They may leave [0,1] so near-linear data can be matched; predictions are
  // clamped instead.
  double asymptote_min = -1.0;
  double asymptote_max = 2.0;
  double steepness_limit = 200.0;
};

using ClassPair = std::pair<int, int>;

struct BoundaryFit {
  ClassPair classes{0, 1};
  LogisticParams params;
  double residual_sse = 0.0;
  std::size_t n_points = 0;
  bool monotone = true;  // steepness >= 0 with lower <= upper
  bool converged = true;
};

// Damped Gauss-Newton with an analytic Jacobian from several deterministic starts (plus `init` and
// the best constant fit); the lowest SSE wins. Throws ValidationError for fewer than 4 points.
BoundaryFit fit_boundary(std::span<const CurvePoint> points, std::optional<LogisticParams> init = std::nullopt,
                         const FitOptions& options = {});

// clamp(l(lambda_f), 0, 1)
MixCoefficient apply_boundary(const BoundaryFit& fit, MixCoefficient lambda_f);

double sum_squared_error(const LogisticParams& params, std::span<const CurvePoint> points);

struct FitAllOptions {
  std::size_t min_points = 4;
  // Fit per-coefficient medians instead of raw judgments.
  bool use_medians = false;
  bool include_repeats = false;
  FitOptions fit;
};

struct FitAllResult {
  std::map<ClassPair, BoundaryFit> fits;
  std::vector<ClassPair> insufficient;
  std::vector<ClassPair> non_monotone;
  std::vector<ClassPair> not_converged;
};

// Uses coefficient-inference judgments; pairs are keyed lower class first with coefficients
// re-oriented onto the lower class.
FitAllResult fit_all_pairs(std::span<const Judgment> judgments, const FitAllOptions& options = {});

using BoundaryMap = std::map<ClassPair, BoundaryFit>;

// Looks up (a, b) or (b, a); for the swapped orientation returns 1 - l(1 - lambda).
std::optional<MixCoefficient> apply_boundary(const BoundaryMap& fits, int class_a, int class_b,
                                             MixCoefficient lambda_f);

inline constexpr std::string_view kFitsHeader = "hmix-fits-v1";

void write_fits(const BoundaryMap& fits, std::ostream& out);
void write_fits(const BoundaryMap& fits, const std::filesystem::path& path);
BoundaryMap read_fits(std::istream& in);
BoundaryMap read_fits(const std::filesystem::path& path);

}  // namespace hmix
