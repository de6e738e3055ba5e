#include "hmix/boundaryfit.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include "hmix/errors.hpp"
#include "hmix/text.hpp"

namespace hmix {

namespace {

using Vec4 = Eigen::Vector4d;
using Mat4 = Eigen::Matrix4d;

double sigmoid(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  double e = std::exp(z);
  return e / (1.0 + e);
}

LogisticParams from_vec(const Vec4& v) {
  return {v[0], v[1], v[2], v[3]};
}

Vec4 to_vec(const LogisticParams& p) {
  return {p.lower, p.upper, p.steepness, p.midpoint};
}

Vec4 project(Vec4 v, const FitOptions& o) {
  v[0] = std::clamp(v[0], o.asymptote_min, o.asymptote_max);
  v[1] = std::clamp(v[1], o.asymptote_min, o.asymptote_max);
  v[2] = std::clamp(v[2], -o.steepness_limit, o.steepness_limit);
  v[3] = std::clamp(v[3], -1.0, 2.0);
  return v;
}

// Same curve with lower <= upper: swapping the asymptotes and negating the steepness is an identity.
LogisticParams canonical(LogisticParams p) {
  if (p.lower > p.upper) {
    std::swap(p.lower, p.upper);
    p.steepness = -p.steepness;
  }
  if (p.lower == p.upper) {
    p.steepness = 0.0;
  }
  return p;
}

struct LmResult {
  LogisticParams params;
  double sse = 0.0;
  bool converged = false;
};

LmResult levenberg_marquardt(std::span<const CurvePoint> pts, LogisticParams start, const FitOptions& o) {
  Vec4 theta = project(to_vec(start), o);
  double sse = sum_squared_error(from_vec(theta), pts);
  double mu = 1e-3;
  for (int iter = 0; iter < o.max_iterations; ++iter) {
    Mat4 jtj = Mat4::Zero();
    Vec4 jtr = Vec4::Zero();
    for (const auto& p : pts) {
      double s = sigmoid(theta[2] * (p.lambda_f - theta[3]));
      double range = theta[1] - theta[0];
      double ds = s * (1.0 - s);
      Vec4 grad{1.0 - s, s, range * ds * (p.lambda_f - theta[3]), -range * ds * theta[2]};
      double r = p.lambda_h - (theta[0] + range * s);
      jtj.noalias() += grad * grad.transpose();
      jtr.noalias() += grad * r;
    }
    if (jtr.lpNorm<Eigen::Infinity>() < 1e-14) {
      return {from_vec(theta), sse, true};
    }
    bool accepted = false;
    while (mu < 1e16) {
      Mat4 damped = jtj;
      for (int i = 0; i < 4; ++i) {
        damped(i, i) += mu * std::max(jtj(i, i), 1e-12);
      }
      Vec4 step = damped.ldlt().solve(jtr);
      if (!step.allFinite()) {
        mu *= 4.0;
        continue;
      }
      Vec4 candidate = project(theta + step, o);
      double candidate_sse = sum_squared_error(from_vec(candidate), pts);
      if (candidate_sse < sse) {
        double improvement = sse - candidate_sse;
        double moved = (candidate - theta).norm();
        theta = candidate;
        sse = candidate_sse;
        mu = std::max(mu / 3.0, 1e-12);
        accepted = true;
        if (improvement <= 1e-15 * (sse + 1e-30) || moved < 1e-13 * (1.0 + theta.norm())) {
          return {from_vec(theta), sse, true};
        }
        break;
      }
      mu *= 4.0;
    }
    if (!accepted) {
      // No descent direction left at any damping: a (possibly boundary) minimum.
      return {from_vec(theta), sse, true};
    }
  }
  return {from_vec(theta), sse, false};
}

}  // namespace

double LogisticParams::operator()(double x) const {
  return lower + (upper - lower) * sigmoid(steepness * (x - midpoint));
}

double sum_squared_error(const LogisticParams& params, std::span<const CurvePoint> points) {
  double sse = 0.0;
  for (const auto& p : points) {
    double r = p.lambda_h - params(p.lambda_f);
    sse += r * r;
  }
  return sse;
}

BoundaryFit fit_boundary(std::span<const CurvePoint> points, std::optional<LogisticParams> init,
                         const FitOptions& options) {
  if (points.size() < 4) {
    throw ValidationError("points", "logistic fit needs at least 4 points, got " + std::to_string(points.size()));
  }
  for (const auto& p : points) {
    if (!(p.lambda_f >= 0.0 && p.lambda_f <= 1.0) || !(p.lambda_h >= 0.0 && p.lambda_h <= 1.0)) {
      throw ValidationError("points", "coefficients must lie in [0,1]");
    }
  }
  // Sorting makes the result independent of the caller's point order.
  std::vector<CurvePoint> pts(points.begin(), points.end());
  std::sort(pts.begin(), pts.end(), [](const CurvePoint& a, const CurvePoint& b) {
    return a.lambda_f != b.lambda_f ? a.lambda_f < b.lambda_f : a.lambda_h < b.lambda_h;
  });

  double mean = 0.0;
  double lo = 1.0;
  double hi = 0.0;
  for (const auto& p : pts) {
    mean += p.lambda_h;
    lo = std::min(lo, p.lambda_h);
    hi = std::max(hi, p.lambda_h);
  }
  mean /= static_cast<double>(pts.size());

  // Crossing of the data's half-range, as a data-driven midpoint guess.
  double half = 0.5 * (lo + hi);
  double crossing = 0.5;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    if ((pts[i - 1].lambda_h - half) * (pts[i].lambda_h - half) <= 0.0) {
      crossing = 0.5 * (pts[i - 1].lambda_f + pts[i].lambda_f);
      break;
    }
  }

  std::vector<LogisticParams> starts = {
      {0.0, 1.0, 5.0, 0.5},    // identity-like
      {0.0, 1.0, 20.0, 0.5},   // steep
      {0.0, 1.0, 2.0, 0.5},    // shallow
      {0.0, 1.0, 10.0, 0.3},   // left-shifted
      {0.0, 1.0, 10.0, 0.7},   // right-shifted
      {0.0, 1.0, -10.0, 0.5},  // decreasing
      {lo, hi, 10.0, crossing},
  };
  if (init) {
    starts.push_back(*init);
  }

  // Best constant fit; the logistic family contains it (lower == upper).
  LmResult best{{mean, mean, 0.0, 0.5}, 0.0, true};
  best.sse = sum_squared_error(best.params, pts);

  for (const auto& start : starts) {
    auto result = levenberg_marquardt(pts, start, options);
    if (result.sse < best.sse) {
      best = result;
    }
  }

  BoundaryFit fit;
  fit.params = canonical(best.params);
  fit.residual_sse = best.sse;
  fit.n_points = pts.size();
  fit.monotone = fit.params.steepness >= 0.0;
  fit.converged = best.converged;
  return fit;
}

MixCoefficient apply_boundary(const BoundaryFit& fit, MixCoefficient lambda_f) {
  return MixCoefficient(std::clamp(fit.params(lambda_f.value()), 0.0, 1.0));
}

std::optional<MixCoefficient> apply_boundary(const BoundaryMap& fits, int class_a, int class_b,
                                             MixCoefficient lambda_f) {
  if (auto it = fits.find({class_a, class_b}); it != fits.end()) {
    return apply_boundary(it->second, lambda_f);
  }
  if (auto it = fits.find({class_b, class_a}); it != fits.end()) {
    return apply_boundary(it->second, lambda_f.complement()).complement();
  }
  return std::nullopt;
}

FitAllResult fit_all_pairs(std::span<const Judgment> judgments, const FitAllOptions& options) {
  std::map<ClassPair, std::vector<CurvePoint>> by_pair;
  for (const auto& j : judgments) {
    if (j.kind != InterfaceKind::kInferCoefficient || (j.is_repeat && !options.include_repeats)) {
      continue;
    }
    int a = j.stimulus.class_a;
    int b = j.stimulus.class_b;
    double x = j.stimulus.lambda_f;
    double y = j.lambda_h;
    if (a > b) {
      std::swap(a, b);
      x = 1.0 - x;
      y = 1.0 - y;
    }
    by_pair[{a, b}].push_back({x, y});
  }

  FitAllResult result;
  for (auto& [pair, points] : by_pair) {
    if (options.use_medians) {
      std::map<double, std::vector<double>> buckets;
      for (const auto& p : points) {
        buckets[std::round(p.lambda_f * 1e6) / 1e6].push_back(p.lambda_h);
      }
      points.clear();
      for (auto& [x, ys] : buckets) {
        points.push_back({x, median(ys)});
      }
    }
    if (points.size() < std::max<std::size_t>(options.min_points, 4)) {
      result.insufficient.push_back(pair);
      continue;
    }
    auto fit = fit_boundary(points, std::nullopt, options.fit);
    fit.classes = pair;
    if (!fit.monotone) {
      result.non_monotone.push_back(pair);
    }
    if (!fit.converged) {
      result.not_converged.push_back(pair);
    }
    result.fits.emplace(pair, fit);
  }
  return result;
}

void write_fits(const BoundaryMap& fits, std::ostream& out) {
  out << kFitsHeader << '\n';
  for (const auto& [pair, fit] : fits) {
    out << pair.first << '\t' << pair.second << '\t' << format_decimal(fit.params.lower) << '\t'
        << format_decimal(fit.params.upper) << '\t' << format_decimal(fit.params.steepness) << '\t'
        << format_decimal(fit.params.midpoint) << '\t' << format_decimal(fit.residual_sse) << '\t' << fit.n_points
        << '\t' << (fit.monotone ? 1 : 0) << '\t' << (fit.converged ? 1 : 0) << '\n';
  }
}

void write_fits(const BoundaryMap& fits, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error("cannot open " + path.string() + " for writing");
  }
  write_fits(fits, out);
}

BoundaryMap read_fits(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kFitsHeader) {
    throw SchemaError("line 1: expected header '" + std::string(kFitsHeader) + "'");
  }
  BoundaryMap fits;
  std::size_t line_number = 1;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) {
      continue;
    }
    auto f = split(line, '\t');
    if (f.size() != 10) {
      throw ParseError(line_number, "fit record needs 10 fields");
    }
    auto a = parse_integer(f[0]);
    auto b = parse_integer(f[1]);
    std::array<std::optional<double>, 5> d{parse_decimal(f[2]), parse_decimal(f[3]), parse_decimal(f[4]),
                                           parse_decimal(f[5]), parse_decimal(f[6])};
    auto n = parse_integer(f[7]);
    auto mono = parse_integer(f[8]);
    auto conv = parse_integer(f[9]);
    bool ok = a && b && n && mono && conv && *a >= 0 && *b >= 0 && *a != *b && *n >= 0;
    for (const auto& v : d) {
      ok = ok && v.has_value();
    }
    if (!ok) {
      throw ParseError(line_number, "malformed fit record");
    }
    BoundaryFit fit;
    fit.classes = {static_cast<int>(*a), static_cast<int>(*b)};
    fit.params = {*d[0], *d[1], *d[2], *d[3]};
    fit.residual_sse = *d[4];
    fit.n_points = static_cast<std::size_t>(*n);
    fit.monotone = *mono != 0;
    fit.converged = *conv != 0;
    fits[fit.classes] = fit;
  }
  return fits;
}

BoundaryMap read_fits(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw NotFoundError("cannot open " + path.string());
  }
  return read_fits(in);
}

}  // namespace hmix
