#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "hmix/boundaryfit.hpp"
#include "hmix/errors.hpp"

using namespace hmix;

namespace {

std::vector<CurvePoint> sample_curve(const LogisticParams& p, std::span<const double> grid) {
  std::vector<CurvePoint> pts;
  for (double x : grid) {
    pts.push_back({x, p(x)});
  }
  return pts;
}

double constant_sse(std::span<const CurvePoint> pts) {
  double mean = 0.0;
  for (const auto& p : pts) {
    mean += p.lambda_h;
  }
  mean /= static_cast<double>(pts.size());
  double sse = 0.0;
  for (const auto& p : pts) {
    sse += (p.lambda_h - mean) * (p.lambda_h - mean);
  }
  return sse;
}

Judgment judgment(int a, int b, double lf, double lh, std::uint32_t trial) {
  Judgment j;
  j.participant_id = "u";
  j.session_id = "s";
  j.trial_index = trial;
  j.kind = InterfaceKind::kInferCoefficient;
  j.stimulus = {"p" + std::to_string(a) + std::to_string(b), "ea", "eb", a, b, lf};
  j.lambda_h = lh;
  j.confidence = 0.5;
  return j;
}

const double kGrid5[] = {0.1, 0.25, 0.5, 0.75, 0.9};

}  // namespace

TEST(Logistic, Examples) {
  LogisticParams p{0.0, 1.0, 12.0, 0.5};
  EXPECT_DOUBLE_EQ(p(0.5), 0.5);
  EXPECT_NEAR(p(0.75), 1.0 / (1.0 + std::exp(-3.0)), 1e-15);
  EXPECT_NEAR(p(0.75), 0.9526, 5e-5);
  LogisticParams flat{0.2, 0.6, 0.0, 0.3};
  EXPECT_DOUBLE_EQ(flat(0.0), 0.4);
  EXPECT_DOUBLE_EQ(flat(0.9), 0.4);
}

TEST(ApplyBoundary, ClampsIntoUnitInterval) {
  BoundaryFit fit;
  fit.params = {-0.5, 1.5, 10.0, 0.5};
  EXPECT_EQ(apply_boundary(fit, MixCoefficient(0.0)).value(), 0.0);
  EXPECT_EQ(apply_boundary(fit, MixCoefficient(1.0)).value(), 1.0);
  EXPECT_DOUBLE_EQ(apply_boundary(fit, MixCoefficient(0.5)).value(), 0.5);
}

TEST(ApplyBoundary, MonotoneForPositiveSteepness) {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    BoundaryFit fit;
    fit.params = {uniform01(rng) * 0.3, 0.7 + uniform01(rng) * 0.3, 0.5 + uniform01(rng) * 40, uniform01(rng)};
    double prev = -1.0;
    for (int i = 0; i <= 1000; ++i) {
      double v = apply_boundary(fit, MixCoefficient(i / 1000.0)).value();
      ASSERT_GE(v, prev);
      prev = v;
    }
  }
}

TEST(ApplyBoundary, SwappedOrientation) {
  BoundaryMap fits;
  BoundaryFit fit;
  fit.classes = {2, 5};
  fit.params = {0.0, 1.0, 8.0, 0.4};
  fits[{2, 5}] = fit;
  double direct = apply_boundary(fits, 2, 5, MixCoefficient(0.3))->value();
  EXPECT_DOUBLE_EQ(direct, fit.params(0.3));
  double swapped = apply_boundary(fits, 5, 2, MixCoefficient(0.7))->value();
  EXPECT_NEAR(swapped, 1.0 - fit.params(0.3), 1e-15);
  EXPECT_FALSE(apply_boundary(fits, 1, 2, MixCoefficient(0.5)).has_value());
}

TEST(Fit, ZeroNoiseRecovery) {
  LogisticParams truth{0.02, 0.98, 12.0, 0.5};
  auto pts = sample_curve(truth, kGrid5);
  auto fit = fit_boundary(pts);
  EXPECT_NEAR(fit.params.lower, truth.lower, 1e-3);
  EXPECT_NEAR(fit.params.upper, truth.upper, 1e-3);
  EXPECT_NEAR(fit.params.steepness, truth.steepness, 1e-3);
  EXPECT_NEAR(fit.params.midpoint, truth.midpoint, 1e-3);
  EXPECT_TRUE(fit.monotone);
  EXPECT_EQ(fit.n_points, 5u);
}

TEST(Fit, ConstantData) {
  std::vector<CurvePoint> pts;
  for (double x : kGrid5) {
    pts.push_back({x, 0.5});
    pts.push_back({x, 0.5});
  }
  auto fit = fit_boundary(pts);
  for (int i = 0; i <= 100; ++i) {
    EXPECT_NEAR(fit.params(i / 100.0), 0.5, 1e-6);
  }
}

// Oracle: best SSE over a dense brute-force parameter grid. The optimizer must do at least as well,
// and the resulting curve must track the identity.
TEST(Fit, IdentityData) {
  std::vector<CurvePoint> pts;
  for (double x : kGrid5) {
    pts.push_back({x, x});
  }
  double brute = std::numeric_limits<double>::infinity();
  for (int ci = 0; ci <= 30; ++ci) {
    for (int di = 0; di <= 30; ++di) {
      for (int ki = 1; ki <= 40; ++ki) {
        for (int mi = 0; mi <= 20; ++mi) {
          LogisticParams p{-1.0 + ci * 0.05, 0.5 + di * 0.05, ki * 0.5, 0.3 + mi * 0.02};
          brute = std::min(brute, sum_squared_error(p, pts));
        }
      }
    }
  }
  auto fit = fit_boundary(pts);
  EXPECT_LE(fit.residual_sse, brute + 1e-12);
  for (int i = 0; i <= 80; ++i) {
    double x = 0.1 + i * 0.01;
    EXPECT_NEAR(apply_boundary(fit, MixCoefficient(x)).value(), x, 0.02) << x;
  }
}

TEST(Fit, NoWorseThanConstantAndOrderInvariant) {
  Rng rng(42);
  std::normal_distribution<double> noise(0.0, 0.1);
  for (int t = 0; t < 30; ++t) {
    std::vector<CurvePoint> pts;
    for (int i = 0; i < 12; ++i) {
      pts.push_back({uniform01(rng), std::clamp(uniform01(rng) * 0.5 + noise(rng), 0.0, 1.0)});
    }
    auto fit = fit_boundary(pts);
    EXPECT_LE(fit.residual_sse, constant_sse(pts) + 1e-9);
    EXPECT_NEAR(fit.residual_sse, sum_squared_error(fit.params, pts), 1e-12);
    auto shuffled = pts;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    auto again = fit_boundary(shuffled);
    EXPECT_NEAR(again.residual_sse, fit.residual_sse, 1e-9);
    for (double x : kGrid5) {
      EXPECT_NEAR(again.params(x), fit.params(x), 1e-4);
    }
  }
}

TEST(Fit, NoisyRecoveryRate) {
  Rng rng(2024);
  std::normal_distribution<double> noise(0.0, 0.02);
  std::vector<double> grid;
  for (int i = 0; i < 30; ++i) {
    grid.push_back(i / 29.0);
  }
  int recovered = 0;
  for (int t = 0; t < 200; ++t) {
    LogisticParams truth{0.2 * uniform01(rng), 0.8 + 0.2 * uniform01(rng), 4.0 + 16.0 * uniform01(rng),
                         0.3 + 0.4 * uniform01(rng)};
    std::vector<CurvePoint> pts;
    for (double x : grid) {
      // Responses live on [0,1].
      pts.push_back({x, std::clamp(truth(x) + noise(rng), 0.0, 1.0)});
    }
    auto fit = fit_boundary(pts);
    if (std::abs(fit.params.steepness - truth.steepness) <= 0.15 * truth.steepness) {
      ++recovered;
    }
  }
  EXPECT_GE(recovered, 190);
}

TEST(Fit, DecreasingDataIsNonMonotone) {
  LogisticParams truth{0.9, 0.1, 10.0, 0.5};
  auto fit = fit_boundary(sample_curve(truth, kGrid5));
  EXPECT_FALSE(fit.monotone);
  EXPECT_LT(fit.residual_sse, 1e-8);
}

TEST(Fit, RejectsTooFewPoints) {
  std::vector<CurvePoint> pts{{0.1, 0.1}, {0.5, 0.5}, {0.9, 0.9}};
  EXPECT_THROW(fit_boundary(pts), ValidationError);
}

TEST(FitAll, GroupsReorientsAndReportsInsufficient) {
  LogisticParams truth{0.0, 1.0, 10.0, 0.45};
  std::vector<Judgment> js;
  std::uint32_t trial = 0;
  for (double x : kGrid5) {
    // Half the judgments recorded with the endpoints swapped.
    js.push_back(judgment(1, 3, x, truth(x), trial++));
    js.push_back(judgment(3, 1, 1.0 - x, 1.0 - truth(x), trial++));
  }
  js.push_back(judgment(4, 6, 0.1, 0.1, trial++));
  js.push_back(judgment(4, 6, 0.5, 0.5, trial++));
  js.push_back(judgment(4, 6, 0.9, 0.9, trial++));
  auto result = fit_all_pairs(js);
  ASSERT_EQ(result.fits.size(), 1u);
  const auto& fit = result.fits.at({1, 3});
  EXPECT_EQ(fit.n_points, 10u);
  EXPECT_NEAR(fit.params.midpoint, 0.45, 1e-3);
  EXPECT_EQ(result.insufficient, (std::vector<ClassPair>{{4, 6}}));
}

TEST(FitsFile, RoundTrip) {
  BoundaryMap fits;
  BoundaryFit a;
  a.classes = {0, 1};
  a.params = {0.013, 0.97, 11.25, 0.4711};
  a.residual_sse = 0.0123;
  a.n_points = 40;
  fits[a.classes] = a;
  BoundaryFit b = a;
  b.classes = {2, 9};
  b.params.steepness = -3.5;
  b.monotone = false;
  b.converged = false;
  fits[b.classes] = b;
  std::ostringstream out;
  write_fits(fits, out);
  std::istringstream in(out.str());
  auto back = read_fits(in);
  ASSERT_EQ(back.size(), 2u);
  for (const auto& [k, f] : fits) {
    const auto& g = back.at(k);
    EXPECT_EQ(g.params, f.params);
    EXPECT_EQ(g.residual_sse, f.residual_sse);
    EXPECT_EQ(g.n_points, f.n_points);
    EXPECT_EQ(g.monotone, f.monotone);
    EXPECT_EQ(g.converged, f.converged);
  }
  std::istringstream bad("not-a-fits-file\n");
  EXPECT_ANY_THROW(read_fits(bad));
}
