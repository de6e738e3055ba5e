#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "hmix/errors.hpp"
#include "hmix/mixcore.hpp"
#include "hmix/text.hpp"

using namespace hmix;

namespace {

ImageTensor vec_image(std::vector<double> v) {
  int n = static_cast<int>(v.size());
  return ImageTensor(1, n, 1, std::move(v));
}

ImageTensor random_image(Rng& rng, int h, int w, int c) {
  std::vector<double> v(static_cast<std::size_t>(h * w * c));
  for (double& x : v) {
    x = uniform01(rng);
  }
  return ImageTensor(h, w, c, std::move(v));
}

LabelDistribution random_label(Rng& rng, int k) {
  std::vector<double> w(static_cast<std::size_t>(k));
  for (double& x : w) {
    x = uniform01(rng) < 0.3 ? 0.0 : uniform01(rng);
  }
  w[0] += 1e-3;
  return LabelDistribution::normalized(w);
}

}  // namespace

TEST(MixCoefficient, RejectsOutOfRange) {
  EXPECT_THROW(MixCoefficient(-0.01), ValidationError);
  EXPECT_THROW(MixCoefficient(1.5), ValidationError);
  EXPECT_NO_THROW(MixCoefficient(0.0));
  EXPECT_NO_THROW(MixCoefficient(1.0));
}

TEST(MixCoefficient, ComplementRoundTripsExactly) {
  MixCoefficient l(0.1);
  EXPECT_EQ(l.complement().complement().value(), 0.1);
  EXPECT_EQ(l.complement().value(), 1.0 - 0.1);
}

TEST(ImageTensor, ValidatesShapeAndRange) {
  EXPECT_THROW(ImageTensor(2, 2, 1, {0.1, 0.2, 0.3}), ShapeError);
  EXPECT_THROW(ImageTensor(1, 2, 1, {0.1, 1.2}), ValidationError);
  auto img = ImageTensor(1, 2, 3, {0, 0.1, 0.2, 0.3, 0.4, 0.5});
  EXPECT_EQ(img.at(0, 1, 2), 0.5);
  EXPECT_EQ(img.index(0, 1, 0), 3u);
}

TEST(ImageTensor, ByteRoundTrip) {
  std::vector<std::uint8_t> bytes{0, 1, 127, 128, 254, 255};
  auto img = ImageTensor::from_bytes(1, 2, 3, bytes);
  EXPECT_EQ(img.to_bytes(), bytes);
}

TEST(DataMix, SpecExamples) {
  auto half = data_mix(vec_image({1, 0}), vec_image({0, 1}), MixCoefficient(0.5));
  EXPECT_EQ(half.data()[0], 0.5);
  EXPECT_EQ(half.data()[1], 0.5);

  auto out = data_mix(vec_image({0.8, 0.2}), vec_image({0.0, 0.6}), MixCoefficient(0.75));
  EXPECT_NEAR(out.data()[0], 0.6, 1e-12);
  EXPECT_NEAR(out.data()[1], 0.3, 1e-12);
}

TEST(DataMix, IdentityCases) {
  Rng rng(3);
  auto a = random_image(rng, 4, 4, 3);
  auto b = random_image(rng, 4, 4, 3);
  EXPECT_EQ(data_mix(a, b, MixCoefficient(1.0)), a);
  EXPECT_EQ(data_mix(a, b, MixCoefficient(0.0)), b);
}

TEST(DataMix, ShapeMismatch) {
  EXPECT_THROW(data_mix(ImageTensor::filled(2, 2, 3, 0.1), ImageTensor::filled(2, 2, 1, 0.1), MixCoefficient(0.5)),
               ShapeError);
}

TEST(LabelMix, SpecExamples) {
  auto y = label_mix(LabelDistribution::one_hot(3, 10), LabelDistribution::one_hot(7, 10), MixCoefficient(0.5));
  EXPECT_EQ(y[3], 0.5);
  EXPECT_EQ(y[7], 0.5);
  auto z = label_mix(LabelDistribution::one_hot(0, 3), LabelDistribution::one_hot(1, 3), MixCoefficient(0.75));
  EXPECT_EQ(z[0], 0.75);
  EXPECT_EQ(z[1], 0.25);
  EXPECT_EQ(z[2], 0.0);
  auto yb = LabelDistribution::one_hot(2, 4);
  EXPECT_EQ(label_mix(LabelDistribution::one_hot(1, 4), yb, MixCoefficient(0.0)), yb);
  EXPECT_THROW(label_mix(LabelDistribution::one_hot(0, 3), LabelDistribution::one_hot(0, 4), MixCoefficient(0.5)),
               ShapeError);
}

TEST(LabelDistribution, Validation) {
  EXPECT_THROW(LabelDistribution({0.5, 0.6}), ValidationError);
  EXPECT_THROW(LabelDistribution({-0.1, 1.1}), ValidationError);
  EXPECT_THROW(LabelDistribution::normalized({0.0, 0.0}), ValidationError);
  EXPECT_EQ(LabelDistribution::uniform(4)[2], 0.25);
  EXPECT_EQ(LabelDistribution({0.1, 0.7, 0.2}).argmax(), 1);
}

// Mirror symmetry, convexity and simplex normalization over 10^4 random cases.
TEST(MixProperties, RandomSweep) {
  Rng rng(20240601);
  for (int trial = 0; trial < 10000; ++trial) {
    int k = 2 + static_cast<int>(uniform01(rng) * 9);
    auto a = random_image(rng, 2, 3, 3);
    auto b = random_image(rng, 2, 3, 3);
    auto ya = random_label(rng, k);
    auto yb = random_label(rng, k);
    MixCoefficient l(uniform01(rng));

    auto x = data_mix(a, b, l);
    ASSERT_EQ(x, data_mix(b, a, l.complement()));
    for (std::size_t p = 0; p < x.size(); ++p) {
      ASSERT_GE(x.data()[p], std::min(a.data()[p], b.data()[p]));
      ASSERT_LE(x.data()[p], std::max(a.data()[p], b.data()[p]));
    }

    auto y = label_mix(ya, yb, l);
    ASSERT_EQ(y, label_mix(yb, ya, l.complement()));
    double sum = 0.0;
    for (int c = 0; c < k; ++c) {
      ASSERT_GE(y[c], std::min(ya[c], yb[c]));
      ASSERT_LE(y[c], std::max(ya[c], yb[c]));
      sum += y[c];
    }
    ASSERT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(SampleLambda, BetaUniformMean) {
  Rng rng(11);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    sum += sample_lambda(BetaDistribution{1.0, 1.0}, rng).value();
  }
  EXPECT_NEAR(sum / n, 0.5, 0.01);
}

TEST(SampleLambda, BetaGeneralMean) {
  Rng rng(12);
  double sum = 0.0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    sum += sample_lambda(BetaDistribution{2.0, 6.0}, rng).value();
  }
  EXPECT_NEAR(sum / n, 0.25, 0.01);
}

TEST(SampleLambda, DiscreteMembership) {
  Rng rng(5);
  DiscreteDistribution d{{0.1, 0.25, 0.5, 0.75, 0.9}, {}};
  std::set<double> allowed(d.values.begin(), d.values.end());
  std::set<double> seen;
  for (int i = 0; i < 2000; ++i) {
    double v = sample_lambda(d, rng).value();
    ASSERT_TRUE(allowed.count(v));
    seen.insert(v);
  }
  EXPECT_EQ(seen, allowed);
}

TEST(SampleLambda, DiscreteWeights) {
  Rng rng(8);
  DiscreteDistribution d{{0.2, 0.8}, {3.0, 1.0}};
  int low = 0;
  const int n = 40000;
  for (int i = 0; i < n; ++i) {
    low += sample_lambda(d, rng).value() == 0.2 ? 1 : 0;
  }
  EXPECT_NEAR(low / static_cast<double>(n), 0.75, 0.01);
}

TEST(SampleLambda, DeterministicPerSeed) {
  Rng r1(99);
  Rng r2(99);
  for (int i = 0; i < 100; ++i) {
    ASSERT_EQ(sample_lambda(BetaDistribution{0.4, 0.4}, r1).value(),
              sample_lambda(BetaDistribution{0.4, 0.4}, r2).value());
  }
}

TEST(SampleLambda, RejectsBadDistributions) {
  EXPECT_THROW(validate(BetaDistribution{0.0, 1.0}), ValidationError);
  EXPECT_THROW(validate(BetaDistribution{1.0, -2.0}), ValidationError);
  EXPECT_THROW(validate(DiscreteDistribution{{}, {}}), ValidationError);
  EXPECT_THROW(validate(DiscreteDistribution{{0.5, 1.5}, {}}), ValidationError);
  EXPECT_THROW(validate(DiscreteDistribution{{0.5, 0.6}, {1.0}}), ValidationError);
}

TEST(Sweep, DefaultGridGivesElevenStimuli) {
  Rng rng(1);
  Endpoint a{"a", 0, random_image(rng, 4, 4, 3)};
  Endpoint b{"b", 1, random_image(rng, 4, 4, 3)};
  auto grid = default_sweep_grid();
  auto stimuli = sweep_stimuli(a, b, "p", grid);
  ASSERT_EQ(stimuli.size(), 11u);
  EXPECT_EQ(stimuli.front().mixed_image, b.image);
  EXPECT_EQ(stimuli.back().mixed_image, a.image);
  for (std::size_t i = 0; i < stimuli.size(); ++i) {
    // Coefficients round-trip through their decimal form.
    auto text = format_decimal(stimuli[i].lambda_f.value());
    EXPECT_EQ(parse_decimal(text).value(), grid[i].value());
    EXPECT_EQ(stimuli[i].mixed_image, data_mix(a.image, b.image, stimuli[i].lambda_f));
  }
  EXPECT_EQ(stimuli[1].stimulus_id(), "p@0.1");
}

TEST(Sweep, SingleMidpointAndErrors) {
  Endpoint a{"a", 0, ImageTensor::filled(2, 2, 3, 1.0)};
  Endpoint b{"b", 1, ImageTensor::filled(2, 2, 3, 0.0)};
  std::vector<MixCoefficient> mid{MixCoefficient(0.5)};
  auto s = sweep_stimuli(a, b, "p", mid);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].mixed_image, ImageTensor::filled(2, 2, 3, 0.5));
  Endpoint same{"c", 0, ImageTensor::filled(2, 2, 3, 0.2)};
  EXPECT_THROW(sweep_stimuli(a, same, "p", mid), ValidationError);
  std::vector<MixCoefficient> unsorted{MixCoefficient(0.5), MixCoefficient(0.1)};
  EXPECT_THROW(sweep_stimuli(a, b, "p", unsorted), ValidationError);
}

TEST(Grids, InferenceGrid) {
  auto g = inference_grid();
  ASSERT_EQ(g.size(), 5u);
  EXPECT_EQ(g[0].value(), 0.1);
  EXPECT_EQ(g[1].value(), 0.25);
  EXPECT_EQ(g[2].value(), 0.5);
  EXPECT_EQ(g[3].value(), 0.75);
  EXPECT_EQ(g[4].value(), 0.9);
}

TEST(Text, DecimalRoundTrip) {
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    double v = uniform01(rng);
    EXPECT_EQ(parse_decimal(format_decimal(v)).value(), v);
  }
  EXPECT_EQ(format_decimal(0.1), "0.1");
  EXPECT_FALSE(parse_decimal("0.1x").has_value());
  EXPECT_FALSE(parse_decimal("nan").has_value());
  EXPECT_FALSE(parse_decimal("").has_value());
  EXPECT_FALSE(parse_integer("12a").has_value());
  EXPECT_TRUE(is_valid_identifier("pair-3:7.x_1"));
  EXPECT_FALSE(is_valid_identifier("has space"));
  EXPECT_FALSE(is_valid_identifier(""));
}
