#include "hmix/traineval/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "hmix/errors.hpp"

namespace hmix {

ImageTensor Dataset::image(std::size_t i) const {
  std::vector<double> v(inputs.col(static_cast<Eigen::Index>(i)).data(),
                        inputs.col(static_cast<Eigen::Index>(i)).data() + inputs.rows());
  return ImageTensor(height, width, channels, std::move(v));
}

LabelDistribution Dataset::target(std::size_t i) const {
  auto col = targets.col(static_cast<Eigen::Index>(i));
  return LabelDistribution(std::vector<double>(col.data(), col.data() + col.size()));
}

void Dataset::reserve(std::size_t n) {
  if (static_cast<Eigen::Index>(n) > inputs.cols()) {
    inputs.conservativeResize(input_dim(), static_cast<Eigen::Index>(n));
    targets.conservativeResize(num_classes, static_cast<Eigen::Index>(n));
  }
  labels.reserve(n);
  ids.reserve(n);
}

void Dataset::push_back(const ImageTensor& image, const LabelDistribution& target, std::string id, int label) {
  if (image.height() != height || image.width() != width || image.channels() != channels) {
    throw ShapeError("image shape does not match the dataset");
  }
  if (target.num_classes() != num_classes) {
    throw ShapeError("target has " + std::to_string(target.num_classes()) + " classes, dataset has " +
                     std::to_string(num_classes));
  }
  if (filled_ == static_cast<std::size_t>(inputs.cols())) {
    reserve(std::max<std::size_t>(64, filled_ * 2));
  }
  auto col = static_cast<Eigen::Index>(filled_);
  auto px = image.data();
  std::copy(px.begin(), px.end(), inputs.col(col).data());
  auto pr = target.probs();
  std::copy(pr.begin(), pr.end(), targets.col(col).data());
  labels.push_back(label >= 0 ? label : target.argmax());
  ids.push_back(std::move(id));
  ++filled_;
}

void Dataset::finalize() {
  inputs.conservativeResize(input_dim(), static_cast<Eigen::Index>(filled_));
  targets.conservativeResize(num_classes, static_cast<Eigen::Index>(filled_));
}

Dataset Dataset::subset(std::size_t begin, std::size_t end) const {
  if (begin > end || end > size()) {
    throw ValidationError("subset", "range out of bounds");
  }
  Dataset out;
  out.height = height;
  out.width = width;
  out.channels = channels;
  out.num_classes = num_classes;
  auto b = static_cast<Eigen::Index>(begin);
  auto n = static_cast<Eigen::Index>(end - begin);
  out.inputs = inputs.middleCols(b, n);
  out.targets = targets.middleCols(b, n);
  out.labels.assign(labels.begin() + b, labels.begin() + b + n);
  out.ids.assign(ids.begin() + b, ids.begin() + b + n);
  out.filled_ = end - begin;
  return out;
}

namespace {

double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

// Foreground/background colors: a bright and a dark tone with a shared random tint.
void pick_colors(Rng& rng, double fg[3], double bg[3]) {
  for (int c = 0; c < 3; ++c) {
    fg[c] = uniform(rng, 0.6, 1.0);
    bg[c] = uniform(rng, 0.0, 0.3);
  }
}

}  // namespace

ImageTensor render_shape(int cls, Rng& rng, const ShapesOptions& options) {
  const int h = options.height;
  const int w = options.width;
  const double two_pi = 2.0 * std::numbers::pi;
  const double cy = (h - 1) / 2.0 + uniform(rng, -4.0, 4.0);
  const double cx = (w - 1) / 2.0 + uniform(rng, -4.0, 4.0);
  std::vector<double> mask(static_cast<std::size_t>(h * w), 0.0);

  auto fill = [&](auto&& fn) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        mask[static_cast<std::size_t>(y * w + x)] = fn(static_cast<double>(y), static_cast<double>(x));
      }
    }
  };

  switch (cls) {
    case 0:
    case 1: {
      double period = uniform(rng, 6.0, 10.0);
      double phase = uniform(rng, 0.0, period);
      fill([&](double y, double x) { return std::sin(two_pi * ((cls == 0 ? y : x) + phase) / period) > 0 ? 1.0 : 0.0; });
      break;
    }
    case 2: {
      double period = uniform(rng, 7.0, 11.0);
      double phase = uniform(rng, 0.0, period);
      bool flip = uniform01(rng) < 0.5;
      fill([&](double y, double x) {
        double t = flip ? x - y : x + y;
        return std::sin(two_pi * (t + phase) / period) > 0 ? 1.0 : 0.0;
      });
      break;
    }
    case 3: {
      int cell = 4 + static_cast<int>(uniform01(rng) * 5);
      int oy = static_cast<int>(uniform01(rng) * cell);
      int ox = static_cast<int>(uniform01(rng) * cell);
      fill([&](double y, double x) {
        int iy = (static_cast<int>(y) + oy) / cell;
        int ix = (static_cast<int>(x) + ox) / cell;
        return (iy + ix) % 2 == 0 ? 1.0 : 0.0;
      });
      break;
    }
    case 4: {
      double r = uniform(rng, 7.0, 11.0);
      fill([&](double y, double x) { return std::hypot(y - cy, x - cx) <= r ? 1.0 : 0.0; });
      break;
    }
    case 5: {
      double s = uniform(rng, 6.0, 10.0);
      fill([&](double y, double x) { return std::abs(y - cy) <= s && std::abs(x - cx) <= s ? 1.0 : 0.0; });
      break;
    }
    case 6: {
      double r = uniform(rng, 8.0, 12.0);
      double t = uniform(rng, 2.0, 3.5);
      fill([&](double y, double x) { return std::abs(std::hypot(y - cy, x - cx) - r) <= t / 2 ? 1.0 : 0.0; });
      break;
    }
    case 7: {
      double half = uniform(rng, 2.0, 3.0);
      fill([&](double y, double x) { return std::abs(y - cy) <= half || std::abs(x - cx) <= half ? 1.0 : 0.0; });
      break;
    }
    case 8: {
      double angle = uniform(rng, 0.0, two_pi);
      double dy = std::sin(angle);
      double dx = std::cos(angle);
      double extent = 0.5 * (std::abs(dy) * (h - 1) + std::abs(dx) * (w - 1));
      fill([&](double y, double x) {
        double t = (y - (h - 1) / 2.0) * dy + (x - (w - 1) / 2.0) * dx;
        return std::clamp(0.5 + 0.5 * t / extent, 0.0, 1.0);
      });
      break;
    }
    case 9: {
      double spacing = uniform(rng, 6.0, 8.0);
      double r = uniform(rng, 1.5, 2.2);
      double oy = uniform(rng, 0.0, spacing);
      double ox = uniform(rng, 0.0, spacing);
      fill([&](double y, double x) {
        double my = std::fmod(y + oy, spacing) - spacing / 2;
        double mx = std::fmod(x + ox, spacing) - spacing / 2;
        return std::hypot(my, mx) <= r ? 1.0 : 0.0;
      });
      break;
    }
    default:
      throw ValidationError("class", "shape classes are 0..9, got " + std::to_string(cls));
  }

  double fg[3];
  double bg[3];
  pick_colors(rng, fg, bg);
  std::vector<double> px(static_cast<std::size_t>(h * w * 3));
  for (std::size_t i = 0; i < mask.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      px[i * 3 + c] = bg[c] + (fg[c] - bg[c]) * mask[i];
    }
  }
  return ImageTensor(h, w, 3, std::move(px));
}

ShapesSet generate_shapes(std::size_t count, std::uint64_t seed, const ShapesOptions& options, bool soft_targets,
                          const std::string& id_prefix) {
  constexpr int kClasses = 10;
  Rng rng(seed);
  std::vector<int> classes(count);
  for (std::size_t i = 0; i < count; ++i) {
    classes[i] = static_cast<int>(i % kClasses);
  }
  std::shuffle(classes.begin(), classes.end(), rng);

  ShapesSet out;
  out.data.height = options.height;
  out.data.width = options.width;
  out.data.channels = 3;
  out.data.num_classes = kClasses;
  out.data.reserve(count);
  out.ambiguity.reserve(count);
  std::normal_distribution<double> noise(0.0, 1.0);

  for (std::size_t i = 0; i < count; ++i) {
    int cls = classes[i];
    ImageTensor base = render_shape(cls, rng, options);
    int other = static_cast<int>(uniform01(rng) * (kClasses - 1));
    if (other >= cls) {
      ++other;
    }
    ImageTensor distractor = render_shape(other, rng, options);
    double u = uniform01(rng);
    double weight = uniform01(rng) < options.ambiguous_fraction ? options.max_ambiguity * u * u : 0.0;
    ImageTensor blended = data_mix(base, distractor, MixCoefficient(1.0 - weight));

    std::vector<double> px(blended.data().begin(), blended.data().end());
    for (double& v : px) {
      v = std::clamp(v + options.noise_sd * noise(rng), 0.0, 1.0);
    }
    ImageTensor img(options.height, options.width, 3, std::move(px));

    // Annotators see the distractor with a sharpened share of the blend weight.
    double share = weight * weight / (weight * weight + (1.0 - weight) * (1.0 - weight));
    std::vector<double> p(kClasses, options.annotator_noise / kClasses);
    p[static_cast<std::size_t>(cls)] += (1.0 - options.annotator_noise) * (1.0 - share);
    p[static_cast<std::size_t>(other)] += (1.0 - options.annotator_noise) * share;
    std::vector<std::int64_t> counts(kClasses, 0);
    for (int a = 0; a < options.annotators; ++a) {
      double r = uniform01(rng);
      int k = 0;
      while (k + 1 < kClasses && r >= p[static_cast<std::size_t>(k)]) {
        r -= p[static_cast<std::size_t>(k)];
        ++k;
      }
      ++counts[static_cast<std::size_t>(k)];
    }

    std::string id = id_prefix + "-" + std::to_string(i);
    LabelDistribution target = LabelDistribution::one_hot(cls, kClasses);
    if (soft_targets && options.annotators > 0) {
      target = LabelDistribution::normalized(std::vector<double>(counts.begin(), counts.end()));
    }
    out.frequencies.set(id, counts);
    out.data.push_back(img, target, id, cls);
    out.ambiguity.push_back(weight);
  }
  out.data.finalize();
  return out;
}

Dataset read_cifar10(const std::filesystem::path& path, std::size_t offset, std::size_t limit,
                     const std::string& id_prefix) {
  constexpr std::size_t kRecord = 3073;
  constexpr int kSide = 32;
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw NotFoundError("cannot open " + path.string());
  }
  auto bytes = std::filesystem::file_size(path);
  if (bytes % kRecord != 0) {
    throw SchemaError(path.string() + ": size " + std::to_string(bytes) + " is not a multiple of 3073");
  }
  std::size_t records = bytes / kRecord;
  Dataset out;
  if (offset >= records) {
    out.finalize();
    return out;
  }
  std::size_t n = std::min(limit, records - offset);
  out.reserve(n);
  in.seekg(static_cast<std::streamoff>(offset * kRecord));
  std::vector<std::uint8_t> rec(kRecord);
  std::vector<std::uint8_t> hwc(kRecord - 1);
  for (std::size_t i = 0; i < n; ++i) {
    if (!in.read(reinterpret_cast<char*>(rec.data()), static_cast<std::streamsize>(kRecord))) {
      throw SchemaError(path.string() + ": truncated record " + std::to_string(offset + i));
    }
    int label = rec[0];
    if (label > 9) {
      throw SchemaError(path.string() + ": record " + std::to_string(offset + i) + " has label " +
                        std::to_string(label));
    }
    // Planar RGB to interleaved HWC.
    for (int p = 0; p < kSide * kSide; ++p) {
      for (int c = 0; c < 3; ++c) {
        hwc[static_cast<std::size_t>(p * 3 + c)] = rec[1 + static_cast<std::size_t>(c * kSide * kSide + p)];
      }
    }
    out.push_back(ImageTensor::from_bytes(kSide, kSide, 3, hwc), LabelDistribution::one_hot(label, 10),
                  id_prefix + "-" + std::to_string(offset + i), label);
  }
  out.finalize();
  return out;
}

std::size_t apply_frequency_targets(Dataset& data, const LabelFrequencyTable& table) {
  std::size_t applied = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto* counts = table.find(data.ids[i]);
    if (counts == nullptr) {
      continue;
    }
    if (static_cast<int>(counts->size()) != data.num_classes) {
      throw ShapeError("frequency row for " + data.ids[i] + " has the wrong class count");
    }
    auto t = LabelDistribution::normalized(std::vector<double>(counts->begin(), counts->end()));
    auto pr = t.probs();
    std::copy(pr.begin(), pr.end(), data.targets.col(static_cast<Eigen::Index>(i)).data());
    ++applied;
  }
  return applied;
}

}  // namespace hmix
