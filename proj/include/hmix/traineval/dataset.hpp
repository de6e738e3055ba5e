#pragma once

// In-memory image classification sets: the procedural shapes benchmark and a reader for the
// CIFAR-10 binary batch format.

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hmix/hmixdata.hpp"
#include "hmix/mixcore.hpp"

namespace hmix {

// Examples are stored column-wise: inputs is D x N (flattened HWC images), targets is K x N.
struct Dataset {
  int height = 32;
  int width = 32;
  int channels = 3;
  int num_classes = 10;
  Eigen::MatrixXd inputs;
  Eigen::MatrixXd targets;
  std::vector<int> labels;  // hard reference classes
  std::vector<std::string> ids;

  std::size_t size() const noexcept { return labels.size(); }
  int input_dim() const noexcept { return height * width * channels; }
  ImageTensor image(std::size_t i) const;
  LabelDistribution target(std::size_t i) const;

  // Hard label defaults to the target's argmax.
  void reserve(std::size_t n);
  void push_back(const ImageTensor& image, const LabelDistribution& target, std::string id, int label = -1);
  void finalize();  // trims storage to size()

  Dataset subset(std::size_t begin, std::size_t end) const;

 private:
  std::size_t filled_ = 0;
};

inline constexpr std::array<std::string_view, 10> kShapeClassNames = {
    "hstripes", "vstripes", "diagonal", "checker", "disk", "square", "ring", "cross", "gradient", "dots"};

struct ShapesOptions {
  int height = 32;
  int width = 32;
  double noise_sd = 0.1;
  // Each image blends in a second class pattern with weight w = max_ambiguity * u^2, u ~ U(0,1).
  double max_ambiguity = 0.45;
  // Simulated annotators per image for the frequency table.
  int annotators = 50;
  // Fraction of annotator votes that land uniformly at random.
  double annotator_noise = 0.03;
  // Share of images given ambiguity at all; the rest are clean.
  double ambiguous_fraction = 1.0;
};

struct ShapesSet {
  Dataset data;
  LabelFrequencyTable frequencies;
  std::vector<double> ambiguity;  // blend weight of the distractor pattern
};

// Pattern mask in [0,1] of one class, with random pose and period drawn from rng.
ImageTensor render_shape(int cls, Rng& rng, const ShapesOptions& options);

// Balanced classes in a shuffled order. With `soft_targets` the targets are the annotator vote
// frequencies; otherwise one-hot of the generating class. Ids are "<prefix>-<index>".
ShapesSet generate_shapes(std::size_t count, std::uint64_t seed, const ShapesOptions& options, bool soft_targets,
                          const std::string& id_prefix = "shape");

// CIFAR-10 binary batch: 3073-byte records (label byte + 1024 R + 1024 G + 1024 B). Reads at most
// `limit` records starting at record `offset`. Ids are "<prefix>-<record index>".
Dataset read_cifar10(const std::filesystem::path& path, std::size_t offset = 0,
                     std::size_t limit = static_cast<std::size_t>(-1), const std::string& id_prefix = "cifar");

// Replaces targets with normalized frequency rows where the table has the example's id.
std::size_t apply_frequency_targets(Dataset& data, const LabelFrequencyTable& table);

}  // namespace hmix
