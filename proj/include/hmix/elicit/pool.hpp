#pragma once

// Stimulus pools: endpoint images, class pairs for the grid-selection interfaces and single mixed
// stimuli for coefficient inference and soft-label reports.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "hmix/mixcore.hpp"
#include "hmix/traineval/dataset.hpp"

namespace hmix {

inline constexpr std::string_view kPoolVersion = "hmix-pool-v1";

struct PoolPair {
  std::string pair_id;
  std::string endpoint_a;
  std::string endpoint_b;
};

struct PoolStimulus {
  std::size_t pair = 0;  // index into pairs
  double lambda_f = 0.5;
};

class StimulusPool {
 public:
  std::vector<std::string> class_names;
  std::map<std::string, Endpoint> endpoints;
  std::vector<PoolPair> pairs;
  std::vector<PoolStimulus> inference;  // single mixed images for infer/soft-label sessions

  const Endpoint& endpoint(const std::string& id) const;
  // The stimulus for `pair` at lambda_f, computed from the stored endpoints.
  MixedStimulus stimulus(std::size_t pair, double lambda_f) const;
  std::vector<MixedStimulus> sweep(std::size_t pair, std::span<const MixCoefficient> grid) const;

  // Throws ValidationError on dangling references, duplicate ids or same-class pairs.
  void validate() const;
};

struct PoolOptions {
  std::size_t pairs_per_combination = 1;
  std::vector<double> inference_grid{0.1, 0.25, 0.5, 0.75, 0.9};
  // Midpoint enrichment: extra endpoint pairs per combination shown only at lambda_f = 0.5.
  std::size_t midpoint_extra_pairs = 0;
  std::uint64_t seed = 5;
};

// Endpoints are drawn per class from `images`; every unordered class combination gets
// `pairs_per_combination` pairs, each crossed with the inference grid.
StimulusPool build_pool(const Dataset& images, const std::vector<std::string>& class_names,
                        const PoolOptions& options = {});

// <dir>/pool.json plus <dir>/endpoints/<id>.ppm
void save_pool(const StimulusPool& pool, const std::filesystem::path& dir);
StimulusPool load_pool(const std::filesystem::path& dir);

// Writes every sweep stimulus of every pair as <dir>/<pair_id>@<lambda>.png; returns the count.
std::size_t write_sweep_images(const StimulusPool& pool, std::span<const MixCoefficient> grid,
                               const std::filesystem::path& dir);

}  // namespace hmix
