#include "hmix/elicit/pool.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include "json.hpp"

#include "hmix/elicit/image_io.hpp"
#include "hmix/errors.hpp"
#include "hmix/text.hpp"

namespace hmix {

using nlohmann::json;

const Endpoint& StimulusPool::endpoint(const std::string& id) const {
  const auto it = endpoints.find(id);
  if (it == endpoints.end()) throw NotFoundError("unknown endpoint " + id);
  return it->second;
}

MixedStimulus StimulusPool::stimulus(std::size_t pair, double lambda_f) const {
  const MixCoefficient lambda(lambda_f);
  return sweep(pair, std::span<const MixCoefficient>(&lambda, 1)).front();
}

std::vector<MixedStimulus> StimulusPool::sweep(std::size_t pair, std::span<const MixCoefficient> grid) const {
  if (pair >= pairs.size()) throw NotFoundError("pair index " + std::to_string(pair) + " out of range");
  const PoolPair& p = pairs[pair];
  return sweep_stimuli(endpoint(p.endpoint_a), endpoint(p.endpoint_b), p.pair_id, grid);
}

void StimulusPool::validate() const {
  if (class_names.size() < 2) throw ValidationError("class_names", "need at least two classes");
  if (std::set<std::string>(class_names.begin(), class_names.end()).size() != class_names.size())
    throw ValidationError("class_names", "duplicate class name");
  const ImageTensor* shape = nullptr;
  for (const auto& [id, e] : endpoints) {
    if (id != e.id) throw ValidationError("endpoints", "key " + id + " does not match id " + e.id);
    if (!is_valid_identifier(id)) throw ValidationError("endpoints", "invalid id '" + id + "'");
    if (e.cls < 0 || e.cls >= static_cast<int>(class_names.size()))
      throw ValidationError("endpoints", id + ": class out of range");
    if (shape && !shape->same_shape(e.image)) throw ValidationError("endpoints", id + ": image shape differs");
    shape = &e.image;
  }
  std::set<std::string> ids;
  for (const auto& p : pairs) {
    if (!is_valid_identifier(p.pair_id)) throw ValidationError("pairs", "invalid pair id '" + p.pair_id + "'");
    if (!ids.insert(p.pair_id).second) throw ValidationError("pairs", "duplicate pair id " + p.pair_id);
    const auto a = endpoints.find(p.endpoint_a);
    const auto b = endpoints.find(p.endpoint_b);
    if (a == endpoints.end() || b == endpoints.end())
      throw ValidationError("pairs", p.pair_id + ": dangling endpoint reference");
    if (a->second.cls == b->second.cls) throw ValidationError("pairs", p.pair_id + ": endpoints share a class");
  }
  for (const auto& s : inference) {
    if (s.pair >= pairs.size()) throw ValidationError("inference", "pair index out of range");
    if (!(s.lambda_f >= 0.0 && s.lambda_f <= 1.0)) throw ValidationError("inference", "lambda_f outside [0,1]");
  }
}

StimulusPool build_pool(const Dataset& images, const std::vector<std::string>& class_names,
                        const PoolOptions& options) {
  const int k = static_cast<int>(class_names.size());
  if (k < 2) throw ValidationError("class_names", "need at least two classes");
  if (options.pairs_per_combination == 0) throw ValidationError("pairs_per_combination", "must be positive");
  for (double l : options.inference_grid) MixCoefficient{l};

  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < images.size(); ++i) {
    const int c = images.labels[i];
    if (c >= 0 && c < k) by_class[static_cast<std::size_t>(c)].push_back(i);
  }
  Rng rng(options.seed);
  for (int c = 0; c < k; ++c) {
    auto& v = by_class[static_cast<std::size_t>(c)];
    if (v.empty()) throw ValidationError("images", "no images of class " + class_names[static_cast<std::size_t>(c)]);
    std::shuffle(v.begin(), v.end(), rng);
  }

  StimulusPool pool;
  pool.class_names = class_names;
  std::vector<std::size_t> next(static_cast<std::size_t>(k), 0);
  // Endpoints are used round-robin within each class, so with enough images every pair is fresh.
  auto take = [&](int c) -> const Endpoint& {
    const auto& v = by_class[static_cast<std::size_t>(c)];
    const std::size_t idx = v[next[static_cast<std::size_t>(c)]++ % v.size()];
    Endpoint e{images.ids[idx], c, {}};
    const ImageTensor src = images.image(idx);
    // Quantized up front so a saved and reloaded pool renders identical stimuli.
    const auto bytes = src.to_bytes();
    e.image = ImageTensor::from_bytes(src.height(), src.width(), src.channels(), bytes);
    return pool.endpoints.try_emplace(e.id, std::move(e)).first->second;
  };

  auto add_pairs = [&](std::size_t per_combination, const std::string& tag, const std::vector<double>& grid) {
    for (int a = 0; a < k; ++a)
      for (int b = a + 1; b < k; ++b)
        for (std::size_t r = 0; r < per_combination; ++r) {
          const std::string ea = take(a).id;
          const std::string eb = take(b).id;
          const std::size_t pair = pool.pairs.size();
          pool.pairs.push_back({tag + std::to_string(a) + "-" + std::to_string(b) + "-" + std::to_string(r), ea, eb});
          for (double l : grid) pool.inference.push_back({pair, l});
        }
  };
  add_pairs(options.pairs_per_combination, "p", options.inference_grid);
  if (options.midpoint_extra_pairs > 0) add_pairs(options.midpoint_extra_pairs, "m", {0.5});

  pool.validate();
  return pool;
}

void save_pool(const StimulusPool& pool, const std::filesystem::path& dir) {
  pool.validate();
  std::filesystem::create_directories(dir / "endpoints");
  json j;
  j["version"] = kPoolVersion;
  j["class_names"] = pool.class_names;
  j["endpoints"] = json::array();
  for (const auto& [id, e] : pool.endpoints) {
    write_ppm(e.image, dir / "endpoints" / (id + ".ppm"));
    j["endpoints"].push_back({{"id", id}, {"class", e.cls}, {"file", "endpoints/" + id + ".ppm"}});
  }
  j["pairs"] = json::array();
  for (const auto& p : pool.pairs) j["pairs"].push_back({{"pair_id", p.pair_id}, {"a", p.endpoint_a}, {"b", p.endpoint_b}});
  j["inference"] = json::array();
  for (const auto& s : pool.inference)
    j["inference"].push_back({{"pair_id", pool.pairs[s.pair].pair_id}, {"lambda_f", s.lambda_f}});
  std::ofstream out(dir / "pool.json");
  if (!out) throw Error("cannot write " + (dir / "pool.json").string());
  out << j.dump(1) << '\n';
}

StimulusPool load_pool(const std::filesystem::path& dir) {
  const auto path = dir / "pool.json";
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open " + path.string());
  StimulusPool pool;
  try {
    const json j = json::parse(in);
    if (j.at("version").get<std::string>() != kPoolVersion)
      throw SchemaError(path.string() + ": unsupported version " + j.at("version").dump());
    pool.class_names = j.at("class_names").get<std::vector<std::string>>();
    for (const auto& e : j.at("endpoints")) {
      Endpoint ep{e.at("id").get<std::string>(), e.at("class").get<int>(),
                  read_ppm(dir / e.at("file").get<std::string>())};
      pool.endpoints.emplace(ep.id, std::move(ep));
    }
    std::map<std::string, std::size_t> index;
    for (const auto& p : j.at("pairs")) {
      index[p.at("pair_id").get<std::string>()] = pool.pairs.size();
      pool.pairs.push_back({p.at("pair_id").get<std::string>(), p.at("a").get<std::string>(), p.at("b").get<std::string>()});
    }
    for (const auto& s : j.at("inference")) {
      const auto it = index.find(s.at("pair_id").get<std::string>());
      if (it == index.end()) throw SchemaError(path.string() + ": inference entry names unknown pair");
      pool.inference.push_back({it->second, s.at("lambda_f").get<double>()});
    }
  } catch (const json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
  pool.validate();
  return pool;
}

std::size_t write_sweep_images(const StimulusPool& pool, std::span<const MixCoefficient> grid,
                               const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::size_t count = 0;
  for (std::size_t p = 0; p < pool.pairs.size(); ++p) {
    for (const auto& s : pool.sweep(p, grid)) {
      const auto png = encode_png(s.mixed_image);
      std::ofstream out(dir / (s.stimulus_id() + ".png"), std::ios::binary);
      out.write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
      if (!out) throw Error("cannot write sweep image in " + dir.string());
      ++count;
    }
  }
  return count;
}

}  // namespace hmix
