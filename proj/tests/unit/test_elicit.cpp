#include <gtest/gtest.h>
#include <zlib.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "hmix/elicit/image_io.hpp"
#include "hmix/elicit/pool.hpp"
#include "hmix/elicit/server.hpp"
#include "hmix/elicit/session.hpp"
#include "hmix/errors.hpp"

// After the Eigen users: the resolver header pulled in here defines `_res`.
#include "httplib.h"
#include "json.hpp"

namespace hmix {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::vector<std::string> shape_names() { return {kShapeClassNames.begin(), kShapeClassNames.end()}; }

std::shared_ptr<const StimulusPool> shared_pool() {
  static const auto pool = [] {
    ShapesOptions opts;
    opts.height = 8;
    opts.width = 8;
    const auto set = generate_shapes(120, 3, opts, false);
    return std::make_shared<const StimulusPool>(build_pool(set.data, shape_names()));
  }();
  return pool;
}

fs::path temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("hmix_elicit_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) | b[at + 3];
}

// Minimal PNG reader for the subset the encoder writes: returns the filtered scanlines.
std::vector<std::uint8_t> png_scanlines(const std::vector<std::uint8_t>& png, std::uint32_t& w, std::uint32_t& h) {
  std::vector<std::uint8_t> idat;
  std::size_t at = 8;
  while (at < png.size()) {
    const std::uint32_t len = be32(png, at);
    const std::string type(png.begin() + static_cast<long>(at) + 4, png.begin() + static_cast<long>(at) + 8);
    const uLong crc = crc32(0L, png.data() + at + 4, len + 4);
    EXPECT_EQ(crc, be32(png, at + 8 + len)) << type;
    if (type == "IHDR") {
      w = be32(png, at + 8);
      h = be32(png, at + 12);
    } else if (type == "IDAT") {
      idat.insert(idat.end(), png.begin() + static_cast<long>(at) + 8, png.begin() + static_cast<long>(at) + 8 + len);
    }
    at += 12 + len;
  }
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(h) * (w * 3 + 1) * 4);
  uLongf n = raw.size();
  EXPECT_EQ(uncompress(raw.data(), &n, idat.data(), static_cast<uLong>(idat.size())), Z_OK);
  raw.resize(n);
  return raw;
}

Record without_time(Record r) {
  std::visit([](auto& j) { j.response_ms = 0; }, r);
  return r;
}

bool displayed_in_order(const SessionManager& m, const json& payload, const MixedStimulus& s) {
  return payload["class_names"][0] == m.pool().class_names[static_cast<std::size_t>(s.class_a)];
}

json answer_for(const json& payload, Rng& rng) {
  const std::string kind = payload["interface"];
  if (kind == "construct") return {{"index", static_cast<int>(uniform01(rng) * 11)}};
  if (kind == "select-shuffled") return {{"image_id", payload["images"][static_cast<std::size_t>(uniform01(rng) * 11)]["id"]}};
  if (kind == "infer-coefficient") return {{"mix", std::round(uniform01(rng) * 100) / 100}, {"confidence", 0.5}};
  return {{"top1", payload["class_names"][0]}, {"top1_prob", 60}, {"top2", payload["class_names"][1]},
          {"top2_prob", 25}, {"ruled_out", {payload["class_names"][2]}}};
}

// ---------------------------------------------------------------------------------------------
// Image payloads

TEST(ImageIo, Base64KnownVectors) {
  auto b = [](std::string s) { return base64_encode(std::vector<std::uint8_t>(s.begin(), s.end())); };
  EXPECT_EQ(b(""), "");
  EXPECT_EQ(b("f"), "Zg==");
  EXPECT_EQ(b("fo"), "Zm8=");
  EXPECT_EQ(b("foobar"), "Zm9vYmFy");
}

TEST(ImageIo, PngRoundTripsPixelsWithNearestUpscale) {
  Rng rng(4);
  std::vector<double> px(5 * 3 * 3);
  for (auto& v : px) v = uniform01(rng);
  const ImageTensor img(5, 3, 3, px);
  const auto bytes = img.to_bytes();
  const auto png = encode_png(img, 4);
  ASSERT_EQ(std::vector<std::uint8_t>(png.begin(), png.begin() + 8),
            (std::vector<std::uint8_t>{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'}));
  std::uint32_t w = 0, h = 0;
  const auto raw = png_scanlines(png, w, h);
  ASSERT_EQ(w, 12u);
  ASSERT_EQ(h, 20u);
  ASSERT_EQ(raw.size(), static_cast<std::size_t>(h) * (w * 3 + 1));
  for (std::uint32_t y = 0; y < h; ++y) {
    ASSERT_EQ(raw[y * (w * 3 + 1)], 0);
    for (std::uint32_t x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        ASSERT_EQ(raw[y * (w * 3 + 1) + 1 + x * 3 + c], bytes[img.index(static_cast<int>(y / 4), static_cast<int>(x / 4), c)]);
  }
  EXPECT_EQ(png_data_url(img).rfind("data:image/png;base64,", 0), 0u);
  EXPECT_THROW(encode_png(ImageTensor::filled(2, 2, 2, 0.5)), ShapeError);
}

TEST(ImageIo, PpmRoundTripAndTruncation) {
  const auto dir = temp_dir("ppm");
  Rng rng(9);
  std::vector<std::uint8_t> bytes(6 * 4 * 3);
  for (auto& b : bytes) b = static_cast<std::uint8_t>(rng() & 0xff);
  const auto img = ImageTensor::from_bytes(6, 4, 3, bytes);
  write_ppm(img, dir / "a.ppm");
  EXPECT_EQ(read_ppm(dir / "a.ppm"), img);
  const auto gray = ImageTensor::from_bytes(2, 3, 1, std::vector<std::uint8_t>{0, 1, 2, 253, 254, 255});
  write_ppm(gray, dir / "g.pgm");
  EXPECT_EQ(read_ppm(dir / "g.pgm"), gray);

  std::ofstream(dir / "t.ppm", std::ios::binary) << "P6\n4 6\n255\nabc";
  EXPECT_THROW(read_ppm(dir / "t.ppm"), SchemaError);
  EXPECT_THROW(read_ppm(dir / "missing.ppm"), NotFoundError);
  fs::remove_all(dir);
}

// ---------------------------------------------------------------------------------------------
// Pools

TEST(Pool, CoversEveryClassCombination) {
  const auto& pool = *shared_pool();
  EXPECT_EQ(pool.pairs.size(), 45u);
  EXPECT_EQ(pool.inference.size(), 45u * 5);
  std::set<std::pair<int, int>> combos;
  for (const auto& p : pool.pairs) {
    const int a = pool.endpoint(p.endpoint_a).cls;
    const int b = pool.endpoint(p.endpoint_b).cls;
    ASSERT_NE(a, b);
    combos.insert({std::min(a, b), std::max(a, b)});
  }
  EXPECT_EQ(combos.size(), 45u);
  std::map<double, int> per_lambda;
  for (const auto& s : pool.inference) ++per_lambda[s.lambda_f];
  for (double l : {0.1, 0.25, 0.5, 0.75, 0.9}) EXPECT_EQ(per_lambda[l], 45) << l;
}

TEST(Pool, MidpointEnrichmentAddsHalfOnlyStimuli) {
  ShapesOptions opts;
  opts.height = 8;
  opts.width = 8;
  const auto set = generate_shapes(200, 3, opts, false);
  PoolOptions po;
  po.midpoint_extra_pairs = 1;
  const auto pool = build_pool(set.data, shape_names(), po);
  EXPECT_EQ(pool.pairs.size(), 90u);
  EXPECT_EQ(pool.inference.size(), 45u * 5 + 45u);
  EXPECT_EQ(std::count_if(pool.inference.begin(), pool.inference.end(), [](auto& s) { return s.lambda_f == 0.5; }), 90);
}

TEST(Pool, SaveLoadRoundTripRendersIdenticalStimuli) {
  const auto dir = temp_dir("pool");
  const auto& pool = *shared_pool();
  save_pool(pool, dir);
  const auto loaded = load_pool(dir);
  EXPECT_EQ(loaded.class_names, pool.class_names);
  ASSERT_EQ(loaded.pairs.size(), pool.pairs.size());
  for (std::size_t i = 0; i < pool.pairs.size(); ++i) EXPECT_EQ(loaded.pairs[i].pair_id, pool.pairs[i].pair_id);
  ASSERT_EQ(loaded.inference.size(), pool.inference.size());
  for (std::size_t i = 0; i < pool.inference.size(); i += 17) {
    const auto& s = pool.inference[i];
    EXPECT_EQ(loaded.stimulus(s.pair, s.lambda_f).mixed_image, pool.stimulus(s.pair, s.lambda_f).mixed_image);
  }
  fs::remove(dir / "pool.json");
  EXPECT_THROW(load_pool(dir), NotFoundError);
  std::ofstream(dir / "pool.json") << R"({"version":"other"})";
  EXPECT_THROW(load_pool(dir), SchemaError);
  fs::remove_all(dir);
}

TEST(Pool, SweepImagesAreWrittenPerPairAndCoefficient) {
  const auto dir = temp_dir("sweep");
  StimulusPool pool = *shared_pool();
  pool.pairs.resize(3);
  pool.inference.clear();
  const auto grid = default_sweep_grid();
  EXPECT_EQ(write_sweep_images(pool, grid, dir), 33u);
  EXPECT_TRUE(fs::exists(dir / (pool.pairs[0].pair_id + "@0.5.png")));
  fs::remove_all(dir);
}

TEST(Pool, ValidateRejectsDanglingAndSameClassPairs) {
  StimulusPool pool = *shared_pool();
  pool.pairs.push_back({"bad", pool.pairs[0].endpoint_a, "nope"});
  EXPECT_THROW(pool.validate(), ValidationError);
  pool.pairs.back() = {"bad", pool.pairs[0].endpoint_a, pool.pairs[0].endpoint_a};
  EXPECT_THROW(pool.validate(), ValidationError);
  pool.pairs.back() = pool.pairs[0];
  EXPECT_THROW(pool.validate(), ValidationError);
}

// ---------------------------------------------------------------------------------------------
// Plans

TEST(Plan, RandomPlansSatisfyInvariantsForEveryKind) {
  const auto& pool = *shared_pool();
  for (auto kind : {SessionKind::kConstruct, SessionKind::kSelectShuffled, SessionKind::kInferCoefficient,
                    SessionKind::kSoftLabel}) {
    Rng rng(static_cast<std::uint64_t>(kind) + 100);
    std::set<std::vector<std::size_t>> orders;
    for (int i = 0; i < 1000; ++i) {
      PlanOptions opts;
      opts.inference_trials = 59 + static_cast<std::size_t>(i % 4);
      std::optional<double> start;
      if (kind == SessionKind::kConstruct) start = i % 2 ? 0.1 : 0.9;
      const auto plan = create_plan("s" + std::to_string(i), "p" + std::to_string(i), kind, start, pool, rng, opts);
      ASSERT_NO_THROW(validate_plan(plan, pool, opts));
      const std::size_t n = plan.trials.size();
      if (kind == SessionKind::kConstruct || kind == SessionKind::kSelectShuffled) {
        ASSERT_EQ(n, 32u);
        ASSERT_EQ(plan.repeat_positions(), (std::vector<std::uint32_t>{30, 31}));
      } else if (kind == SessionKind::kInferCoefficient) {
        ASSERT_EQ(n, opts.inference_trials);
        ASSERT_EQ(*plan.trials[n - 2].repeat_of, 14u);
        ASSERT_EQ(*plan.trials[n - 1].repeat_of, 19u);
        for (const auto& t : plan.trials) {
          const double l = pool.inference[t.stimulus].lambda_f;
          ASSERT_TRUE(l == 0.1 || l == 0.25 || l == 0.5 || l == 0.75 || l == 0.9);
        }
      } else {
        ASSERT_TRUE(plan.repeat_positions().empty());
      }
      std::vector<std::size_t> order;
      for (const auto& t : plan.trials) order.push_back(t.stimulus);
      orders.insert(order);
    }
    EXPECT_GT(orders.size(), 990u) << to_string(kind);
  }
}

TEST(Plan, ValidatorCatchesBrokenPlans) {
  const auto& pool = *shared_pool();
  Rng rng(1);
  auto plan = create_plan("s1", "p1", SessionKind::kInferCoefficient, std::nullopt, pool, rng);
  auto bad = plan;
  bad.trials.back().repeat_of = 20;
  bad.trials.back().stimulus = bad.trials[20].stimulus;
  EXPECT_THROW(validate_plan(bad, pool), ValidationError);
  bad = plan;
  bad.trials[3].stimulus = bad.trials[4].stimulus;
  EXPECT_THROW(validate_plan(bad, pool), ValidationError);
  bad = plan;
  bad.start_lambda = 0.9;
  EXPECT_THROW(validate_plan(bad, pool), ValidationError);
}

TEST(Plan, ConstructRejectsOffGridStart) {
  Rng rng(1);
  EXPECT_THROW(create_plan("s2", "p1", SessionKind::kConstruct, 0.5, *shared_pool(), rng), ValidationError);
}

TEST(Plan, InsufficientPoolReportsRequiredSize) {
  StimulusPool pool = *shared_pool();
  pool.pairs.resize(20);
  pool.inference.erase(std::remove_if(pool.inference.begin(), pool.inference.end(), [](auto& s) { return s.pair >= 20; }),
                       pool.inference.end());
  Rng rng(2);
  try {
    create_plan("s1", "p", SessionKind::kSelectShuffled, std::nullopt, pool, rng);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("at least 30"), std::string::npos) << e.what();
  }
  pool.inference.resize(40);
  try {
    create_plan("s1", "p", SessionKind::kInferCoefficient, std::nullopt, pool, rng);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("at least 58"), std::string::npos) << e.what();
  }
}

TEST(Plan, JsonRoundTrip) {
  Rng rng(5);
  const auto plan = create_plan("s1", "p", SessionKind::kConstruct, 0.1, *shared_pool(), rng);
  const auto back = plan_from_json(json::parse(to_json(plan).dump()));
  EXPECT_EQ(to_json(back), to_json(plan));
  EXPECT_THROW(plan_from_json(json{{"session_id", "x"}}), SchemaError);
}

// ---------------------------------------------------------------------------------------------
// Sessions

TEST(Session, ConstructStartsAlternateBeginningHigh) {
  SessionManager m(shared_pool());
  std::vector<double> starts;
  for (int i = 0; i < 6; ++i) {
    m.create_session("p" + std::to_string(i), SessionKind::kSelectShuffled);
    starts.push_back(*m.create_session("c" + std::to_string(i), SessionKind::kConstruct).start_lambda);
  }
  EXPECT_EQ(starts, (std::vector<double>{0.9, 0.1, 0.9, 0.1, 0.9, 0.1}));
  const auto plan = m.plan(m.session_ids().front());
  EXPECT_EQ(plan.session_id.rfind("s000001-", 0), 0u);
  EXPECT_THROW(m.create_session("bad id", SessionKind::kConstruct), ValidationError);
  EXPECT_THROW(m.create_session("p", SessionKind::kConstruct, 30), ValidationError);
  EXPECT_THROW(m.create_session("p", SessionKind::kInferCoefficient, 70), ValidationError);
}

TEST(Session, ConstructPayloadAndIndexMapping) {
  SessionManager m(shared_pool(), std::nullopt, 11);
  const auto high = m.create_session("a", SessionKind::kConstruct);
  const auto low = m.create_session("b", SessionKind::kConstruct);
  const json p = m.next_trial(high.session_id);
  EXPECT_EQ(p["images"].size(), 11u);
  EXPECT_EQ(p["start_index"], 9);
  EXPECT_EQ(m.next_trial(low.session_id)["start_index"], 1);
  EXPECT_EQ(p["class_names"].size(), 2u);

  // Over many trials, both display orientations occur and index 6 maps onto the displayed-first class.
  std::set<bool> seen;
  for (std::uint32_t t = 0; t < 32; ++t) {
    const json q = m.trial_payload(high.session_id, t);
    const auto& pair = m.pool().pairs[high.trials[t].stimulus];
    const bool in_order = q["class_names"][0] == m.pool().class_names[m.pool().endpoint(pair.endpoint_a).cls];
    seen.insert(in_order);
    m.submit_response(high.session_id, t, {{"index", 6}}, 100);
    const auto j = std::get<Judgment>(m.export_session(high.session_id).records.back());
    EXPECT_EQ(j.lambda_h, in_order ? 0.6 : 0.4);
    EXPECT_EQ(j.kind, InterfaceKind::kConstructStartHigh);
    EXPECT_EQ(j.stimulus.lambda_f, 0.9);
    EXPECT_FALSE(j.confidence.has_value());
  }
  EXPECT_EQ(seen.size(), 2u);
}

TEST(Session, ConstructDisplayedSweepRunsTowardFirstClass) {
  SessionManager m(shared_pool(), std::nullopt, 11);
  const auto plan = m.create_session("a", SessionKind::kConstruct);
  const auto grid = default_sweep_grid();
  for (std::uint32_t t = 0; t < 4; ++t) {
    const json q = m.trial_payload(plan.session_id, t);
    const auto sweep = m.pool().sweep(plan.trials[t].stimulus, grid);
    const auto& pair = m.pool().pairs[plan.trials[t].stimulus];
    const bool in_order = q["class_names"][0] == m.pool().class_names[m.pool().endpoint(pair.endpoint_a).cls];
    for (std::size_t i = 0; i < 11; ++i)
      EXPECT_EQ(q["images"][i]["src"], png_data_url(sweep[in_order ? i : 10 - i].mixed_image));
  }
}

TEST(Session, SelectShuffledIsStableAcrossReloadsAndMapsIds) {
  SessionManager m(shared_pool(), std::nullopt, 3);
  const auto plan = m.create_session("a", SessionKind::kSelectShuffled);
  const json first = m.next_trial(plan.session_id);
  EXPECT_EQ(m.next_trial(plan.session_id), first);
  std::set<std::string> ids;
  std::vector<std::string> order;
  for (const auto& img : first["images"]) {
    ids.insert(img["id"]);
    order.push_back(img["id"]);
  }
  EXPECT_EQ(ids.size(), 11u);
  EXPECT_TRUE(ids.count("g0") && ids.count("g10"));

  bool any_shuffled = false;
  for (std::uint32_t t = 0; t < 32; ++t) {
    const json q = m.trial_payload(plan.session_id, t);
    std::vector<std::string> o;
    for (const auto& img : q["images"]) o.push_back(img["id"]);
    std::vector<std::string> sorted = o;
    std::sort(sorted.begin(), sorted.end());
    any_shuffled |= !std::is_sorted(o.begin(), o.end()) && o != std::vector<std::string>(o.rbegin(), o.rend());
  }
  EXPECT_TRUE(any_shuffled);

  m.submit_response(plan.session_id, 0, {{"image_id", "g6"}});
  const auto j = std::get<Judgment>(m.export_session(plan.session_id).records.at(0));
  EXPECT_EQ(j.lambda_h, 0.6);
  EXPECT_EQ(j.stimulus.lambda_f, 0.5);
  EXPECT_EQ(j.kind, InterfaceKind::kSelectShuffled);
  EXPECT_THROW(m.submit_response(plan.session_id, 1, {{"image_id", "g11"}}), ValidationError);
  EXPECT_THROW(m.submit_response(plan.session_id, 1, {{"image_id", "g06"}}), ValidationError);
  EXPECT_THROW(m.submit_response(plan.session_id, 1, {{"index", 3}}), ValidationError);
}

TEST(Session, InferPayloadAndSliderOrientation) {
  SessionManager m(shared_pool(), std::nullopt, 8);
  const auto plan = m.create_session("a", SessionKind::kInferCoefficient);
  std::set<bool> seen;
  for (std::uint32_t t = 0; t < 12; ++t) {
    const json q = m.next_trial(plan.session_id);
    EXPECT_TRUE(q.contains("image"));
    EXPECT_FALSE(q.contains("images"));
    ASSERT_EQ(q["class_names"].size(), 2u);
    const auto& s = m.pool().inference[plan.trials[t].stimulus];
    const auto stim = m.pool().stimulus(s.pair, s.lambda_f);
    const bool in_order = displayed_in_order(m, q, stim);
    seen.insert(in_order);
    m.submit_response(plan.session_id, t, {{"mix", 0.73}, {"confidence", 0.4}}, 1200);
    const auto j = std::get<Judgment>(m.export_session(plan.session_id).records.back());
    EXPECT_EQ(j.lambda_h, in_order ? 0.73 : MixCoefficient(0.73).complement_value());
    EXPECT_EQ(j.confidence, 0.4);
    EXPECT_EQ(j.response_ms, 1200);
    EXPECT_EQ(j.stimulus.lambda_f, s.lambda_f);
  }
  EXPECT_EQ(seen.size(), 2u);
}

TEST(Session, SubmissionOrderingIdempotenceAndFieldErrors) {
  SessionManager m(shared_pool(), std::nullopt, 8);
  const auto id = m.create_session("a", SessionKind::kInferCoefficient).session_id;
  EXPECT_THROW(m.submit_response(id, 1, {{"mix", 0.5}, {"confidence", 0.5}}), ConflictError);
  try {
    m.submit_response(id, 0, {{"mix", 0.5}});
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.field(), "response.confidence");
  }
  try {
    m.submit_response(id, 0, {{"mix", 1.5}, {"confidence", 0.5}});
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.field(), "response.mix");
  }
  EXPECT_EQ(m.cursor(id), 0u);
  EXPECT_EQ(m.submit_response(id, 0, {{"mix", 0.5}, {"confidence", 0.5}}, 10).status, AppendStatus::kStored);
  const auto again = m.submit_response(id, 0, {{"mix", 0.5}, {"confidence", 0.5}}, 99);
  EXPECT_EQ(again.status, AppendStatus::kDuplicate);
  EXPECT_EQ(again.next_trial, 1u);
  EXPECT_THROW(m.submit_response(id, 0, {{"mix", 0.6}, {"confidence", 0.5}}), ConflictError);
  EXPECT_EQ(m.export_session(id).records.size(), 1u);
  EXPECT_THROW(m.next_trial("nope"), NotFoundError);
  EXPECT_THROW(m.submit_response("nope", 0, {}), NotFoundError);
}

TEST(Session, SoftLabelReportsByClassName) {
  SessionManager m(shared_pool(), std::nullopt, 8);
  const auto plan = m.create_session("a", SessionKind::kSoftLabel);
  EXPECT_EQ(plan.trials.size(), 30u);
  const json q = m.next_trial(plan.session_id);
  EXPECT_EQ(q["class_names"].size(), 10u);
  EXPECT_TRUE(q.contains("image"));
  m.submit_response(plan.session_id, 0,
                    {{"top1", "disk"}, {"top1_prob", 60}, {"top2", "ring"}, {"top2_prob", 25}, {"ruled_out", {"dots"}}});
  const auto s = std::get<SoftLabelJudgment>(m.export_session(plan.session_id).records.at(0));
  EXPECT_EQ(s.top1_class, 4);
  EXPECT_EQ(s.top2_class, 6);
  EXPECT_EQ(s.ruled_out, std::set<int>{9});
  auto field_of = [&](const json& r) {
    try {
      m.submit_response(plan.session_id, 1, r);
    } catch (const ValidationError& e) {
      return e.field();
    }
    return std::string("accepted");
  };
  EXPECT_EQ(field_of({{"top1", "horse"}, {"top1_prob", 60}}), "response.top1");
  EXPECT_EQ(field_of({{"top1", "disk"}, {"top1_prob", 60}, {"top2", "disk"}, {"top2_prob", 20}}), "response.top2_class");
  EXPECT_EQ(field_of({{"top1", "disk"}, {"top1_prob", 90}, {"top2", "ring"}, {"top2_prob", 30}}).rfind("response.", 0), 0u);
  EXPECT_EQ(field_of({{"top1", "disk"}, {"top1_prob", 60}, {"ruled_out", {"disk"}}}), "response.ruled_out");
  EXPECT_EQ(m.cursor(plan.session_id), 1u);
}

TEST(Session, ScriptedSessionsOfEveryKindCompleteAndRoundTrip) {
  SessionManager m(shared_pool(), std::nullopt, 21);
  Rng rng(6);
  for (auto kind : {SessionKind::kConstruct, SessionKind::kSelectShuffled, SessionKind::kInferCoefficient,
                    SessionKind::kSoftLabel}) {
    const auto plan = m.create_session("w", kind);
    std::uint32_t t = 0;
    for (;;) {
      const json q = m.next_trial(plan.session_id);
      if (q["complete"] == true) break;
      ASSERT_EQ(q["trial_index"], t);
      if (t == 5) EXPECT_TRUE(m.export_session(plan.session_id).open);
      m.submit_response(plan.session_id, t, answer_for(q, rng));
      ++t;
    }
    const auto ex = m.export_session(plan.session_id);
    EXPECT_FALSE(ex.open);
    ASSERT_EQ(ex.records.size(), plan.trials.size());
    for (const auto& r : ex.records) EXPECT_NO_THROW(validate(r));
    if (kind == SessionKind::kConstruct || kind == SessionKind::kSelectShuffled) {
      EXPECT_EQ(ex.records.size(), 32u);
      for (std::size_t i = 0; i < 32; ++i) {
        const auto& j = std::get<Judgment>(ex.records[i]);
        EXPECT_EQ(j.is_repeat, i >= 30);
        if (i >= 30) EXPECT_EQ(j.stimulus.pair_id, std::get<Judgment>(ex.records[*j.repeat_of]).stimulus.pair_id);
      }
    }
    if (kind == SessionKind::kInferCoefficient) {
      for (const auto& r : ex.records) {
        const double l = std::get<Judgment>(r).stimulus.lambda_f;
        EXPECT_TRUE(l == 0.1 || l == 0.25 || l == 0.5 || l == 0.75 || l == 0.9);
      }
      const std::uint32_t n = static_cast<std::uint32_t>(plan.trials.size());
      EXPECT_EQ(m.trial_payload(plan.session_id, n - 2)["image"], m.trial_payload(plan.session_id, 14)["image"]);
      EXPECT_EQ(m.trial_payload(plan.session_id, n - 1)["image"], m.trial_payload(plan.session_id, 19)["image"]);
      EXPECT_EQ(std::get<Judgment>(ex.records[n - 1]).repeat_of, 19u);
    }
    std::stringstream io;
    export_hmix(ex.records, io);
    EXPECT_EQ(import_hmix(io), ex.records);
    EXPECT_THROW(m.submit_response(plan.session_id, t, answer_for(m.trial_payload(plan.session_id, 0), rng)),
                 ConflictError);
  }
}

TEST(Session, RepeatStimuliAreBitIdentical) {
  SessionManager m(shared_pool(), std::nullopt, 2);
  for (int i = 0; i < 5; ++i) {
    const auto plan = m.create_session("r" + std::to_string(i), SessionKind::kInferCoefficient);
    const std::size_t n = plan.trials.size();
    for (std::size_t r : {n - 2, n - 1}) {
      const auto& a = m.pool().inference[plan.trials[r].stimulus];
      const auto& o = m.pool().inference[plan.trials[*plan.trials[r].repeat_of].stimulus];
      EXPECT_EQ(m.pool().stimulus(a.pair, a.lambda_f).mixed_image.to_bytes(),
                m.pool().stimulus(o.pair, o.lambda_f).mixed_image.to_bytes());
    }
  }
}

TEST(Session, StateSurvivesRestart) {
  const auto dir = temp_dir("state");
  std::string id;
  json pending;
  std::vector<Record> before;
  {
    SessionManager m(shared_pool(), dir, 4);
    m.create_session("x", SessionKind::kConstruct);
    id = m.create_session("y", SessionKind::kSelectShuffled).session_id;
    for (std::uint32_t t = 0; t < 3; ++t) m.submit_response(id, t, {{"image_id", "g" + std::to_string(t)}}, 50);
    pending = m.next_trial(id);
    before = m.export_session(id).records;
  }
  SessionManager m(shared_pool(), dir, 4);
  EXPECT_EQ(m.session_ids().size(), 2u);
  EXPECT_EQ(m.cursor(id), 3u);
  EXPECT_EQ(m.next_trial(id), pending);
  EXPECT_EQ(m.export_session(id).records, before);
  EXPECT_EQ(m.submit_response(id, 2, {{"image_id", "g2"}}).status, AppendStatus::kDuplicate);
  // The next construct session continues the alternation.
  EXPECT_EQ(m.create_session("z", SessionKind::kConstruct).start_lambda, 0.1);
  EXPECT_EQ(m.session_ids().size(), 3u);
  fs::remove_all(dir);
}

TEST(Session, ConcurrentSessionsAreSerializedPerSession) {
  SessionManager m(shared_pool(), std::nullopt, 4);
  std::vector<std::string> ids;
  for (int i = 0; i < 4; ++i) ids.push_back(m.create_session("p" + std::to_string(i), SessionKind::kInferCoefficient).session_id);
  std::vector<std::thread> threads;
  std::atomic<int> conflicts{0};
  // Two writers per session race on the same trial index; exactly one stores each trial.
  for (int w = 0; w < 8; ++w) {
    threads.emplace_back([&, w] {
      const auto& id = ids[static_cast<std::size_t>(w % 4)];
      for (std::uint32_t t = 0; t < 60; ++t) {
        for (;;) {
          try {
            m.submit_response(id, t, {{"mix", 0.5}, {"confidence", 0.5}}, 1);
            break;
          } catch (const ConflictError&) {
            ++conflicts;
            std::this_thread::yield();
          }
        }
      }
    });
  }
  for (auto& th : threads) th.join();
  for (const auto& id : ids) {
    const auto ex = m.export_session(id);
    ASSERT_EQ(ex.records.size(), 60u);
    for (std::uint32_t t = 0; t < 60; ++t) EXPECT_EQ(key_of(ex.records[t]).trial_index, t);
  }
  EXPECT_EQ(m.store().size(), 240u);
}

// ---------------------------------------------------------------------------------------------
// HTTP

class Http : public ::testing::Test {
 protected:
  void SetUp() override {
    manager = std::make_unique<SessionManager>(shared_pool(), std::nullopt, 13);
    server = std::make_unique<ElicitServer>(*manager);
    port = server->bind_any("127.0.0.1");
    ASSERT_GT(port, 0);
    thread = std::thread([this] { server->run(); });
    server->wait_until_ready();
    client = std::make_unique<httplib::Client>("127.0.0.1", port);
  }
  void TearDown() override {
    server->stop();
    thread.join();
  }

  std::pair<int, json> post(const std::string& path, const json& body) {
    auto r = client->Post(path, body.dump(), "application/json");
    return {r->status, json::parse(r->body)};
  }
  std::pair<int, json> get(const std::string& path) {
    auto r = client->Get(path);
    return {r->status, r->body.empty() ? json() : json::parse(r->body)};
  }

  std::unique_ptr<SessionManager> manager;
  std::unique_ptr<ElicitServer> server;
  std::unique_ptr<httplib::Client> client;
  std::thread thread;
  int port = 0;
};

TEST_F(Http, HealthAndErrors) {
  auto [s, h] = get("/api/v1/health");
  EXPECT_EQ(s, 200);
  EXPECT_EQ(h["api_version"], "hmix-api-v1");
  EXPECT_EQ(h["pairs"], 45);

  EXPECT_EQ(post("/api/v1/sessions", {{"participant_id", "a"}, {"interface", "sliders"}}).first, 400);
  auto [s2, e2] = post("/api/v1/sessions", {{"interface", "construct"}});
  EXPECT_EQ(s2, 400);
  EXPECT_EQ(e2["field"], "participant_id");
  auto r = client->Post("/api/v1/sessions", "{not json", "application/json");
  EXPECT_EQ(r->status, 400);
  EXPECT_EQ(get("/api/v1/sessions/nope/next").first, 404);
  EXPECT_EQ(get("/api/v1/sessions/nope/export").first, 404);
  EXPECT_EQ(get("/api/v1/sessions/nope").first, 404);
}

TEST_F(Http, ScriptedInferSessionOverHttp) {
  auto [s, created] = post("/api/v1/sessions", {{"participant_id", "h1"}, {"interface", "infer-coefficient"}, {"trials", 61}});
  ASSERT_EQ(s, 201) << created.dump();
  const std::string id = created["session_id"];
  EXPECT_EQ(created["trial_count"], 61);
  EXPECT_EQ(created["api_version"], "hmix-api-v1");
  const std::string base = "/api/v1/sessions/" + id;

  EXPECT_EQ(post(base + "/responses", {{"trial_index", 3}, {"response", {{"mix", 0.2}, {"confidence", 1}}}}).first, 409);
  auto [sv, verr] = post(base + "/responses", {{"trial_index", 0}, {"response", {{"mix", 0.2}}}});
  EXPECT_EQ(sv, 400);
  EXPECT_EQ(verr["field"], "response.confidence");

  Rng rng(3);
  for (std::uint32_t t = 0;; ++t) {
    auto [sn, q] = get(base + "/next");
    ASSERT_EQ(sn, 200);
    if (q["complete"] == true) {
      EXPECT_EQ(t, 61u);
      break;
    }
    EXPECT_EQ(q["trial_index"], t);
    const json body{{"trial_index", t}, {"response", answer_for(q, rng)}, {"response_ms", 700}};
    auto [sr, ack] = post(base + "/responses", body);
    ASSERT_EQ(sr, 200) << ack.dump();
    EXPECT_EQ(ack["status"], "stored");
    auto [sd, dup] = post(base + "/responses", body);
    EXPECT_EQ(sd, 200);
    EXPECT_EQ(dup["status"], "duplicate");
  }
  auto [se, ex] = get(base + "/export");
  EXPECT_EQ(se, 200);
  EXPECT_EQ(ex["open"], false);
  ASSERT_EQ(ex["records"].size(), 61u);
  std::stringstream io;
  io << "hmix-v1\n";
  for (const auto& line : ex["records"]) io << line.get<std::string>() << "\n";
  EXPECT_EQ(import_hmix(io), manager->export_session(id).records);

  auto raw = client->Get(base + "/export?format=hmix");
  EXPECT_EQ(raw->status, 200);
  EXPECT_EQ(raw->get_header_value("X-Session-Open"), "false");
  std::istringstream in(raw->body);
  EXPECT_EQ(import_hmix(in).size(), 61u);

  auto [ss, status] = get(base);
  EXPECT_EQ(status["complete"], true);
  EXPECT_EQ(status["next_trial"], 61);
}

TEST(HttpStatic, ServesUiBundleAtRoot) {
  const auto dir = temp_dir("ui");
  std::ofstream(dir / "index.html") << "<html>ui</html>";
  SessionManager m(shared_pool());
  ElicitServer server(m, dir);
  const int port = server.bind_any("127.0.0.1");
  std::thread th([&] { server.run(); });
  server.wait_until_ready();
  httplib::Client c("127.0.0.1", port);
  auto r = c.Get("/index.html");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(r->body, "<html>ui</html>");
  server.stop();
  th.join();
  fs::remove_all(dir);
  EXPECT_THROW(ElicitServer(m, dir / "missing"), NotFoundError);
}

}  // namespace
}  // namespace hmix
