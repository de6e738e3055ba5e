#include "hmix/cli/cli.hpp"

#include <cmath>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "hmix/boundaryfit.hpp"
#include "hmix/cli/manifest.hpp"
#include "hmix/elicit/image_io.hpp"
#include "hmix/elicit/pool.hpp"
#include "hmix/elicit/server.hpp"
#include "hmix/elicit/session.hpp"
#include "hmix/errors.hpp"
#include "hmix/hmixdata.hpp"
#include "hmix/text.hpp"
#include "hmix/traineval/experiment.hpp"

namespace hmix {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<std::string_view, 10> kCifarClassNames = {
    "airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"};

// Column-oriented table written as TSV and mirrored into the JSON report.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add(std::vector<std::string> row) { rows.push_back(std::move(row)); }

  std::string tsv() const {
    std::ostringstream out;
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "\t" : "") << header[i];
    out << '\n';
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "\t" : "") << r[i];
      out << '\n';
    }
    return out.str();
  }

  json to_json() const {
    json arr = json::array();
    for (const auto& r : rows) {
      json o = json::object();
      for (std::size_t i = 0; i < header.size() && i < r.size(); ++i) {
        const auto num = parse_decimal(r[i]);
        o[header[i]] = num ? json(*num) : json(r[i]);
      }
      arr.push_back(std::move(o));
    }
    return arr;
  }
};

std::string num(double v) { return format_decimal(v); }
std::string num(std::size_t v) { return std::to_string(v); }

class OutputDir {
 public:
  OutputDir(fs::path dir, RunManifest& manifest) : dir_(std::move(dir)), manifest_(manifest) {
    fs::create_directories(dir_);
  }

  const fs::path& path() const { return dir_; }

  void text(const std::string& name, const std::string& content) {
    const auto p = dir_ / name;
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    out << content;
    if (!out) throw Error("cannot write " + p.string());
    note(name);
  }
  void note(const std::string& name) { manifest_.outputs.push_back(name); }

 private:
  fs::path dir_;
  RunManifest& manifest_;
};

fs::path resolve_output(const std::string& out) {
  fs::path p(out);
  if (p.is_relative()) {
    if (const char* root = std::getenv("HMIX_OUTPUT_ROOT"); root && *root) return fs::path(root) / p;
  }
  return p;
}

void require_file(const std::string& path, const std::string& what) {
  if (!fs::exists(path)) throw NotFoundError(what + " not found: " + path);
}

std::string hash_of(const json& j) { return hex64(fnv1a64(j.dump())); }

std::vector<std::string> sorted_class_dirs(const fs::path& dir) {
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  return names;
}

// <dir>/<class name>/*.ppm|*.pgm; ids are "<class>-<file stem>".
Dataset read_image_dir(const fs::path& dir, std::vector<std::string>& class_names) {
  class_names = sorted_class_dirs(dir);
  if (class_names.size() < 2) throw ValidationError("input", "image directory needs at least two class folders");
  Dataset data;
  data.num_classes = static_cast<int>(class_names.size());
  bool first = true;
  for (int c = 0; c < data.num_classes; ++c) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir / class_names[static_cast<std::size_t>(c)])) {
      const auto ext = e.path().extension().string();
      if (ext == ".ppm" || ext == ".pgm") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const ImageTensor img = read_ppm(f);
      if (first) {
        data.height = img.height();
        data.width = img.width();
        data.channels = img.channels();
        first = false;
      }
      data.push_back(img, LabelDistribution::one_hot(c, data.num_classes),
                     class_names[static_cast<std::size_t>(c)] + "-" + f.stem().string(), c);
    }
  }
  data.finalize();
  return data;
}

// ---------------------------------------------------------------------------------------------
// Tables

Table confidence_table(std::span<const Judgment> judgments) {
  Table t{{"folded_coefficient", "distance_from_half", "n", "participants", "mean_confidence", "sd",
           "participant_sd"},
          {}};
  for (const auto& r : confidence_by_coefficient(judgments))
    t.add({num(r.folded_coefficient), num(r.distance_from_half), num(r.n), num(r.participants), num(r.mean),
           num(r.sd), num(r.participant_sd)});
  return t;
}

Table aggregate_table(std::span<const Judgment> judgments, GroupBy group_by) {
  Table t{{"group", "lambda_f", "n", "median", "mean", "p25", "p75", "confidence_n", "confidence_mean",
           "confidence_sd"},
          {}};
  AggregateOptions opts;
  opts.group_by = group_by;
  for (const auto& curve : aggregate_relabelings(judgments, opts))
    for (const auto& b : curve.buckets)
      t.add({curve.group, num(b.lambda_f), num(b.n), num(b.median), num(b.mean), num(b.p25), num(b.p75),
             num(b.confidence_n), num(b.confidence_mean), num(b.confidence_sd)});
  return t;
}

// Distribution of grid selections per interface and pair.
Table selection_table(std::span<const Judgment> judgments) {
  Table t{{"interface", "pair_id", "n", "mean", "median"}, {}};
  for (int k = 0; k <= 10; ++k) t.header.push_back("count_" + format_decimal(k / 10.0));
  std::map<std::pair<std::string, std::string>, std::vector<double>> groups;
  for (const auto& j : judgments)
    if (is_selection_kind(j.kind) && !j.is_repeat) groups[{to_string(j.kind), j.stimulus.pair_id}].push_back(j.lambda_h);
  for (const auto& [key, values] : groups) {
    std::vector<std::size_t> counts(11, 0);
    double sum = 0.0;
    for (double v : values) {
      sum += v;
      ++counts[static_cast<std::size_t>(std::lround(v * 10.0))];
    }
    std::vector<std::string> row{key.first, key.second, num(values.size()), num(sum / static_cast<double>(values.size())),
                                 num(median(values))};
    for (auto c : counts) row.push_back(num(c));
    t.add(std::move(row));
  }
  return t;
}

Table flag_table(const FlagResult& flags) {
  Table t{{"interface", "pair_id", "central_value", "flagged", "flagged_across_interfaces"}, {}};
  const std::set<std::string> across(flags.across_interfaces.begin(), flags.across_interfaces.end());
  for (const auto& [iface, values] : flags.central_values) {
    const auto& flagged_list = flags.per_interface.count(iface) ? flags.per_interface.at(iface) : std::vector<std::string>{};
    const std::set<std::string> flagged(flagged_list.begin(), flagged_list.end());
    for (const auto& [pair, v] : values)
      t.add({iface, pair, num(v), flagged.count(pair) ? "1" : "0", across.count(pair) ? "1" : "0"});
  }
  return t;
}

Table repeat_table(std::span<const Judgment> judgments) {
  Table t{{"interface", "pairs", "median_lambda_diff", "median_confidence_diff"}, {}};
  for (const auto& r : repeat_consistency(judgments))
    t.add({to_string(r.kind), num(r.pairs), num(r.median_lambda_diff),
           r.median_confidence_diff ? num(*r.median_confidence_diff) : std::string("-")});
  return t;
}

Table entropy_table(const EntropyAnalysis& a) {
  Table t{{"bucket", "n", "confidence_n", "mean_confidence", "mean_relabel"}, {}};
  for (const auto& b : a.buckets)
    t.add({to_string(b.bucket), num(b.n), num(b.confidence_n), num(b.mean_confidence), num(b.mean_relabel)});
  return t;
}

std::string plot_script(const std::string& title, const std::string& data, const std::string& body) {
  return "set terminal pngcairo size 800,600\nset output '" + data.substr(0, data.find('.')) + ".png'\n" +
         "set datafile separator '\\t'\nset key autotitle columnhead\nset title '" + title + "'\n" + body;
}

// ---------------------------------------------------------------------------------------------
// Commands

struct MixArgs {
  std::string source = "shapes";
  std::string input;
  std::string out;
  std::size_t count = 400;
  int size = 32;
  std::size_t pairs_per_combination = 1;
  std::size_t midpoint_extra = 0;
  std::size_t sweep_pairs = 0;  // 0 = all
  std::uint64_t seed = 5;
};

void cmd_mix(const MixArgs& a, RunManifest& m, std::ostream& out) {
  Dataset images;
  std::vector<std::string> names;
  if (a.source == "shapes") {
    ShapesOptions opts;
    opts.height = a.size;
    opts.width = a.size;
    images = generate_shapes(a.count, a.seed, opts, false, "img").data;
    names.assign(kShapeClassNames.begin(), kShapeClassNames.end());
  } else if (a.source == "cifar10") {
    require_file(a.input, "CIFAR-10 batch");
    m.add_input(a.input);
    images = read_cifar10(a.input, 0, a.count, fs::path(a.input).stem().string());
    names.assign(kCifarClassNames.begin(), kCifarClassNames.end());
  } else if (a.source == "image-dir") {
    require_file(a.input, "image directory");
    m.add_input(a.input);
    images = read_image_dir(a.input, names);
  } else {
    throw ValidationError("source", "expected shapes, cifar10 or image-dir");
  }
  PoolOptions po;
  po.pairs_per_combination = a.pairs_per_combination;
  po.midpoint_extra_pairs = a.midpoint_extra;
  po.seed = a.seed;
  StimulusPool pool = build_pool(images, names, po);
  m.seeds = {a.seed};

  OutputDir dir(resolve_output(a.out), m);
  save_pool(pool, dir.path() / "pool");
  dir.note("pool/pool.json");
  for (const auto& [id, e] : pool.endpoints) dir.note("pool/endpoints/" + id + ".ppm");

  StimulusPool shown = pool;
  if (a.sweep_pairs > 0 && a.sweep_pairs < shown.pairs.size()) shown.pairs.resize(a.sweep_pairs);
  shown.inference.clear();
  const auto grid = default_sweep_grid();
  const std::size_t n = write_sweep_images(shown, grid, dir.path() / "sweep");
  for (std::size_t p = 0; p < shown.pairs.size(); ++p)
    for (const auto& g : grid) dir.note("sweep/" + shown.pairs[p].pair_id + "@" + format_decimal(g.value()) + ".png");
  out << "pool: " << pool.pairs.size() << " pairs, " << pool.inference.size() << " inference stimuli, "
      << pool.endpoints.size() << " endpoints\nsweep images: " << n << "\n";
}

struct ServeArgs {
  std::string pool;
  std::string state = "hmix-state";
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string ui;
  std::uint64_t seed = 1;
  std::size_t inference_trials = 60;
};

ElicitServer* g_server = nullptr;
void stop_server(int) {
  if (g_server) g_server->stop();
}

void cmd_serve(const ServeArgs& a, RunManifest& m, std::ostream& out) {
  require_file(a.pool + "/pool.json", "stimulus pool");
  auto pool = std::make_shared<const StimulusPool>(load_pool(a.pool));
  PlanOptions po;
  po.inference_trials = a.inference_trials;
  const fs::path state = resolve_output(a.state);
  SessionManager sessions(pool, state, a.seed, po);
  ElicitServer server(sessions, a.ui.empty() ? std::nullopt : std::optional<fs::path>(a.ui));
  m.seeds = {a.seed};
  m.add_input(fs::path(a.pool) / "pool.json");
  m.outputs = {"records.hmix", "sessions/"};
  m.write(state);
  g_server = &server;
  std::signal(SIGINT, stop_server);
  std::signal(SIGTERM, stop_server);
  out << "serving " << pool->pairs.size() << " pairs on http://" << a.host << ":" << a.port << "/ (state "
      << state.string() << ")" << std::endl;
  const bool ok = server.listen(a.host, a.port);
  g_server = nullptr;
  if (!ok && !server.running()) throw Error("cannot listen on " + a.host + ":" + std::to_string(a.port));
}

struct AnalyzeArgs {
  std::string input;
  std::string out;
  std::string frequencies;
  std::string group_by = "pair";
  double threshold = 0.15;
  std::string central = "mean";
  double entropy_hi = 0.5;
  double entropy_lo = 0.1;
  bool plots = false;
};

void cmd_analyze(const AnalyzeArgs& a, RunManifest& m, std::ostream& out) {
  require_file(a.input, "H-Mix file");
  m.add_input(a.input);
  const auto records = import_hmix(fs::path(a.input));
  const auto judgments = judgments_of(records);
  OutputDir dir(resolve_output(a.out), m);
  json report{{"version", kReportVersion}, {"input", a.input}, {"records", records.size()}};

  const GroupBy group = a.group_by == "pair"       ? GroupBy::kClassPair
                        : a.group_by == "stimulus" ? GroupBy::kStimulus
                        : a.group_by == "global"   ? GroupBy::kGlobal
                                                   : throw ValidationError("group-by", "expected pair, stimulus or global");
  FlagOptions fo;
  fo.threshold = a.threshold;
  if (a.central == "median") fo.central = CentralTendency::kMedian;
  else if (a.central != "mean") throw ValidationError("central", "expected mean or median");

  std::map<std::string, Table> tables;
  tables["confidence_table"] = confidence_table(judgments);
  tables["aggregates_global"] = aggregate_table(judgments, GroupBy::kGlobal);
  if (group != GroupBy::kGlobal) tables["aggregates_" + a.group_by] = aggregate_table(judgments, group);
  tables["selections"] = selection_table(judgments);
  const FlagResult flags = flag_high_relabel(judgments, fo);
  tables["flags"] = flag_table(flags);
  tables["repeats"] = repeat_table(judgments);
  if (!a.frequencies.empty()) {
    require_file(a.frequencies, "frequency table");
    m.add_input(a.frequencies);
    const auto table = LabelFrequencyTable::read(fs::path(a.frequencies));
    const auto ea = entropy_bucket_analysis(judgments, table, a.entropy_hi, a.entropy_lo);
    tables["entropy"] = entropy_table(ea);
    report["entropy_skipped"] = ea.skipped;
  }
  for (const auto& [name, t] : tables) {
    dir.text(name + ".tsv", t.tsv());
    report["tables"][name] = t.to_json();
  }
  report["flagged_across_interfaces"] = flags.across_interfaces;
  report["flagged_any_interface"] = flags.any_interface;
  report["flag_threshold"] = a.threshold;
  dir.text("report.json", report.dump(2) + "\n");

  if (a.plots) {
    dir.text("plots/confidence_table.gp",
             plot_script("Mean confidence by coefficient", "confidence_table.tsv",
                         "set xlabel '|0.5 - lambda_f|'\nset ylabel 'confidence'\nset yrange [0:1]\n"
                         "plot '../confidence_table.tsv' using 2:5 with linespoints\n"));
    dir.text("plots/aggregates_global.gp",
             plot_script("Relabeled coefficient", "aggregates_global.tsv",
                         "set xlabel 'lambda_f'\nset ylabel 'lambda_h'\nset xrange [0:1]\nset yrange [0:1]\n"
                         "plot '../aggregates_global.tsv' using 2:6:7 with filledcurves title 'p25-p75', "
                         "'' using 2:4 with linespoints title 'median', x with lines dt 2 title 'identity'\n"));
    dir.text("plots/selections.gp",
             plot_script("Selected coefficient by pair", "selections.tsv",
                         "set xlabel 'pair'\nset ylabel 'mean selection'\nset yrange [0:1]\nset xtics rotate\n"
                         "plot '../selections.tsv' using 4:xticlabels(2) with points\n"));
    if (tables.count("entropy"))
      dir.text("plots/entropy.gp",
               plot_script("Confidence by endpoint ambiguity", "entropy.tsv",
                           "set style data histograms\nset yrange [0:1]\n"
                           "plot '../entropy.tsv' using 4:xticlabels(1)\n"));
  }
  m.config_hash = hash_of({{"group_by", a.group_by}, {"threshold", a.threshold}, {"central", a.central},
                           {"entropy", {a.entropy_hi, a.entropy_lo}}});
  out << tables["confidence_table"].tsv();
  out << "flagged across interfaces: " << flags.across_interfaces.size() << "\n";
}

struct FitArgs {
  std::string input;
  std::string out;
  bool medians = false;
  std::size_t min_points = 4;
  bool plots = false;
};

void cmd_fit(const FitArgs& a, RunManifest& m, std::ostream& out) {
  require_file(a.input, "H-Mix file");
  m.add_input(a.input);
  const auto judgments = judgments_of(import_hmix(fs::path(a.input)));
  FitAllOptions fo;
  fo.use_medians = a.medians;
  fo.min_points = a.min_points;
  const FitAllResult r = fit_all_pairs(judgments, fo);
  OutputDir dir(resolve_output(a.out), m);
  std::ostringstream fits;
  write_fits(r.fits, fits);
  dir.text("fits.txt", fits.str());

  Table params{{"class_a", "class_b", "lower", "upper", "steepness", "midpoint", "sse", "n_points", "monotone",
                "converged"},
               {}};
  Table curves{{"class_pair", "lambda_f", "fitted"}, {}};
  for (const auto& [pair, f] : r.fits) {
    params.add({num(static_cast<std::size_t>(pair.first)), num(static_cast<std::size_t>(pair.second)),
                num(f.params.lower), num(f.params.upper), num(f.params.steepness), num(f.params.midpoint),
                num(f.residual_sse), num(f.n_points), f.monotone ? "1" : "0", f.converged ? "1" : "0"});
    for (int i = 0; i <= 20; ++i) {
      const MixCoefficient x(i / 20.0);
      curves.add({std::to_string(pair.first) + "-" + std::to_string(pair.second), num(x.value()),
                  num(apply_boundary(f, x).value())});
    }
  }
  dir.text("fits.tsv", params.tsv());
  dir.text("curves.tsv", curves.tsv());
  json summary{{"fitted", r.fits.size()}, {"insufficient", json::array()}, {"non_monotone", json::array()},
               {"not_converged", json::array()}, {"parameters", params.to_json()}};
  for (const auto& p : r.insufficient) summary["insufficient"].push_back({p.first, p.second});
  for (const auto& p : r.non_monotone) summary["non_monotone"].push_back({p.first, p.second});
  for (const auto& p : r.not_converged) summary["not_converged"].push_back({p.first, p.second});
  dir.text("report.json", summary.dump(2) + "\n");
  if (a.plots)
    dir.text("plots/curves.gp", plot_script("Fitted category boundaries", "curves.tsv",
                                            "set xlabel 'lambda_f'\nset ylabel 'lambda_h'\nset key off\n"
                                            "plot '../curves.tsv' using 2:3 with lines\n"));
  m.config_hash = hash_of({{"medians", a.medians}, {"min_points", a.min_points}});
  out << "fitted " << r.fits.size() << " pairs (" << r.insufficient.size() << " insufficient, "
      << r.non_monotone.size() << " non-monotone)\n";
}

struct TrainArgs {
  std::string config;
  std::string out;
  std::vector<std::string> rows;
  std::size_t workers = 0;
  bool search_smoothing = false;
  double held_out_fraction = 0.2;
};

// Loads the config, fills the manifest and writes the simulated judgments when the run simulated them.
std::pair<ExperimentConfig, ExperimentData> load_experiment(const TrainArgs& a, RunManifest& m, OutputDir& dir) {
  require_file(a.config, "config");
  m.add_input(a.config);
  ExperimentConfig cfg = load_experiment_config(a.config);
  if (!a.rows.empty()) {
    std::vector<TrainConfig> keep;
    for (const auto& r : cfg.rows)
      if (std::find(a.rows.begin(), a.rows.end(), r.row_name()) != a.rows.end() ||
          std::find(a.rows.begin(), a.rows.end(), to_string(r.policy)) != a.rows.end())
        keep.push_back(r);
    if (keep.empty()) throw ValidationError("row", "no config row matches");
    cfg.rows = std::move(keep);
  }
  if (a.workers > 0) cfg.workers = a.workers;
  for (const auto& f : {cfg.data.hmix_file, cfg.data.fits_file, cfg.data.cifar_eval_file, cfg.data.endpoint_file,
                        cfg.data.eval_frequencies})
    if (!f.empty()) {
      require_file(f, "data file");
      m.add_input(f);
    }
  for (const auto& f : cfg.data.cifar_train_files) {
    require_file(f, "data file");
    m.add_input(f);
  }
  json hashes = json::array();
  std::set<std::uint64_t> seeds;
  for (const auto& r : cfg.rows) {
    hashes.push_back(config_hash(cfg.data, r));
    seeds.insert(r.seeds.begin(), r.seeds.end());
  }
  m.config_hash = hash_of(hashes);
  m.seeds.assign(seeds.begin(), seeds.end());

  ExperimentData data = prepare_data(cfg.data);
  if (cfg.data.simulation && cfg.data.hmix_file.empty()) {
    std::vector<Record> recs(data.judgments.begin(), data.judgments.end());
    recs.insert(recs.end(), data.soft_labels.begin(), data.soft_labels.end());
    std::ostringstream s;
    export_hmix(recs, s);
    dir.text("simulated.hmix", s.str());
  }
  return {std::move(cfg), std::move(data)};
}

Table per_seed_table(const ComparisonReport& report) {
  Table t{{"row", "seed", "ce", "ce_clamped", "fgsm_err_pct", "calib_rms", "ece", "accuracy"}, {}};
  for (const auto& row : report.rows)
    for (std::size_t i = 0; i < row.seeds.size(); ++i) {
      const auto& r = row.per_seed[i];
      t.add({row.name, num(static_cast<std::size_t>(row.seeds[i])), num(r.ce), num(r.ce_clamped), num(r.fgsm_err),
             num(r.calib_rms), num(r.ece), num(r.accuracy)});
    }
  return t;
}

int finish_comparison(const ComparisonReport& report, OutputDir& dir, std::ostream& out) {
  dir.text("table.tsv", format_table(report));
  dir.text("per_seed.tsv", per_seed_table(report).tsv());
  dir.text("report.json", to_json(report).dump(2) + "\n");
  out << format_table(report);
  std::size_t failures = 0;
  for (const auto& r : report.rows) failures += r.failures.size();
  if (failures == 0) return kExitOk;
  for (const auto& r : report.rows)
    for (const auto& [seed, msg] : r.failures) out << "failed: " << r.name << " seed " << seed << ": " << msg << "\n";
  return kExitTraining;
}

int cmd_train(const TrainArgs& a, RunManifest& m, std::ostream& out) {
  OutputDir dir(resolve_output(a.out), m);
  auto [cfg, data] = load_experiment(a, m, dir);
  if (a.search_smoothing) {
    if (!(a.held_out_fraction > 0.0 && a.held_out_fraction < 1.0))
      throw ValidationError("held-out", "fraction must lie in (0,1)");
    const std::size_t n = data.train.size();
    const auto cut = static_cast<std::size_t>(static_cast<double>(n) * (1.0 - a.held_out_fraction));
    const Dataset held_out = data.train.subset(cut, n);
    data.train = data.train.subset(0, cut);
    Table t{{"row", "a", "b", "held_out_ce"}, {}};
    json best = json::array();
    for (const auto& row : cfg.rows) {
      const auto ag = default_a_grid();
      const auto bg = default_b_grid();
      const auto r = grid_search_smoothing(ag, bg, held_out_scorer(row, data, held_out));
      for (const auto& e : r.entries) t.add({row.row_name(), num(e.a), num(e.b), num(e.score)});
      best.push_back({{"row", row.row_name()}, {"a", r.best.a}, {"b", r.best.b}, {"held_out_ce", r.best_score}});
      out << row.row_name() << ": best a=" << format_decimal(r.best.a) << " b=" << format_decimal(r.best.b)
          << " held-out CE " << format_decimal(r.best_score) << "\n";
    }
    dir.text("smoothing_search.tsv", t.tsv());
    dir.text("smoothing_best.json", best.dump(2) + "\n");
    return kExitOk;
  }
  const ComparisonReport report = run_comparison(cfg.rows, cfg.data, data, cfg.workers);
  return finish_comparison(report, dir, out);
}

int cmd_compare(const TrainArgs& a, RunManifest& m, std::ostream& out) {
  OutputDir dir(resolve_output(a.out), m);
  auto [cfg, data] = load_experiment(a, m, dir);
  if (cfg.rows.size() < 2) throw ValidationError("rows", "compare needs at least two rows");
  const ComparisonReport report = run_comparison(cfg.rows, cfg.data, data, cfg.workers);
  return finish_comparison(report, dir, out);
}

struct ExportArgs {
  std::string state;
  std::string session;
  std::string out;
};

void cmd_export(const ExportArgs& a, RunManifest& m, std::ostream& out) {
  const fs::path records = fs::path(a.state) / "records.hmix";
  require_file(records.string(), "session store");
  m.add_input(records);
  auto all = import_hmix(records);
  if (!a.session.empty()) {
    if (!fs::exists(fs::path(a.state) / "sessions" / (a.session + ".json")))
      throw NotFoundError("unknown session " + a.session);
    std::erase_if(all, [&](const Record& r) { return key_of(r).session_id != a.session; });
  }
  OutputDir dir(resolve_output(a.out), m);
  std::ostringstream s;
  export_hmix(all, s);
  const std::string name = a.session.empty() ? "records.hmix" : a.session + ".hmix";
  dir.text(name, s.str());
  out << "exported " << all.size() << " records to " << (dir.path() / name).string() << "\n";
}

struct SimulateArgs {
  std::string out;
};

void cmd_simulate(const SimulateArgs& a, RunManifest& m, std::ostream& out) {
  const SyntheticFixture fx = build_synthetic_fixture();
  OutputDir dir(resolve_output(a.out), m);
  std::ostringstream records, freq;
  export_hmix(fx.records, records);
  fx.frequencies.write(freq);
  dir.text("synthetic.hmix", records.str());
  dir.text("frequencies.csv", freq.str());
  json planted{{"confidence_means", json::object()},
               {"flagged_across", fx.flagged_across},
               {"flagged_construct", fx.flagged_construct},
               {"flagged_select", fx.flagged_select},
               {"repeat_lambda_median", json::object()},
               {"repeat_confidence_median", fx.repeat_confidence_median},
               {"entropy_counts", json::object()}};
  for (const auto& [k, v] : fx.confidence_means) planted["confidence_means"][format_decimal(k)] = v;
  for (const auto& [k, v] : fx.repeat_lambda_median) planted["repeat_lambda_median"][to_string(k)] = v;
  for (const auto& [k, v] : fx.entropy_counts) planted["entropy_counts"][to_string(k)] = v;
  dir.text("planted.json", planted.dump(2) + "\n");
  m.config_hash = hash_of(planted);
  out << "wrote " << fx.records.size() << " records\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"hmix: human-in-the-loop mixup toolkit"};
  app.set_config("--options", "", "TOML/INI file whose keys mirror the command-line flags");
  app.require_subcommand(1);

  MixArgs mix;
  auto* s_mix = app.add_subcommand("mix", "Build a stimulus pool and write sweep images");
  s_mix->add_option("--source", mix.source, "shapes | cifar10 | image-dir")->capture_default_str();
  s_mix->add_option("--input", mix.input, "CIFAR-10 batch file or <dir>/<class>/*.ppm");
  s_mix->add_option("--out", mix.out, "Output directory")->required();
  s_mix->add_option("--count", mix.count, "Images to draw endpoints from")->capture_default_str();
  s_mix->add_option("--size", mix.size, "Shapes image side length")->capture_default_str();
  s_mix->add_option("--pairs-per-combination", mix.pairs_per_combination)->capture_default_str();
  s_mix->add_option("--midpoint-extra", mix.midpoint_extra, "Extra pairs per combination shown only at 0.5")
      ->capture_default_str();
  s_mix->add_option("--sweep-pairs", mix.sweep_pairs, "Pairs to render as sweep images (0 = all)")->capture_default_str();
  s_mix->add_option("--seed", mix.seed)->capture_default_str();

  ServeArgs serve;
  auto* s_serve = app.add_subcommand("serve", "Run the elicitation service");
  s_serve->add_option("--pool", serve.pool, "Pool directory written by `mix` (the pool/ subfolder)")->required();
  s_serve->add_option("--state", serve.state, "Session state directory")->capture_default_str();
  s_serve->add_option("--host", serve.host)->capture_default_str();
  s_serve->add_option("--port", serve.port)->capture_default_str();
  s_serve->add_option("--ui", serve.ui, "Static UI bundle served at /");
  s_serve->add_option("--seed", serve.seed)->capture_default_str();
  s_serve->add_option("--inference-trials", serve.inference_trials, "59-62")->capture_default_str();

  AnalyzeArgs analyze;
  auto* s_analyze = app.add_subcommand("analyze", "Confidence, aggregate, selection, flag, repeat and entropy tables");
  s_analyze->add_option("--input", analyze.input, "H-Mix file")->required();
  s_analyze->add_option("--out", analyze.out, "Output directory")->required();
  s_analyze->add_option("--frequencies", analyze.frequencies, "Endpoint label-frequency CSV");
  s_analyze->add_option("--group-by", analyze.group_by, "pair | stimulus | global")->capture_default_str();
  s_analyze->add_option("--threshold", analyze.threshold, "High-relabel threshold on |lambda_h - 0.5|")
      ->capture_default_str();
  s_analyze->add_option("--central", analyze.central, "mean | median")->capture_default_str();
  s_analyze->add_option("--entropy-high", analyze.entropy_hi)->capture_default_str();
  s_analyze->add_option("--entropy-low", analyze.entropy_lo)->capture_default_str();
  s_analyze->add_flag("--plots", analyze.plots, "Also write gnuplot scripts over the tables");

  FitArgs fit;
  auto* s_fit = app.add_subcommand("fit", "Fit per-pair logistic boundaries");
  s_fit->add_option("--input", fit.input, "H-Mix file")->required();
  s_fit->add_option("--out", fit.out, "Output directory")->required();
  s_fit->add_flag("--medians", fit.medians, "Fit per-coefficient medians");
  s_fit->add_option("--min-points", fit.min_points)->capture_default_str();
  s_fit->add_flag("--plots", fit.plots, "Also write a gnuplot script");

  TrainArgs train;
  auto* s_train = app.add_subcommand("train", "Train config rows over their seeds, or search smoothing parameters");
  s_train->add_option("--config", train.config, "hmix-train-config-v1 JSON")->required();
  s_train->add_option("--out", train.out, "Output directory")->required();
  s_train->add_option("--row", train.rows, "Row name or policy to run (repeatable)");
  s_train->add_option("--workers", train.workers, "Override the config's worker count");
  s_train->add_flag("--search-smoothing", train.search_smoothing, "Grid-search a and b on a held-out split");
  s_train->add_option("--held-out", train.held_out_fraction)->capture_default_str();

  TrainArgs compare;
  auto* s_compare = app.add_subcommand("compare", "Multi-seed comparison table over config rows");
  s_compare->add_option("--config", compare.config, "hmix-train-config-v1 JSON")->required();
  s_compare->add_option("--out", compare.out, "Output directory")->required();
  s_compare->add_option("--row", compare.rows, "Row name or policy to run (repeatable)");
  s_compare->add_option("--workers", compare.workers, "Override the config's worker count");

  ExportArgs exp;
  auto* s_export = app.add_subcommand("export", "Export stored session records");
  s_export->add_option("--state", exp.state, "Session state directory")->required();
  s_export->add_option("--session", exp.session, "Single session id");
  s_export->add_option("--out", exp.out, "Output directory")->required();

  SimulateArgs sim;
  auto* s_sim = app.add_subcommand("simulate", "Write the synthetic analysis fixture");
  s_sim->add_option("--out", sim.out, "Output directory")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help());
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << "run with --help for usage\n";
    return kExitUsage;
  }

  RunManifest manifest;
  manifest.arguments = args;
  manifest.started_at = utc_timestamp();
  std::string out_dir;
  try {
    int code = kExitOk;
    if (s_mix->parsed()) {
      manifest.command = "mix";
      out_dir = mix.out;
      cmd_mix(mix, manifest, out);
    } else if (s_serve->parsed()) {
      manifest.command = "serve";
      cmd_serve(serve, manifest, out);
      return kExitOk;
    } else if (s_analyze->parsed()) {
      manifest.command = "analyze";
      out_dir = analyze.out;
      cmd_analyze(analyze, manifest, out);
    } else if (s_fit->parsed()) {
      manifest.command = "fit";
      out_dir = fit.out;
      cmd_fit(fit, manifest, out);
    } else if (s_train->parsed()) {
      manifest.command = "train";
      out_dir = train.out;
      code = cmd_train(train, manifest, out);
    } else if (s_compare->parsed()) {
      manifest.command = "compare";
      out_dir = compare.out;
      code = cmd_compare(compare, manifest, out);
    } else if (s_export->parsed()) {
      manifest.command = "export";
      out_dir = exp.out;
      cmd_export(exp, manifest, out);
    } else if (s_sim->parsed()) {
      manifest.command = "simulate";
      out_dir = sim.out;
      cmd_simulate(sim, manifest, out);
    }
    manifest.finished_at = utc_timestamp();
    manifest.write(resolve_output(out_dir));
    return code;
  } catch (const NotFoundError& e) {
    err << "error: " << e.what() << "\n";
    return kExitMissingFile;
  } catch (const SchemaError& e) {
    err << "error: " << e.what() << "\n";
    return kExitSchema;
  } catch (const TrainingError& e) {
    err << "error: " << e.what() << "\n";
    return kExitTraining;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ConflictError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitGeneric;
  }
}

}  // namespace hmix
