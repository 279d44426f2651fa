// egat: synthesize scenarios, train and expand models, run the workflow
// comparison, forecast at sensorless locations, and benchmark expansion.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 divergence.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "egat/config.hpp"
#include "egat/data_pipeline.hpp"
#include "egat/errors.hpp"
#include "egat/forecaster.hpp"
#include "egat/graph_store.hpp"
#include "egat/log.hpp"
#include "egat/random.hpp"
#include "egat/settings.hpp"
#include "egat/smoothing.hpp"
#include "egat/text_table.hpp"
#include "egat/training.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace egat;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::uint64_t fnv1a_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 14];
  while (in) {
    in.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char s[17];
  std::snprintf(s, sizeof s, "%016llx", static_cast<unsigned long long>(v));
  return s;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p);
  if (!f) throw DataError("cannot write " + p.string());
  return f;
}

// One manifest per run: what was asked, what was read, what was written.
class Manifest {
 public:
  explicit Manifest(std::string command) : start_(Clock::now()) { j_["command"] = command; }

  void config(const config::KeyValues& kv) {
    ordered_json c = ordered_json::object();
    for (const auto& [k, v] : kv.entries()) c[k] = v;
    j_["config"] = c;
  }
  void seed(std::uint64_t s) { j_["seed"] = s; }
  void input(const std::string& path) {
    j_["inputs"].push_back({{"path", path}, {"fnv1a64", hex64(fnv1a_file(path))}});
  }
  void output(const fs::path& path) { j_["outputs"].push_back(path.string()); }
  void timing(const std::string& name, double s) { j_["timings"][name] = s; }
  ordered_json& result() { return j_["result"]; }

  void write(const fs::path& dir) {
    timing("total_s", seconds_since(start_));
    auto f = open_out(dir / "manifest.json");
    f << j_.dump(2) << '\n';
  }

 private:
  ordered_json j_;
  Clock::time_point start_;
};

// Options every subcommand accepts.
struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::int64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_path, "key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "override a config key (key=value), repeatable");
  cmd->add_option("--seed", c.seed, "random seed");
  cmd->add_option("-o,--out", c.out, "output directory (default: runs/<command>)");
}

// File, then --set overrides, then dedicated flags, in increasing priority.
config::KeyValues load_config(const Common& c) {
  config::KeyValues kv;
  if (!c.config_path.empty()) kv = config::KeyValues::load(c.config_path);
  for (const auto& item : c.overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + item + "'");
    kv.set(text::trim(item.substr(0, eq)), text::trim(item.substr(eq + 1)));
  }
  if (c.seed) kv.set("seed", std::to_string(*c.seed));
  settings::reject_unknown(kv);
  return kv;
}

template <class T>
void flag_into(config::KeyValues& kv, const std::string& key, const std::optional<T>& v) {
  if (!v) return;
  if constexpr (std::is_floating_point_v<T>)
    kv.set(key, text::format_double(*v));
  else
    kv.set(key, std::to_string(*v));
}

fs::path prepare_out(const std::string& dir) {
  fs::create_directories(dir);
  return fs::path(dir);
}

// ---- datasets on disk -----------------------------------------------------------

struct Dataset {
  std::vector<graph::SensorNode> nodes;  // ingested sensors only, metadata order
  data::Readings readings;
};

Dataset load_dataset(const std::string& dir, const config::KeyValues& kv, Manifest& m) {
  const auto readings = (fs::path(dir) / "readings.csv").string();
  const auto sensors = (fs::path(dir) / "sensors.csv").string();
  m.input(readings);
  m.input(sensors);
  Dataset d;
  d.readings = data::ingest(readings, sensors, settings::ingest_from(kv));
  for (const auto& n : graph::read_sensor_metadata(sensors))
    if (d.readings.index_of(n.id) != d.readings.sensors()) d.nodes.push_back(n);
  return d;
}

// Sensors installed by `epoch` and the time range in which they form the
// whole network: from their own installation until the next epoch's.
struct Phase {
  std::vector<graph::SensorNode> nodes;
  std::vector<std::string> ids;
  std::size_t begin = 0, end = 0;
};

Phase phase_for(const Dataset& d, int epoch) {
  Phase p;
  p.end = d.readings.steps;
  bool any_current = false;
  std::size_t current_from = d.readings.steps;
  for (const auto& n : d.nodes) {
    const std::size_t from = d.readings.active_from[d.readings.index_of(n.id)];
    if (n.install_epoch <= epoch) {
      p.nodes.push_back(n);
      p.ids.push_back(n.id);
      if (n.install_epoch == epoch) {
        any_current = true;
        current_from = std::min(current_from, from);
      }
    } else {
      p.end = std::min(p.end, from);
    }
  }
  if (!any_current) throw DataError("no sensors with install epoch " + std::to_string(epoch));
  p.begin = epoch == 0 ? 0 : current_from;
  if (p.begin >= p.end)
    throw DataError("epoch " + std::to_string(epoch) + " has no time range of its own");
  return p;
}

void write_normalizer(const fs::path& path, const data::Normalizer& n,
                      const std::vector<std::string>& names) {
  auto f = open_out(path);
  f << "feature,mean,stddev\n";
  for (std::size_t i = 0; i < n.mean.size(); ++i)
    f << names[i] << ',' << text::format_double(n.mean[i]) << ','
      << text::format_double(n.stddev[i]) << '\n';
}

data::Normalizer read_normalizer(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open normalisation statistics " + path);
  const auto t = text::read_table(in, path);
  const std::size_t cm = t.column("mean"), cs = t.column("stddev");
  data::Normalizer n;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    n.mean.push_back(text::to_double(t.rows[i].at(cm), t.where(i)));
    n.stddev.push_back(text::to_double(t.rows[i].at(cs), t.where(i)));
  }
  return n;
}

std::string default_stats_path(const std::string& checkpoint) {
  return (fs::path(checkpoint).parent_path() / "normalizer.csv").string();
}

void write_metric_file(const fs::path& path,
                       const std::vector<std::pair<std::string, train::MetricReport>>& reports) {
  auto f = open_out(path);
  train::write_metrics_header(f);
  for (const auto& [name, r] : reports) train::write_metrics(f, name, r);
}

ordered_json overall_json(const train::MetricReport& r) {
  return {{"MAE", r.overall.mae}, {"RMSE", r.overall.rmse}, {"MAPE", r.overall.mape}};
}

// ---- subcommands ----------------------------------------------------------------

struct SynthFlags {
  std::optional<std::size_t> nodes, steps, features;
  std::optional<double> area, node_ratio, time_ratio;
};

int cmd_synth(const Common& c, const SynthFlags& f) {
  auto kv = load_config(c);
  flag_into(kv, "scenario.nodes", f.nodes);
  flag_into(kv, "scenario.steps", f.steps);
  flag_into(kv, "scenario.features", f.features);
  flag_into(kv, "scenario.area_km2", f.area);
  flag_into(kv, "scenario.expand_node_ratio", f.node_ratio);
  flag_into(kv, "scenario.expand_time_ratio", f.time_ratio);
  Manifest m("synth");
  m.config(kv);
  const auto sc = settings::scenario_from(kv);
  m.seed(sc.seed);
  const auto out = prepare_out(c.out);
  const auto syn = data::synthesize(sc);

  graph::write_sensor_metadata((out / "sensors.csv").string(), syn.sensors);
  data::write_readings((out / "readings.csv").string(), syn.readings);
  {
    auto t = open_out(out / "truth.csv");
    t << "timestamp,sensor_id,aqi\n";
    const auto& r = syn.readings;
    for (std::size_t s = 0; s < r.sensors(); ++s)
      for (std::size_t step = 0; step < r.steps; ++step)
        t << r.start_time + static_cast<std::int64_t>(step) * r.period_s << ',' << r.sensor_ids[s]
          << ',' << text::format_double(syn.truth[s * r.steps + step]) << '\n';
  }
  {
    auto s = open_out(out / "scenario.cfg");
    for (const auto& [k, v] : settings::scenario_entries(sc)) s << k << " = " << v << '\n';
  }
  for (const char* name : {"sensors.csv", "readings.csv", "truth.csv", "scenario.cfg"})
    m.output(out / name);
  m.result() = {{"sensors", syn.sensors.size()},
                {"new_sensors", syn.sensors.size() - syn.old_count()},
                {"steps", syn.readings.steps},
                {"cut_step", syn.cut_step},
                {"missing_fraction", syn.readings.missing_fraction}};
  m.write(out);
  std::cout << "wrote " << syn.sensors.size() << " sensors (" << syn.sensors.size() - syn.old_count()
            << " new from step " << syn.cut_step << "), " << syn.readings.steps
            << " steps, missing " << text::format_double(100.0 * syn.readings.missing_fraction)
            << "% to " << out.string() << '\n';
  return 0;
}

struct TrainFlags {
  std::string data;
  int epoch = 0;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
};

int cmd_train(const Common& c, const TrainFlags& f) {
  auto kv = load_config(c);
  flag_into(kv, "train.max_epochs", f.epochs);
  flag_into(kv, "train.learning_rate", f.lr);
  Manifest m("train");
  m.config(kv);
  const auto d = load_dataset(f.data, kv, m);
  auto ec = settings::experiment_from(kv);
  ec.model.features = d.readings.features();
  ec.model.validate();
  m.seed(ec.train.seed);
  const auto out = prepare_out(c.out);

  const auto phase = phase_for(d, f.epoch);
  const auto ds = data::window(data::subset(d.readings, phase.ids),
                               {ec.model.input_length, ec.model.horizon, ec.ratios, phase.begin,
                                phase.end});
  const auto g = graph::build_graph(phase.nodes, ec.k);
  const auto t0 = Clock::now();
  const auto r = train::train(model::init_params(ec.model, ec.train.seed), ds, g, ec.train);
  m.timing("train_s", seconds_since(t0));

  model::save_checkpoint(r.params, (out / "model.ckpt").string());
  write_normalizer(out / "normalizer.csv", ds.stats, d.readings.feature_names);
  {
    auto cf = open_out(out / "curve.csv");
    train::write_curve(cf, r.curve);
  }
  const std::vector<std::pair<std::string, train::MetricReport>> reports{
      {"EGAT", train::evaluate_model(r.params, ds, g, data::Split::Test, ec.train.mape_floor,
                                     ec.test_windows)},
      {"persistence",
       train::evaluate_persistence(ds, data::Split::Test, ec.train.mape_floor, ec.test_windows)}};
  write_metric_file(out / "metrics.csv", reports);
  for (const char* name : {"model.ckpt", "normalizer.csv", "curve.csv", "metrics.csv"})
    m.output(out / name);
  m.result() = {{"sensors", g.size()},
                {"range", {phase.begin, phase.end}},
                {"best_epoch", r.best_epoch},
                {"best_val_mae", r.best_val_mae},
                {"updates", r.updates},
                {"test", {{"EGAT", overall_json(reports[0].second)},
                          {"persistence", overall_json(reports[1].second)}}}};
  m.write(out);
  std::cout << "trained on " << g.size() << " sensors, steps [" << phase.begin << ", " << phase.end
            << "): best epoch " << r.best_epoch << ", val MAE "
            << text::format_double(r.best_val_mae) << ", test MAE "
            << text::format_double(reports[0].second.overall.mae) << " (persistence "
            << text::format_double(reports[1].second.overall.mae) << ")\n";
  return 0;
}

struct ExpandFlags {
  std::string data, checkpoint, stats;
  std::optional<std::size_t> epochs;
};

int cmd_expand(const Common& c, const ExpandFlags& f) {
  auto kv = load_config(c);
  flag_into(kv, "train.phase2_epochs", f.epochs);
  Manifest m("expand");
  m.config(kv);
  m.input(f.checkpoint);
  const auto stats_path = f.stats.empty() ? default_stats_path(f.checkpoint) : f.stats;
  m.input(stats_path);
  const auto p = model::load_checkpoint(f.checkpoint);
  const auto stats = read_normalizer(stats_path);
  const auto d = load_dataset(f.data, kv, m);
  auto ec = settings::experiment_from(kv);
  m.seed(ec.train.seed);
  const auto out = prepare_out(c.out);

  const int epoch = p.graph_epoch + 1;
  const auto before = phase_for(d, p.graph_epoch);
  const auto after = phase_for(d, epoch);
  std::vector<graph::SensorNode> added;
  for (const auto& n : after.nodes)
    if (n.install_epoch == epoch) added.push_back(n);

  auto g = graph::build_graph(before.nodes, ec.k);
  const auto t_expand = Clock::now();
  const auto delta = graph::expand_graph(g, added);
  m.timing("expand_s", seconds_since(t_expand));

  const auto ds = data::window(data::subset(d.readings, after.ids),
                               {p.config.input_length, p.config.horizon, ec.ratios, after.begin,
                                after.end},
                               &stats);
  const std::size_t epochs = ec.phase2_epochs ? ec.phase2_epochs : ec.train.max_epochs;
  const auto t_train = Clock::now();
  train::Trainer trainer(p.clone(), ec.train);
  const auto r = trainer.fit(ds, g, epochs);
  m.timing("train_s", seconds_since(t_train));

  model::save_checkpoint(r.params, (out / "model.ckpt").string());
  write_normalizer(out / "normalizer.csv", stats, d.readings.feature_names);
  {
    auto cf = open_out(out / "curve.csv");
    train::write_curve(cf, r.curve);
  }
  {
    auto gf = open_out(out / "graph.txt");
    graph::export_graph(gf, g);
  }
  const std::vector<std::pair<std::string, train::MetricReport>> reports{
      {"EGAT", train::evaluate_model(r.params, ds, g, data::Split::Test, ec.train.mape_floor,
                                     ec.test_windows)},
      {"persistence",
       train::evaluate_persistence(ds, data::Split::Test, ec.train.mape_floor, ec.test_windows)}};
  write_metric_file(out / "metrics.csv", reports);
  for (const char* name : {"model.ckpt", "normalizer.csv", "curve.csv", "graph.txt", "metrics.csv"})
    m.output(out / name);
  m.result() = {{"old_sensors", delta.old_node_count},
                {"new_sensors", delta.new_nodes.size()},
                {"forward_edges", delta.forward_edge_count},
                {"reverse_edges", delta.reverse_edge_count},
                {"touched_old_nodes", delta.touched_old_nodes.size()},
                {"distance_evaluations", delta.distance_evaluations},
                {"range", {after.begin, after.end}},
                {"best_epoch", r.best_epoch},
                {"test", {{"EGAT", overall_json(reports[0].second)},
                          {"persistence", overall_json(reports[1].second)}}}};
  m.write(out);
  std::cout << "expanded " << delta.old_node_count << " -> " << g.size() << " sensors ("
            << delta.forward_edge_count << " forward, " << delta.reverse_edge_count
            << " reverse edges, " << delta.distance_evaluations
            << " distance evaluations); test MAE "
            << text::format_double(reports[0].second.overall.mae) << '\n';
  return 0;
}

struct EvalFlags {
  std::vector<std::string> workflows;
  std::vector<std::int64_t> seeds;
  std::optional<std::size_t> nodes, steps, epochs;
  std::optional<double> node_ratio, time_ratio;
};

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int cmd_eval(const Common& c, const EvalFlags& f) {
  auto kv = load_config(c);
  flag_into(kv, "scenario.nodes", f.nodes);
  flag_into(kv, "scenario.steps", f.steps);
  flag_into(kv, "scenario.expand_node_ratio", f.node_ratio);
  flag_into(kv, "scenario.expand_time_ratio", f.time_ratio);
  flag_into(kv, "train.max_epochs", f.epochs);
  Manifest m("eval");
  m.config(kv);
  std::vector<train::Workflow> workflows;
  for (const auto& w : f.workflows) workflows.push_back(train::parse_workflow(w));
  if (workflows.empty())
    workflows = {train::Workflow::Continual, train::Workflow::RecentOnly, train::Workflow::FiSs,
                 train::Workflow::FiSrs};
  std::vector<std::uint64_t> seeds;
  for (auto s : f.seeds) seeds.push_back(static_cast<std::uint64_t>(s));
  if (seeds.empty()) seeds.push_back(settings::scenario_from(kv).seed);
  m.seed(seeds.front());
  const auto out = prepare_out(c.out);

  std::vector<std::string> names;
  std::map<std::string, std::vector<double>> maes;
  auto summary = open_out(out / "summary.csv");
  summary << "seed,model,MAE,RMSE,MAPE\n";
  for (std::uint64_t seed : seeds) {
    auto sc = settings::scenario_from(kv);
    sc.seed = seed;
    auto ec = settings::experiment_from(kv);
    ec.train.seed = seed;
    const auto syn = data::synthesize(sc);
    ec.model.features = syn.readings.features();
    ec.model.validate();
    const auto t0 = Clock::now();
    const auto res = train::run_experiment(syn, ec, workflows);
    m.timing("seed_" + std::to_string(seed) + "_s", seconds_since(t0));
    const auto file = out / ("metrics_seed" + std::to_string(seed) + ".csv");
    write_metric_file(file, res.reports);
    m.output(file);
    ordered_json seed_result;
    for (const auto& [name, r] : res.reports) {
      if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
      maes[name].push_back(r.overall.mae);
      summary << seed << ',' << name << ',' << text::format_double(r.overall.mae) << ','
              << text::format_double(r.overall.rmse) << ',' << text::format_double(r.overall.mape)
              << '\n';
      seed_result[name] = overall_json(r);
    }
    if (res.continual) {
      seed_result["phase1_end_loss"] = res.continual->phase1_end_loss;
      seed_result["phase2_start_loss"] = res.continual->phase2_start_loss;
    }
    m.result()[std::to_string(seed)] = seed_result;
  }
  summary.close();
  m.output(out / "summary.csv");
  m.write(out);

  // Paired table: one row per seed, one MAE column per model.
  std::printf("%-8s", "seed");
  for (const auto& n : names) std::printf(" %12s", n.c_str());
  std::printf("\n");
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    std::printf("%-8llu", static_cast<unsigned long long>(seeds[i]));
    for (const auto& n : names) std::printf(" %12.4f", maes[n][i]);
    std::printf("\n");
  }
  std::printf("%-8s", "median");
  for (const auto& n : names) std::printf(" %12.4f", median(maes[n]));
  std::printf("\n");
  return 0;
}

struct InferFlags {
  std::string data, checkpoint, stats, queries, method = "srs";
  std::optional<std::size_t> at;
  bool skip_uncovered = false;
};

int cmd_infer_virtual(const Common& c, const InferFlags& f) {
  auto kv = load_config(c);
  Manifest m("infer-virtual");
  m.config(kv);
  m.input(f.checkpoint);
  m.input(f.queries);
  const auto stats_path = f.stats.empty() ? default_stats_path(f.checkpoint) : f.stats;
  m.input(stats_path);
  const auto p = model::load_checkpoint(f.checkpoint);
  const auto stats = read_normalizer(stats_path);
  const auto d = load_dataset(f.data, kv, m);
  const auto ec = settings::experiment_from(kv);
  m.seed(ec.train.seed);
  const auto out = prepare_out(c.out);
  const std::size_t T = p.config.input_length, Tp = p.config.horizon;
  if (d.readings.steps < T) throw DataError("readings are shorter than one input window");
  const std::size_t at = f.at ? *f.at : d.readings.steps - T;
  if (at + T > d.readings.steps)
    throw DataError("--at " + std::to_string(at) + " leaves less than one input window");

  std::vector<graph::SensorNode> live;
  std::vector<std::string> ids;
  for (const auto& n : d.nodes)
    if (d.readings.active_from[d.readings.index_of(n.id)] <= at) {
      live.push_back(n);
      ids.push_back(n.id);
    }
  const auto g = graph::build_graph(live, ec.k);
  const auto readings = data::subset(d.readings, ids);
  const data::WindowConfig wc{T, 1, {1.0, 0.0, 0.0}, 0, 0};
  auto ds = data::window(readings, wc, &stats);
  ds.horizon = Tp;

  std::vector<smooth::VirtualNode> virtuals;
  ordered_json uncovered = ordered_json::array();
  for (const auto& q : smooth::read_queries(f.queries)) {
    try {
      virtuals.push_back(smooth::make_virtual_node(q.id, q.lat, q.lon, g, ec.smoothing));
    } catch (const UncoveredLocationError& e) {
      if (!f.skip_uncovered) throw;
      log::warn(e.what());
      uncovered.push_back({{"query_id", q.id}, {"nearest_m", e.nearest_distance_m()}});
    }
  }
  if (f.method != "srs" && f.method != "ss")
    throw ConfigError("--method must be ss or srs, got '" + f.method + "'");
  const auto pred = virtuals.empty() ? std::vector<double>{}
                                     : train::predict_virtual(p, g, ds, at, virtuals,
                                                              f.method == "srs");
  {
    auto o = open_out(out / "predictions.csv");
    o << "query_id";
    for (std::size_t h = 1; h <= Tp; ++h) o << ",t+" << h;
    o << '\n';
    for (std::size_t v = 0; v < virtuals.size(); ++v) {
      o << virtuals[v].id;
      for (std::size_t h = 0; h < Tp; ++h) o << ',' << text::format_double(pred[v * Tp + h]);
      o << '\n';
    }
  }
  m.output(out / "predictions.csv");
  m.result() = {{"method", f.method},
                {"window_start", at},
                {"sensors", g.size()},
                {"predicted", virtuals.size()},
                {"uncovered", uncovered}};
  m.write(out);
  std::cout << "forecast " << virtuals.size() << " locations with " << f.method << " from step "
            << at << '\n';
  return 0;
}

struct BenchFlags {
  std::vector<std::size_t> ns{200, 500, 1000};
  std::vector<std::size_t> deltas{10, 50, 100};
  std::size_t k = 8;
  std::size_t repeats = 3;
};

std::vector<graph::SensorNode> bench_nodes(std::size_t n, const std::string& prefix, Rng& rng) {
  // About 10 km across, centred on San Francisco.
  std::vector<graph::SensorNode> out;
  for (std::size_t i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "%s%05zu", prefix.c_str(), i);
    out.push_back({id, 37.7749 + rng.uniform(-0.045, 0.045), -122.4194 + rng.uniform(-0.057, 0.057),
                   prefix == "b" ? 0 : 1});
  }
  return out;
}

int cmd_bench_expand(const Common& c, const BenchFlags& f) {
  auto kv = load_config(c);
  Manifest m("bench-expand");
  m.config(kv);
  const auto seed = static_cast<std::uint64_t>(kv.get_int("seed", 1));
  m.seed(seed);
  const auto out = prepare_out(c.out);
  auto csv = open_out(out / "bench.csv");
  csv << "n,delta,k,incremental_evaluations,full_evaluations,incremental_bound,full_bound,"
         "incremental_seconds,full_seconds,speedup\n";
  std::printf("%6s %6s %3s %14s %14s %10s %10s %8s\n", "N", "dN", "k", "incr evals", "full evals",
              "incr s", "full s", "speedup");
  ordered_json results = ordered_json::array();
  for (std::size_t n : f.ns)
    for (std::size_t dn : f.deltas) {
      Rng rng(seed ^ (n * 1000003ULL + dn));
      const auto base = bench_nodes(n, "b", rng);
      const auto extra = bench_nodes(dn, "e", rng);
      auto all = base;
      all.insert(all.end(), extra.begin(), extra.end());
      const auto g0 = graph::build_graph(base, f.k);
      double t_inc = 1e300, t_full = 1e300;
      std::uint64_t e_inc = 0, e_full = 0;
      for (std::size_t r = 0; r < std::max<std::size_t>(f.repeats, 1); ++r) {
        auto g = g0;
        auto t0 = Clock::now();
        const auto delta = graph::expand_graph(g, extra);
        t_inc = std::min(t_inc, seconds_since(t0));
        e_inc = delta.distance_evaluations;
        t0 = Clock::now();
        const auto full = graph::build_graph(all, f.k);
        t_full = std::min(t_full, seconds_since(t0));
        e_full = full.distance_evaluations;
      }
      const std::uint64_t inc_bound = (n + dn) * dn, full_bound = (n + dn) * (n + dn - 1) / 2;
      const double speedup = t_inc > 0 ? t_full / t_inc : 0.0;
      csv << n << ',' << dn << ',' << f.k << ',' << e_inc << ',' << e_full << ',' << inc_bound
          << ',' << full_bound << ',' << text::format_double(t_inc) << ','
          << text::format_double(t_full) << ',' << text::format_double(speedup) << '\n';
      std::printf("%6zu %6zu %3zu %14llu %14llu %10.5f %10.5f %8.1f\n", n, dn, f.k,
                  static_cast<unsigned long long>(e_inc), static_cast<unsigned long long>(e_full),
                  t_inc, t_full, speedup);
      results.push_back({{"n", n},
                         {"delta", dn},
                         {"incremental_evaluations", e_inc},
                         {"full_evaluations", e_full},
                         {"speedup", speedup}});
    }
  csv.close();
  m.output(out / "bench.csv");
  m.result() = results;
  m.write(out);
  return 0;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const DivergenceError*>(&e)) return 4;
  if (dynamic_cast<const Error*>(&e)) return 3;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Expandable graph-attention forecasting for growing sensor networks"};
  app.require_subcommand(1);

  Common common;
  SynthFlags synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic sensor scenario");
  add_common(s, common);
  s->add_option("--nodes", synth.nodes, "number of sensors");
  s->add_option("--steps", synth.steps, "number of time steps");
  s->add_option("--features", synth.features, "feature channels (1-4)");
  s->add_option("--area-km2", synth.area, "area of the square region");
  s->add_option("--expand-node-ratio", synth.node_ratio, "share of sensors installed later");
  s->add_option("--expand-time-ratio", synth.time_ratio, "share of time after the installation");

  TrainFlags tr;
  auto* t = app.add_subcommand("train", "train a model on one installation epoch");
  add_common(t, common);
  t->add_option("--data", tr.data, "dataset directory (sensors.csv, readings.csv)")->required();
  t->add_option("--epoch", tr.epoch, "installation epoch to train on (default 0)");
  t->add_option("--epochs", tr.epochs, "maximum training epochs");
  t->add_option("--lr", tr.lr, "learning rate");

  ExpandFlags ex;
  auto* e = app.add_subcommand("expand", "grow the graph by the next epoch's sensors and fine-tune");
  add_common(e, common);
  e->add_option("--data", ex.data, "dataset directory")->required();
  e->add_option("--checkpoint", ex.checkpoint, "checkpoint to continue from")->required();
  e->add_option("--stats", ex.stats, "normalisation statistics (default: next to the checkpoint)");
  e->add_option("--epochs", ex.epochs, "fine-tuning epochs");

  EvalFlags ev;
  auto* v = app.add_subcommand("eval", "compare workflows on synthetic scenarios");
  add_common(v, common);
  v->add_option("--workflow", ev.workflows, "continual, recent_only, fi_ss or fi_srs (repeatable)");
  v->add_option("--seeds", ev.seeds, "scenario seeds")->delimiter(',');
  v->add_option("--nodes", ev.nodes, "number of sensors");
  v->add_option("--steps", ev.steps, "number of time steps");
  v->add_option("--expand-node-ratio", ev.node_ratio, "share of sensors installed later");
  v->add_option("--expand-time-ratio", ev.time_ratio, "share of time after the installation");
  v->add_option("--epochs", ev.epochs, "maximum training epochs");

  InferFlags in;
  auto* q = app.add_subcommand("infer-virtual", "forecast at locations without a sensor");
  add_common(q, common);
  q->add_option("--data", in.data, "dataset directory")->required();
  q->add_option("--checkpoint", in.checkpoint, "trained checkpoint")->required();
  q->add_option("--stats", in.stats, "normalisation statistics (default: next to the checkpoint)");
  q->add_option("--queries", in.queries, "query file (query_id,lat,lon)")->required();
  q->add_option("--method", in.method, "ss or srs")->check(CLI::IsMember({"ss", "srs"}));
  q->add_option("--at", in.at, "first step of the input window (default: the latest)");
  q->add_flag("--skip-uncovered", in.skip_uncovered, "report uncovered queries instead of failing");

  BenchFlags bench;
  auto* b = app.add_subcommand("bench-expand", "count distance evaluations: expansion vs rebuild");
  add_common(b, common);
  b->add_option("--n", bench.ns, "existing sensors")->delimiter(',');
  b->add_option("--delta", bench.deltas, "added sensors")->delimiter(',');
  b->add_option("--k", bench.k, "neighbours per sensor");
  b->add_option("--repeats", bench.repeats, "timing repetitions (best of)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  for (const auto* sub : app.get_subcommands())
    if (common.out.empty()) common.out = "runs/" + sub->get_name();

  try {
    if (s->parsed()) return cmd_synth(common, synth);
    if (t->parsed()) return cmd_train(common, tr);
    if (e->parsed()) return cmd_expand(common, ex);
    if (v->parsed()) return cmd_eval(common, ev);
    if (q->parsed()) return cmd_infer_virtual(common, in);
    if (b->parsed()) return cmd_bench_expand(common, bench);
  } catch (const std::exception& err) {
    std::cerr << "egat: " << err.what() << '\n';
    return exit_code_for(err);
  }
  return 0;
}
