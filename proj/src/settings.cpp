#include "egat/settings.hpp"

#include <algorithm>

#include "egat/errors.hpp"
#include "egat/forecaster.hpp"
#include "egat/text_table.hpp"

namespace egat::settings {

namespace {

std::size_t size_of(const config::KeyValues& kv, const std::string& key, std::size_t fallback) {
  const auto v = kv.get_int(key, static_cast<std::int64_t>(fallback));
  if (v < 0) throw ConfigError(key + " must be non-negative");
  return static_cast<std::size_t>(v);
}

std::string num(double v) { return text::format_double(v); }
std::string num(std::size_t v) { return std::to_string(v); }

}  // namespace

data::Scenario scenario_from(const config::KeyValues& kv, data::Scenario s) {
  s.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<std::int64_t>(s.seed)));
  s.n_sensors = size_of(kv, "scenario.nodes", s.n_sensors);
  s.n_steps = size_of(kv, "scenario.steps", s.n_steps);
  s.area_km2 = kv.get_double("scenario.area_km2", s.area_km2);
  s.expand_node_ratio = kv.get_double("scenario.expand_node_ratio", s.expand_node_ratio);
  s.expand_time_ratio = kv.get_double("scenario.expand_time_ratio", s.expand_time_ratio);
  s.features = size_of(kv, "scenario.features", s.features);
  s.plumes = size_of(kv, "scenario.plumes", s.plumes);
  s.noise = kv.get_double("scenario.noise", s.noise);
  s.base_aqi = kv.get_double("scenario.base_aqi", s.base_aqi);
  s.diurnal_amplitude = kv.get_double("scenario.diurnal_amplitude", s.diurnal_amplitude);
  s.missing_rate = kv.get_double("scenario.missing_rate", s.missing_rate);
  s.period_s = kv.get_int("scenario.period_s", s.period_s);
  return s;
}

data::IngestConfig ingest_from(const config::KeyValues& kv, data::IngestConfig c) {
  c.period_s = kv.get_int("ingest.period_s", c.period_s);
  c.aqi_min = kv.get_double("ingest.aqi_min", c.aqi_min);
  c.aqi_max = kv.get_double("ingest.aqi_max", c.aqi_max);
  c.max_forward_fill = size_of(kv, "ingest.max_forward_fill", c.max_forward_fill);
  c.max_missing_fraction = kv.get_double("ingest.max_missing_fraction", c.max_missing_fraction);
  return c;
}

train::TrainConfig train_from(const config::KeyValues& kv, train::TrainConfig c) {
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<std::int64_t>(c.seed)));
  c.learning_rate = kv.get_double("train.learning_rate", c.learning_rate);
  c.beta1 = kv.get_double("train.beta1", c.beta1);
  c.beta2 = kv.get_double("train.beta2", c.beta2);
  c.adam_eps = kv.get_double("train.adam_eps", c.adam_eps);
  c.clip_norm = kv.get_double("train.clip_norm", c.clip_norm);
  c.batch_size = size_of(kv, "train.batch_size", c.batch_size);
  c.max_epochs = size_of(kv, "train.max_epochs", c.max_epochs);
  c.patience = size_of(kv, "train.patience", c.patience);
  c.batches_per_epoch = size_of(kv, "train.batches_per_epoch", c.batches_per_epoch);
  c.eval_windows = size_of(kv, "train.eval_windows", c.eval_windows);
  c.replay_fraction = kv.get_double("train.replay_fraction", c.replay_fraction);
  c.restore_best = kv.get_bool("train.restore_best", c.restore_best);
  c.mape_floor = kv.get_double("train.mape_floor", c.mape_floor);
  if (c.batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(c.learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  return c;
}

train::ExperimentConfig experiment_from(const config::KeyValues& kv, train::ExperimentConfig c) {
  c.model = model::config_from(kv, c.model);
  c.train = train_from(kv, c.train);
  c.k = size_of(kv, "graph.k", c.k);
  c.ratios.train = kv.get_double("split.train", c.ratios.train);
  c.ratios.val = kv.get_double("split.val", c.ratios.val);
  c.ratios.test = kv.get_double("split.test", c.ratios.test);
  c.phase2_epochs = size_of(kv, "train.phase2_epochs", c.phase2_epochs);
  c.test_windows = size_of(kv, "train.test_windows", c.test_windows);
  c.smoothing.epsilon_m = kv.get_double("smoothing.epsilon_m", c.smoothing.epsilon_m);
  c.smoothing.raw_weights = kv.get_bool("smoothing.raw_weights", c.smoothing.raw_weights);
  if (c.k == 0) throw ConfigError("graph.k must be positive");
  return c;
}

Entries scenario_entries(const data::Scenario& s) {
  return {{"seed", std::to_string(s.seed)},
          {"scenario.nodes", num(s.n_sensors)},
          {"scenario.steps", num(s.n_steps)},
          {"scenario.area_km2", num(s.area_km2)},
          {"scenario.expand_node_ratio", num(s.expand_node_ratio)},
          {"scenario.expand_time_ratio", num(s.expand_time_ratio)},
          {"scenario.features", num(s.features)},
          {"scenario.plumes", num(s.plumes)},
          {"scenario.noise", num(s.noise)},
          {"scenario.base_aqi", num(s.base_aqi)},
          {"scenario.diurnal_amplitude", num(s.diurnal_amplitude)},
          {"scenario.missing_rate", num(s.missing_rate)},
          {"scenario.period_s", std::to_string(s.period_s)}};
}

Entries experiment_entries(const train::ExperimentConfig& c) {
  Entries e = model::config_entries(c.model);
  const auto& t = c.train;
  const Entries rest{{"seed", std::to_string(t.seed)},
                     {"graph.k", num(c.k)},
                     {"split.train", num(c.ratios.train)},
                     {"split.val", num(c.ratios.val)},
                     {"split.test", num(c.ratios.test)},
                     {"train.learning_rate", num(t.learning_rate)},
                     {"train.beta1", num(t.beta1)},
                     {"train.beta2", num(t.beta2)},
                     {"train.adam_eps", num(t.adam_eps)},
                     {"train.clip_norm", num(t.clip_norm)},
                     {"train.batch_size", num(t.batch_size)},
                     {"train.max_epochs", num(t.max_epochs)},
                     {"train.patience", num(t.patience)},
                     {"train.batches_per_epoch", num(t.batches_per_epoch)},
                     {"train.eval_windows", num(t.eval_windows)},
                     {"train.replay_fraction", num(t.replay_fraction)},
                     {"train.restore_best", t.restore_best ? "true" : "false"},
                     {"train.mape_floor", num(t.mape_floor)},
                     {"train.phase2_epochs", num(c.phase2_epochs)},
                     {"train.test_windows", num(c.test_windows)},
                     {"smoothing.epsilon_m", num(c.smoothing.epsilon_m)},
                     {"smoothing.raw_weights", c.smoothing.raw_weights ? "true" : "false"}};
  e.insert(e.end(), rest.begin(), rest.end());
  return e;
}

std::vector<std::string> known_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, v] : scenario_entries({})) keys.push_back(k);
  for (const auto& [k, v] : experiment_entries({})) keys.push_back(k);
  for (const char* k : {"ingest.period_s", "ingest.aqi_min", "ingest.aqi_max",
                        "ingest.max_forward_fill", "ingest.max_missing_fraction"})
    keys.emplace_back(k);
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  return keys;
}

void reject_unknown(const config::KeyValues& kv) {
  const auto keys = known_keys();
  for (const auto& [k, v] : kv.entries())
    if (!std::binary_search(keys.begin(), keys.end(), k))
      throw ConfigError("unknown config key '" + k + "'");
}

}  // namespace egat::settings
