#include "egat/data_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <unordered_map>

#include "egat/errors.hpp"
#include "egat/log.hpp"
#include "egat/random.hpp"
#include "egat/text_table.hpp"

namespace egat::data {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kEarthRadiusM = 6371008.8;
constexpr double kMetresPerDegree = kEarthRadiusM * std::numbers::pi / 180.0;

bool is_missing_field(const std::string& s) {
  return s.empty() || s == "nan" || s == "NaN" || s == "NA";
}

// Clips the target, derives masks and active spans, drops sparse sensors and
// fills gaps. Expects NaN in every missing cell of `r.values`.
void finalize(Readings& r, const IngestConfig& cfg) {
  const std::size_t nf = r.features(), steps = r.steps;
  auto at = [&](std::size_t s, std::size_t f, std::size_t t) -> double& {
    return r.values[(s * nf + f) * steps + t];
  };

  std::vector<std::size_t> keep;
  std::vector<std::size_t> active_from;
  std::size_t missing_total = 0, active_total = 0;
  for (std::size_t s = 0; s < r.sensors(); ++s) {
    std::size_t first = steps, missing = 0;
    for (std::size_t t = 0; t < steps; ++t) {
      double& v = at(s, 0, t);
      if (std::isnan(v)) {
        if (first < steps) ++missing;
        continue;
      }
      v = std::clamp(v, cfg.aqi_min, cfg.aqi_max);
      if (first == steps) first = t;
    }
    if (first == steps) {
      log::warn("sensor " + r.sensor_ids[s] + " has no readings; dropped");
      r.dropped.push_back(r.sensor_ids[s]);
      continue;
    }
    const std::size_t active = steps - first;
    const double frac = static_cast<double>(missing) / static_cast<double>(active);
    if (frac > cfg.max_missing_fraction) {
      log::warn("sensor " + r.sensor_ids[s] + " is missing " +
                text::format_double(100.0 * frac) + "% of its readings; dropped");
      r.dropped.push_back(r.sensor_ids[s]);
      continue;
    }
    keep.push_back(s);
    active_from.push_back(first);
    missing_total += missing;
    active_total += active;
  }

  Readings out;
  out.feature_names = r.feature_names;
  out.start_time = r.start_time;
  out.period_s = r.period_s;
  out.steps = steps;
  out.dropped = std::move(r.dropped);
  out.active_from = active_from;
  out.missing_fraction =
      active_total ? static_cast<double>(missing_total) / static_cast<double>(active_total)
                   : 0.0;
  out.values.resize(keep.size() * nf * steps);
  out.observed.resize(keep.size() * steps);
  for (std::size_t k = 0; k < keep.size(); ++k) {
    const std::size_t s = keep[k], first = active_from[k];
    out.sensor_ids.push_back(r.sensor_ids[s]);
    for (std::size_t t = 0; t < steps; ++t)
      out.observed[k * steps + t] = !std::isnan(at(s, 0, t));
    for (std::size_t f = 0; f < nf; ++f) {
      double sum = 0.0;
      std::size_t n = 0;
      for (std::size_t t = first; t < steps; ++t)
        if (const double v = at(s, f, t); !std::isnan(v)) {
          sum += v;
          ++n;
        }
      const double mean = n ? sum / static_cast<double>(n) : 0.0;
      double* dst = &out.values[(k * nf + f) * steps];
      double last = kNaN;
      std::size_t run = 0;
      for (std::size_t t = 0; t < steps; ++t) {
        const double v = at(s, f, t);
        if (t < first) {
          dst[t] = mean;
        } else if (!std::isnan(v)) {
          dst[t] = v;
          last = v;
          run = 0;
        } else {
          ++run;
          dst[t] = (!std::isnan(last) && run <= cfg.max_forward_fill) ? last : mean;
        }
      }
    }
  }
  r = std::move(out);
}

std::string sensor_name(std::size_t i, std::size_t n) {
  std::string digits = std::to_string(i);
  const std::size_t width = std::max<std::size_t>(3, std::to_string(n - 1).size());
  return "s" + std::string(width - std::min(width, digits.size()), '0') + digits;
}

double reflect(double x, double limit) {
  // Triangle wave keeping x inside [-limit, limit].
  const double span = 4.0 * limit;
  double u = std::fmod(x + limit, span);
  if (u < 0) u += span;
  return u <= 2.0 * limit ? u - limit : 3.0 * limit - u;
}

}  // namespace

std::size_t Readings::index_of(const std::string& id) const {
  const auto it = std::find(sensor_ids.begin(), sensor_ids.end(), id);
  return static_cast<std::size_t>(it - sensor_ids.begin());
}

Readings ingest(std::istream& in, std::span<const graph::SensorNode> sensors,
                const IngestConfig& cfg, const std::string& source) {
  const text::Table t = text::read_table(in, source);
  const std::size_t c_ts = t.column("timestamp"), c_id = t.column("sensor_id");
  std::vector<std::size_t> feature_cols;
  Readings r;
  for (std::size_t c = 0; c < t.header.size(); ++c)
    if (c != c_ts && c != c_id) {
      feature_cols.push_back(c);
      r.feature_names.push_back(t.header[c]);
    }
  if (feature_cols.empty()) throw DataError(source + ": no feature columns");

  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < sensors.size(); ++i) {
    if (!index.emplace(sensors[i].id, i).second) throw DuplicateIdError(sensors[i].id);
    r.sensor_ids.push_back(sensors[i].id);
  }

  struct Row {
    std::int64_t ts;
    std::size_t sensor, row;
  };
  std::vector<Row> rows;
  rows.reserve(t.rows.size());
  std::vector<std::int64_t> last(sensors.size(), std::numeric_limits<std::int64_t>::min());
  std::int64_t period = cfg.period_s;
  std::int64_t inferred = std::numeric_limits<std::int64_t>::max();
  std::int64_t t_min = std::numeric_limits<std::int64_t>::max(), t_max = t_min;
  t_max = std::numeric_limits<std::int64_t>::min();
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    if (row.size() != t.header.size())
      throw DataError(t.where(i) + ": expected " + std::to_string(t.header.size()) +
                      " fields, found " + std::to_string(row.size()));
    const auto it = index.find(row[c_id]);
    if (it == index.end()) throw DataError(t.where(i) + ": unknown sensor id " + row[c_id]);
    const std::int64_t ts = text::to_int(row[c_ts], t.where(i));
    std::int64_t& prev = last[it->second];
    if (prev != std::numeric_limits<std::int64_t>::min()) {
      if (ts <= prev)
        throw DataError(t.where(i) + ": timestamps for sensor " + row[c_id] +
                        " are not strictly increasing");
      inferred = std::min(inferred, ts - prev);
    }
    prev = ts;
    t_min = std::min(t_min, ts);
    t_max = std::max(t_max, ts);
    rows.push_back({ts, it->second, i});
  }
  if (rows.empty()) throw DataError(source + ": no readings");
  if (period <= 0) {
    if (inferred == std::numeric_limits<std::int64_t>::max())
      throw DataError(source + ": cannot infer the sampling period; set it explicitly");
    period = inferred;
  }

  r.start_time = t_min;
  r.period_s = period;
  r.steps = static_cast<std::size_t>((t_max - t_min) / period) + 1;
  const std::size_t nf = r.features();
  r.values.assign(sensors.size() * nf * r.steps, kNaN);
  std::vector<std::uint8_t> filled(sensors.size() * r.steps, 0);
  for (const auto& row : rows) {
    const auto slot = static_cast<std::size_t>((row.ts - t_min) / period);
    if (filled[row.sensor * r.steps + slot]++)
      throw DataError(t.where(row.row) + ": two readings for sensor " +
                      r.sensor_ids[row.sensor] + " in one sampling period");
    for (std::size_t f = 0; f < nf; ++f) {
      const std::string& field = t.rows[row.row][feature_cols[f]];
      r.values[(row.sensor * nf + f) * r.steps + slot] =
          is_missing_field(field) ? kNaN : text::to_double(field, t.where(row.row));
    }
  }
  finalize(r, cfg);
  return r;
}

Readings ingest(const std::string& readings_path, const std::string& metadata_path,
                const IngestConfig& cfg) {
  const auto sensors = graph::read_sensor_metadata(metadata_path);
  std::ifstream in(readings_path);
  if (!in) throw DataError("cannot open readings file " + readings_path);
  return ingest(in, sensors, cfg, readings_path);
}

void write_readings(const std::string& path, const Readings& r) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "timestamp,sensor_id";
  for (const auto& f : r.feature_names) out << ',' << f;
  out << '\n';
  for (std::size_t t = 0; t < r.steps; ++t)
    for (std::size_t s = 0; s < r.sensors(); ++s) {
      if (!r.is_observed(s, t)) continue;
      out << r.start_time + static_cast<std::int64_t>(t) * r.period_s << ','
          << r.sensor_ids[s];
      for (std::size_t f = 0; f < r.features(); ++f)
        out << ',' << text::format_double(r.value(s, f, t));
      out << '\n';
    }
  if (!out) throw DataError("write failed: " + path);
}

Readings subset(const Readings& r, std::span<const std::string> ids) {
  Readings out;
  out.feature_names = r.feature_names;
  out.start_time = r.start_time;
  out.period_s = r.period_s;
  out.steps = r.steps;
  const std::size_t row = r.features() * r.steps;
  std::size_t missing = 0, active = 0;
  for (const auto& id : ids) {
    const std::size_t s = r.index_of(id);
    if (s == r.sensors()) throw DataError("sensor " + id + " is not in the readings");
    out.sensor_ids.push_back(id);
    out.active_from.push_back(r.active_from[s]);
    out.values.insert(out.values.end(), r.values.begin() + s * row,
                      r.values.begin() + (s + 1) * row);
    out.observed.insert(out.observed.end(), r.observed.begin() + s * r.steps,
                        r.observed.begin() + (s + 1) * r.steps);
    for (std::size_t t = r.active_from[s]; t < r.steps; ++t) {
      ++active;
      missing += !r.is_observed(s, t);
    }
  }
  out.missing_fraction =
      active ? static_cast<double>(missing) / static_cast<double>(active) : 0.0;
  return out;
}

// ---- synthetic scenarios -------------------------------------------------------

Field::Field(double lat0, double lon0, double half_side_m, double base, double diurnal,
             double steps_per_day, std::vector<Plume> plumes)
    : lat0_(lat0),
      lon0_(lon0),
      half_side_m_(half_side_m),
      base_(base),
      diurnal_(diurnal),
      steps_per_day_(steps_per_day),
      plumes_(std::move(plumes)) {}

double Field::diurnal_phase(double step) const {
  return 2.0 * std::numbers::pi * step / steps_per_day_;
}

double Field::aqi(double lat, double lon, double step) const {
  const double y = (lat - lat0_) * kMetresPerDegree;
  const double x = (lon - lon0_) * kMetresPerDegree * std::cos(lat0_ * std::numbers::pi / 180.0);
  double v = base_ + diurnal_ * std::sin(diurnal_phase(step));
  const double limit = 1.5 * half_side_m_;
  for (const auto& p : plumes_) {
    const double px = reflect(p.x0_m + p.vx_m * step, limit);
    const double py = reflect(p.y0_m + p.vy_m * step, limit);
    const double r2 = (x - px) * (x - px) + (y - py) * (y - py);
    const double amp =
        p.amplitude * (1.0 + 0.5 * std::sin(2.0 * std::numbers::pi * step / p.period_steps + p.phase));
    v += amp * std::exp(-r2 / (2.0 * p.sigma_m * p.sigma_m));
  }
  return v;
}

std::size_t Synthetic::old_count() const {
  return static_cast<std::size_t>(std::count_if(
      sensors.begin(), sensors.end(), [](const auto& s) { return s.install_epoch == 0; }));
}

Synthetic synthesize(const Scenario& sc) {
  if (sc.n_sensors < 2) throw ConfigError("synthesize: need at least 2 sensors");
  if (sc.n_steps < 2) throw ConfigError("synthesize: need at least 2 steps");
  if (sc.expand_node_ratio < 0.0 || sc.expand_node_ratio >= 1.0)
    throw ConfigError("expand node ratio must lie in [0, 1)");
  if (sc.expand_time_ratio < 0.0 || sc.expand_time_ratio >= 1.0)
    throw ConfigError("expand time ratio must lie in [0, 1)");
  if (sc.area_km2 <= 0.0) throw ConfigError("area must be positive");
  if (sc.period_s <= 0) throw ConfigError("sampling period must be positive");
  if (sc.missing_rate < 0.0 || sc.missing_rate >= 0.5)
    throw ConfigError("missing rate must lie in [0, 0.5)");

  Rng rng(sc.seed);
  const double half = 500.0 * std::sqrt(sc.area_km2);
  const double cos0 = std::cos(sc.center_lat * std::numbers::pi / 180.0);
  const auto n_new = static_cast<std::size_t>(
      std::llround(sc.expand_node_ratio * static_cast<double>(sc.n_sensors)));
  const std::size_t n_old = sc.n_sensors - std::min(n_new, sc.n_sensors - 1);
  const auto cut = static_cast<std::size_t>(
      std::floor((1.0 - sc.expand_time_ratio) * static_cast<double>(sc.n_steps)));

  std::vector<graph::SensorNode> sensors;
  for (std::size_t i = 0; i < sc.n_sensors; ++i) {
    const double x = rng.uniform(-half, half), y = rng.uniform(-half, half);
    graph::SensorNode n;
    n.id = sensor_name(i, sc.n_sensors);
    n.lat = sc.center_lat + y / kMetresPerDegree;
    n.lon = sc.center_lon + x / (kMetresPerDegree * cos0);
    n.install_epoch = i < n_old ? 0 : 1;
    sensors.push_back(std::move(n));
  }

  std::vector<Plume> plumes;
  for (std::size_t p = 0; p < sc.plumes; ++p) {
    Plume pl{};
    pl.x0_m = rng.uniform(-1.5 * half, 1.5 * half);
    pl.y0_m = rng.uniform(-1.5 * half, 1.5 * half);
    const double speed = rng.uniform(0.02, 0.08) * half;
    const double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
    pl.vx_m = speed * std::cos(heading);
    pl.vy_m = speed * std::sin(heading);
    pl.sigma_m = rng.uniform(0.3, 0.7) * half;
    pl.amplitude = rng.uniform(20.0, 50.0);
    pl.period_steps = rng.uniform(30.0, 90.0);
    pl.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    plumes.push_back(pl);
  }
  const double steps_per_day = 86400.0 / static_cast<double>(sc.period_s);
  Field field(sc.center_lat, sc.center_lon, half, sc.base_aqi, sc.diurnal_amplitude,
              steps_per_day, std::move(plumes));

  static const char* kFeatureNames[] = {"pm25", "pm10", "humidity", "temperature"};
  const std::size_t nf = std::clamp<std::size_t>(sc.features, 1, 4);
  const std::size_t steps = sc.n_steps, ns = sc.n_sensors;

  Readings r;
  r.feature_names.assign(kFeatureNames, kFeatureNames + nf);
  r.start_time = sc.start_time;
  r.period_s = sc.period_s;
  r.steps = steps;
  for (const auto& s : sensors) r.sensor_ids.push_back(s.id);
  r.values.assign(ns * nf * steps, kNaN);
  std::vector<double> truth(ns * steps);
  for (std::size_t s = 0; s < ns; ++s) {
    const std::size_t first = sensors[s].install_epoch == 0 ? 0 : cut;
    for (std::size_t t = 0; t < steps; ++t) {
      const double a = field.aqi(sensors[s].lat, sensors[s].lon, static_cast<double>(t));
      truth[s * steps + t] = a;
      const double ph = field.diurnal_phase(static_cast<double>(t));
      const double f[4] = {
          a + sc.noise * rng.normal(),
          1.25 * a + 4.0 + sc.noise * rng.normal(),
          65.0 - 12.0 * std::sin(ph) + 0.5 * sc.noise * rng.normal(),
          15.0 + 7.0 * std::sin(ph - 0.5 * std::numbers::pi) + 0.3 * sc.noise * rng.normal(),
      };
      if (t < first) continue;
      for (std::size_t k = 0; k < nf; ++k) r.values[(s * nf + k) * steps + t] = f[k];
    }
  }

  // Plant gaps at exactly round(rate * active cells), never on a sensor's
  // first active step so that active spans stay recoverable from the file.
  std::size_t active_cells = 0;
  std::vector<std::size_t> eligible;
  for (std::size_t s = 0; s < ns; ++s) {
    const std::size_t first = sensors[s].install_epoch == 0 ? 0 : cut;
    active_cells += steps - first;
    for (std::size_t t = first + 1; t < steps; ++t) eligible.push_back(s * steps + t);
  }
  const auto planted = std::min<std::size_t>(
      eligible.size(),
      static_cast<std::size_t>(std::llround(sc.missing_rate * static_cast<double>(active_cells))));
  for (std::size_t i = 0; i < planted; ++i) {
    const std::size_t j = i + rng.below(eligible.size() - i);
    std::swap(eligible[i], eligible[j]);
    const std::size_t s = eligible[i] / steps, t = eligible[i] % steps;
    for (std::size_t k = 0; k < nf; ++k) r.values[(s * nf + k) * steps + t] = kNaN;
  }
  finalize(r, IngestConfig{});

  return Synthetic{std::move(sensors), std::move(r), std::move(truth), std::move(field), cut,
                   planted};
}

// ---- windows -------------------------------------------------------------------

std::size_t window_count(std::size_t length, std::size_t input_length, std::size_t horizon) {
  const std::size_t need = input_length + horizon;
  return length >= need ? length - need + 1 : 0;
}

const std::vector<std::size_t>& WindowedDataset::windows(Split s) const {
  switch (s) {
    case Split::Train: return train;
    case Split::Val: return val;
    case Split::Test: return test;
  }
  return test;
}

Normalizer compute_stats(const Readings& r, std::size_t begin, std::size_t end) {
  Normalizer n;
  const std::size_t nf = r.features();
  n.mean.assign(nf, 0.0);
  n.stddev.assign(nf, 1.0);
  for (std::size_t f = 0; f < nf; ++f) {
    double sum = 0.0, sq = 0.0;
    std::size_t count = 0;
    for (std::size_t s = 0; s < r.sensors(); ++s)
      for (std::size_t t = begin; t < end; ++t) {
        if (!r.is_observed(s, t)) continue;
        sum += r.value(s, f, t);
        ++count;
      }
    if (count == 0) continue;
    const double mean = sum / static_cast<double>(count);
    for (std::size_t s = 0; s < r.sensors(); ++s)
      for (std::size_t t = begin; t < end; ++t) {
        if (!r.is_observed(s, t)) continue;
        const double d = r.value(s, f, t) - mean;
        sq += d * d;
      }
    const double sd = std::sqrt(sq / static_cast<double>(count));
    n.mean[f] = mean;
    n.stddev[f] = sd > 1e-12 ? sd : 1.0;
  }
  return n;
}

WindowedDataset window(const Readings& r, const WindowConfig& cfg, const Normalizer* stats) {
  const auto& q = cfg.ratios;
  if (q.train < 0 || q.val < 0 || q.test < 0 || std::abs(q.train + q.val + q.test - 1.0) > 1e-9)
    throw ConfigError("split ratios must be non-negative and sum to 1");
  if (cfg.input_length == 0 || cfg.horizon == 0)
    throw ConfigError("input length and horizon must be positive");
  const std::size_t begin = cfg.begin, end = cfg.end ? cfg.end : r.steps;
  if (end > r.steps || begin >= end)
    throw ConfigError("window range [" + std::to_string(begin) + ", " + std::to_string(end) +
                      ") is outside the " + std::to_string(r.steps) + "-step series");
  const std::size_t need = cfg.input_length + cfg.horizon;
  const std::size_t len = end - begin;
  if (len < need)
    throw LengthError("series of " + std::to_string(len) + " steps is shorter than one " +
                          std::to_string(need) + "-step window",
                      need);

  WindowedDataset ds;
  ds.sensor_ids = r.sensor_ids;
  ds.features = r.features();
  ds.input_length = cfg.input_length;
  ds.horizon = cfg.horizon;
  ds.steps = r.steps;
  const auto n_train = static_cast<std::size_t>(std::llround(q.train * static_cast<double>(len)));
  const auto n_val = std::min(len - n_train, static_cast<std::size_t>(
                                                 std::llround(q.val * static_cast<double>(len))));
  ds.train_segment = {begin, begin + n_train};
  ds.val_segment = {begin + n_train, begin + n_train + n_val};
  ds.test_segment = {begin + n_train + n_val, end};
  auto fill = [&](const Segment& seg, std::vector<std::size_t>& out) {
    const std::size_t n = window_count(seg.length(), cfg.input_length, cfg.horizon);
    for (std::size_t i = 0; i < n; ++i) out.push_back(seg.begin + i);
  };
  fill(ds.train_segment, ds.train);
  fill(ds.val_segment, ds.val);
  fill(ds.test_segment, ds.test);
  if (ds.train.empty() && ds.val.empty() && ds.test.empty())
    throw LengthError("no split segment of the " + std::to_string(len) +
                          "-step range can hold a " + std::to_string(need) + "-step window",
                      need);

  ds.stats = stats ? *stats : compute_stats(r, ds.train_segment.begin, ds.train_segment.end);
  if (ds.stats.mean.size() != ds.features)
    throw DimensionError("normalisation statistics cover " +
                         std::to_string(ds.stats.mean.size()) + " features, data has " +
                         std::to_string(ds.features));
  ds.series.resize(r.values.size());
  for (std::size_t s = 0; s < r.sensors(); ++s)
    for (std::size_t f = 0; f < ds.features; ++f)
      for (std::size_t t = 0; t < r.steps; ++t)
        ds.series[(s * ds.features + f) * r.steps + t] = ds.stats.normalize(f, r.value(s, f, t));
  ds.target.resize(r.sensors() * r.steps);
  for (std::size_t s = 0; s < r.sensors(); ++s)
    for (std::size_t t = 0; t < r.steps; ++t) ds.target[s * r.steps + t] = r.value(s, 0, t);
  ds.target_observed = r.observed;
  return ds;
}

Batch make_batch(const WindowedDataset& ds, std::span<const std::size_t> starts) {
  const std::size_t n = ds.sensors(), nf = ds.features, T = ds.input_length,
                    Tp = ds.horizon, B = starts.size(), steps = ds.steps;
  std::vector<double> x(B * n * nf * T), y(B * n * Tp), m(B * n * Tp);
  Batch b;
  b.samples = B;
  b.y_raw.resize(B * n * Tp);
  b.last_raw.resize(B * n);
  for (std::size_t k = 0; k < B; ++k) {
    const std::size_t t0 = starts[k];
    if (t0 + T + Tp > steps) throw DimensionError("window start beyond the series");
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t row = k * n + s;
      for (std::size_t f = 0; f < nf; ++f)
        std::copy_n(&ds.series[(s * nf + f) * steps + t0], T, &x[(row * nf + f) * T]);
      for (std::size_t h = 0; h < Tp; ++h) {
        const std::size_t t = t0 + T + h;
        y[row * Tp + h] = ds.series[(s * nf) * steps + t];
        m[row * Tp + h] = ds.target_observed[s * steps + t] ? 1.0 : 0.0;
        b.y_raw[row * Tp + h] = ds.target[s * steps + t];
      }
      b.last_raw[row] = ds.target[s * steps + t0 + T - 1];
    }
  }
  b.x = num::Tensor::from({B * n, nf, T}, std::move(x));
  b.y = num::Tensor::from({B * n, Tp}, std::move(y));
  b.mask = num::Tensor::from({B * n, Tp}, std::move(m));
  return b;
}

}  // namespace egat::data
