#pragma once

// Sensor readings on a regular time grid, a synthetic plume generator that
// stands in for field data, and sliding-window datasets with train-only
// normalisation.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "egat/graph_store.hpp"
#include "egat/numerics.hpp"

namespace egat::data {

// Gridded readings, laid out sensor-major then feature then time. Feature 0
// is the prediction target (PM2.5 AQI).
struct Readings {
  std::vector<std::string> sensor_ids;
  std::vector<std::string> feature_names;
  std::int64_t start_time = 0;
  std::int64_t period_s = 3600;
  std::size_t steps = 0;
  std::vector<double> values;          // filled; defined everywhere
  std::vector<std::uint8_t> observed;  // per (sensor, step): a real reading
  std::vector<std::size_t> active_from;  // first observed step per sensor
  // Missing cells over each sensor's active span / active cells.
  double missing_fraction = 0.0;
  std::vector<std::string> dropped;

  std::size_t sensors() const { return sensor_ids.size(); }
  std::size_t features() const { return feature_names.size(); }
  double value(std::size_t s, std::size_t f, std::size_t t) const {
    return values[(s * features() + f) * steps + t];
  }
  bool is_observed(std::size_t s, std::size_t t) const { return observed[s * steps + t] != 0; }
  std::size_t index_of(const std::string& id) const;
};

struct IngestConfig {
  // 0 infers the smallest positive spacing between a sensor's readings.
  std::int64_t period_s = 0;
  double aqi_min = 0.0;
  double aqi_max = 300.0;
  std::size_t max_forward_fill = 3;
  double max_missing_fraction = 0.5;
};

// Readings file: header `timestamp,sensor_id,<feature>...`, feature 0 the
// target. Empty or `nan` fields count as missing.
Readings ingest(const std::string& readings_path, const std::string& metadata_path,
                const IngestConfig& cfg = {});
Readings ingest(std::istream& readings, std::span<const graph::SensorNode> sensors,
                const IngestConfig& cfg = {}, const std::string& source = "<readings>");
// Writes observed cells only.
void write_readings(const std::string& path, const Readings& r);

// Restrict to the given sensors, in that order.
Readings subset(const Readings& r, std::span<const std::string> ids);

// ---- synthetic scenarios -------------------------------------------------------

struct Plume {
  double x0_m, y0_m;    // start position in the local frame
  double vx_m, vy_m;  // drift in metres per step
  double sigma_m;
  double amplitude;
  double period_steps;  // amplitude modulation period
  double phase;
};

// Noise-free AQI field on a local tangent plane centred at (lat0, lon0).
class Field {
 public:
  Field(double lat0, double lon0, double half_side_m, double base, double diurnal,
        double steps_per_day, std::vector<Plume> plumes);
  double aqi(double lat, double lon, double step) const;
  double diurnal_phase(double step) const;
  double half_side_m() const { return half_side_m_; }

 private:
  double lat0_, lon0_, half_side_m_, base_, diurnal_, steps_per_day_;
  std::vector<Plume> plumes_;
};

struct Scenario {
  std::size_t n_sensors = 30;
  double area_km2 = 10.0;
  std::size_t n_steps = 2000;
  double expand_node_ratio = 0.2;
  double expand_time_ratio = 0.1;
  std::uint64_t seed = 1;
  std::size_t features = 4;  // pm25, pm10, humidity, temperature (clamped to 1..4)
  std::size_t plumes = 4;
  double noise = 2.0;
  double base_aqi = 40.0;
  double diurnal_amplitude = 15.0;
  double missing_rate = 0.015;
  std::int64_t period_s = 3600;
  std::int64_t start_time = 1633046400;
  double center_lat = 37.7749;
  double center_lon = -122.4194;
};

struct Synthetic {
  std::vector<graph::SensorNode> sensors;  // epoch-0 sensors first
  Readings readings;
  // Noise-free target per (sensor, step).
  std::vector<double> truth;
  Field field;
  std::size_t cut_step = 0;     // new sensors report from here on
  std::size_t planted_missing = 0;
  std::size_t old_count() const;
};

Synthetic synthesize(const Scenario& sc);

// ---- windows -------------------------------------------------------------------

struct Normalizer {
  std::vector<double> mean;
  std::vector<double> stddev;
  double normalize(std::size_t f, double v) const { return (v - mean[f]) / stddev[f]; }
  double denormalize(std::size_t f, double v) const { return v * stddev[f] + mean[f]; }
};

struct SplitRatios {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

struct WindowConfig {
  std::size_t input_length = 12;
  std::size_t horizon = 12;
  SplitRatios ratios;
  // Time range [begin, end); end 0 means the last step.
  std::size_t begin = 0;
  std::size_t end = 0;
};

enum class Split { Train, Val, Test };

struct Segment {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t length() const { return end - begin; }
};

struct WindowedDataset {
  std::vector<std::string> sensor_ids;
  std::size_t features = 0;
  std::size_t input_length = 0;
  std::size_t horizon = 0;
  std::size_t steps = 0;
  std::vector<double> series;               // normalised, sensor x feature x step
  std::vector<double> target;               // raw AQI, sensor x step
  std::vector<std::uint8_t> target_observed;  // sensor x step
  Normalizer stats;
  Segment train_segment, val_segment, test_segment;
  // Window start steps (first input step) per split.
  std::vector<std::size_t> train, val, test;

  std::size_t sensors() const { return sensor_ids.size(); }
  const std::vector<std::size_t>& windows(Split s) const;
};

// Split ratios must sum to 1. Statistics come from the train segment unless
// `stats` is given. Throws LengthError if no segment can hold one window.
WindowedDataset window(const Readings& r, const WindowConfig& cfg,
                       const Normalizer* stats = nullptr);
std::size_t window_count(std::size_t length, std::size_t input_length, std::size_t horizon);
// Per-feature z-score statistics over observed cells of [begin, end).
Normalizer compute_stats(const Readings& r, std::size_t begin, std::size_t end);

struct Batch {
  num::Tensor x;       // B*N x F x T, normalised
  num::Tensor y;       // B*N x T_p, normalised target
  num::Tensor mask;    // B*N x T_p, 1 where the target was observed
  std::vector<double> y_raw;   // B*N x T_p
  std::vector<double> last_raw;  // B*N, raw target at the last input step
  std::size_t samples = 0;
};

Batch make_batch(const WindowedDataset& ds, std::span<const std::size_t> starts);

}  // namespace egat::data
