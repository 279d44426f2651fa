#pragma once

// Masked MAE training with Adam, metric reports, and the experiment
// workflows: continual (train on the old graph, resume on the grown one),
// recent-only (train from scratch on post-expansion data), and flexible
// inference of new sensors by spatial or representation smoothing.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "egat/data_pipeline.hpp"
#include "egat/forecaster.hpp"
#include "egat/graph_store.hpp"
#include "egat/random.hpp"
#include "egat/smoothing.hpp"

namespace egat::train {

// ---- loss and metrics ----------------------------------------------------------

// Mean |pred - target| over entries with mask != 0. The subgradient at a
// tie is 0. Throws ContractError when the mask selects nothing.
num::Tensor mae_loss(const num::Tensor& pred, const num::Tensor& target,
                     const num::Tensor& mask);

struct HorizonMetrics {
  double mae = 0.0;
  double rmse = 0.0;
  double mape = 0.0;  // percent, over |target| >= mape_floor
  std::size_t count = 0;
  std::size_t mape_count = 0;
};

struct MetricReport {
  std::vector<HorizonMetrics> horizons;
  HorizonMetrics overall;
  // Nodes whose predictions entered the report, out of those requested.
  std::size_t covered_nodes = 0;
  std::size_t requested_nodes = 0;
};

class MetricAccumulator {
 public:
  explicit MetricAccumulator(std::size_t horizon, double mape_floor = 1.0);
  void add(std::size_t h, double pred, double target);
  // Row-major rows x horizon; empty mask means all observed.
  void add_rows(std::span<const double> pred, std::span<const double> target,
                std::span<const double> mask);
  void merge(const MetricAccumulator& other);
  MetricReport report() const;

 private:
  struct Sums {
    double abs = 0.0, sq = 0.0, pct = 0.0;
    std::size_t n = 0, n_pct = 0;
  };
  std::size_t horizon_;
  double floor_;
  std::vector<Sums> sums_;
};

MetricReport evaluate(std::span<const double> pred, std::span<const double> target,
                      std::span<const double> mask, std::size_t horizon,
                      double mape_floor = 1.0);

// ---- training ------------------------------------------------------------------

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 5.0;
  std::size_t batch_size = 8;
  std::size_t max_epochs = 30;
  std::size_t patience = 5;
  // 0 uses every training window once per epoch.
  std::size_t batches_per_epoch = 0;
  // Validation windows per epoch, evenly strided; 0 uses all.
  std::size_t eval_windows = 0;
  std::uint64_t seed = 1;
  // Share of phase-two batches drawn from phase-one data.
  double replay_fraction = 0.0;
  bool restore_best = true;
  double mape_floor = 1.0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 0 is the state before any update
  double train_loss = 0.0;  // normalised MAE
  double val_mae = 0.0;     // AQI units
  double seconds = 0.0;
};

struct TrainResult {
  model::ModelParams params;
  std::vector<EpochRecord> curve;
  std::size_t best_epoch = 0;
  double best_val_mae = 0.0;
  std::size_t updates = 0;
};

// Owns the parameters and optimiser state; successive fit() calls continue
// the same Adam moments and shuffling stream.
class Trainer {
 public:
  Trainer(model::ModelParams params, TrainConfig cfg);

  struct Source {
    const data::WindowedDataset* data = nullptr;
    const graph::SensorGraph* graph = nullptr;
  };
  // Up to `epochs` epochs with early stopping on validation MAE.
  TrainResult fit(const data::WindowedDataset& ds, const graph::SensorGraph& g,
                  std::size_t epochs, std::optional<Source> replay = std::nullopt);

  const model::ModelParams& params() const { return params_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  double step(const data::Batch& b, const attn::NeighborTable& table);

  model::ModelParams params_;
  TrainConfig cfg_;
  std::vector<num::Tensor> tensors_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
  Rng rng_;
};

// Node ids of the dataset must match the graph's, in order.
void check_alignment(const data::WindowedDataset& ds, const graph::SensorGraph& g);

TrainResult train(const model::ModelParams& init, const data::WindowedDataset& ds,
                  const graph::SensorGraph& g, const TrainConfig& cfg);

struct ContinualResult {
  TrainResult phase1;
  TrainResult phase2;
  // Normalised MAE on old nodes: phase-one training windows at the end of
  // phase one, and phase-two training windows before phase two starts.
  double phase1_end_loss = 0.0;
  double phase2_start_loss = 0.0;
};

// Phase one on (ds_old, g_old); phase two resumes the same parameters and
// optimiser on (ds_new, g_new). g_new must extend g_old.
ContinualResult continual_train(const model::ModelParams& init,
                                const data::WindowedDataset& ds_old,
                                const graph::SensorGraph& g_old,
                                const data::WindowedDataset& ds_new,
                                const graph::SensorGraph& g_new, const TrainConfig& cfg,
                                std::size_t phase2_epochs);

// ---- prediction and evaluation -------------------------------------------------

// Raw-unit predictions, starts.size() * N x horizon, sample-major.
std::vector<double> predict(const model::ModelParams& p, const data::WindowedDataset& ds,
                            const graph::SensorGraph& g, std::span<const std::size_t> starts,
                            std::size_t batch_size = 16);

// Normalised masked MAE over the given windows, optionally restricted to
// the first `nodes` rows of each sample.
double mean_loss(const model::ModelParams& p, const data::WindowedDataset& ds,
                 const graph::SensorGraph& g, std::span<const std::size_t> starts,
                 std::size_t nodes = 0);

MetricReport evaluate_model(const model::ModelParams& p, const data::WindowedDataset& ds,
                            const graph::SensorGraph& g, data::Split split,
                            double mape_floor = 1.0, std::size_t max_windows = 0);

// y_{t+h} = y_t for every h.
MetricReport evaluate_persistence(const data::WindowedDataset& ds, data::Split split,
                                  double mape_floor = 1.0, std::size_t max_windows = 0);

// Evenly strided subset of at most `max` windows (all when max is 0).
std::vector<std::size_t> strided(const std::vector<std::size_t>& windows, std::size_t max);

// ---- workflows -----------------------------------------------------------------

enum class Workflow { Continual, RecentOnly, FiSs, FiSrs };
std::string workflow_name(Workflow w);
Workflow parse_workflow(const std::string& s);

struct ExperimentConfig {
  model::ModelConfig model;
  TrainConfig train;
  std::size_t k = 8;
  data::SplitRatios ratios;
  // 0 reuses train.max_epochs.
  std::size_t phase2_epochs = 0;
  smooth::SmoothingConfig smoothing;
  // Cap on evaluated test windows; 0 evaluates all.
  std::size_t test_windows = 0;
};

// Flexible-inference output: metrics over all nodes (old ones predicted
// directly, new ones through smoothing) and per new sensor.
struct FlexibleInference {
  MetricReport all;
  std::vector<std::string> new_ids;
  std::vector<MetricReport> per_new;  // parallel to new_ids
  std::vector<std::string> uncovered;
};

struct ExperimentResult {
  std::vector<std::pair<std::string, MetricReport>> reports;  // by model name
  std::optional<ContinualResult> continual;
  std::optional<TrainResult> recent_only;
  std::optional<FlexibleInference> fi_ss, fi_srs;
  const MetricReport* find(const std::string& name) const;
};

// Runs the requested workflows on a synthetic scenario (persistence is always
// reported). All models are scored on the same post-expansion test windows.
ExperimentResult run_experiment(const data::Synthetic& syn, const ExperimentConfig& cfg,
                                std::span<const Workflow> workflows);

// Raw-unit forecasts (virtuals.size() x horizon) at sensorless locations for
// the input window starting at `start`, which may end at the last step;
// ds rows must align with g.
std::vector<double> predict_virtual(const model::ModelParams& p, const graph::SensorGraph& g,
                                    const data::WindowedDataset& ds, std::size_t start,
                                    std::span<const smooth::VirtualNode> virtuals,
                                    bool representation);

// Phase-one model applied to new sensors as unseen locations.
FlexibleInference flexible_inference(const model::ModelParams& p,
                                     const graph::SensorGraph& g_old,
                                     const data::WindowedDataset& ds_all,
                                     std::span<const graph::SensorNode> new_nodes,
                                     bool representation, const ExperimentConfig& cfg);

// Delimited outputs: `epoch,train_loss,val_mae,seconds` and
// `model,horizon,MAE,RMSE,MAPE` (horizon `all` for the average).
void write_curve(std::ostream& out, std::span<const EpochRecord> curve);
void write_metrics_header(std::ostream& out);
void write_metrics(std::ostream& out, const std::string& model, const MetricReport& r);

}  // namespace egat::train
