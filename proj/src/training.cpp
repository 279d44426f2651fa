#include "egat/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>

#include "egat/errors.hpp"
#include "egat/log.hpp"
#include "egat/text_table.hpp"

namespace egat::train {

// ---- loss and metrics ----------------------------------------------------------

num::Tensor mae_loss(const num::Tensor& pred, const num::Tensor& target,
                     const num::Tensor& mask) {
  if (pred.shape() != target.shape() || pred.shape() != mask.shape())
    throw DimensionError("mae_loss: prediction " + num::shape_str(pred.shape()) +
                         ", target " + num::shape_str(target.shape()) + ", mask " +
                         num::shape_str(mask.shape()));
  const auto p = pred.data(), y = target.data(), m = mask.data();
  double count = 0.0, total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (m[i] != 0.0) {
      count += 1.0;
      total += std::abs(p[i] - y[i]);
    }
  if (count == 0.0) throw ContractError("mae_loss: mask selects no entries");
  std::vector<double> sign(p.size(), 0.0);
  for (std::size_t i = 0; i < p.size(); ++i)
    if (m[i] != 0.0) sign[i] = p[i] > y[i] ? 1.0 / count : (p[i] < y[i] ? -1.0 / count : 0.0);
  return num::record({}, {total / count}, {pred},
                     [sign = std::move(sign)](std::span<const double>,
                                              std::span<const double> g,
                                              std::span<num::Tensor> in) {
                       auto dp = in[0].grad_buffer();
                       for (std::size_t i = 0; i < sign.size(); ++i) dp[i] += g[0] * sign[i];
                     });
}

MetricAccumulator::MetricAccumulator(std::size_t horizon, double mape_floor)
    : horizon_(horizon), floor_(mape_floor), sums_(horizon) {}

void MetricAccumulator::add(std::size_t h, double pred, double target) {
  Sums& s = sums_.at(h);
  const double e = pred - target;
  s.abs += std::abs(e);
  s.sq += e * e;
  ++s.n;
  if (std::abs(target) >= floor_) {
    s.pct += std::abs(e) / std::abs(target);
    ++s.n_pct;
  }
}

void MetricAccumulator::add_rows(std::span<const double> pred, std::span<const double> target,
                                 std::span<const double> mask) {
  if (pred.size() != target.size() || (!mask.empty() && mask.size() != pred.size()) ||
      pred.size() % horizon_ != 0)
    throw DimensionError("metric rows do not match the horizon");
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (mask.empty() || mask[i] != 0.0) add(i % horizon_, pred[i], target[i]);
}

void MetricAccumulator::merge(const MetricAccumulator& other) {
  if (other.horizon_ != horizon_) throw DimensionError("merging metrics of different horizons");
  for (std::size_t h = 0; h < horizon_; ++h) {
    sums_[h].abs += other.sums_[h].abs;
    sums_[h].sq += other.sums_[h].sq;
    sums_[h].pct += other.sums_[h].pct;
    sums_[h].n += other.sums_[h].n;
    sums_[h].n_pct += other.sums_[h].n_pct;
  }
}

MetricReport MetricAccumulator::report() const {
  auto finish = [](const Sums& s) {
    HorizonMetrics m;
    m.count = s.n;
    m.mape_count = s.n_pct;
    if (s.n) {
      m.mae = s.abs / static_cast<double>(s.n);
      m.rmse = std::sqrt(s.sq / static_cast<double>(s.n));
    }
    if (s.n_pct) m.mape = 100.0 * s.pct / static_cast<double>(s.n_pct);
    return m;
  };
  MetricReport r;
  Sums all;
  for (const auto& s : sums_) {
    r.horizons.push_back(finish(s));
    all.abs += s.abs;
    all.sq += s.sq;
    all.pct += s.pct;
    all.n += s.n;
    all.n_pct += s.n_pct;
  }
  r.overall = finish(all);
  return r;
}

MetricReport evaluate(std::span<const double> pred, std::span<const double> target,
                      std::span<const double> mask, std::size_t horizon, double mape_floor) {
  MetricAccumulator acc(horizon, mape_floor);
  acc.add_rows(pred, target, mask);
  return acc.report();
}

// ---- training ------------------------------------------------------------------

void check_alignment(const data::WindowedDataset& ds, const graph::SensorGraph& g) {
  if (ds.sensors() != g.size())
    throw DataError("dataset has " + std::to_string(ds.sensors()) + " sensors, graph has " +
                    std::to_string(g.size()));
  for (std::size_t i = 0; i < g.size(); ++i)
    if (ds.sensor_ids[i] != g.nodes[i].id)
      throw DataError("node " + std::to_string(i) + " is " + g.nodes[i].id +
                      " in the graph but " + ds.sensor_ids[i] + " in the dataset");
}

std::vector<std::size_t> strided(const std::vector<std::size_t>& windows, std::size_t max) {
  if (max == 0 || windows.size() <= max) return windows;
  std::vector<std::size_t> out;
  out.reserve(max);
  for (std::size_t i = 0; i < max; ++i) out.push_back(windows[i * windows.size() / max]);
  return out;
}

namespace {

class TableCache {
 public:
  explicit TableCache(const graph::SensorGraph& g, bool self_loop)
      : base_(attn::neighbor_table(g, self_loop)) {}
  const attn::NeighborTable& get(std::size_t copies) {
    auto it = tables_.find(copies);
    if (it == tables_.end()) it = tables_.emplace(copies, attn::replicate(base_, copies)).first;
    return it->second;
  }

 private:
  attn::NeighborTable base_;
  std::map<std::size_t, attn::NeighborTable> tables_;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<double> denormalized(const num::Tensor& y, const data::Normalizer& s) {
  std::vector<double> out(y.data().begin(), y.data().end());
  for (double& v : out) v = s.denormalize(0, v);
  return out;
}

}  // namespace

Trainer::Trainer(model::ModelParams params, TrainConfig cfg)
    : params_(std::move(params)), cfg_(std::move(cfg)), rng_(cfg_.seed ^ 0x9e3779b97f4a7c15ULL) {
  if (cfg_.batch_size == 0) throw ConfigError("batch size must be positive");
  if (!(cfg_.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (cfg_.replay_fraction < 0.0 || cfg_.replay_fraction > 1.0)
    throw ConfigError("replay fraction must lie in [0, 1]");
  tensors_ = params_.tensors();
  for (const auto& t : tensors_) {
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

double Trainer::step(const data::Batch& b, const attn::NeighborTable& table) {
  for (auto& t : tensors_) t.zero_grad();
  const num::Tensor pred = model::forward(b.x, table, params_);
  const num::Tensor loss = mae_loss(pred, b.y, b.mask);
  const double value = loss.item();
  if (!std::isfinite(value))
    throw DivergenceError("training loss became " + text::format_double(value) +
                          " at update " + std::to_string(t_ + 1));
  num::backward(loss);

  double norm2 = 0.0;
  for (const auto& t : tensors_)
    if (t.has_grad())
      for (double g : t.grad()) norm2 += g * g;
  const double norm = std::sqrt(norm2);
  if (!std::isfinite(norm))
    throw DivergenceError("gradient norm became " + text::format_double(norm) +
                          " at update " + std::to_string(t_ + 1));
  const double clip = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;

  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < tensors_.size(); ++k) {
    if (!tensors_[k].has_grad()) continue;
    const auto g = tensors_[k].grad();
    auto w = tensors_[k].mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] * clip;
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
      w[i] -= cfg_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.adam_eps);
    }
  }
  ++params_.version;
  return value;
}

TrainResult Trainer::fit(const data::WindowedDataset& ds, const graph::SensorGraph& g,
                         std::size_t epochs, std::optional<Source> replay) {
  check_alignment(ds, g);
  if (replay) check_alignment(*replay->data, *replay->graph);
  if (ds.features != params_.config.features)
    throw DimensionError("dataset has " + std::to_string(ds.features) +
                         " features, model expects " + std::to_string(params_.config.features));
  if (ds.horizon > params_.config.output_horizon())
    throw DimensionError("dataset horizon exceeds the model's output width");
  if (ds.train.empty() && epochs > 0) throw DataError("no training windows");

  TableCache tables(g, params_.config.attention.self_loop);
  std::optional<TableCache> replay_tables;
  if (replay) replay_tables.emplace(*replay->graph, params_.config.attention.self_loop);
  const auto val_windows = strided(ds.val, cfg_.eval_windows);
  const auto train_probe = strided(ds.train, std::max<std::size_t>(cfg_.eval_windows, 1));

  auto validate = [&]() {
    if (!val_windows.empty()) {
      MetricAccumulator acc(ds.horizon, cfg_.mape_floor);
      const auto pred = predict(params_, ds, g, val_windows, cfg_.batch_size);
      const auto b = data::make_batch(ds, val_windows);
      acc.add_rows(pred, b.y_raw, b.mask.data());
      return acc.report().overall.mae;
    }
    // No validation windows: fall back to the training loss in AQI units.
    return mean_loss(params_, ds, g, train_probe) * ds.stats.stddev[0];
  };

  TrainResult r;
  const auto t0 = std::chrono::steady_clock::now();
  EpochRecord e0;
  e0.train_loss = ds.train.empty() ? 0.0 : mean_loss(params_, ds, g, train_probe);
  e0.val_mae = validate();
  e0.seconds = seconds_since(t0);
  r.curve.push_back(e0);
  r.best_val_mae = e0.val_mae;
  r.best_epoch = 0;
  model::ModelParams best = params_.clone();
  std::size_t since_best = 0;

  std::vector<std::size_t> order;
  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    order = ds.train;
    rng_.shuffle(order);
    const std::size_t full = (order.size() + cfg_.batch_size - 1) / cfg_.batch_size;
    const std::size_t nb = cfg_.batches_per_epoch ? cfg_.batches_per_epoch : full;
    double loss_sum = 0.0;
    std::vector<std::size_t> starts;
    for (std::size_t bi = 0; bi < nb; ++bi) {
      const bool use_replay = replay && cfg_.replay_fraction > 0.0 &&
                              !replay->data->train.empty() &&
                              rng_.uniform() < cfg_.replay_fraction;
      const auto& pool = use_replay ? replay->data->train : order;
      starts.clear();
      for (std::size_t j = 0; j < cfg_.batch_size && j < pool.size(); ++j) {
        const std::size_t idx = use_replay ? rng_.below(pool.size())
                                           : ((bi % full) * cfg_.batch_size + j) % pool.size();
        starts.push_back(pool[idx]);
      }
      const auto b = data::make_batch(use_replay ? *replay->data : ds, starts);
      loss_sum += step(b, use_replay ? replay_tables->get(b.samples) : tables.get(b.samples));
      ++r.updates;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = nb ? loss_sum / static_cast<double>(nb) : 0.0;
    rec.val_mae = validate();
    rec.seconds = seconds_since(t0);
    r.curve.push_back(rec);
    log::debug("epoch " + std::to_string(epoch) + " loss " + text::format_double(rec.train_loss) +
               " val_mae " + text::format_double(rec.val_mae));
    if (rec.val_mae < r.best_val_mae) {
      r.best_val_mae = rec.val_mae;
      r.best_epoch = epoch;
      best = params_.clone();
      since_best = 0;
    } else if (++since_best >= cfg_.patience && cfg_.patience > 0) {
      log::info("early stop after epoch " + std::to_string(epoch));
      break;
    }
  }
  if (cfg_.restore_best && r.best_epoch != r.curve.back().epoch) {
    const auto src = best.tensors();
    for (std::size_t k = 0; k < tensors_.size(); ++k) {
      auto dst = tensors_[k].mutable_data();
      std::copy(src[k].data().begin(), src[k].data().end(), dst.begin());
    }
    ++params_.version;
  }
  params_.graph_epoch = g.nodes.empty() ? 0 : g.nodes.back().install_epoch;
  params_.graph_nodes = g.size();
  r.params = params_.clone();
  return r;
}

TrainResult train(const model::ModelParams& init, const data::WindowedDataset& ds,
                  const graph::SensorGraph& g, const TrainConfig& cfg) {
  Trainer t(init.clone(), cfg);
  return t.fit(ds, g, cfg.max_epochs);
}

ContinualResult continual_train(const model::ModelParams& init,
                                const data::WindowedDataset& ds_old,
                                const graph::SensorGraph& g_old,
                                const data::WindowedDataset& ds_new,
                                const graph::SensorGraph& g_new, const TrainConfig& cfg,
                                std::size_t phase2_epochs) {
  if (g_new.size() < g_old.size()) throw DataError("the expanded graph lost nodes");
  for (std::size_t i = 0; i < g_old.size(); ++i)
    if (g_old.nodes[i].id != g_new.nodes[i].id)
      throw DataError("expanded graph node " + std::to_string(i) + " is " + g_new.nodes[i].id +
                      ", expected " + g_old.nodes[i].id);
  check_alignment(ds_old, g_old);
  check_alignment(ds_new, g_new);

  Trainer t(init.clone(), cfg);
  ContinualResult r;
  r.phase1 = t.fit(ds_old, g_old, cfg.max_epochs);
  const auto probe_old = strided(ds_old.train, std::max<std::size_t>(cfg.eval_windows, 1));
  const auto probe_new = strided(ds_new.train, std::max<std::size_t>(cfg.eval_windows, 1));
  r.phase1_end_loss = mean_loss(t.params(), ds_old, g_old, probe_old);
  r.phase2_start_loss =
      ds_new.train.empty() ? 0.0 : mean_loss(t.params(), ds_new, g_new, probe_new, g_old.size());
  std::optional<Trainer::Source> replay;
  if (cfg.replay_fraction > 0.0) replay = Trainer::Source{&ds_old, &g_old};
  r.phase2 = t.fit(ds_new, g_new, phase2_epochs, replay);
  return r;
}

// ---- prediction and evaluation -------------------------------------------------

std::vector<double> predict(const model::ModelParams& p, const data::WindowedDataset& ds,
                            const graph::SensorGraph& g, std::span<const std::size_t> starts,
                            std::size_t batch_size) {
  check_alignment(ds, g);
  num::NoGradGuard guard;
  TableCache tables(g, p.config.attention.self_loop);
  std::vector<double> out;
  out.reserve(starts.size() * ds.sensors() * ds.horizon);
  batch_size = std::max<std::size_t>(batch_size, 1);
  for (std::size_t i = 0; i < starts.size(); i += batch_size) {
    const auto chunk = starts.subspan(i, std::min(batch_size, starts.size() - i));
    const auto b = data::make_batch(ds, chunk);
    const auto y = model::forward(b.x, tables.get(b.samples), p, ds.horizon);
    const auto raw = denormalized(y, ds.stats);
    out.insert(out.end(), raw.begin(), raw.end());
  }
  return out;
}

double mean_loss(const model::ModelParams& p, const data::WindowedDataset& ds,
                 const graph::SensorGraph& g, std::span<const std::size_t> starts,
                 std::size_t nodes) {
  check_alignment(ds, g);
  num::NoGradGuard guard;
  TableCache tables(g, p.config.attention.self_loop);
  const std::size_t n = ds.sensors(), Tp = ds.horizon;
  if (nodes == 0 || nodes > n) nodes = n;
  double total = 0.0, count = 0.0;
  for (std::size_t i = 0; i < starts.size(); i += 16) {
    const auto chunk = starts.subspan(i, std::min<std::size_t>(16, starts.size() - i));
    const auto b = data::make_batch(ds, chunk);
    const auto y = model::forward(b.x, tables.get(b.samples), p, Tp);
    const auto pv = y.data(), tv = b.y.data(), mv = b.mask.data();
    for (std::size_t k = 0; k < b.samples; ++k)
      for (std::size_t s = 0; s < nodes; ++s)
        for (std::size_t h = 0; h < Tp; ++h) {
          const std::size_t idx = (k * n + s) * Tp + h;
          if (mv[idx] == 0.0) continue;
          total += std::abs(pv[idx] - tv[idx]);
          count += 1.0;
        }
  }
  return count > 0.0 ? total / count : 0.0;
}

// Evaluation windows for one split; an empty split is an error rather than a
// report full of zeros.
std::vector<std::size_t> eval_windows(const data::WindowedDataset& ds, data::Split split,
                                      std::size_t max) {
  const auto& w = ds.windows(split);
  if (w.empty()) {
    const char* name = split == data::Split::Train ? "training"
                       : split == data::Split::Val ? "validation"
                                                   : "test";
    throw DataError(std::string("the ") + name + " split has no complete window of " +
                    std::to_string(ds.input_length + ds.horizon) + " steps");
  }
  return strided(w, max);
}

MetricReport evaluate_model(const model::ModelParams& p, const data::WindowedDataset& ds,
                            const graph::SensorGraph& g, data::Split split, double mape_floor,
                            std::size_t max_windows) {
  const auto starts = eval_windows(ds, split, max_windows);
  MetricAccumulator acc(ds.horizon, mape_floor);
  for (std::size_t i = 0; i < starts.size(); i += 16) {
    const std::span<const std::size_t> chunk(starts.data() + i,
                                             std::min<std::size_t>(16, starts.size() - i));
    const auto pred = predict(p, ds, g, chunk);
    const auto b = data::make_batch(ds, chunk);
    acc.add_rows(pred, b.y_raw, b.mask.data());
  }
  auto r = acc.report();
  r.covered_nodes = r.requested_nodes = ds.sensors();
  return r;
}

MetricReport evaluate_persistence(const data::WindowedDataset& ds, data::Split split,
                                  double mape_floor, std::size_t max_windows) {
  const auto starts = eval_windows(ds, split, max_windows);
  MetricAccumulator acc(ds.horizon, mape_floor);
  const std::size_t n = ds.sensors(), Tp = ds.horizon;
  for (std::size_t t0 : starts) {
    const std::size_t one[] = {t0};
    const auto b = data::make_batch(ds, one);
    const auto mv = b.mask.data();
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t h = 0; h < Tp; ++h)
        if (mv[s * Tp + h] != 0.0) acc.add(h, b.last_raw[s], b.y_raw[s * Tp + h]);
  }
  auto r = acc.report();
  r.covered_nodes = r.requested_nodes = n;
  return r;
}

// ---- workflows -----------------------------------------------------------------

std::string workflow_name(Workflow w) {
  switch (w) {
    case Workflow::Continual: return "continual";
    case Workflow::RecentOnly: return "recent_only";
    case Workflow::FiSs: return "fi_ss";
    case Workflow::FiSrs: return "fi_srs";
  }
  return "?";
}

Workflow parse_workflow(const std::string& s) {
  if (s == "continual") return Workflow::Continual;
  if (s == "recent_only") return Workflow::RecentOnly;
  if (s == "fi_ss") return Workflow::FiSs;
  if (s == "fi_srs") return Workflow::FiSrs;
  throw ConfigError("unknown workflow '" + s + "' (continual, recent_only, fi_ss, fi_srs)");
}

const MetricReport* ExperimentResult::find(const std::string& name) const {
  for (const auto& [n, r] : reports)
    if (n == name) return &r;
  return nullptr;
}

namespace {

// Forecasts for the real rows of x_old (B samples over g) and for the
// virtual nodes, both in raw units, sample-major.
void forecast_with_virtuals(const model::ModelParams& p, const graph::SensorGraph& g,
                            const attn::NeighborTable& base, const num::Tensor& x_old,
                            std::size_t B, std::span<const smooth::VirtualNode> virtuals,
                            bool representation, const data::Normalizer& stats, std::size_t Tp,
                            std::vector<double>& old_pred, std::vector<double>& new_pred) {
  const std::size_t n_old = g.size(), nv = virtuals.size();
  old_pred.assign(B * n_old * Tp, 0.0);
  new_pred.assign(B * nv * Tp, 0.0);
  if (representation) {
    const auto aug =
        smooth::augment_with_virtual(x_old, B, g, virtuals, p.config.attention.self_loop);
    const auto y = denormalized(model::forward(aug.x, aug.table, p, Tp), stats);
    const std::size_t per_sample = n_old + nv;
    for (std::size_t k = 0; k < B; ++k) {
      std::copy_n(&y[k * per_sample * Tp], n_old * Tp, &old_pred[k * n_old * Tp]);
      std::copy_n(&y[(k * per_sample + n_old) * Tp], nv * Tp, &new_pred[k * nv * Tp]);
    }
    return;
  }
  const auto y = model::forward(x_old, attn::replicate(base, B), p, Tp);
  old_pred = denormalized(y, stats);
  for (std::size_t k = 0; k < B; ++k) {
    const auto sample = num::Tensor::from(
        {n_old, Tp},
        std::vector<double>(&old_pred[k * n_old * Tp], &old_pred[(k + 1) * n_old * Tp]));
    for (std::size_t v = 0; v < nv; ++v) {
      const auto yv = smooth::spatial_smoothing(virtuals[v], sample);
      std::copy(yv.data().begin(), yv.data().end(), &new_pred[(k * nv + v) * Tp]);
    }
  }
}

}  // namespace

std::vector<double> predict_virtual(const model::ModelParams& p, const graph::SensorGraph& g,
                                    const data::WindowedDataset& ds, std::size_t start,
                                    std::span<const smooth::VirtualNode> virtuals,
                                    bool representation) {
  check_alignment(ds, g);
  num::NoGradGuard guard;
  const std::size_t n = ds.sensors(), nf = ds.features, T = ds.input_length;
  if (start + T > ds.steps)
    throw DimensionError("input window starting at step " + std::to_string(start) +
                         " runs past the " + std::to_string(ds.steps) + "-step series");
  // Only the input window is needed, so the forecast may extend past the data.
  std::vector<double> x(n * nf * T);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t f = 0; f < nf; ++f)
      std::copy_n(&ds.series[(s * nf + f) * ds.steps + start], T, &x[(s * nf + f) * T]);
  std::vector<double> old_pred, new_pred;
  forecast_with_virtuals(p, g, attn::neighbor_table(g, p.config.attention.self_loop),
                         num::Tensor::from({n, nf, T}, std::move(x)), 1,
                         virtuals, representation, ds.stats, ds.horizon, old_pred, new_pred);
  return new_pred;
}

FlexibleInference flexible_inference(const model::ModelParams& p,
                                     const graph::SensorGraph& g_old,
                                     const data::WindowedDataset& ds_all,
                                     std::span<const graph::SensorNode> new_nodes,
                                     bool representation, const ExperimentConfig& cfg) {
  const std::size_t n_all = ds_all.sensors(), n_old = g_old.size(), Tp = ds_all.horizon;
  auto row_of = [&](const std::string& id) {
    const auto it = std::find(ds_all.sensor_ids.begin(), ds_all.sensor_ids.end(), id);
    if (it == ds_all.sensor_ids.end()) throw DataError("sensor " + id + " has no data");
    return static_cast<std::size_t>(it - ds_all.sensor_ids.begin());
  };
  std::vector<std::size_t> old_rows;
  for (const auto& n : g_old.nodes) old_rows.push_back(row_of(n.id));

  FlexibleInference fi;
  std::vector<smooth::VirtualNode> virtuals;
  std::vector<std::size_t> target_rows;
  for (const auto& n : new_nodes) {
    try {
      virtuals.push_back(smooth::make_virtual_node(n.id, n.lat, n.lon, g_old, cfg.smoothing));
      target_rows.push_back(row_of(n.id));
      fi.new_ids.push_back(n.id);
    } catch (const UncoveredLocationError& e) {
      log::warn(e.what());
      fi.uncovered.push_back(n.id);
    }
  }
  const std::size_t nv = virtuals.size();

  MetricAccumulator all(Tp, cfg.train.mape_floor);
  std::vector<MetricAccumulator> per(nv, MetricAccumulator(Tp, cfg.train.mape_floor));
  const auto starts = strided(ds_all.test, cfg.test_windows);
  const attn::NeighborTable base = attn::neighbor_table(g_old, p.config.attention.self_loop);
  num::NoGradGuard guard;
  constexpr std::size_t kChunk = 8;
  for (std::size_t i = 0; i < starts.size(); i += kChunk) {
    const std::span<const std::size_t> chunk(starts.data() + i,
                                             std::min(kChunk, starts.size() - i));
    const std::size_t B = chunk.size();
    const auto b = data::make_batch(ds_all, chunk);
    std::vector<std::size_t> rows;
    for (std::size_t k = 0; k < B; ++k)
      for (std::size_t r : old_rows) rows.push_back(k * n_all + r);
    const auto x_old = num::gather_rows(b.x, rows);

    std::vector<double> old_pred, new_pred;
    forecast_with_virtuals(p, g_old, base, x_old, B, virtuals, representation, ds_all.stats, Tp,
                           old_pred, new_pred);

    const auto mv = b.mask.data();
    for (std::size_t k = 0; k < B; ++k) {
      for (std::size_t o = 0; o < n_old; ++o)
        for (std::size_t h = 0; h < Tp; ++h) {
          const std::size_t idx = (k * n_all + old_rows[o]) * Tp + h;
          if (mv[idx] != 0.0) all.add(h, old_pred[(k * n_old + o) * Tp + h], b.y_raw[idx]);
        }
      for (std::size_t v = 0; v < nv; ++v)
        for (std::size_t h = 0; h < Tp; ++h) {
          const std::size_t idx = (k * n_all + target_rows[v]) * Tp + h;
          if (mv[idx] == 0.0) continue;
          const double pv = new_pred[(k * nv + v) * Tp + h];
          all.add(h, pv, b.y_raw[idx]);
          per[v].add(h, pv, b.y_raw[idx]);
        }
    }
  }
  fi.all = all.report();
  fi.all.covered_nodes = n_old + nv;
  fi.all.requested_nodes = n_old + new_nodes.size();
  for (auto& a : per) {
    fi.per_new.push_back(a.report());
    fi.per_new.back().covered_nodes = fi.per_new.back().requested_nodes = 1;
  }
  return fi;
}

ExperimentResult run_experiment(const data::Synthetic& syn, const ExperimentConfig& cfg,
                                std::span<const Workflow> workflows) {
  auto wants = [&](Workflow w) {
    return std::find(workflows.begin(), workflows.end(), w) != workflows.end();
  };
  const auto& mc = cfg.model;
  std::vector<graph::SensorNode> old_nodes, new_nodes;
  for (const auto& s : syn.sensors) {
    if (syn.readings.index_of(s.id) == syn.readings.sensors()) continue;  // dropped on ingest
    (s.install_epoch == 0 ? old_nodes : new_nodes).push_back(s);
  }
  std::vector<std::string> old_ids, all_ids;
  for (const auto& n : old_nodes) old_ids.push_back(n.id);
  all_ids = old_ids;
  for (const auto& n : new_nodes) all_ids.push_back(n.id);

  data::WindowConfig w1{mc.input_length, mc.horizon, cfg.ratios, 0, syn.cut_step};
  data::WindowConfig w2{mc.input_length, mc.horizon, cfg.ratios, syn.cut_step, 0};
  const auto r_old = data::subset(syn.readings, old_ids);
  const auto r_all = data::subset(syn.readings, all_ids);

  ExperimentResult out;
  const std::size_t epochs2 = cfg.phase2_epochs ? cfg.phase2_epochs : cfg.train.max_epochs;
  const auto init = model::init_params(mc, cfg.train.seed);

  const bool need_old = wants(Workflow::Continual) || wants(Workflow::FiSs) ||
                        wants(Workflow::FiSrs);
  std::optional<data::WindowedDataset> ds1, ds2;
  std::optional<graph::SensorGraph> g_old, g_new;
  if (need_old) {
    ds1 = data::window(r_old, w1);
    ds2 = data::window(r_all, w2, &ds1->stats);
    g_old = graph::build_graph(old_nodes, cfg.k);
    g_new = *g_old;
    graph::expand_graph(*g_new, new_nodes);
  }

  if (wants(Workflow::Continual)) {
    out.continual = continual_train(init, *ds1, *g_old, *ds2, *g_new, cfg.train, epochs2);
    out.reports.emplace_back("EGAT", evaluate_model(out.continual->phase2.params, *ds2, *g_new,
                                                    data::Split::Test, cfg.train.mape_floor,
                                                    cfg.test_windows));
  }
  if (wants(Workflow::RecentOnly)) {
    const auto ds_rec = data::window(r_all, w2);
    std::vector<graph::SensorNode> nodes = old_nodes;
    nodes.insert(nodes.end(), new_nodes.begin(), new_nodes.end());
    const auto g_rec = graph::build_graph(nodes, cfg.k);
    out.recent_only = train(init, ds_rec, g_rec, cfg.train);
    out.reports.emplace_back("EGAT-Rec",
                             evaluate_model(out.recent_only->params, ds_rec, g_rec,
                                            data::Split::Test, cfg.train.mape_floor,
                                            cfg.test_windows));
  }
  if (wants(Workflow::FiSs) || wants(Workflow::FiSrs)) {
    const model::ModelParams phase1 = out.continual
                                          ? out.continual->phase1.params
                                          : train(init, *ds1, *g_old, cfg.train).params;
    if (wants(Workflow::FiSs)) {
      out.fi_ss = flexible_inference(phase1, *g_old, *ds2, new_nodes, false, cfg);
      out.reports.emplace_back("EGAT-FI-SS", out.fi_ss->all);
    }
    if (wants(Workflow::FiSrs)) {
      out.fi_srs = flexible_inference(phase1, *g_old, *ds2, new_nodes, true, cfg);
      out.reports.emplace_back("EGAT-FI-SRS", out.fi_srs->all);
    }
  }
  const auto ds_p = ds2 ? *ds2 : data::window(r_all, w2);
  out.reports.emplace_back("persistence", evaluate_persistence(ds_p, data::Split::Test,
                                                               cfg.train.mape_floor,
                                                               cfg.test_windows));
  return out;
}

void write_curve(std::ostream& out, std::span<const EpochRecord> curve) {
  out << "epoch,train_loss,val_mae,seconds\n";
  for (const auto& e : curve)
    out << e.epoch << ',' << text::format_double(e.train_loss) << ','
        << text::format_double(e.val_mae) << ',' << text::format_double(e.seconds) << '\n';
}

void write_metrics_header(std::ostream& out) { out << "model,horizon,MAE,RMSE,MAPE\n"; }

void write_metrics(std::ostream& out, const std::string& model, const MetricReport& r) {
  for (std::size_t h = 0; h < r.horizons.size(); ++h) {
    const auto& m = r.horizons[h];
    out << model << ',' << h + 1 << ',' << text::format_double(m.mae) << ','
        << text::format_double(m.rmse) << ',' << text::format_double(m.mape) << '\n';
  }
  out << model << ",all," << text::format_double(r.overall.mae) << ','
      << text::format_double(r.overall.rmse) << ',' << text::format_double(r.overall.mape)
      << '\n';
}

}  // namespace egat::train
