#include "egat/smoothing.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "egat/errors.hpp"
#include "egat/text_table.hpp"

namespace egat::smooth {

double default_epsilon_m(const graph::SensorGraph& g) {
  const double med = graph::median_edge_length_m(g);
  if (!(med > 0.0))
    throw ConfigError("cannot derive a smoothing radius from a graph without "
                      "positive-length edges; set epsilon_m explicitly");
  return 2.0 * med;
}

std::vector<double> smoothing_weights(std::span<const double> distances_m, bool raw) {
  const std::size_t n = distances_m.size();
  if (n == 0) throw ContractError("smoothing weights need at least one neighbour");
  const double total = std::accumulate(distances_m.begin(), distances_m.end(), 0.0);
  std::vector<double> w(n);
  if (total <= 0.0) {
    std::fill(w.begin(), w.end(), raw ? 1.0 : 1.0 / static_cast<double>(n));
    return w;
  }
  for (std::size_t j = 0; j < n; ++j) w[j] = 1.0 - distances_m[j] / total;
  if (raw) return w;
  if (n == 1) return {1.0};
  // The complements sum to n - 1.
  const double z = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& x : w) x /= z;
  return w;
}

VirtualNode make_virtual_node(std::string id, double lat, double lon,
                              const graph::SensorGraph& g, const SmoothingConfig& cfg) {
  if (g.size() == 0) throw UncoveredLocationError("no sensors in graph",
                                                  std::numeric_limits<double>::infinity());
  const double eps = cfg.epsilon_m > 0.0 ? cfg.epsilon_m : default_epsilon_m(g);
  std::vector<std::pair<double, std::size_t>> within;
  double nearest = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < g.size(); ++j) {
    const double d = graph::haversine_m(lat, lon, g.nodes[j].lat, g.nodes[j].lon);
    nearest = std::min(nearest, d);
    if (d < eps) within.emplace_back(d, j);
  }
  if (within.empty())
    throw UncoveredLocationError("location " + id + " has no sensor within " +
                                     text::format_double(eps) + " m (nearest is " +
                                     text::format_double(nearest) + " m)",
                                 nearest);
  std::sort(within.begin(), within.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return g.nodes[a.second].id < g.nodes[b.second].id;
  });
  VirtualNode v;
  v.id = std::move(id);
  v.lat = lat;
  v.lon = lon;
  for (const auto& [d, j] : within) {
    v.neighbors.push_back(j);
    v.distances_m.push_back(d);
  }
  v.weights = smoothing_weights(v.distances_m, cfg.raw_weights);
  return v;
}

namespace {

num::Tensor weight_row(const VirtualNode& v) {
  return num::Tensor::from({1, v.weights.size()}, v.weights);
}

}  // namespace

num::Tensor spatial_smoothing(const VirtualNode& v, const num::Tensor& predictions) {
  if (predictions.rank() != 2)
    throw DimensionError("spatial_smoothing expects N x T_p predictions, got " +
                         num::shape_str(predictions.shape()));
  for (std::size_t j : v.neighbors)
    if (j >= predictions.dim(0))
      throw DimensionError("virtual node neighbour " + std::to_string(j) +
                           " is outside the prediction rows");
  const auto rows = num::gather_rows(predictions, v.neighbors);
  return num::reshape(num::matmul(weight_row(v), rows), {predictions.dim(1)});
}

num::Tensor representation_smoothing(const VirtualNode& v, const num::Tensor& h_neighbors,
                                     std::span<const attn::AttentionHeadParams> heads,
                                     attn::Activation activation) {
  if (h_neighbors.rank() != 2 || h_neighbors.dim(0) != v.neighbors.size())
    throw DimensionError("representation_smoothing expects one embedding row per "
                         "neighbour, got " + num::shape_str(h_neighbors.shape()));
  if (heads.empty()) throw ConfigError("attention needs at least one head");
  const auto blended = num::matmul(weight_row(v), h_neighbors);
  num::Tensor acc;
  for (const auto& head : heads) {
    const auto z = num::matmul(blended, head.weight);
    acc = acc.defined() ? num::add(acc, z) : z;
  }
  acc = num::scale(acc, 1.0 / static_cast<double>(heads.size()));
  acc = activation == attn::Activation::Elu ? num::elu(acc) : num::sigmoid(acc);
  return num::reshape(acc, {acc.numel()});
}

std::vector<std::size_t> AugmentedBatch::virtual_rows() const {
  std::vector<std::size_t> out;
  const std::size_t per = real_nodes + virtual_nodes;
  for (std::size_t s = 0; s < samples; ++s)
    for (std::size_t v = 0; v < virtual_nodes; ++v) out.push_back(s * per + real_nodes + v);
  return out;
}

std::vector<std::size_t> AugmentedBatch::real_rows() const {
  std::vector<std::size_t> out;
  const std::size_t per = real_nodes + virtual_nodes;
  for (std::size_t s = 0; s < samples; ++s)
    for (std::size_t r = 0; r < real_nodes; ++r) out.push_back(s * per + r);
  return out;
}

AugmentedBatch augment_with_virtual(const num::Tensor& x, std::size_t samples,
                                    const graph::SensorGraph& g,
                                    std::span<const VirtualNode> virtuals,
                                    bool self_loop) {
  const std::size_t n = g.size(), nv = virtuals.size();
  if (samples == 0 || x.rank() != 3 || x.dim(0) != samples * n)
    throw DimensionError("augment_with_virtual: input " + num::shape_str(x.shape()) +
                         " for " + std::to_string(samples) + " samples of " +
                         std::to_string(n) + " nodes");
  for (const auto& v : virtuals)
    for (std::size_t j : v.neighbors)
      if (j >= n) throw DimensionError("virtual node " + v.id + " references node " +
                                       std::to_string(j) + " outside the graph");

  const std::size_t row = x.dim(1) * x.dim(2), per = n + nv;
  const auto src = x.data();
  std::vector<double> out(samples * per * row, 0.0);
  for (std::size_t s = 0; s < samples; ++s) {
    std::copy_n(src.begin() + s * n * row, n * row, out.begin() + s * per * row);
    for (std::size_t v = 0; v < nv; ++v) {
      double* dst = out.data() + (s * per + n + v) * row;
      const auto& vn = virtuals[v];
      for (std::size_t e = 0; e < vn.neighbors.size(); ++e) {
        const double* in = src.data() + (s * n + vn.neighbors[e]) * row;
        for (std::size_t q = 0; q < row; ++q) dst[q] += vn.weights[e] * in[q];
      }
    }
  }

  const attn::NeighborTable base = attn::neighbor_table(g, self_loop);
  AugmentedBatch b;
  b.samples = samples;
  b.real_nodes = n;
  b.virtual_nodes = nv;
  b.x = num::Tensor::from({samples * per, x.dim(1), x.dim(2)}, std::move(out));
  std::vector<std::size_t> cols;
  for (std::size_t s = 0; s < samples; ++s) {
    const std::size_t shift = s * per;
    for (std::size_t r = 0; r < n; ++r) {
      cols.clear();
      for (std::size_t e = base.offsets[r]; e < base.offsets[r + 1]; ++e)
        cols.push_back(base.cols[e] + shift);
      b.table.add_row(cols);
    }
    for (const auto& vn : virtuals) {
      cols.clear();
      for (std::size_t j : vn.neighbors) cols.push_back(j + shift);
      b.table.add_fixed_row(cols, vn.weights);
    }
  }
  return b;
}

std::vector<Query> read_queries(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open query file " + path);
  const auto t = text::read_table(in, path);
  const std::size_t ci = t.column("query_id"), cla = t.column("lat"), clo = t.column("lon");
  std::vector<Query> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    if (row.size() != t.header.size())
      throw DataError(t.where(r) + ": expected " + std::to_string(t.header.size()) +
                      " fields");
    Query q;
    q.id = row[ci];
    q.lat = text::to_double(row[cla], t.where(r));
    q.lon = text::to_double(row[clo], t.where(r));
    if (!std::isfinite(q.lat) || !std::isfinite(q.lon))
      throw DataError(t.where(r) + ": non-finite coordinates");
    out.push_back(std::move(q));
  }
  return out;
}

}  // namespace egat::smooth
