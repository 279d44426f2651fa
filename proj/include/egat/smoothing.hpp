#pragma once

// Forecasts at sensorless locations. Spatial smoothing blends neighbour
// predictions; representation smoothing blends neighbour embeddings inside
// each attention layer with the same inverse-distance weights.

#include <span>
#include <string>
#include <vector>

#include "egat/attention.hpp"
#include "egat/graph_store.hpp"
#include "egat/numerics.hpp"

namespace egat::smooth {

struct SmoothingConfig {
  // Neighbour radius in metres; 0 selects 2x the median k-NN edge length.
  double epsilon_m = 0.0;
  // Use 1 - d/sum(d) as is, without renormalising to a convex combination.
  bool raw_weights = false;
};

struct VirtualNode {
  std::string id;
  double lat = 0.0;
  double lon = 0.0;
  std::vector<std::size_t> neighbors;  // graph node indices, nearest first
  std::vector<double> distances_m;
  std::vector<double> weights;
};

double default_epsilon_m(const graph::SensorGraph& g);

// a_j = 1 - d_j / sum(d), renormalised to sum to 1 unless `raw`. A single
// neighbour gets weight 1; all-zero distances give uniform weights.
std::vector<double> smoothing_weights(std::span<const double> distances_m,
                                      bool raw = false);

// Neighbours are the graph sensors strictly closer than epsilon. Throws
// UncoveredLocationError (carrying the nearest distance) when none are.
VirtualNode make_virtual_node(std::string id, double lat, double lon,
                              const graph::SensorGraph& g,
                              const SmoothingConfig& cfg = {});

// Y_v = sum_j a_vj Y_j over rows of predictions (N x T_p) -> T_p.
num::Tensor spatial_smoothing(const VirtualNode& v, const num::Tensor& predictions);

// act((1/K) sum_k sum_j a_vj W^k h_j); h_neighbors rows follow v.neighbors.
num::Tensor representation_smoothing(const VirtualNode& v,
                                     const num::Tensor& h_neighbors,
                                     std::span<const attn::AttentionHeadParams> heads,
                                     attn::Activation activation = attn::Activation::Sigmoid);

// Inputs and adjacency for running the model with virtual nodes attached.
// `x` stacks `samples` windows of the N real sensors (sample-major). Each
// sample becomes N real rows followed by one row per virtual node. A virtual
// row's input is the weighted blend of its neighbours' inputs, and at every
// attention layer it aggregates its real neighbours with the fixed smoothing
// weights. Real rows never read virtual rows.
struct AugmentedBatch {
  num::Tensor x;
  attn::NeighborTable table;
  std::size_t samples = 0;
  std::size_t real_nodes = 0;
  std::size_t virtual_nodes = 0;
  // Row indices of the virtual nodes, sample-major.
  std::vector<std::size_t> virtual_rows() const;
  std::vector<std::size_t> real_rows() const;
};
AugmentedBatch augment_with_virtual(const num::Tensor& x, std::size_t samples,
                                    const graph::SensorGraph& g,
                                    std::span<const VirtualNode> virtuals,
                                    bool self_loop);

// Query file `query_id,lat,lon`.
struct Query {
  std::string id;
  double lat = 0.0;
  double lon = 0.0;
};
std::vector<Query> read_queries(const std::string& path);

}  // namespace egat::smooth
