#pragma once

// Sensor network with k-nearest-neighbour adjacency and incremental
// expansion. Node indices are stable: expansion appends, never reorders.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace egat::graph {

struct SensorNode {
  std::string id;
  double lat = 0.0;
  double lon = 0.0;
  int install_epoch = 0;
};

struct Edge {
  std::size_t target = 0;
  double distance_m = 0.0;
};

// N_i split into neighbours known before the latest expansion and those the
// latest expansion introduced.
struct Neighborhood {
  std::vector<Edge> existing;
  std::vector<Edge> added;

  std::size_t size() const { return existing.size() + added.size(); }
};

struct SensorGraph {
  std::vector<SensorNode> nodes;
  std::vector<Neighborhood> neighbors;
  std::size_t k = 0;
  // Pairwise distance evaluations spent by the operation that produced this
  // graph (build) or by all expansions since (accumulated).
  std::uint64_t distance_evaluations = 0;
  std::size_t zero_distance_edges = 0;

  std::size_t size() const { return nodes.size(); }
  std::size_t edge_count() const;
  // Index of a node id, or size() when absent.
  std::size_t index_of(const std::string& id) const;

  std::unordered_map<std::string, std::size_t> id_index;
};

struct DirectedEdge {
  std::size_t source = 0;  // the node whose neighbourhood gained the edge
  std::size_t target = 0;
  double distance_m = 0.0;
};

struct ExpansionDelta {
  std::vector<SensorNode> new_nodes;
  // Forward edges (new node -> its k nearest) followed by reverse edges
  // (old neighbour -> new node).
  std::vector<DirectedEdge> new_edges;
  std::size_t forward_edge_count = 0;
  std::size_t reverse_edge_count = 0;
  std::vector<std::string> touched_old_nodes;
  std::uint64_t distance_evaluations = 0;
  std::size_t old_node_count = 0;

  bool empty() const { return new_nodes.empty(); }
};

// Great-circle distance in metres (haversine, mean Earth radius).
double haversine_m(double lat1, double lon1, double lat2, double lon2);
double distance_m(const SensorNode& a, const SensorNode& b);

// Every node gets its k nearest others; ties go to the lexicographically
// lower id. k >= N is clamped to N - 1 with a warning.
SensorGraph build_graph(std::vector<SensorNode> nodes, std::size_t k);

// Appends new_nodes, giving each its k nearest among all nodes, and inserts
// reverse edges into the selected old neighbours. Old neighbourhoods are
// otherwise left untouched; old-old distances are never evaluated.
ExpansionDelta expand_graph(SensorGraph& g, std::span<const SensorNode> new_nodes);

// Reclassifies every neighbour as pre-existing.
void epoch_rollover(SensorGraph& g);

// Median length of all edges (0 for an edgeless graph).
double median_edge_length_m(const SensorGraph& g);

// Sensor metadata: header `sensor_id,lat,lon,install_epoch`.
std::vector<SensorNode> read_sensor_metadata(const std::string& path);
std::vector<SensorNode> parse_sensor_metadata(std::istream& in);
void write_sensor_metadata(const std::string& path,
                           std::span<const SensorNode> nodes);

// Line-oriented text export of nodes, edges, distances and epoch partition.
void export_graph(std::ostream& out, const SensorGraph& g);
std::string export_graph(const SensorGraph& g);

}  // namespace egat::graph
