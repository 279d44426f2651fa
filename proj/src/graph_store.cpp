#include "egat/graph_store.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "egat/errors.hpp"
#include "egat/log.hpp"
#include "egat/text_table.hpp"

namespace egat::graph {
namespace {

constexpr double kEarthRadiusM = 6371008.8;
constexpr double kDegToRad = 3.14159265358979323846 / 180.0;

struct Candidate {
  double distance;
  std::size_t index;
};

// Sorts candidates by (distance, id) and keeps the first k.
void select_nearest(std::vector<Candidate>& c, std::size_t k,
                    const std::vector<SensorNode>& nodes) {
  const auto less = [&nodes](const Candidate& a, const Candidate& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return nodes[a.index].id < nodes[b.index].id;
  };
  k = std::min(k, c.size());
  if (k < c.size()) {
    std::nth_element(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(k),
                     c.end(), less);
    c.resize(k);
  }
  std::sort(c.begin(), c.end(), less);
}

void check_coordinates(const SensorNode& n) {
  if (!std::isfinite(n.lat) || !std::isfinite(n.lon))
    throw DataError("sensor " + n.id + " has non-finite coordinates");
}

void register_node(SensorGraph& g, const SensorNode& n) {
  if (!g.id_index.emplace(n.id, g.nodes.size()).second)
    throw DuplicateIdError(n.id);
  if (!g.nodes.empty() && n.install_epoch < g.nodes.back().install_epoch)
    throw DataError("install_epoch decreases at sensor " + n.id);
  check_coordinates(n);
  g.nodes.push_back(n);
}

}  // namespace

double haversine_m(double lat1, double lon1, double lat2, double lon2) {
  const double p1 = lat1 * kDegToRad;
  const double p2 = lat2 * kDegToRad;
  const double dp = (lat2 - lat1) * kDegToRad;
  const double dl = (lon2 - lon1) * kDegToRad;
  const double s1 = std::sin(dp / 2.0);
  const double s2 = std::sin(dl / 2.0);
  const double h = s1 * s1 + std::cos(p1) * std::cos(p2) * s2 * s2;
  return 2.0 * kEarthRadiusM * std::asin(std::min(1.0, std::sqrt(h)));
}

double distance_m(const SensorNode& a, const SensorNode& b) {
  return haversine_m(a.lat, a.lon, b.lat, b.lon);
}

std::size_t SensorGraph::edge_count() const {
  std::size_t n = 0;
  for (const auto& nb : neighbors) n += nb.size();
  return n;
}

std::size_t SensorGraph::index_of(const std::string& id) const {
  const auto it = id_index.find(id);
  return it == id_index.end() ? nodes.size() : it->second;
}

SensorGraph build_graph(std::vector<SensorNode> nodes, std::size_t k) {
  if (nodes.size() < 2)
    throw DataError("build_graph needs at least 2 sensors, got " +
                    std::to_string(nodes.size()));
  SensorGraph g;
  g.nodes.reserve(nodes.size());
  for (const auto& n : nodes) register_node(g, n);
  const std::size_t n = g.size();
  if (k >= n) {
    log::warn("k=" + std::to_string(k) + " >= node count " + std::to_string(n) +
              "; clamping to " + std::to_string(n - 1));
    k = n - 1;
  }
  g.k = k;
  g.neighbors.assign(n, {});

  // Upper triangle only: N(N-1)/2 evaluations.
  std::vector<double> dist(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = distance_m(g.nodes[i], g.nodes[j]);
      dist[i * n + j] = d;
      dist[j * n + i] = d;
      ++g.distance_evaluations;
    }
  if (k == 0) return g;

  std::vector<Candidate> cand;
  for (std::size_t i = 0; i < n; ++i) {
    cand.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) cand.push_back({dist[i * n + j], j});
    select_nearest(cand, k, g.nodes);
    for (const auto& c : cand) {
      if (c.distance == 0.0) ++g.zero_distance_edges;
      g.neighbors[i].existing.push_back({c.index, c.distance});
    }
  }
  if (g.zero_distance_edges > 0)
    log::warn(std::to_string(g.zero_distance_edges) +
              " zero-length edges from co-located sensors");
  return g;
}

ExpansionDelta expand_graph(SensorGraph& g, std::span<const SensorNode> new_nodes) {
  ExpansionDelta delta;
  delta.old_node_count = g.size();
  if (new_nodes.empty()) return delta;

  // Validate everything before mutating.
  {
    std::unordered_map<std::string, int> seen;
    int last_epoch = g.nodes.empty() ? 0 : g.nodes.back().install_epoch;
    for (const auto& n : new_nodes) {
      if (g.id_index.count(n.id) || !seen.emplace(n.id, 0).second)
        throw DuplicateIdError(n.id);
      if (n.install_epoch < last_epoch)
        throw DataError("install_epoch decreases at sensor " + n.id);
      last_epoch = n.install_epoch;
      check_coordinates(n);
    }
  }

  const std::size_t old_n = g.size();
  const std::size_t dn = new_nodes.size();
  for (const auto& n : new_nodes) register_node(g, n);
  const std::size_t total = g.size();
  g.neighbors.resize(total);
  delta.new_nodes.assign(new_nodes.begin(), new_nodes.end());

  // Row a holds distances from new node old_n+a to every node.
  std::vector<double> dist(dn * total, 0.0);
  for (std::size_t a = 0; a < dn; ++a) {
    const auto& src = g.nodes[old_n + a];
    for (std::size_t j = 0; j < old_n; ++j) {
      dist[a * total + j] = distance_m(src, g.nodes[j]);
      ++delta.distance_evaluations;
    }
    for (std::size_t b = a + 1; b < dn; ++b) {
      const double d = distance_m(src, g.nodes[old_n + b]);
      dist[a * total + old_n + b] = d;
      dist[b * total + old_n + a] = d;
      ++delta.distance_evaluations;
    }
  }
  g.distance_evaluations += delta.distance_evaluations;

  std::vector<DirectedEdge> reverse;
  std::vector<char> touched(old_n, 0);
  std::vector<Candidate> cand;
  for (std::size_t a = 0; a < dn; ++a) {
    const std::size_t i = old_n + a;
    cand.clear();
    for (std::size_t j = 0; j < total; ++j)
      if (j != i) cand.push_back({dist[a * total + j], j});
    select_nearest(cand, g.k, g.nodes);
    for (const auto& c : cand) {
      if (c.distance == 0.0) ++g.zero_distance_edges;
      auto& nb = g.neighbors[i];
      (c.index < old_n ? nb.existing : nb.added).push_back({c.index, c.distance});
      delta.new_edges.push_back({i, c.index, c.distance});
      if (c.index < old_n) {
        g.neighbors[c.index].added.push_back({i, c.distance});
        reverse.push_back({c.index, i, c.distance});
        touched[c.index] = 1;
      }
    }
  }
  delta.forward_edge_count = delta.new_edges.size();
  delta.reverse_edge_count = reverse.size();
  delta.new_edges.insert(delta.new_edges.end(), reverse.begin(), reverse.end());
  for (std::size_t j = 0; j < old_n; ++j)
    if (touched[j]) delta.touched_old_nodes.push_back(g.nodes[j].id);
  return delta;
}

void epoch_rollover(SensorGraph& g) {
  for (auto& nb : g.neighbors) {
    nb.existing.insert(nb.existing.end(), nb.added.begin(), nb.added.end());
    nb.added.clear();
  }
}

double median_edge_length_m(const SensorGraph& g) {
  std::vector<double> lengths;
  for (const auto& nb : g.neighbors) {
    for (const auto& e : nb.existing) lengths.push_back(e.distance_m);
    for (const auto& e : nb.added) lengths.push_back(e.distance_m);
  }
  if (lengths.empty()) return 0.0;
  const std::size_t mid = lengths.size() / 2;
  std::nth_element(lengths.begin(), lengths.begin() + static_cast<std::ptrdiff_t>(mid),
                   lengths.end());
  double m = lengths[mid];
  if (lengths.size() % 2 == 0) {
    const double lower =
        *std::max_element(lengths.begin(), lengths.begin() + static_cast<std::ptrdiff_t>(mid));
    m = 0.5 * (m + lower);
  }
  return m;
}

std::vector<SensorNode> parse_sensor_metadata(std::istream& in) {
  const auto table = text::read_table(in, "sensor metadata");
  const std::size_t c_id = table.column("sensor_id");
  const std::size_t c_lat = table.column("lat");
  const std::size_t c_lon = table.column("lon");
  const std::size_t c_epoch = table.column("install_epoch");
  std::vector<SensorNode> nodes;
  nodes.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    SensorNode n;
    n.id = row[c_id];
    n.lat = text::to_double(row[c_lat], table.where(r));
    n.lon = text::to_double(row[c_lon], table.where(r));
    n.install_epoch = static_cast<int>(text::to_int(row[c_epoch], table.where(r)));
    nodes.push_back(std::move(n));
  }
  return nodes;
}

std::vector<SensorNode> read_sensor_metadata(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open sensor metadata " + path);
  return parse_sensor_metadata(in);
}

void write_sensor_metadata(const std::string& path,
                           std::span<const SensorNode> nodes) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "sensor_id,lat,lon,install_epoch\n" << std::setprecision(17);
  for (const auto& n : nodes)
    out << n.id << ',' << n.lat << ',' << n.lon << ',' << n.install_epoch << '\n';
}

void export_graph(std::ostream& out, const SensorGraph& g) {
  out << "egat-graph 1\n";
  out << "k " << g.k << '\n';
  out << "nodes " << g.size() << '\n';
  out << std::setprecision(17);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& n = g.nodes[i];
    out << "node " << i << ' ' << n.id << ' ' << n.lat << ' ' << n.lon << ' '
        << n.install_epoch << '\n';
  }
  out << "edges " << g.edge_count() << '\n';
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (const auto& e : g.neighbors[i].existing)
      out << "edge " << i << ' ' << e.target << ' ' << e.distance_m
          << " existing\n";
    for (const auto& e : g.neighbors[i].added)
      out << "edge " << i << ' ' << e.target << ' ' << e.distance_m
          << " added\n";
  }
}

std::string export_graph(const SensorGraph& g) {
  std::ostringstream os;
  export_graph(os, g);
  return os.str();
}

}  // namespace egat::graph
