#pragma once

// Multi-head graph attention over sensor neighbourhoods, plus the
// incremental scoring path that reuses cached edge scores after expansion.

#include <cstddef>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "egat/graph_store.hpp"
#include "egat/numerics.hpp"

namespace egat::attn {

enum class Activation { Sigmoid, Elu };

struct AttentionConfig {
  double negative_slope = 0.2;
  // Node i attends to itself in addition to N_i.
  bool self_loop = true;
  Activation activation = Activation::Sigmoid;
};

// One head: projection W (d x d') and attention vector a = [a_src ; a_dst]
// of length 2d', scoring a(x, y) = leaky_relu(a_src.x + a_dst.y).
struct AttentionHeadParams {
  num::Tensor weight;
  num::Tensor attention;

  std::size_t in_dim() const { return weight.dim(0); }
  std::size_t out_dim() const { return weight.dim(1); }
};

// CSR adjacency consumed by the attention kernels. Row order per node is
// self loop (if any), then N_{i,tau}, then N_{i,tau'}. Rows flagged `fixed`
// aggregate with the given weights instead of a softmax.
struct NeighborTable {
  std::size_t rows = 0;
  std::vector<std::size_t> offsets{0};
  std::vector<std::size_t> cols;
  std::vector<double> weights;
  std::vector<std::uint8_t> fixed;

  std::size_t nnz() const { return cols.size(); }
  std::size_t degree(std::size_t row) const {
    return offsets[row + 1] - offsets[row];
  }
  void add_row(std::span<const std::size_t> neighbours);
  void add_fixed_row(std::span<const std::size_t> neighbours,
                     std::span<const double> row_weights);
};

NeighborTable neighbor_table(const graph::SensorGraph& g, bool self_loop);

// Block-diagonal copies for batching several samples along the node axis.
NeighborTable replicate(const NeighborTable& t, std::size_t copies);

// out_i = sum_j alpha_ij z_j per time step. z: N x D x T, attention: 2D.
num::Tensor graph_attention(const num::Tensor& z, const num::Tensor& attention,
                            const NeighborTable& table, double negative_slope);

// act((1/K) sum_k A_k h W^k). h: N x d x T -> N x d' x T.
num::Tensor gat_layer(const num::Tensor& h, const NeighborTable& table,
                      std::span<const AttentionHeadParams> heads,
                      const AttentionConfig& cfg);
num::Tensor gat_layer(const num::Tensor& h, const graph::SensorGraph& g,
                      std::span<const AttentionHeadParams> heads,
                      const AttentionConfig& cfg);

// ---- explicit scores (no tape) ---------------------------------------------

struct SparseAttention {
  NeighborTable table;
  std::size_t heads = 0;
  std::size_t steps = 0;
  // Indexed ((head * steps) + step) * nnz + entry.
  std::vector<double> alpha;

  std::span<const double> row(std::size_t head, std::size_t step,
                              std::size_t node) const;
  // 0 when j is not a neighbour of i.
  double at(std::size_t head, std::size_t step, std::size_t i,
            std::size_t j) const;
};

// Accepts h as N x d (one step) or N x d x T.
SparseAttention attention_scores(const num::Tensor& h, const graph::SensorGraph& g,
                                 std::span<const AttentionHeadParams> heads,
                                 const AttentionConfig& cfg);

// Normalises logits with a max shift; used for shift-invariance checks.
std::vector<double> softmax(std::span<const double> logits);

struct CacheStamp {
  std::uint64_t params_version = 0;
  std::uint64_t batch_id = 0;
  friend bool operator==(const CacheStamp&, const CacheStamp&) = default;
};

struct ScoreCounters {
  std::uint64_t exp_evaluations = 0;
  std::size_t scored_edges = 0;
  std::size_t forward_edges = 0;
  std::size_t reverse_edges = 0;
  std::size_t self_loops = 0;
  std::size_t touched_old_nodes = 0;
};

// Unnormalised scores exp(a(Wh_i, Wh_j)) per (edge, head, step) and per-row
// denominators, valid for one (parameter version, input batch).
class EdgeScoreCache {
 public:
  const CacheStamp& stamp() const { return stamp_; }
  std::size_t nodes() const { return denominators_.size() / width(); }
  std::size_t heads() const { return heads_; }
  std::size_t steps() const { return steps_; }
  std::size_t edges() const { return slots_.size(); }

  bool contains(std::size_t i, std::size_t j) const;
  std::span<const double> score(std::size_t i, std::size_t j) const;
  std::span<const double> denominator(std::size_t i) const;

  // Drop all entries; later use must rebuild.
  void invalidate();
  bool valid() const { return valid_; }

 private:
  friend EdgeScoreCache build_score_cache(const num::Tensor&,
                                          const graph::SensorGraph&,
                                          std::span<const AttentionHeadParams>,
                                          const AttentionConfig&, CacheStamp,
                                          ScoreCounters*);
  friend struct CacheAccess;

  std::size_t width() const { return heads_ * steps_; }

  CacheStamp stamp_;
  bool valid_ = false;
  std::size_t heads_ = 0;
  std::size_t steps_ = 0;
  std::unordered_map<std::uint64_t, std::size_t> slots_;
  std::vector<double> scores_;        // slot * width + head * steps + step
  std::vector<double> denominators_;  // node * width + head * steps + step
};

EdgeScoreCache build_score_cache(const num::Tensor& h, const graph::SensorGraph& g,
                                 std::span<const AttentionHeadParams> heads,
                                 const AttentionConfig& cfg, CacheStamp stamp,
                                 ScoreCounters* counters = nullptr);

// alpha = cached score / cached denominator over g's neighbour table.
SparseAttention normalize(const EdgeScoreCache& cache, const graph::SensorGraph& g,
                          const AttentionConfig& cfg);

struct IncrementalScores {
  SparseAttention attention;
  ScoreCounters counters;
};

// Scores only the delta edges (and new self loops), extends the cache in
// place and splits each touched denominator into its cached part and the
// freshly scored part. h holds embeddings for all N' nodes of the expanded
// graph; the first N rows must be the ones the cache was built from.
// Throws StaleCacheError when the cache stamp differs from `expected`.
IncrementalScores incremental_scores(const num::Tensor& h,
                                     const graph::SensorGraph& expanded,
                                     const graph::ExpansionDelta& delta,
                                     EdgeScoreCache& cache,
                                     std::span<const AttentionHeadParams> heads,
                                     const AttentionConfig& cfg,
                                     CacheStamp expected);

}  // namespace egat::attn
