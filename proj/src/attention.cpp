#include "egat/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "egat/errors.hpp"

namespace egat::attn {

void NeighborTable::add_row(std::span<const std::size_t> neighbours) {
  cols.insert(cols.end(), neighbours.begin(), neighbours.end());
  weights.resize(cols.size(), 0.0);
  offsets.push_back(cols.size());
  fixed.push_back(0);
  ++rows;
}

void NeighborTable::add_fixed_row(std::span<const std::size_t> neighbours,
                                  std::span<const double> row_weights) {
  if (neighbours.size() != row_weights.size())
    throw DimensionError("add_fixed_row: neighbour and weight counts differ");
  cols.insert(cols.end(), neighbours.begin(), neighbours.end());
  weights.insert(weights.end(), row_weights.begin(), row_weights.end());
  offsets.push_back(cols.size());
  fixed.push_back(1);
  ++rows;
}

NeighborTable neighbor_table(const graph::SensorGraph& g, bool self_loop) {
  NeighborTable t;
  std::vector<std::size_t> row;
  for (std::size_t i = 0; i < g.size(); ++i) {
    row.clear();
    if (self_loop) row.push_back(i);
    for (const auto& e : g.neighbors[i].existing) row.push_back(e.target);
    for (const auto& e : g.neighbors[i].added) row.push_back(e.target);
    t.add_row(row);
  }
  return t;
}

NeighborTable replicate(const NeighborTable& t, std::size_t copies) {
  NeighborTable out;
  out.rows = t.rows * copies;
  out.offsets.reserve(out.rows + 1);
  out.cols.reserve(t.nnz() * copies);
  for (std::size_t c = 0; c < copies; ++c) {
    const std::size_t shift = c * t.rows;
    for (std::size_t r = 0; r < t.rows; ++r) {
      for (std::size_t e = t.offsets[r]; e < t.offsets[r + 1]; ++e) {
        out.cols.push_back(t.cols[e] + shift);
        out.weights.push_back(t.weights[e]);
      }
      out.offsets.push_back(out.cols.size());
      out.fixed.push_back(t.fixed[r]);
    }
  }
  return out;
}

num::Tensor graph_attention(const num::Tensor& z, const num::Tensor& attention,
                            const NeighborTable& table, double slope) {
  if (z.rank() != 3 || z.dim(0) != table.rows)
    throw DimensionError("graph_attention: embeddings " + num::shape_str(z.shape()) +
                         " for " + std::to_string(table.rows) + " table rows");
  const std::size_t n = z.dim(0), d = z.dim(1), len = z.dim(2);
  if (attention.numel() != 2 * d)
    throw DimensionError("graph_attention: attention vector " +
                         num::shape_str(attention.shape()) + " for width " +
                         std::to_string(d));
  for (std::size_t c : table.cols)
    if (c >= n) throw DimensionError("graph_attention: neighbour index out of range");

  const auto zv = z.data();
  const auto av = attention.data();
  // s[i,t] = a_src . z_i(t), r[j,t] = a_dst . z_j(t)
  std::vector<double> src(n * len, 0.0), dst(n * len, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      const double* zr = &zv[(i * d + c) * len];
      const double as = av[c], ad = av[d + c];
      for (std::size_t t = 0; t < len; ++t) {
        src[i * len + t] += as * zr[t];
        dst[i * len + t] += ad * zr[t];
      }
    }

  const std::size_t nnz = table.nnz();
  std::vector<double> pre(nnz * len, 0.0), alpha(nnz * len, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t b = table.offsets[i], e_end = table.offsets[i + 1];
    if (b == e_end) continue;
    if (table.fixed[i]) {
      for (std::size_t e = b; e < e_end; ++e)
        std::fill_n(&alpha[e * len], len, table.weights[e]);
      continue;
    }
    for (std::size_t t = 0; t < len; ++t) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t e = b; e < e_end; ++e) {
        const double x = src[i * len + t] + dst[table.cols[e] * len + t];
        const double l = x > 0.0 ? x : slope * x;
        pre[e * len + t] = x;
        alpha[e * len + t] = l;
        mx = std::max(mx, l);
      }
      double denom = 0.0;
      for (std::size_t e = b; e < e_end; ++e) {
        const double w = std::exp(alpha[e * len + t] - mx);
        alpha[e * len + t] = w;
        denom += w;
      }
      for (std::size_t e = b; e < e_end; ++e) alpha[e * len + t] /= denom;
    }
  }

  std::vector<double> out(n * d * len, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t e = table.offsets[i]; e < table.offsets[i + 1]; ++e) {
      const std::size_t j = table.cols[e];
      const double* al = &alpha[e * len];
      for (std::size_t c = 0; c < d; ++c) {
        const double* zj = &zv[(j * d + c) * len];
        double* o = &out[(i * d + c) * len];
        for (std::size_t t = 0; t < len; ++t) o[t] += al[t] * zj[t];
      }
    }

  return num::record(
      {n, d, len}, std::move(out), {z, attention},
      [n, d, len, slope, offsets = table.offsets,
       cols = table.cols, fixed = table.fixed, pre = std::move(pre),
       alpha = std::move(alpha)](std::span<const double>,
                                 std::span<const double> g,
                                 std::span<num::Tensor> in) {
        const auto zv = in[0].data();
        const auto av = in[1].data();
        const bool gz = in[0].requires_grad();
        const bool ga = in[1].requires_grad();
        std::vector<double> dz_local;
        std::span<double> dz;
        if (gz) {
          dz = in[0].grad_buffer();
        } else {
          dz_local.assign(n * d * len, 0.0);
          dz = dz_local;
        }
        std::vector<double> ds(n * len, 0.0), dr(n * len, 0.0);
        std::vector<double> dalpha;
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t b = offsets[i], e_end = offsets[i + 1];
          if (b == e_end) continue;
          dalpha.assign((e_end - b) * len, 0.0);
          for (std::size_t e = b; e < e_end; ++e) {
            const std::size_t j = cols[e];
            const double* al = &alpha[e * len];
            double* da = &dalpha[(e - b) * len];
            for (std::size_t c = 0; c < d; ++c) {
              const double* gi = &g[(i * d + c) * len];
              const double* zj = &zv[(j * d + c) * len];
              double* dzj = &dz[(j * d + c) * len];
              for (std::size_t t = 0; t < len; ++t) {
                da[t] += gi[t] * zj[t];
                dzj[t] += al[t] * gi[t];
              }
            }
          }
          if (fixed[i]) continue;
          for (std::size_t t = 0; t < len; ++t) {
            double dot = 0.0;
            for (std::size_t e = b; e < e_end; ++e)
              dot += alpha[e * len + t] * dalpha[(e - b) * len + t];
            for (std::size_t e = b; e < e_end; ++e) {
              const double dl =
                  alpha[e * len + t] * (dalpha[(e - b) * len + t] - dot);
              const double dp = pre[e * len + t] > 0.0 ? dl : slope * dl;
              ds[i * len + t] += dp;
              dr[cols[e] * len + t] += dp;
            }
          }
        }
        std::span<double> dav;
        if (ga) dav = in[1].grad_buffer();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t c = 0; c < d; ++c) {
            const double* zr = &zv[(i * d + c) * len];
            double* dzr = &dz[(i * d + c) * len];
            double acc_s = 0.0, acc_d = 0.0;
            for (std::size_t t = 0; t < len; ++t) {
              const double s = ds[i * len + t], r = dr[i * len + t];
              dzr[t] += av[c] * s + av[d + c] * r;
              acc_s += s * zr[t];
              acc_d += r * zr[t];
            }
            if (ga) {
              dav[c] += acc_s;
              dav[d + c] += acc_d;
            }
          }
      });
}

namespace {

void check_heads(std::span<const AttentionHeadParams> heads, std::size_t in_dim) {
  if (heads.empty()) throw ConfigError("attention needs at least one head");
  const std::size_t din = heads[0].in_dim(), dout = heads[0].out_dim();
  for (const auto& h : heads) {
    if (h.weight.rank() != 2 || h.in_dim() != din || h.out_dim() != dout)
      throw DimensionError("attention heads disagree on projection shape");
    if (h.attention.numel() != 2 * dout)
      throw DimensionError("attention vector must have length 2d'");
  }
  if (din != in_dim)
    throw DimensionError("attention projection expects width " +
                         std::to_string(din) + ", input has " +
                         std::to_string(in_dim));
}

num::Tensor activate(const num::Tensor& x, Activation a) {
  return a == Activation::Elu ? num::elu(x) : num::sigmoid(x);
}

}  // namespace

num::Tensor gat_layer(const num::Tensor& h, const NeighborTable& table,
                      std::span<const AttentionHeadParams> heads,
                      const AttentionConfig& cfg) {
  if (h.rank() != 3 || h.dim(0) != table.rows)
    throw DimensionError("gat_layer: input " + num::shape_str(h.shape()) +
                         " for " + std::to_string(table.rows) + " nodes");
  check_heads(heads, h.dim(1));
  num::Tensor acc;
  for (const auto& head : heads) {
    const auto z = num::channel_linear(h, head.weight);
    const auto agg = graph_attention(z, head.attention, table, cfg.negative_slope);
    acc = acc.defined() ? num::add(acc, agg) : agg;
  }
  if (heads.size() > 1) acc = num::scale(acc, 1.0 / static_cast<double>(heads.size()));
  return activate(acc, cfg.activation);
}

num::Tensor gat_layer(const num::Tensor& h, const graph::SensorGraph& g,
                      std::span<const AttentionHeadParams> heads,
                      const AttentionConfig& cfg) {
  if (h.rank() != 3 || h.dim(0) != g.size())
    throw DimensionError("gat_layer: input " + num::shape_str(h.shape()) +
                         " for graph of " + std::to_string(g.size()) + " nodes");
  return gat_layer(h, neighbor_table(g, cfg.self_loop), heads, cfg);
}

// ---- explicit scores ---------------------------------------------------------

std::span<const double> SparseAttention::row(std::size_t head, std::size_t step,
                                             std::size_t node) const {
  const std::size_t base = (head * steps + step) * table.nnz();
  return std::span<const double>(alpha).subspan(base + table.offsets[node],
                                                table.degree(node));
}

double SparseAttention::at(std::size_t head, std::size_t step, std::size_t i,
                           std::size_t j) const {
  const auto r = row(head, step, i);
  for (std::size_t e = 0; e < r.size(); ++e)
    if (table.cols[table.offsets[i] + e] == j) return r[e];
  return 0.0;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double denom = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    denom += out[i];
  }
  for (double& v : out) v /= denom;
  return out;
}

namespace {

struct Embeddings {
  std::size_t n = 0, d = 0, steps = 0;
  std::span<const double> data;

  double at(std::size_t node, std::size_t c, std::size_t t) const {
    return data[(node * d + c) * steps + t];
  }
};

Embeddings view(const num::Tensor& h) {
  if (h.rank() == 2) return {h.dim(0), h.dim(1), 1, h.data()};
  if (h.rank() == 3) return {h.dim(0), h.dim(1), h.dim(2), h.data()};
  throw DimensionError("attention scores expect N x d or N x d x T, got " +
                       num::shape_str(h.shape()));
}

// Lazily projected per-node attention terms: src[head][t] = a_src . W h_i(t),
// dst likewise. Only nodes actually touched are projected.
class ProjectedTerms {
 public:
  ProjectedTerms(const Embeddings& e, std::span<const AttentionHeadParams> heads)
      : emb_(e), heads_(heads), ready_(e.n, 0),
        src_(e.n * heads.size() * e.steps), dst_(e.n * heads.size() * e.steps) {}

  double src(std::size_t node, std::size_t head, std::size_t t) {
    ensure(node);
    return src_[(node * heads_.size() + head) * emb_.steps + t];
  }
  double dst(std::size_t node, std::size_t head, std::size_t t) {
    ensure(node);
    return dst_[(node * heads_.size() + head) * emb_.steps + t];
  }

 private:
  void ensure(std::size_t node) {
    if (ready_[node]) return;
    ready_[node] = 1;
    for (std::size_t k = 0; k < heads_.size(); ++k) {
      const auto w = heads_[k].weight.data();
      const auto a = heads_[k].attention.data();
      const std::size_t dout = heads_[k].out_dim();
      for (std::size_t t = 0; t < emb_.steps; ++t) {
        double s = 0.0, r = 0.0;
        for (std::size_t o = 0; o < dout; ++o) {
          double z = 0.0;
          for (std::size_t c = 0; c < emb_.d; ++c) z += emb_.at(node, c, t) * w[c * dout + o];
          s += a[o] * z;
          r += a[dout + o] * z;
        }
        src_[(node * heads_.size() + k) * emb_.steps + t] = s;
        dst_[(node * heads_.size() + k) * emb_.steps + t] = r;
      }
    }
  }

  Embeddings emb_;
  std::span<const AttentionHeadParams> heads_;
  std::vector<std::uint8_t> ready_;
  std::vector<double> src_, dst_;
};

std::uint64_t edge_key(std::size_t i, std::size_t j) {
  return (static_cast<std::uint64_t>(i) << 32) | static_cast<std::uint64_t>(j);
}

// Writes exp(a(Wh_i, Wh_j)) for every head and step into out (width H*T).
void score_edge(ProjectedTerms& terms, std::size_t i, std::size_t j,
                std::size_t heads, std::size_t steps, double slope,
                std::span<double> out, ScoreCounters* counters) {
  for (std::size_t k = 0; k < heads; ++k)
    for (std::size_t t = 0; t < steps; ++t) {
      const double x = terms.src(i, k, t) + terms.dst(j, k, t);
      out[k * steps + t] = std::exp(x > 0.0 ? x : slope * x);
    }
  if (counters != nullptr) {
    counters->exp_evaluations += heads * steps;
    ++counters->scored_edges;
  }
}

}  // namespace

struct CacheAccess {
  static std::size_t width(const EdgeScoreCache& c) { return c.width(); }
  static auto& slots(EdgeScoreCache& c) { return c.slots_; }
  static auto& scores(EdgeScoreCache& c) { return c.scores_; }
  static auto& denominators(EdgeScoreCache& c) { return c.denominators_; }
};

bool EdgeScoreCache::contains(std::size_t i, std::size_t j) const {
  return slots_.count(edge_key(i, j)) != 0;
}

std::span<const double> EdgeScoreCache::score(std::size_t i, std::size_t j) const {
  const auto it = slots_.find(edge_key(i, j));
  if (it == slots_.end())
    throw StaleCacheError("no cached score for edge " + std::to_string(i) +
                          " -> " + std::to_string(j));
  return std::span<const double>(scores_).subspan(it->second * width(), width());
}

std::span<const double> EdgeScoreCache::denominator(std::size_t i) const {
  return std::span<const double>(denominators_).subspan(i * width(), width());
}

void EdgeScoreCache::invalidate() {
  valid_ = false;
  slots_.clear();
  scores_.clear();
  denominators_.clear();
}

EdgeScoreCache build_score_cache(const num::Tensor& h, const graph::SensorGraph& g,
                                 std::span<const AttentionHeadParams> heads,
                                 const AttentionConfig& cfg, CacheStamp stamp,
                                 ScoreCounters* counters) {
  const Embeddings emb = view(h);
  if (emb.n != g.size())
    throw DimensionError("attention scores: " + std::to_string(emb.n) +
                         " embedding rows for " + std::to_string(g.size()) +
                         " nodes");
  check_heads(heads, emb.d);
  EdgeScoreCache cache;
  cache.stamp_ = stamp;
  cache.valid_ = true;
  cache.heads_ = heads.size();
  cache.steps_ = emb.steps;
  const std::size_t w = cache.width();
  const NeighborTable table = neighbor_table(g, cfg.self_loop);
  cache.scores_.assign(table.nnz() * w, 0.0);
  cache.denominators_.assign(g.size() * w, 0.0);
  ProjectedTerms terms(emb, heads);
  for (std::size_t i = 0; i < g.size(); ++i) {
    auto denom = std::span<double>(cache.denominators_).subspan(i * w, w);
    for (std::size_t e = table.offsets[i]; e < table.offsets[i + 1]; ++e) {
      const std::size_t slot = cache.slots_.size();
      cache.slots_.emplace(edge_key(i, table.cols[e]), slot);
      auto out = std::span<double>(cache.scores_).subspan(slot * w, w);
      score_edge(terms, i, table.cols[e], cache.heads_, cache.steps_,
                 cfg.negative_slope, out, counters);
      for (std::size_t x = 0; x < w; ++x) denom[x] += out[x];
    }
  }
  return cache;
}

SparseAttention normalize(const EdgeScoreCache& cache, const graph::SensorGraph& g,
                          const AttentionConfig& cfg) {
  if (!cache.valid()) throw StaleCacheError("attention cache was invalidated");
  if (cache.nodes() != g.size())
    throw StaleCacheError("attention cache covers " + std::to_string(cache.nodes()) +
                          " nodes, graph has " + std::to_string(g.size()));
  SparseAttention out;
  out.table = neighbor_table(g, cfg.self_loop);
  out.heads = cache.heads();
  out.steps = cache.steps();
  const std::size_t nnz = out.table.nnz();
  out.alpha.assign(out.heads * out.steps * nnz, 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto denom = cache.denominator(i);
    for (std::size_t e = out.table.offsets[i]; e < out.table.offsets[i + 1]; ++e) {
      const auto s = cache.score(i, out.table.cols[e]);
      for (std::size_t k = 0; k < out.heads; ++k)
        for (std::size_t t = 0; t < out.steps; ++t) {
          const std::size_t x = k * out.steps + t;
          out.alpha[x * nnz + e] = s[x] / denom[x];
        }
    }
  }
  return out;
}

SparseAttention attention_scores(const num::Tensor& h, const graph::SensorGraph& g,
                                 std::span<const AttentionHeadParams> heads,
                                 const AttentionConfig& cfg) {
  return normalize(build_score_cache(h, g, heads, cfg, {}), g, cfg);
}

IncrementalScores incremental_scores(const num::Tensor& h,
                                     const graph::SensorGraph& expanded,
                                     const graph::ExpansionDelta& delta,
                                     EdgeScoreCache& cache,
                                     std::span<const AttentionHeadParams> heads,
                                     const AttentionConfig& cfg,
                                     CacheStamp expected) {
  if (!cache.valid()) throw StaleCacheError("attention cache was invalidated");
  if (!(cache.stamp() == expected))
    throw StaleCacheError(
        "attention cache stamp (params v" + std::to_string(cache.stamp().params_version) +
        ", batch " + std::to_string(cache.stamp().batch_id) + ") does not match (v" +
        std::to_string(expected.params_version) + ", batch " +
        std::to_string(expected.batch_id) + ")");
  if (cache.nodes() != delta.old_node_count ||
      expanded.size() != delta.old_node_count + delta.new_nodes.size())
    throw StaleCacheError("attention cache does not describe the pre-expansion graph");
  const Embeddings emb = view(h);
  if (emb.n != expanded.size())
    throw DimensionError("incremental_scores: " + std::to_string(emb.n) +
                         " embedding rows for " + std::to_string(expanded.size()) +
                         " nodes");
  if (emb.steps != cache.steps() || heads.size() != cache.heads())
    throw StaleCacheError("attention cache shape does not match heads/steps");
  check_heads(heads, emb.d);

  IncrementalScores result;
  ScoreCounters& counters = result.counters;
  const std::size_t w = CacheAccess::width(cache);
  auto& slots = CacheAccess::slots(cache);
  auto& scores = CacheAccess::scores(cache);
  auto& denoms = CacheAccess::denominators(cache);
  const std::size_t old_n = delta.old_node_count;

  // Fresh part of each row's denominator; the cached part stays in `denoms`.
  std::vector<double> fresh((expanded.size()) * w, 0.0);
  ProjectedTerms terms(emb, heads);
  const auto add_edge = [&](std::size_t i, std::size_t j) {
    const std::size_t slot = slots.size();
    if (!slots.emplace(edge_key(i, j), slot).second)
      throw StaleCacheError("delta edge " + std::to_string(i) + " -> " +
                            std::to_string(j) + " is already cached");
    scores.resize(scores.size() + w);
    auto out = std::span<double>(scores).subspan(slot * w, w);
    score_edge(terms, i, j, heads.size(), emb.steps, cfg.negative_slope, out,
               &counters);
    for (std::size_t x = 0; x < w; ++x) fresh[i * w + x] += out[x];
  };

  if (cfg.self_loop)
    for (std::size_t i = old_n; i < expanded.size(); ++i) {
      add_edge(i, i);
      ++counters.self_loops;
    }
  for (const auto& e : delta.new_edges) add_edge(e.source, e.target);
  counters.forward_edges = delta.forward_edge_count;
  counters.reverse_edges = delta.reverse_edge_count;
  counters.touched_old_nodes = delta.touched_old_nodes.size();

  // denominator = cached sum over N_{i,tau} + fresh sum over N_{i,tau'}
  denoms.resize(expanded.size() * w, 0.0);
  for (std::size_t x = 0; x < denoms.size(); ++x) denoms[x] += fresh[x];

  result.attention = normalize(cache, expanded, cfg);
  return result;
}

}  // namespace egat::attn
