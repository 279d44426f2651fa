#pragma once

// l spatio-temporal blocks (gated TCN then graph attention) joined by skip
// projections and a two-layer output head. No parameter shape depends on
// the number of nodes, so trained weights apply unchanged to a grown graph.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "egat/attention.hpp"
#include "egat/config.hpp"
#include "egat/graph_store.hpp"
#include "egat/numerics.hpp"
#include "egat/temporal_block.hpp"

namespace egat::model {

struct ModelConfig {
  std::size_t features = 19;
  std::size_t input_length = 12;
  std::size_t horizon = 12;
  // Width of the output layer; forward() may request any horizon up to it.
  // 0 means `horizon`.
  std::size_t max_horizon = 0;
  std::size_t num_blocks = 4;
  std::size_t embed_dim = 32;
  std::size_t attention_dim = 32;
  std::size_t heads = 4;
  std::size_t taps = 2;
  std::vector<std::size_t> dilations{1, 2, 4, 4};
  std::size_t skip_dim = 32;
  std::size_t head_hidden = 64;
  bool st_residual = true;
  attn::AttentionConfig attention;

  std::size_t output_horizon() const { return max_horizon ? max_horizon : horizon; }
  // Total temporal shrinkage of the block stack.
  std::size_t receptive_span() const;
  // Throws ConfigError listing the first violated constraint.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&);
};

// `model.*` keys, as written to checkpoints and accepted in config files.
std::vector<std::pair<std::string, std::string>> config_entries(const ModelConfig& c);
ModelConfig config_from(const config::KeyValues& kv, ModelConfig base = {});

struct BlockParams {
  tcn::TcnLayerParams tcn;
  std::vector<attn::AttentionHeadParams> heads;
};

struct ModelParams {
  ModelConfig config;
  num::Tensor input_weight;  // F x d
  num::Tensor input_bias;    // 1 x d
  std::vector<BlockParams> blocks;
  // l + 1 projections: blocks 0..l-1 from post-TCN states, the last from the
  // final block output.
  std::vector<num::Tensor> skip_weight;
  std::vector<num::Tensor> skip_bias;
  num::Tensor fc1_weight, fc1_bias;
  num::Tensor fc2_weight, fc2_bias;

  // Bumped by every optimizer step; edge-score caches key on it.
  std::uint64_t version = 0;
  int graph_epoch = 0;
  std::size_t graph_nodes = 0;

  // Declaration order; the tensors alias the parameters.
  std::vector<std::pair<std::string, num::Tensor>> named() const;
  std::vector<num::Tensor> tensors() const;
  std::size_t parameter_count() const;
  // Deep copy with independent storage.
  ModelParams clone() const;
};

// Glorot-uniform weights, zero biases; fully determined by the seed.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);
ModelParams zero_params(const ModelConfig& cfg);

// x: M x F x T over the rows of `table` (several samples may be stacked
// block-diagonally). Returns M x horizon; horizon 0 means config.horizon.
num::Tensor forward(const num::Tensor& x, const attn::NeighborTable& table,
                    const ModelParams& p, std::size_t horizon = 0);
num::Tensor forward(const num::Tensor& x, const graph::SensorGraph& g,
                    const ModelParams& p, std::size_t horizon = 0);

// Text header of key = value lines, then little-endian float64 buffers in
// declaration order. Layout:
//   egat-checkpoint 1
//   <config entries>, params.version, params.graph_epoch, params.graph_nodes
//   tensor <name> <rank> <dims...>      (one per parameter)
//   end
//   <raw bytes>
void write_checkpoint(std::ostream& out, const ModelParams& p);
// Throws IncompatibleCheckpointError on a bad container or, when `expected`
// is given, on any config difference.
ModelParams read_checkpoint(std::istream& in, const ModelConfig* expected = nullptr);
// Writes to a sibling temp file and renames over `path`.
void save_checkpoint(const ModelParams& p, const std::string& path);
ModelParams load_checkpoint(const std::string& path,
                            const ModelConfig* expected = nullptr);

}  // namespace egat::model
