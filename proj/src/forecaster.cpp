#include "egat/forecaster.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "egat/errors.hpp"
#include "egat/random.hpp"
#include "egat/text_table.hpp"

namespace egat::model {

namespace {

constexpr const char* kMagic = "egat-checkpoint";
constexpr int kFormatVersion = 1;

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

num::Tensor glorot(num::Shape shape, std::size_t fan_in, std::size_t fan_out,
                   Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(num::shape_numel(shape));
  for (double& x : v) x = rng.uniform(-limit, limit);
  return num::Tensor::from(std::move(shape), std::move(v), true);
}

num::Tensor zeros(num::Shape shape) { return num::Tensor::zeros(std::move(shape), true); }

// Builds every tensor through `make(shape, fan_in, fan_out)` in declaration
// order so that initialisation and checkpoint layout cannot drift apart.
template <typename Make>
ModelParams build(const ModelConfig& c, Make&& make, bool zero_bias_only) {
  c.validate();
  ModelParams p;
  p.config = c;
  const std::size_t d = c.embed_dim, dp = c.attention_dim, K = c.taps;
  auto bias = [&](std::size_t n) {
    return zero_bias_only ? zeros({1, n}) : make(num::Shape{1, n}, n, n);
  };
  p.input_weight = make(num::Shape{c.features, d}, c.features, d);
  p.input_bias = bias(d);
  for (std::size_t b = 0; b < c.num_blocks; ++b) {
    const std::size_t din = b == 0 ? d : dp;
    BlockParams bp;
    bp.tcn.dilation = c.dilations[b];
    bp.tcn.filter_1 = make(num::Shape{d, din, K}, din * K, d * K);
    bp.tcn.filter_2 = make(num::Shape{d, din, K}, din * K, d * K);
    for (std::size_t h = 0; h < c.heads; ++h) {
      attn::AttentionHeadParams hp;
      hp.weight = make(num::Shape{d, dp}, d, dp);
      hp.attention = make(num::Shape{2 * dp}, 2 * dp, 1);
      bp.heads.push_back(std::move(hp));
    }
    p.blocks.push_back(std::move(bp));
  }
  for (std::size_t s = 0; s <= c.num_blocks; ++s) {
    const std::size_t width = s < c.num_blocks ? d : dp;
    p.skip_weight.push_back(make(num::Shape{width, c.skip_dim}, width, c.skip_dim));
    p.skip_bias.push_back(bias(c.skip_dim));
  }
  const std::size_t cat = (c.num_blocks + 1) * c.skip_dim;
  p.fc1_weight = make(num::Shape{cat, c.head_hidden}, cat, c.head_hidden);
  p.fc1_bias = bias(c.head_hidden);
  p.fc2_weight = make(num::Shape{c.head_hidden, c.output_horizon()}, c.head_hidden,
                      c.output_horizon());
  p.fc2_bias = bias(c.output_horizon());
  return p;
}

num::Tensor last_step(const num::Tensor& h) {
  const std::size_t t = h.dim(2);
  return num::reshape(num::slice(h, 2, t - 1, 1), {h.dim(0), h.dim(1)});
}

num::Tensor affine(const num::Tensor& x, const num::Tensor& w, const num::Tensor& b) {
  return num::add(num::matmul(x, w), b);
}

std::string activation_name(attn::Activation a) {
  return a == attn::Activation::Elu ? "elu" : "sigmoid";
}

}  // namespace

std::size_t ModelConfig::receptive_span() const {
  std::size_t s = 0;
  for (std::size_t d : dilations) s += d * (taps > 0 ? taps - 1 : 0);
  return s;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
  if (features == 0) fail("features must be positive");
  if (num_blocks == 0) fail("num_blocks must be positive");
  if (embed_dim == 0 || attention_dim == 0 || skip_dim == 0 || head_hidden == 0)
    fail("layer widths must be positive");
  if (heads == 0) fail("heads must be positive");
  if (taps == 0) fail("taps must be positive");
  if (horizon == 0) fail("horizon must be positive");
  if (max_horizon != 0 && max_horizon < horizon)
    fail("max_horizon " + std::to_string(max_horizon) + " is below horizon " +
         std::to_string(horizon));
  if (dilations.size() != num_blocks)
    fail("dilation schedule has " + std::to_string(dilations.size()) +
         " entries for " + std::to_string(num_blocks) + " blocks");
  for (std::size_t d : dilations)
    if (d == 0) fail("dilations must be positive");
  if (receptive_span() >= input_length)
    fail("receptive field " + std::to_string(receptive_span() + 1) +
         " exceeds input length " + std::to_string(input_length) +
         " (sum of dilation*(taps-1) must stay below T)");
}

bool operator==(const ModelConfig& a, const ModelConfig& b) {
  return config_entries(a) == config_entries(b);
}

std::vector<std::pair<std::string, std::string>> config_entries(const ModelConfig& c) {
  return {
      {"model.features", std::to_string(c.features)},
      {"model.input_length", std::to_string(c.input_length)},
      {"model.horizon", std::to_string(c.horizon)},
      {"model.max_horizon", std::to_string(c.max_horizon)},
      {"model.blocks", std::to_string(c.num_blocks)},
      {"model.embed_dim", std::to_string(c.embed_dim)},
      {"model.attention_dim", std::to_string(c.attention_dim)},
      {"model.heads", std::to_string(c.heads)},
      {"model.taps", std::to_string(c.taps)},
      {"model.dilations", join_sizes(c.dilations)},
      {"model.skip_dim", std::to_string(c.skip_dim)},
      {"model.head_hidden", std::to_string(c.head_hidden)},
      {"model.st_residual", c.st_residual ? "true" : "false"},
      {"model.self_loop", c.attention.self_loop ? "true" : "false"},
      {"model.activation", activation_name(c.attention.activation)},
      {"model.negative_slope", text::format_double(c.attention.negative_slope)},
  };
}

ModelConfig config_from(const config::KeyValues& kv, ModelConfig c) {
  auto size = [&](const char* key, std::size_t fallback) {
    const auto v = kv.get_int(key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw ConfigError(std::string(key) + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  c.features = size("model.features", c.features);
  c.input_length = size("model.input_length", c.input_length);
  c.horizon = size("model.horizon", c.horizon);
  c.max_horizon = size("model.max_horizon", c.max_horizon);
  c.num_blocks = size("model.blocks", c.num_blocks);
  c.embed_dim = size("model.embed_dim", c.embed_dim);
  c.attention_dim = size("model.attention_dim", c.attention_dim);
  c.heads = size("model.heads", c.heads);
  c.taps = size("model.taps", c.taps);
  c.dilations = kv.get_sizes("model.dilations", c.dilations);
  c.skip_dim = size("model.skip_dim", c.skip_dim);
  c.head_hidden = size("model.head_hidden", c.head_hidden);
  c.st_residual = kv.get_bool("model.st_residual", c.st_residual);
  c.attention.self_loop = kv.get_bool("model.self_loop", c.attention.self_loop);
  c.attention.negative_slope =
      kv.get_double("model.negative_slope", c.attention.negative_slope);
  const std::string act = kv.get("model.activation", activation_name(c.attention.activation));
  if (act == "sigmoid")
    c.attention.activation = attn::Activation::Sigmoid;
  else if (act == "elu")
    c.attention.activation = attn::Activation::Elu;
  else
    throw ConfigError("model.activation must be sigmoid or elu, got '" + act + "'");
  return c;
}

std::vector<std::pair<std::string, num::Tensor>> ModelParams::named() const {
  std::vector<std::pair<std::string, num::Tensor>> out;
  out.emplace_back("input.weight", input_weight);
  out.emplace_back("input.bias", input_bias);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::string pre = "block" + std::to_string(b) + ".";
    out.emplace_back(pre + "tcn.filter_1", blocks[b].tcn.filter_1);
    out.emplace_back(pre + "tcn.filter_2", blocks[b].tcn.filter_2);
    for (std::size_t h = 0; h < blocks[b].heads.size(); ++h) {
      const std::string hp = pre + "head" + std::to_string(h) + ".";
      out.emplace_back(hp + "weight", blocks[b].heads[h].weight);
      out.emplace_back(hp + "attention", blocks[b].heads[h].attention);
    }
  }
  for (std::size_t s = 0; s < skip_weight.size(); ++s) {
    out.emplace_back("skip" + std::to_string(s) + ".weight", skip_weight[s]);
    out.emplace_back("skip" + std::to_string(s) + ".bias", skip_bias[s]);
  }
  out.emplace_back("fc1.weight", fc1_weight);
  out.emplace_back("fc1.bias", fc1_bias);
  out.emplace_back("fc2.weight", fc2_weight);
  out.emplace_back("fc2.bias", fc2_bias);
  return out;
}

std::vector<num::Tensor> ModelParams::tensors() const {
  std::vector<num::Tensor> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors()) n += t.numel();
  return n;
}

ModelParams ModelParams::clone() const {
  const auto src = tensors();
  std::size_t i = 0;
  ModelParams out = build(
      config,
      [&](num::Shape, std::size_t, std::size_t) {
        auto t = src[i++].detach();
        t.set_requires_grad(true);
        return t;
      },
      false);
  out.version = version;
  out.graph_epoch = graph_epoch;
  out.graph_nodes = graph_nodes;
  return out;
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  return build(
      cfg,
      [&](num::Shape shape, std::size_t fan_in, std::size_t fan_out) {
        return glorot(std::move(shape), fan_in, fan_out, rng);
      },
      true);
}

ModelParams zero_params(const ModelConfig& cfg) {
  return build(
      cfg, [](num::Shape shape, std::size_t, std::size_t) { return zeros(std::move(shape)); },
      true);
}

num::Tensor forward(const num::Tensor& x, const attn::NeighborTable& table,
                    const ModelParams& p, std::size_t horizon) {
  const ModelConfig& c = p.config;
  if (horizon == 0) horizon = c.horizon;
  if (horizon > c.output_horizon())
    throw ConfigError("requested horizon " + std::to_string(horizon) +
                      " exceeds the model's output width " +
                      std::to_string(c.output_horizon()));
  if (x.rank() != 3 || x.dim(0) != table.rows || x.dim(1) != c.features)
    throw DimensionError("forward: input " + num::shape_str(x.shape()) + " for " +
                         std::to_string(table.rows) + " nodes and " +
                         std::to_string(c.features) + " features");
  if (x.dim(2) <= c.receptive_span())
    throw LengthError("forward: input length " + std::to_string(x.dim(2)) +
                          " is shorter than the receptive field",
                      c.receptive_span() + 1);

  num::Tensor H = num::channel_linear(x, p.input_weight, &p.input_bias);
  std::vector<num::Tensor> skips;
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    const auto& blk = p.blocks[b];
    const num::Tensor h = tcn::gated_tcn(H, blk.tcn);
    skips.push_back(affine(last_step(h), p.skip_weight[b], p.skip_bias[b]));
    num::Tensor next = attn::gat_layer(h, table, blk.heads, c.attention);
    if (c.st_residual && H.dim(1) == next.dim(1)) {
      const std::size_t len = next.dim(2);
      next = num::add(next, num::slice(H, 2, H.dim(2) - len, len));
    }
    H = std::move(next);
  }
  skips.push_back(affine(last_step(H), p.skip_weight.back(), p.skip_bias.back()));

  const num::Tensor o = num::concat(skips, 1);
  const num::Tensor hidden = num::relu(affine(o, p.fc1_weight, p.fc1_bias));
  num::Tensor y = affine(hidden, p.fc2_weight, p.fc2_bias);
  if (horizon < y.dim(1)) y = num::slice(y, 1, 0, horizon);
  return y;
}

num::Tensor forward(const num::Tensor& x, const graph::SensorGraph& g,
                    const ModelParams& p, std::size_t horizon) {
  if (x.rank() != 3 || x.dim(0) != g.size())
    throw DimensionError("forward: input " + num::shape_str(x.shape()) +
                         " for graph of " + std::to_string(g.size()) + " nodes");
  return forward(x, attn::neighbor_table(g, p.config.attention.self_loop), p, horizon);
}

// ---- checkpoints -------------------------------------------------------------

void write_checkpoint(std::ostream& out, const ModelParams& p) {
  out << kMagic << ' ' << kFormatVersion << '\n';
  for (const auto& [k, v] : config_entries(p.config)) out << k << " = " << v << '\n';
  out << "params.version = " << p.version << '\n';
  out << "params.graph_epoch = " << p.graph_epoch << '\n';
  out << "params.graph_nodes = " << p.graph_nodes << '\n';
  const auto named = p.named();
  for (const auto& [name, t] : named) {
    out << "tensor " << name << ' ' << t.rank();
    for (std::size_t d : t.shape()) out << ' ' << d;
    out << '\n';
  }
  out << "end\n";
  for (const auto& [name, t] : named) {
    for (double v : t.data()) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
      char bytes[8];
      std::memcpy(bytes, &bits, 8);
      out.write(bytes, 8);
    }
  }
  if (!out) throw Error("checkpoint write failed");
}

ModelParams read_checkpoint(std::istream& in, const ModelConfig* expected) {
  auto bad = [](const std::string& m) { throw IncompatibleCheckpointError("checkpoint: " + m); };
  std::string line;
  if (!std::getline(in, line)) bad("empty file");
  {
    std::istringstream first(line);
    std::string magic;
    int version = 0;
    first >> magic >> version;
    if (magic != kMagic) bad("not an egat checkpoint");
    if (version != kFormatVersion)
      bad("format version " + std::to_string(version) + " is not supported (expected " +
          std::to_string(kFormatVersion) + ")");
  }

  std::ostringstream header;
  std::vector<std::pair<std::string, num::Shape>> shapes;
  bool ended = false;
  while (std::getline(in, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    if (line.rfind("tensor ", 0) == 0) {
      std::istringstream ts(line.substr(7));
      std::string name;
      std::size_t rank = 0;
      ts >> name >> rank;
      num::Shape s(rank);
      for (auto& d : s) ts >> d;
      if (!ts) bad("malformed tensor line '" + line + "'");
      shapes.emplace_back(name, std::move(s));
    } else {
      header << line << '\n';
    }
  }
  if (!ended) bad("truncated header");

  std::istringstream hs(header.str());
  config::KeyValues kv;
  ModelConfig cfg;
  try {
    kv = config::KeyValues::parse(hs, "checkpoint header");
    cfg = config_from(kv);
    cfg.validate();
  } catch (const ConfigError& e) {
    bad(e.what());
  }
  if (expected) {
    const auto want = config_entries(*expected), got = config_entries(cfg);
    for (std::size_t i = 0; i < want.size(); ++i)
      if (want[i].second != got[i].second)
        bad(want[i].first + " is " + got[i].second + " in the checkpoint but " +
            want[i].second + " was expected");
  }

  ModelParams p = zero_params(cfg);
  const auto named = p.named();
  if (named.size() != shapes.size())
    bad("has " + std::to_string(shapes.size()) + " tensors, config implies " +
        std::to_string(named.size()));
  for (std::size_t i = 0; i < named.size(); ++i)
    if (named[i].first != shapes[i].first || named[i].second.shape() != shapes[i].second)
      bad("tensor " + shapes[i].first + " " + num::shape_str(shapes[i].second) +
          " does not match " + named[i].first + " " +
          num::shape_str(named[i].second.shape()));
  for (const auto& [name, t] : named) {
    num::Tensor handle = t;
    auto dst = handle.mutable_data();
    for (double& v : dst) {
      char bytes[8];
      if (!in.read(bytes, 8)) bad("truncated data for " + name);
      std::uint64_t bits;
      std::memcpy(&bits, bytes, 8);
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
      v = std::bit_cast<double>(bits);
    }
  }
  try {
    p.version = static_cast<std::uint64_t>(kv.get_int("params.version", 0));
    p.graph_epoch = static_cast<int>(kv.get_int("params.graph_epoch", 0));
    p.graph_nodes = static_cast<std::size_t>(kv.get_int("params.graph_nodes", 0));
  } catch (const ConfigError& e) {
    bad(e.what());
  }
  return p;
}

void save_checkpoint(const ModelParams& p, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + tmp);
    write_checkpoint(out, p);
    out.flush();
    if (!out) throw Error("checkpoint write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

ModelParams load_checkpoint(const std::string& path, const ModelConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IncompatibleCheckpointError("cannot open checkpoint " + path);
  return read_checkpoint(in, expected);
}

}  // namespace egat::model
