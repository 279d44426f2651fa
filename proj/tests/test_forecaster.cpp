#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "egat/errors.hpp"
#include "egat/forecaster.hpp"
#include "gradcheck.hpp"

namespace num = egat::num;
namespace model = egat::model;
namespace graph = egat::graph;
using num::Tensor;
using egat::testing::grad_check;
using egat::testing::project;
using egat::testing::random_tensor;

namespace {

std::vector<graph::SensorNode> random_nodes(std::size_t n, std::uint64_t seed,
                                            const std::string& prefix = "n") {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.03, 0.03);
  std::vector<graph::SensorNode> out;
  for (std::size_t i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "%s%04zu", prefix.c_str(), i);
    out.push_back({id, 37.77 + u(rng), -122.42 + u(rng), 0});
  }
  return out;
}

model::ModelConfig small_config() {
  model::ModelConfig c;
  c.features = 2;
  c.input_length = 8;
  c.horizon = 3;
  c.num_blocks = 2;
  c.embed_dim = 4;
  c.attention_dim = 4;
  c.heads = 2;
  c.dilations = {1, 2};
  c.skip_dim = 3;
  c.head_hidden = 5;
  return c;
}

bool bitwise_equal(const model::ModelParams& a, const model::ModelParams& b) {
  const auto na = a.named(), nb = b.named();
  if (na.size() != nb.size()) return false;
  for (std::size_t i = 0; i < na.size(); ++i) {
    if (na[i].first != nb[i].first || na[i].second.shape() != nb[i].second.shape()) return false;
    const auto x = na[i].second.data(), y = nb[i].second.data();
    if (!std::equal(x.begin(), x.end(), y.begin())) return false;
  }
  return a.version == b.version && a.graph_epoch == b.graph_epoch &&
         a.graph_nodes == b.graph_nodes && a.config == b.config;
}

}  // namespace

TEST_CASE("forward shapes at the default configuration") {
  model::ModelConfig cfg;
  cfg.max_horizon = 72;
  cfg.validate();
  const auto p = model::init_params(cfg, 1);
  num::NoGradGuard guard;
  std::mt19937_64 rng(1);
  {
    const auto g = graph::build_graph(random_nodes(112, 1), 8);
    const auto y = model::forward(random_tensor({112, 19, 12}, rng, -1, 1, false), g, p, 12);
    CHECK(y.shape() == num::Shape{112, 12});
  }
  {
    const auto g = graph::build_graph(random_nodes(232, 2), 8);
    const auto y = model::forward(random_tensor({232, 19, 72}, rng, -1, 1, false), g, p, 72);
    CHECK(y.shape() == num::Shape{232, 72});
  }
}

TEST_CASE("input validation") {
  const auto cfg = small_config();
  const auto p = model::init_params(cfg, 2);
  const auto g = graph::build_graph(random_nodes(5, 3), 2);
  std::mt19937_64 rng(2);
  CHECK_THROWS_AS(model::forward(random_tensor({5, 3, 8}, rng), g, p), egat::DimensionError);
  CHECK_THROWS_AS(model::forward(random_tensor({4, 2, 8}, rng), g, p), egat::DimensionError);
  CHECK_THROWS_AS(model::forward(random_tensor({5, 2, 3}, rng), g, p), egat::LengthError);
  CHECK_THROWS_AS(model::forward(random_tensor({5, 2, 8}, rng), g, p, 4), egat::ConfigError);
  CHECK(cfg.receptive_span() == 3);

  auto bad = cfg;
  bad.dilations = {1};
  CHECK_THROWS_AS(bad.validate(), egat::ConfigError);
  bad = cfg;
  bad.dilations = {4, 8};
  CHECK_THROWS_AS(bad.validate(), egat::ConfigError);
  bad = cfg;
  bad.heads = 0;
  CHECK_THROWS_AS(bad.validate(), egat::ConfigError);
}

TEST_CASE("zero weights output the head bias") {
  const auto cfg = small_config();
  auto p = model::zero_params(cfg);
  auto b = p.fc2_bias.mutable_data();
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = 0.5 * static_cast<double>(i) - 1.0;
  const auto g = graph::build_graph(random_nodes(5, 4), 2);
  std::mt19937_64 rng(3);
  const auto y = model::forward(random_tensor({5, 2, 8}, rng), g, p);
  for (std::size_t n = 0; n < 5; ++n)
    for (std::size_t h = 0; h < 3; ++h) CHECK(y.at({n, h}) == b[h]);
}

TEST_CASE("parameter count does not depend on the number of nodes") {
  model::ModelConfig cfg;
  const auto p = model::init_params(cfg, 1);
  const std::size_t count = p.parameter_count();
  num::NoGradGuard guard;
  std::mt19937_64 rng(4);
  for (std::size_t n : {5u, 500u}) {
    const auto g = graph::build_graph(random_nodes(n, n), 8);
    const auto y = model::forward(random_tensor({n, 19, 12}, rng, -1, 1, false), g, p);
    CHECK(y.dim(0) == n);
    CHECK(p.parameter_count() == count);
  }
  CHECK(model::init_params(cfg, 9).parameter_count() == count);
}

TEST_CASE("initialisation is seed-determined and clones are independent") {
  const auto cfg = small_config();
  CHECK(bitwise_equal(model::init_params(cfg, 5), model::init_params(cfg, 5)));
  CHECK_FALSE(bitwise_equal(model::init_params(cfg, 5), model::init_params(cfg, 6)));
  const auto p = model::init_params(cfg, 5);
  auto q = p.clone();
  CHECK(bitwise_equal(p, q));
  q.fc1_weight.mutable_data()[0] += 1.0;
  CHECK_FALSE(bitwise_equal(p, q));
}

TEST_CASE("end-to-end gradient check") {
  auto cfg = small_config();
  cfg.features = 2;
  cfg.embed_dim = cfg.attention_dim = 4;
  const auto g = graph::build_graph(random_nodes(4, 7), 2);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto p = model::init_params(cfg, seed + 1);
    std::mt19937_64 rng(seed);
    const auto x = random_tensor({4, 2, 8}, rng);
    const auto w = random_tensor({4, 3}, rng, -1, 1, false);
    auto leaves = p.tensors();
    leaves.push_back(x);
    CAPTURE(seed);
    CHECK(grad_check([&] { return project(model::forward(x, g, p), w); }, leaves).max_rel_error <
          1e-3);
  }
}

TEST_CASE("forward is permutation equivariant") {
  const auto cfg = small_config();
  const auto p = model::init_params(cfg, 3);
  const auto nodes = random_nodes(8, 11);
  const std::size_t perm[] = {3, 7, 0, 5, 1, 6, 2, 4};
  std::vector<graph::SensorNode> permuted;
  for (std::size_t i : perm) permuted.push_back(nodes[i]);
  std::mt19937_64 rng(5);
  const auto x = random_tensor({8, 2, 8}, rng);
  const auto a = num::gather_rows(model::forward(x, graph::build_graph(nodes, 3), p), perm);
  const auto b = model::forward(num::gather_rows(x, perm), graph::build_graph(permuted, 3), p);
  for (std::size_t i = 0; i < a.numel(); ++i)
    CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-12));
}

TEST_CASE("a trained model applies unchanged to a grown graph") {
  const auto cfg = small_config();
  const auto p = model::init_params(cfg, 4);
  auto g = graph::build_graph(random_nodes(20, 12), 3);
  std::mt19937_64 rng(6);
  const auto x = random_tensor({26, 2, 8}, rng);
  const auto before = model::forward(num::slice(x, 0, 0, 20), g, p);
  graph::expand_graph(g, random_nodes(6, 13, "x"));
  const auto after = model::forward(x, g, p);
  CHECK(after.shape() == num::Shape{26, 3});
  CHECK(before.shape() == num::Shape{20, 3});
}

TEST_CASE("horizon slicing") {
  auto cfg = small_config();
  cfg.max_horizon = 6;
  const auto p = model::init_params(cfg, 8);
  const auto g = graph::build_graph(random_nodes(5, 14), 2);
  std::mt19937_64 rng(7);
  const auto x = random_tensor({5, 2, 8}, rng);
  const auto full = model::forward(x, g, p, 6);
  const auto part = model::forward(x, g, p, 2);
  CHECK(model::forward(x, g, p).shape() == num::Shape{5, 3});
  for (std::size_t n = 0; n < 5; ++n)
    for (std::size_t h = 0; h < 2; ++h) CHECK(part.at({n, h}) == full.at({n, h}));
}

TEST_CASE("checkpoint round trip is bitwise") {
  auto p = model::init_params(small_config(), 9);
  p.version = 42;
  p.graph_epoch = 1;
  p.graph_nodes = 26;
  std::stringstream buf;
  model::write_checkpoint(buf, p);
  const auto cfg = small_config();
  const auto q = model::read_checkpoint(buf, &cfg);
  CHECK(bitwise_equal(p, q));

  const auto path = std::filesystem::temp_directory_path() / "egat_test_roundtrip.ckpt";
  model::save_checkpoint(p, path.string());
  CHECK(bitwise_equal(p, model::load_checkpoint(path.string())));
  CHECK_FALSE(std::filesystem::exists(path.string() + ".tmp"));
  std::filesystem::remove(path);
}

TEST_CASE("incompatible checkpoints are rejected") {
  const auto p = model::init_params(small_config(), 9);
  std::stringstream buf;
  model::write_checkpoint(buf, p);
  const std::string bytes = buf.str();

  auto other = small_config();
  other.features = 3;
  {
    std::istringstream in(bytes);
    try {
      model::read_checkpoint(in, &other);
      FAIL("expected IncompatibleCheckpointError");
    } catch (const egat::IncompatibleCheckpointError& e) {
      CHECK(std::string(e.what()).find("model.features") != std::string::npos);
    }
  }
  {
    std::istringstream in(bytes.substr(0, bytes.size() - 8));
    CHECK_THROWS_AS(model::read_checkpoint(in), egat::IncompatibleCheckpointError);
  }
  {
    std::istringstream in("egat-checkpoint 2\nend\n");
    CHECK_THROWS_AS(model::read_checkpoint(in), egat::IncompatibleCheckpointError);
  }
  {
    std::istringstream in("not a checkpoint");
    CHECK_THROWS_AS(model::read_checkpoint(in), egat::IncompatibleCheckpointError);
  }
  CHECK_THROWS_AS(model::load_checkpoint("/nonexistent/egat.ckpt"), egat::Error);
}

TEST_CASE("golden checkpoint decodes to the same parameters") {
  const std::string path = std::string(EGAT_TEST_DATA) + "/golden.ckpt";
  const auto cfg = small_config();
  if (std::getenv("EGAT_REGEN_GOLDEN")) model::save_checkpoint(model::init_params(cfg, 2024), path);
  const auto p = model::load_checkpoint(path, &cfg);
  CHECK(bitwise_equal(p, model::init_params(cfg, 2024)));
}

TEST_CASE("config entries round trip through key-values") {
  auto cfg = small_config();
  cfg.attention.activation = egat::attn::Activation::Elu;
  cfg.attention.negative_slope = 0.1;
  cfg.st_residual = false;
  egat::config::KeyValues kv;
  for (const auto& [k, v] : model::config_entries(cfg)) kv.set(k, v);
  CHECK(model::config_from(kv) == cfg);
  kv.set("model.heads", "two");
  CHECK_THROWS_AS(model::config_from(kv), egat::ConfigError);
}
