#include <cmath>
#include <random>

#include "doctest.h"
#include "egat/errors.hpp"
#include "egat/temporal_block.hpp"
#include "gradcheck.hpp"

namespace num = egat::num;
namespace tcn = egat::tcn;
using num::Tensor;
using egat::testing::grad_check;
using egat::testing::project;
using egat::testing::random_tensor;

namespace {

const Tensor kSeries = Tensor::from({1, 1, 4}, {1, 2, 3, 4});

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// Direct loop oracle: out[n,o,u] = sum_{c,s} F[o,c,s] * H[n,c,u + span - dil*s].
std::vector<double> conv_oracle(const Tensor& h, const Tensor& f, std::size_t dil) {
  const std::size_t n = h.dim(0), din = h.dim(1), T = h.dim(2), dout = f.dim(0), K = f.dim(2);
  const std::size_t span = dil * (K - 1), len = T - span;
  std::vector<double> out(n * dout * len, 0.0);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t o = 0; o < dout; ++o)
      for (std::size_t u = 0; u < len; ++u) {
        double acc = 0.0;
        for (std::size_t c = 0; c < din; ++c)
          for (std::size_t s = 0; s < K; ++s)
            acc += f.at({o, c, s}) * h.at({a, c, u + span - dil * s});
        out[(a * dout + o) * len + u] = acc;
      }
  return out;
}

}  // namespace

TEST_CASE("dilated causal convolution examples") {
  CHECK(values(tcn::dilated_causal_conv(kSeries, Tensor::from({1, 1, 2}, {1, 0}), 1)) ==
        std::vector<double>{2, 3, 4});
  CHECK(values(tcn::dilated_causal_conv(kSeries, Tensor::from({1, 1, 2}, {1, 2}), 1)) ==
        std::vector<double>{4, 7, 10});
  CHECK(values(tcn::dilated_causal_conv(kSeries, Tensor::from({1, 1, 2}, {1, 1}), 2)) ==
        std::vector<double>{4, 6});
  CHECK(tcn::output_length(12, 4, 2) == 8);
  CHECK(tcn::output_length(4, 4, 2) == 0);
}

TEST_CASE("too-short input reports the required length") {
  try {
    tcn::dilated_causal_conv(kSeries, Tensor::zeros({1, 1, 2}), 4);
    FAIL("expected LengthError");
  } catch (const egat::LengthError& e) {
    CHECK(e.required_length() == 5);
  }
  CHECK_THROWS_AS(tcn::dilated_causal_conv(kSeries, Tensor::zeros({1, 2, 2}), 1),
                  egat::DimensionError);
}

TEST_CASE("random convolutions match the loop oracle") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> d(1, 4), dl(1, 3), kt(1, 3);
    const std::size_t dil = dl(rng), K = kt(rng);
    const auto h = random_tensor({d(rng), d(rng), dil * (K - 1) + d(rng)}, rng);
    const auto f = random_tensor({d(rng), h.dim(1), K}, rng);
    const auto got = values(tcn::dilated_causal_conv(h, f, dil));
    const auto want = conv_oracle(h, f, dil);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("gated unit examples") {
  std::mt19937_64 rng(1);
  const auto h = random_tensor({3, 2, 6}, rng);
  tcn::TcnLayerParams zero{Tensor::zeros({2, 2, 2}), Tensor::zeros({2, 2, 2}), 2};
  const auto silent = tcn::gated_tcn(h, zero);
  for (double v : silent.data()) CHECK(v == 0.0);

  // Open gate: a large filter on constant positive input saturates sigmoid.
  const auto ones = Tensor::full({1, 1, 5}, 1.0);
  tcn::TcnLayerParams open{Tensor::from({1, 1, 2}, {0.3, 0.2}),
                           Tensor::from({1, 1, 2}, {50.0, 50.0}), 1};
  const auto out = tcn::gated_tcn(ones, open);
  for (double v : out.data()) CHECK(v == doctest::Approx(std::tanh(0.5)).epsilon(1e-3));

  // Composition oracle.
  tcn::TcnLayerParams p{random_tensor({3, 2, 2}, rng), random_tensor({3, 2, 2}, rng), 2};
  const auto a = conv_oracle(h, p.filter_1, 2), b = conv_oracle(h, p.filter_2, 2);
  const auto g = values(tcn::gated_tcn(h, p));
  for (std::size_t i = 0; i < g.size(); ++i)
    CHECK(g[i] == doctest::Approx(std::tanh(a[i]) / (1.0 + std::exp(-b[i]))).epsilon(1e-12));
}

TEST_CASE("gated output is bounded in (-1, 1)") {
  std::mt19937_64 rng(2);
  const auto h = random_tensor({4, 3, 10}, rng, -5, 5);
  tcn::TcnLayerParams p{random_tensor({3, 3, 2}, rng, -3, 3), random_tensor({3, 3, 2}, rng, -3, 3), 4};
  const auto out = tcn::gated_tcn(h, p);
  for (double v : out.data()) {
    CHECK(v > -1.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("causality: outputs depend only on current and past inputs") {
  std::mt19937_64 rng(3);
  const std::size_t T = 9, dil = 2;
  auto h = random_tensor({1, 2, T}, rng);
  tcn::TcnLayerParams p{random_tensor({2, 2, 2}, rng), random_tensor({2, 2, 2}, rng), dil};
  const std::size_t span = dil, len = T - span;
  for (std::size_t u = 0; u < len; ++u) {
    h.set_requires_grad(true);
    h.zero_grad();
    const auto out = tcn::gated_tcn(h, p);
    // Select output time u (input time u + span) across channels.
    std::vector<double> sel(2 * len, 0.0);
    sel[u] = 1.0;
    sel[len + u] = 1.0;
    num::backward(project(out, Tensor::from({1, 2, len}, sel)));
    const auto g = h.grad();
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t t = u + span + 1; t < T; ++t) CHECK(g[c * T + t] == 0.0);
  }
}

TEST_CASE("node permutation equivariance") {
  std::mt19937_64 rng(4);
  const auto h = random_tensor({4, 2, 7}, rng);
  tcn::TcnLayerParams p{random_tensor({3, 2, 2}, rng), random_tensor({3, 2, 2}, rng), 2};
  const std::size_t perm[] = {2, 0, 3, 1};
  const auto a = num::gather_rows(tcn::gated_tcn(h, p), perm);
  const auto b = tcn::gated_tcn(num::gather_rows(h, perm), p);
  CHECK(values(a) == values(b));
}

TEST_CASE("gated TCN gradient check") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> d(1, 4), dl(1, 3);
    const std::size_t dil = dl(rng), n = d(rng), din = d(rng), dout = d(rng);
    const auto h = random_tensor({n, din, dil + d(rng)}, rng);
    tcn::TcnLayerParams p{random_tensor({dout, din, 2}, rng), random_tensor({dout, din, 2}, rng), dil};
    const std::size_t len = h.dim(2) - dil;
    const auto w = random_tensor({n, dout, len}, rng, -1, 1, false);
    CAPTURE(seed);
    CHECK(grad_check([&] { return project(tcn::gated_tcn(h, p), w); }, {h, p.filter_1, p.filter_2})
              .max_rel_error < 1e-4);
  }
}
