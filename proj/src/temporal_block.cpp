#include "egat/temporal_block.hpp"

#include <string>

#include "egat/errors.hpp"

namespace egat::tcn {

std::size_t output_length(std::size_t length, std::size_t dilation,
                          std::size_t taps) {
  const std::size_t span = dilation * (taps - 1);
  return length > span ? length - span : 0;
}

num::Tensor dilated_causal_conv(const num::Tensor& h, const num::Tensor& filter,
                                std::size_t dilation) {
  if (h.rank() != 3 || filter.rank() != 3 || filter.dim(1) != h.dim(1))
    throw DimensionError("dilated_causal_conv: input " + num::shape_str(h.shape()) +
                         " vs filter " + num::shape_str(filter.shape()));
  const std::size_t taps = filter.dim(2);
  if (taps < 1 || dilation < 1)
    throw ConfigError("dilated_causal_conv: taps and dilation must be >= 1");
  const std::size_t n = h.dim(0), din = h.dim(1), len = h.dim(2);
  const std::size_t dout = filter.dim(0);
  const std::size_t span = dilation * (taps - 1);
  if (len <= span)
    throw LengthError("dilated_causal_conv: sequence length " +
                          std::to_string(len) + " needs at least " +
                          std::to_string(span + 1),
                      span + 1);
  const std::size_t olen = len - span;

  const auto hv = h.data();
  const auto fv = filter.data();
  std::vector<double> out(n * dout * olen, 0.0);
  // Output index u corresponds to input time t = u + span.
  for (std::size_t node = 0; node < n; ++node)
    for (std::size_t o = 0; o < dout; ++o) {
      double* orow = &out[(node * dout + o) * olen];
      for (std::size_t i = 0; i < din; ++i) {
        const double* hrow = &hv[(node * din + i) * len];
        for (std::size_t s = 0; s < taps; ++s) {
          const double w = fv[(o * din + i) * taps + s];
          const double* src = hrow + span - dilation * s;
          for (std::size_t u = 0; u < olen; ++u) orow[u] += w * src[u];
        }
      }
    }

  return num::record(
      {n, dout, olen}, std::move(out), {h, filter},
      [n, din, len, dout, taps, dilation, span, olen](
          std::span<const double>, std::span<const double> g,
          std::span<num::Tensor> in) {
        const auto hv = in[0].data();
        const auto fv = in[1].data();
        const bool gh = in[0].requires_grad();
        const bool gf = in[1].requires_grad();
        std::span<double> dh, df;
        if (gh) dh = in[0].grad_buffer();
        if (gf) df = in[1].grad_buffer();
        for (std::size_t node = 0; node < n; ++node)
          for (std::size_t o = 0; o < dout; ++o) {
            const double* grow = &g[(node * dout + o) * olen];
            for (std::size_t i = 0; i < din; ++i) {
              const std::size_t hoff = (node * din + i) * len;
              for (std::size_t s = 0; s < taps; ++s) {
                const std::size_t widx = (o * din + i) * taps + s;
                const std::size_t shift = span - dilation * s;
                if (gf) {
                  double acc = 0.0;
                  for (std::size_t u = 0; u < olen; ++u)
                    acc += grow[u] * hv[hoff + shift + u];
                  df[widx] += acc;
                }
                if (gh) {
                  const double w = fv[widx];
                  for (std::size_t u = 0; u < olen; ++u)
                    dh[hoff + shift + u] += w * grow[u];
                }
              }
            }
          }
      });
}

num::Tensor gated_tcn(const num::Tensor& h, const TcnLayerParams& p) {
  if (p.filter_1.shape() != p.filter_2.shape())
    throw DimensionError("gated_tcn: filter shapes differ " +
                         num::shape_str(p.filter_1.shape()) + " vs " +
                         num::shape_str(p.filter_2.shape()));
  const auto a = num::tanh(dilated_causal_conv(h, p.filter_1, p.dilation));
  const auto b = num::sigmoid(dilated_causal_conv(h, p.filter_2, p.dilation));
  return num::mul(a, b);
}

}  // namespace egat::tcn
