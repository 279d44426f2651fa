#pragma once

#include <cstddef>

#include "egat/numerics.hpp"

namespace egat::tcn {

// Two parallel bias-free filters of shape d_out x d_in x taps.
struct TcnLayerParams {
  num::Tensor filter_1;  // tanh branch
  num::Tensor filter_2;  // sigmoid gate
  std::size_t dilation = 1;

  std::size_t taps() const { return filter_1.dim(2); }
};

// Valid (unpadded) output length; 0 when the input is too short.
std::size_t output_length(std::size_t length, std::size_t dilation,
                          std::size_t taps);

// out(t) = sum_s F(s) * H(t - dilation*s) over s < taps, evaluated at every t
// whose taps are all in range. h: N x d_in x T, filter: d_out x d_in x taps.
num::Tensor dilated_causal_conv(const num::Tensor& h, const num::Tensor& filter,
                                std::size_t dilation);

// tanh(F1 * H) (.) sigmoid(F2 * H)
num::Tensor gated_tcn(const num::Tensor& h, const TcnLayerParams& p);

}  // namespace egat::tcn
