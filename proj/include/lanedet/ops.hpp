#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "lanedet/tensor.hpp"

// Differentiable operators. Every op records itself on the current tape when
// an input requires grad and grad mode is enabled.
namespace lanedet::ops {

struct Conv2dOptions {
    std::size_t stride = 1;
    std::size_t dilation = 1;
    std::size_t groups = 1;
    std::size_t padding = 0;
};

// Cross-correlation of input [N,C_in,H,W] with kernel [C_out,C_in/groups,kh,kw].
// `bias` may be undefined; otherwise shape [C_out].
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, Conv2dOptions options);
Tensor conv2d(const Tensor& input, const Tensor& kernel, Conv2dOptions options);

// Padding that keeps H' = H for stride 1 and an odd square kernel.
std::size_t same_padding(std::size_t kernel_size, std::size_t dilation);

// [N,C*r*r,H,W] -> [N,C,H*r,W*r]; out[n,c,h*r+a,w*r+b] = in[n,c*r*r+a*r+b,h,w].
Tensor pixel_shuffle(const Tensor& input, std::size_t r);
// Exact inverse of pixel_shuffle.
Tensor space_to_depth(const Tensor& input, std::size_t r);

// Subgradient at 0 is 0.
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Window k, given stride, no padding. Argmax ties resolve to the lowest index.
Tensor max_pool2d(const Tensor& input, std::size_t k, std::size_t stride);

// Reductions over the point axis of [N,C,P] -> [N,C]. When `counts` is
// non-empty only the first counts[n] points of sample n take part; the rest
// is padding. Max routes its gradient to the lowest-index argmax. Average
// sums left to right.
Tensor max_over_points(const Tensor& input, std::span<const std::size_t> counts = {});
Tensor avg_over_points(const Tensor& input, std::span<const std::size_t> counts = {});

// Shared per-point linear map: [N,C_in,P] x [C_out,C_in,1] -> [N,C_out,P].
Tensor conv1d(const Tensor& input, const Tensor& kernel, const Tensor& bias);

// Appends a per-sample global vector [N,G] to every point of [N,C,P] -> [N,C+G,P].
Tensor concat_broadcast(const Tensor& points, const Tensor& global);

// x [N,D] * weight[O,D]^T + bias[O] -> [N,O]. `bias` may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Columns [begin, end) of a [N,D] tensor.
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);

// Stacks T tensors of shape [N,K] into [N,T,K].
Tensor stack_steps(const std::vector<Tensor>& steps);

struct LstmParams {
    Tensor input_weight;   // [4*H, D_in], gate order: input, forget, candidate, output
    Tensor hidden_weight;  // [4*H, H]
    Tensor bias;           // [4*H]
};

struct LstmState {
    Tensor hidden;
    Tensor cell;
};

LstmState lstm_cell(const Tensor& x, const LstmState& state, const LstmParams& params);

}  // namespace lanedet::ops
