#pragma once

#include <utility>
#include <vector>

#include "revsnn/tensor.hpp"

namespace revsnn {

// 3x3 convolution, padding 1, stride 1 or 2, no bias. Weights are
// (out_channels, in_channels, 3, 3); output spatial size is ceil(H/stride).
// Reductions accumulate in double with a fixed loop order so results are
// identical regardless of how calls are scheduled.
Tensor conv2d(const Tensor& in, const Tensor& weights, int stride);
Tensor conv2d_backward_input(const Tensor& grad_out, const Tensor& weights, Shape in_shape,
                             int stride);
Tensor conv2d_backward_weights(const Tensor& grad_out, const Tensor& in, Shape weight_shape,
                               int stride);

// Per-channel (batch norm) or per-sample-per-group (group norm) statistics,
// stored as mean and 1/sqrt(var + eps). Recorded in Train mode, replayed
// verbatim in Replay mode so the op is a fixed function within one step.
struct NormStats {
    std::vector<double> mean;
    std::vector<double> invstd;
};

Tensor batch_norm_forward(const Tensor& in, const Tensor& gain, const Tensor& bias, float eps,
                          NormStats& stats);
Tensor batch_norm_apply(const Tensor& in, const Tensor& gain, const Tensor& bias,
                        const NormStats& stats);
// Differentiates through the batch statistics.
void batch_norm_backward(const Tensor& in, const Tensor& gain, const NormStats& stats,
                         const Tensor& grad_out, Tensor& grad_in, Tensor& grad_gain,
                         Tensor& grad_bias);

Tensor group_norm_forward(const Tensor& in, int groups, const Tensor& gain, const Tensor& bias,
                          float eps, NormStats& stats);
Tensor group_norm_apply(const Tensor& in, int groups, const Tensor& gain, const Tensor& bias,
                        const NormStats& stats);
void group_norm_backward(const Tensor& in, int groups, const Tensor& gain, const NormStats& stats,
                         const Tensor& grad_out, Tensor& grad_in, Tensor& grad_gain,
                         Tensor& grad_bias);

int group_count_for(int channels);  // gcd(channels, 8)

// weights (K, C, 1, 1), bias (1, K, 1, 1), in (B, C, 1, 1) -> (B, K, 1, 1).
Tensor linear_forward(const Tensor& in, const Tensor& weights, const Tensor& bias);
void linear_backward(const Tensor& grad_out, const Tensor& in, const Tensor& weights,
                     Tensor& grad_in, Tensor& grad_weights, Tensor& grad_bias);

Tensor avg_pool_global(const Tensor& in);
Tensor avg_pool_global_backward(const Tensor& grad_out, Shape in_shape);

Tensor concat_channels(const Tensor& a, const Tensor& b);
std::pair<Tensor, Tensor> split_channels(const Tensor& t, int first_channels);

struct LossResult {
    double loss = 0.0;
    Tensor grad_logits;  // d(mean loss)/d logits
};
LossResult softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

}  // namespace revsnn
