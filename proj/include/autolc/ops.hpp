#pragma once

#include "autolc/tensor.hpp"

namespace autolc {

// 2-D cross-correlation over NCHW input. Weight layout (C_out, C_in/groups, k, k).
// Padding follows the shape-preserving rule floor((k-1)*dilation/2), so
// stride 1 keeps the spatial extent and stride 2 yields ceil(extent/2).
// `bias` may be an undefined Tensor for bias-free convolutions.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride = 1,
              int dilation = 1, int groups = 1);

// Batch norm over the channel axis. Training mode normalizes with batch
// statistics and updates the running buffers in place; eval mode applies the
// running statistics as a fixed affine map.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& shift,
                  Tensor& running_mean, Tensor& running_var, bool training,
                  double momentum = 0.1, double eps = 1e-5);

// 3x3 stride-1 same-padding pooling. Average pooling divides by the count of
// in-bounds taps so constant inputs stay constant at the borders.
Tensor avg_pool3(const Tensor& x);
Tensor max_pool3(const Tensor& x);

// Bilinear resize with half-pixel centers (align-corners disabled).
Tensor resize_bilinear_hw(const Tensor& x, i64 out_h, i64 out_w);
Tensor bilinear_resize(const Tensor& x, double factor);  // factor in {1/2, 2, 4}

Tensor global_avg_pool(const Tensor& x);              // (N,C,H,W) -> (N,C,1,1)
Tensor broadcast_hw(const Tensor& x, i64 h, i64 w);   // (N,C,1,1) -> (N,C,h,w)

Tensor softmax_channel(const Tensor& x);  // per-pixel distribution over C

struct CeLoss {
    Tensor loss;       // scalar
    bool all_ignored;  // true when no pixel contributed
};

// Mean negative log-softmax over non-ignored pixels. logits (N,C,H,W),
// labels (N,H,W) with values in [0,C) or ignore_index.
CeLoss softmax_cross_entropy(const Tensor& logits, const IntTensor& labels, int ignore_index);

IntTensor argmax_channel(const Tensor& x);  // (N,C,H,W) -> (N,H,W)

}  // namespace autolc
