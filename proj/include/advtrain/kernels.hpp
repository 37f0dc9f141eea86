#pragma once

#include <cstdint>
#include <vector>

#include "advtrain/rng.hpp"
#include "advtrain/tensor.hpp"

namespace advtrain {

enum class Mode { Train, Eval };

// ---------------------------------------------------------------------------
// Convolution. Cross-correlation, stride 1, zero padding that preserves the
// spatial size. Even kernels pad ceil((c-1)/2) on top/left and floor((c-1)/2)
// on bottom/right.
// ---------------------------------------------------------------------------

/// input [Cin,H,W], weights [Cout,Cin,c,c], bias [Cout] -> [Cout,H,W].
Tensor conv2d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias);

struct ConvGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};
ConvGrads conv2d_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out);

// ---------------------------------------------------------------------------
// Fully connected. The input tensor is read flat in row-major order, so a
// [C,H,W] activation flattens channel-major.
// ---------------------------------------------------------------------------

/// input [in] (any shape, flattened), weights [m,in], bias [m] -> [m].
Tensor fc_forward(const Tensor& input, const Tensor& weights, const Tensor& bias);

struct FcGrads {
  Tensor input;  // shaped like the forward input
  Tensor weights;
  Tensor bias;
};
FcGrads fc_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out);

// ---------------------------------------------------------------------------
// Activations and pooling.
// ---------------------------------------------------------------------------

Tensor relu_forward(const Tensor& x);
/// Subgradient at exactly 0 is 0.
Tensor relu_backward(const Tensor& x, const Tensor& grad_out);

struct PoolResult {
  Tensor output;                 // [C,H/2,W/2]
  std::vector<int64_t> argmax;   // flat input index per output element
};
/// Requires even spatial dimensions. Window ties pick the first element in
/// row-major scan order.
PoolResult maxpool2x2_forward(const Tensor& input);
Tensor maxpool2x2_backward(const std::vector<int64_t>& argmax, const Tensor& grad_out,
                           const std::vector<size_t>& input_shape);

struct DropoutResult {
  Tensor output;
  Tensor mask;  // 0 or 1/(1-rate); grad = grad_out * mask
};
/// Inverted dropout: surviving activations are scaled by 1/(1-rate) in train
/// mode so eval mode is the identity.
DropoutResult dropout_forward(const Tensor& x, double rate, Mode mode, Rng& rng);
Tensor dropout_backward(const Tensor& mask, const Tensor& grad_out);

// ---------------------------------------------------------------------------
// Losses.
// ---------------------------------------------------------------------------

struct LossResult {
  double loss = 0.0;
  Tensor grad;
};

Tensor softmax(const Tensor& logits);
/// Max-subtraction stabilized; grad = softmax(logits) - one_hot(label).
LossResult softmax_cross_entropy(const Tensor& logits, int label);
/// Mean over all elements; grad = 2*(pred-target)/N.
LossResult mse_loss(const Tensor& pred, const Tensor& target);

}  // namespace advtrain
