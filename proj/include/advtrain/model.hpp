#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "advtrain/kernels.hpp"
#include "advtrain/rng.hpp"
#include "advtrain/tensor.hpp"

namespace advtrain {

// ---------------------------------------------------------------------------
// Architecture description.
// ---------------------------------------------------------------------------

enum class LayerOp { Conv, Relu, MaxPool, Dropout, FullyConnected };

struct LayerKind {
  LayerOp op;
  int out_channels = 0;  // Conv
  int kernel = 0;        // Conv
  int out_units = 0;     // FullyConnected
  double rate = 0.0;     // Dropout

  static LayerKind conv(int out_channels, int kernel) {
    return {LayerOp::Conv, out_channels, kernel, 0, 0.0};
  }
  static LayerKind relu() { return {LayerOp::Relu}; }
  static LayerKind maxpool() { return {LayerOp::MaxPool}; }
  static LayerKind dropout(double rate) { return {LayerOp::Dropout, 0, 0, 0, rate}; }
  static LayerKind fc(int out_units) { return {LayerOp::FullyConnected, 0, 0, out_units}; }

  bool parametric() const { return op == LayerOp::Conv || op == LayerOp::FullyConnected; }
  bool operator==(const LayerKind&) const = default;
};

/// Recognition model: conv layers first, then fully connected ones, with
/// ReLU/pool/dropout interleaved. The final FC width equals the class count.
struct ModelSpec {
  std::vector<LayerKind> layers;
  int in_channels = 0, in_h = 0, in_w = 0;
  int num_classes = 0;

  int parametric_count() const;  // d
  int conv_count() const;        // d1
  /// Throws std::invalid_argument on any structural violation.
  void validate() const;
  /// Output value shape of each layer; index i = after layers[i].
  std::vector<std::vector<size_t>> layer_shapes() const;
  /// Weights + biases over all parametric layers.
  size_t parameter_count() const;

  bool operator==(const ModelSpec&) const = default;
};

/// Builder mirroring the config file schema: ReLU after every conv and every
/// hidden FC, a 2x2 max pool after the ReLU of convs listed in `pool_after`
/// (1-based), and Dropout before each FC layer.
struct ModelConfig {
  int in_channels = 1, in_h = 0, in_w = 0;
  int num_classes = 0;
  std::vector<std::pair<int, int>> conv;  // {filters, kernel}
  std::vector<int> fc;                    // widths; last must equal num_classes
  std::vector<int> pool_after;
  double dropout_rate = 0.5;
};
ModelSpec build_model_spec(const ModelConfig& cfg);

// ---------------------------------------------------------------------------
// Reconstruction sub-model.
// ---------------------------------------------------------------------------

/// k-layer fully convolutional model whose first kp conv layers mirror the
/// recognizer and whose remaining k-kp layers map back to the image. Pooling
/// never appears here; the tail output shape equals the input image shape.
struct SubModelSpec {
  int k = 0;
  int kp = 0;
  ModelSpec spec;  // the M_s architecture itself
};

/// Tail convs use kernel 5; intermediate tail layers (when k-kp > 1) are
/// `tail_width` wide with ReLU between them; the last tail layer is linear
/// with image_channels outputs.
SubModelSpec build_submodel(const ModelSpec& model, int k, int kp, int image_channels,
                            int tail_width = 32);

// ---------------------------------------------------------------------------
// Weighted model and execution.
// ---------------------------------------------------------------------------

struct WeightedModel {
  ModelSpec spec;
  std::vector<Tensor> weights;  // one per parametric layer
  std::vector<Tensor> biases;
  uint64_t init_seed = 0;

  bool operator==(const WeightedModel&) const = default;
};

/// He-initialized Gaussian weights, std = sqrt(2/fan_in), zero biases.
/// The same seed always reproduces identical tensors.
WeightedModel init_weights(const ModelSpec& spec, uint64_t seed);

/// Copies the first `count` parametric layers of src into dst, bit-exact.
/// Shapes must match at every copied layer.
void export_layers(const WeightedModel& src, WeightedModel& dst, int count);

struct ForwardTrace {
  std::vector<Tensor> acts;                    // output of each layer
  std::vector<Tensor> dropout_masks;           // per layer; empty unless dropout
  std::vector<std::vector<int64_t>> pool_idx;  // per layer; empty unless maxpool
};

/// Runs the model. In train mode dropout draws from rng (required if any
/// dropout layer exists); eval mode is deterministic.
Tensor forward(const WeightedModel& m, const Tensor& input, Mode mode, Rng* rng = nullptr,
               ForwardTrace* trace = nullptr);

/// Activation after the ReLU of parametric layer `prefix_len` (conv layers
/// only, pooling not allowed inside the prefix).
Tensor forward_prefix(const WeightedModel& m, const Tensor& input, int prefix_len);

struct Gradients {
  std::vector<Tensor> weights;  // parallel to WeightedModel::weights
  std::vector<Tensor> biases;

  void init_like(const WeightedModel& m);
  void accumulate(const Gradients& other);
  void scale(double s);
};

/// Backpropagates grad_out (d loss / d model output) through the trace.
/// Layers below `frozen_prefix` parametric layers get zero gradients and the
/// walk stops early once nothing below needs them. When `grad_input` is
/// given (requires frozen_prefix == 0) it receives d loss / d input.
void backward(const WeightedModel& m, const Tensor& input, const ForwardTrace& trace,
              const Tensor& grad_out, Gradients& grads, int frozen_prefix = 0,
              Tensor* grad_input = nullptr);

}  // namespace advtrain
