#include "advtrain/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace advtrain {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

int ModelSpec::parametric_count() const {
  int n = 0;
  for (const LayerKind& l : layers)
    if (l.parametric()) ++n;
  return n;
}

int ModelSpec::conv_count() const {
  int n = 0;
  for (const LayerKind& l : layers)
    if (l.op == LayerOp::Conv) ++n;
  return n;
}

void ModelSpec::validate() const {
  require(!layers.empty(), "model: no layers");
  require(in_channels > 0 && in_h > 0 && in_w > 0,
          "model: input shape must be positive, got " +
              shape_str({static_cast<size_t>(in_channels), static_cast<size_t>(in_h),
                         static_cast<size_t>(in_w)}));
  bool seen_fc = false;
  for (const LayerKind& l : layers) {
    switch (l.op) {
      case LayerOp::Conv:
        require(!seen_fc, "model: conv layer after a fully connected layer");
        require(l.out_channels > 0 && l.kernel > 0, "model: bad conv config");
        break;
      case LayerOp::FullyConnected:
        require(l.out_units > 0, "model: bad fc config");
        seen_fc = true;
        break;
      case LayerOp::MaxPool:
        require(!seen_fc, "model: pooling after a fully connected layer");
        break;
      case LayerOp::Dropout:
        require(l.rate >= 0.0 && l.rate < 1.0, "model: dropout rate must be in [0,1)");
        break;
      case LayerOp::Relu:
        break;
    }
  }
  if (seen_fc) {
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
      if (it->op == LayerOp::FullyConnected) {
        require(it->out_units == num_classes,
                "model: final fc width " + std::to_string(it->out_units) +
                    " != class count " + std::to_string(num_classes));
        break;
      }
    }
  }
  layer_shapes();  // shape walk performs the remaining structural checks
}

std::vector<std::vector<size_t>> ModelSpec::layer_shapes() const {
  std::vector<std::vector<size_t>> shapes;
  std::vector<size_t> cur = {static_cast<size_t>(in_channels), static_cast<size_t>(in_h),
                             static_cast<size_t>(in_w)};
  for (size_t i = 0; i < layers.size(); ++i) {
    const LayerKind& l = layers[i];
    switch (l.op) {
      case LayerOp::Conv:
        require(cur.size() == 3, "model: conv layer " + std::to_string(i) +
                                     " needs a [C,H,W] input, got " + shape_str(cur));
        cur = {static_cast<size_t>(l.out_channels), cur[1], cur[2]};
        break;
      case LayerOp::MaxPool:
        require(cur.size() == 3 && cur[1] % 2 == 0 && cur[2] % 2 == 0,
                "model: maxpool layer " + std::to_string(i) + " needs even [C,H,W] input, got " +
                    shape_str(cur));
        cur = {cur[0], cur[1] / 2, cur[2] / 2};
        break;
      case LayerOp::FullyConnected: {
        size_t flat = 1;
        for (size_t d : cur) flat *= d;
        (void)flat;
        cur = {static_cast<size_t>(l.out_units)};
        break;
      }
      case LayerOp::Relu:
      case LayerOp::Dropout:
        break;
    }
    shapes.push_back(cur);
  }
  return shapes;
}

size_t ModelSpec::parameter_count() const {
  size_t total = 0;
  std::vector<size_t> cur = {static_cast<size_t>(in_channels), static_cast<size_t>(in_h),
                             static_cast<size_t>(in_w)};
  for (const LayerKind& l : layers) {
    switch (l.op) {
      case LayerOp::Conv: {
        const size_t k = static_cast<size_t>(l.kernel);
        total += static_cast<size_t>(l.out_channels) * cur[0] * k * k +
                 static_cast<size_t>(l.out_channels);
        cur = {static_cast<size_t>(l.out_channels), cur[1], cur[2]};
        break;
      }
      case LayerOp::FullyConnected: {
        size_t flat = 1;
        for (size_t d : cur) flat *= d;
        total += static_cast<size_t>(l.out_units) * flat + static_cast<size_t>(l.out_units);
        cur = {static_cast<size_t>(l.out_units)};
        break;
      }
      case LayerOp::MaxPool:
        cur = {cur[0], cur[1] / 2, cur[2] / 2};
        break;
      case LayerOp::Relu:
      case LayerOp::Dropout:
        break;
    }
  }
  return total;
}

ModelSpec build_model_spec(const ModelConfig& cfg) {
  ModelSpec spec;
  spec.in_channels = cfg.in_channels;
  spec.in_h = cfg.in_h;
  spec.in_w = cfg.in_w;
  spec.num_classes = cfg.num_classes;
  for (size_t i = 0; i < cfg.conv.size(); ++i) {
    spec.layers.push_back(LayerKind::conv(cfg.conv[i].first, cfg.conv[i].second));
    spec.layers.push_back(LayerKind::relu());
    if (std::find(cfg.pool_after.begin(), cfg.pool_after.end(), static_cast<int>(i + 1)) !=
        cfg.pool_after.end())
      spec.layers.push_back(LayerKind::maxpool());
  }
  for (size_t j = 0; j < cfg.fc.size(); ++j) {
    spec.layers.push_back(LayerKind::dropout(cfg.dropout_rate));
    spec.layers.push_back(LayerKind::fc(cfg.fc[j]));
    if (j + 1 < cfg.fc.size()) spec.layers.push_back(LayerKind::relu());
  }
  spec.validate();
  return spec;
}

SubModelSpec build_submodel(const ModelSpec& model, int k, int kp, int image_channels,
                            int tail_width) {
  const int d1 = model.conv_count();
  require(kp >= 0, "submodel: kp must be >= 0");
  require(kp < k, "submodel: kp " + std::to_string(kp) + " must be < k " + std::to_string(k));
  require(kp <= d1, "submodel: kp " + std::to_string(kp) + " exceeds conv layer count " +
                        std::to_string(d1));
  require(k <= d1 + 1, "submodel: k " + std::to_string(k) + " exceeds conv layer count + 1");

  SubModelSpec sub;
  sub.k = k;
  sub.kp = kp;
  sub.spec.in_channels = model.in_channels;
  sub.spec.in_h = model.in_h;
  sub.spec.in_w = model.in_w;
  sub.spec.num_classes = 0;

  // Shared prefix: the recognizer's first kp convs with their activations.
  // The sub-model stays fully convolutional, so pooling is not carried over.
  int copied = 0;
  for (const LayerKind& l : model.layers) {
    if (l.op != LayerOp::Conv) continue;
    if (copied == kp) break;
    sub.spec.layers.push_back(l);
    sub.spec.layers.push_back(LayerKind::relu());
    ++copied;
  }

  for (int t = 0; t < k - kp; ++t) {
    const bool last = t == k - kp - 1;
    sub.spec.layers.push_back(LayerKind::conv(last ? image_channels : tail_width, 5));
    if (!last) sub.spec.layers.push_back(LayerKind::relu());
  }
  sub.spec.validate();
  return sub;
}

WeightedModel init_weights(const ModelSpec& spec, uint64_t seed) {
  spec.validate();
  WeightedModel m;
  m.spec = spec;
  m.init_seed = seed;
  Rng rng(seed);

  std::vector<size_t> cur = {static_cast<size_t>(spec.in_channels),
                             static_cast<size_t>(spec.in_h), static_cast<size_t>(spec.in_w)};
  for (const LayerKind& l : spec.layers) {
    switch (l.op) {
      case LayerOp::Conv: {
        const size_t k = static_cast<size_t>(l.kernel);
        const size_t fan_in = cur[0] * k * k;
        const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
        Tensor w({static_cast<size_t>(l.out_channels), cur[0], k, k});
        for (size_t i = 0; i < w.size(); ++i) w[i] = rng.normal(0.0, stddev);
        m.weights.push_back(std::move(w));
        m.biases.push_back(Tensor({static_cast<size_t>(l.out_channels)}));
        cur = {static_cast<size_t>(l.out_channels), cur[1], cur[2]};
        break;
      }
      case LayerOp::FullyConnected: {
        size_t flat = 1;
        for (size_t d : cur) flat *= d;
        const double stddev = std::sqrt(2.0 / static_cast<double>(flat));
        Tensor w({static_cast<size_t>(l.out_units), flat});
        for (size_t i = 0; i < w.size(); ++i) w[i] = rng.normal(0.0, stddev);
        m.weights.push_back(std::move(w));
        m.biases.push_back(Tensor({static_cast<size_t>(l.out_units)}));
        cur = {static_cast<size_t>(l.out_units)};
        break;
      }
      case LayerOp::MaxPool:
        cur = {cur[0], cur[1] / 2, cur[2] / 2};
        break;
      case LayerOp::Relu:
      case LayerOp::Dropout:
        break;
    }
  }
  return m;
}

void export_layers(const WeightedModel& src, WeightedModel& dst, int count) {
  require(count >= 0, "export_layers: negative count");
  require(count <= static_cast<int>(src.weights.size()),
          "export_layers: count " + std::to_string(count) + " exceeds source layers " +
              std::to_string(src.weights.size()));
  require(count <= static_cast<int>(dst.weights.size()),
          "export_layers: count " + std::to_string(count) + " exceeds destination layers " +
              std::to_string(dst.weights.size()));
  for (int i = 0; i < count; ++i) {
    require(src.weights[i].same_shape(dst.weights[i]) && src.biases[i].same_shape(dst.biases[i]),
            "export_layers: shape mismatch at layer " + std::to_string(i + 1) + ": " +
                shape_str(src.weights[i].shape()) + " vs " + shape_str(dst.weights[i].shape()));
  }
  for (int i = 0; i < count; ++i) {
    dst.weights[i] = src.weights[i];
    dst.biases[i] = src.biases[i];
  }
}

Tensor forward(const WeightedModel& m, const Tensor& input, Mode mode, Rng* rng,
               ForwardTrace* trace) {
  if (trace) {
    trace->acts.assign(m.spec.layers.size(), Tensor());
    trace->dropout_masks.assign(m.spec.layers.size(), Tensor());
    trace->pool_idx.assign(m.spec.layers.size(), {});
  }
  Tensor cur = input;
  size_t p = 0;
  for (size_t i = 0; i < m.spec.layers.size(); ++i) {
    const LayerKind& l = m.spec.layers[i];
    switch (l.op) {
      case LayerOp::Conv:
        cur = conv2d_forward(cur, m.weights[p], m.biases[p]);
        ++p;
        break;
      case LayerOp::FullyConnected:
        cur = fc_forward(cur, m.weights[p], m.biases[p]);
        ++p;
        break;
      case LayerOp::Relu:
        cur = relu_forward(cur);
        break;
      case LayerOp::MaxPool: {
        PoolResult r = maxpool2x2_forward(cur);
        if (trace) trace->pool_idx[i] = std::move(r.argmax);
        cur = std::move(r.output);
        break;
      }
      case LayerOp::Dropout: {
        if (mode == Mode::Train && l.rate > 0.0) {
          if (!rng)
            throw std::invalid_argument("forward: dropout in train mode needs an rng");
          DropoutResult r = dropout_forward(cur, l.rate, mode, *rng);
          if (trace) trace->dropout_masks[i] = std::move(r.mask);
          cur = std::move(r.output);
        }
        break;
      }
    }
    if (trace) trace->acts[i] = cur;
  }
  return cur;
}

Tensor forward_prefix(const WeightedModel& m, const Tensor& input, int prefix_len) {
  require(prefix_len >= 0 && prefix_len <= m.spec.conv_count(),
          "forward_prefix: prefix length " + std::to_string(prefix_len) +
              " out of range for " + std::to_string(m.spec.conv_count()) + " conv layers");
  Tensor cur = input;
  int done = 0;
  size_t p = 0;
  for (const LayerKind& l : m.spec.layers) {
    if (done == prefix_len && l.op != LayerOp::Relu) break;
    switch (l.op) {
      case LayerOp::Conv:
        cur = conv2d_forward(cur, m.weights[p], m.biases[p]);
        ++p;
        ++done;
        break;
      case LayerOp::Relu:
        cur = relu_forward(cur);
        if (done == prefix_len) return cur;
        break;
      case LayerOp::MaxPool:
        throw std::invalid_argument("forward_prefix: pooling inside the shared prefix");
      case LayerOp::Dropout:
        break;  // eval-mode identity
      case LayerOp::FullyConnected:
        throw std::invalid_argument("forward_prefix: prefix reaches fully connected layers");
    }
  }
  return cur;
}

void Gradients::init_like(const WeightedModel& m) {
  weights.clear();
  biases.clear();
  for (size_t i = 0; i < m.weights.size(); ++i) {
    weights.emplace_back(m.weights[i].shape());
    biases.emplace_back(m.biases[i].shape());
  }
}

void Gradients::accumulate(const Gradients& other) {
  for (size_t i = 0; i < weights.size(); ++i) {
    for (size_t j = 0; j < weights[i].size(); ++j) weights[i][j] += other.weights[i][j];
    for (size_t j = 0; j < biases[i].size(); ++j) biases[i][j] += other.biases[i][j];
  }
}

void Gradients::scale(double s) {
  for (size_t i = 0; i < weights.size(); ++i) {
    for (size_t j = 0; j < weights[i].size(); ++j) weights[i][j] *= s;
    for (size_t j = 0; j < biases[i].size(); ++j) biases[i][j] *= s;
  }
}

void backward(const WeightedModel& m, const Tensor& input, const ForwardTrace& trace,
              const Tensor& grad_out, Gradients& grads, int frozen_prefix,
              Tensor* grad_input) {
  if (grad_input && frozen_prefix > 0)
    throw std::invalid_argument("backward: grad_input needs an unfrozen walk to the input");
  if (grads.weights.size() != m.weights.size()) grads.init_like(m);

  int p = m.spec.parametric_count();
  Tensor grad = grad_out;
  for (size_t ri = m.spec.layers.size(); ri-- > 0;) {
    const LayerKind& l = m.spec.layers[ri];
    const Tensor& layer_in = ri == 0 ? input : trace.acts[ri - 1];
    switch (l.op) {
      case LayerOp::Conv: {
        --p;
        if (p < frozen_prefix) {
          for (int q = p; q >= 0; --q) {
            grads.weights[q].fill(0.0);
            grads.biases[q].fill(0.0);
          }
          return;  // everything below is frozen too
        }
        ConvGrads g = conv2d_backward(layer_in, m.weights[p], grad);
        grads.weights[p] = std::move(g.weights);
        grads.biases[p] = std::move(g.bias);
        grad = std::move(g.input);
        break;
      }
      case LayerOp::FullyConnected: {
        --p;
        if (p < frozen_prefix) {
          for (int q = p; q >= 0; --q) {
            grads.weights[q].fill(0.0);
            grads.biases[q].fill(0.0);
          }
          return;
        }
        FcGrads g = fc_backward(layer_in, m.weights[p], grad);
        grads.weights[p] = std::move(g.weights);
        grads.biases[p] = std::move(g.bias);
        grad = std::move(g.input);
        break;
      }
      case LayerOp::Relu:
        grad = relu_backward(layer_in, grad);
        break;
      case LayerOp::MaxPool:
        grad = maxpool2x2_backward(trace.pool_idx[ri], grad, layer_in.shape());
        break;
      case LayerOp::Dropout:
        if (!trace.dropout_masks[ri].empty())
          grad = dropout_backward(trace.dropout_masks[ri], grad);
        break;
    }
  }
  if (grad_input) *grad_input = std::move(grad);
}

}  // namespace advtrain
