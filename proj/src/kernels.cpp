#include "advtrain/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace advtrain {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

struct ConvDims {
  size_t cin, h, w, cout, k;
  int pad_t, pad_l;  // bottom/right padding is (k-1)/2, implied by same-size output
};

ConvDims conv_dims(const Tensor& input, const Tensor& weights, const Tensor* bias) {
  require(input.rank() == 3, "conv2d: input rank " + std::to_string(input.rank()) + " != 3");
  require(weights.rank() == 4, "conv2d: weights rank " + std::to_string(weights.rank()) + " != 4");
  require(weights.dim(2) == weights.dim(3),
          "conv2d: kernel is " + std::to_string(weights.dim(2)) + "x" +
              std::to_string(weights.dim(3)) + ", must be square");
  require(weights.dim(1) == input.dim(0),
          "conv2d: weight in_channels " + std::to_string(weights.dim(1)) +
              " != input channels " + std::to_string(input.dim(0)));
  if (bias)
    require(bias->size() == weights.dim(0),
            "conv2d: bias length " + std::to_string(bias->size()) + " != out_channels " +
                std::to_string(weights.dim(0)));
  ConvDims d;
  d.cin = input.dim(0);
  d.h = input.dim(1);
  d.w = input.dim(2);
  d.cout = weights.dim(0);
  d.k = weights.dim(2);
  d.pad_t = static_cast<int>(d.k) / 2;        // ceil((k-1)/2)
  d.pad_l = d.pad_t;
  return d;
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  const ConvDims d = conv_dims(input, weights, &bias);
  const int h = static_cast<int>(d.h), w = static_cast<int>(d.w), k = static_cast<int>(d.k);

  Tensor out({d.cout, d.h, d.w});
  const double* in = input.data();
  const double* wt = weights.data();
  double* o = out.data();

  for (size_t oc = 0; oc < d.cout; ++oc) {
    double* ochan = o + oc * d.h * d.w;
    const double b = bias[oc];
    for (size_t i = 0; i < d.h * d.w; ++i) ochan[i] = b;
    for (size_t ic = 0; ic < d.cin; ++ic) {
      const double* ichan = in + ic * d.h * d.w;
      const double* wk = wt + (oc * d.cin + ic) * d.k * d.k;
      for (int ky = 0; ky < k; ++ky) {
        const int dy = ky - d.pad_t;
        const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
        for (int kx = 0; kx < k; ++kx) {
          const int dx = kx - d.pad_l;
          const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
          const double wv = wk[ky * k + kx];
          for (int y = y0; y < y1; ++y) {
            const double* irow = ichan + (y + dy) * w + dx;
            double* orow = ochan + y * w;
            for (int x = x0; x < x1; ++x) orow[x] += wv * irow[x];
          }
        }
      }
    }
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out) {
  const ConvDims d = conv_dims(input, weights, nullptr);
  require(grad_out.rank() == 3 && grad_out.dim(0) == d.cout && grad_out.dim(1) == d.h &&
              grad_out.dim(2) == d.w,
          "conv2d_backward: grad_out shape " + shape_str(grad_out.shape()) + " != " +
              shape_str({d.cout, d.h, d.w}));
  const int h = static_cast<int>(d.h), w = static_cast<int>(d.w), k = static_cast<int>(d.k);

  ConvGrads g;
  g.input = Tensor({d.cin, d.h, d.w});
  g.weights = Tensor({d.cout, d.cin, d.k, d.k});
  g.bias = Tensor({d.cout});

  const double* in = input.data();
  const double* wt = weights.data();
  const double* go = grad_out.data();

  for (size_t oc = 0; oc < d.cout; ++oc) {
    const double* gchan = go + oc * d.h * d.w;
    double acc = 0.0;
    for (size_t i = 0; i < d.h * d.w; ++i) acc += gchan[i];
    g.bias[oc] = acc;

    for (size_t ic = 0; ic < d.cin; ++ic) {
      const double* ichan = in + ic * d.h * d.w;
      double* gichan = g.input.data() + ic * d.h * d.w;
      const double* wk = wt + (oc * d.cin + ic) * d.k * d.k;
      double* gwk = g.weights.data() + (oc * d.cin + ic) * d.k * d.k;

      for (int ky = 0; ky < k; ++ky) {
        const int dy = ky - d.pad_t;
        const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
        for (int kx = 0; kx < k; ++kx) {
          const int dx = kx - d.pad_l;
          const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
          const double wv = wk[ky * k + kx];
          double gw = 0.0;
          for (int y = y0; y < y1; ++y) {
            const double* irow = ichan + (y + dy) * w + dx;
            double* girow = gichan + (y + dy) * w + dx;
            const double* grow = gchan + y * w;
            for (int x = x0; x < x1; ++x) {
              gw += grow[x] * irow[x];
              girow[x] += wv * grow[x];
            }
          }
          gwk[ky * k + kx] += gw;
        }
      }
    }
  }
  return g;
}

Tensor fc_forward(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  require(weights.rank() == 2, "fc: weights rank " + std::to_string(weights.rank()) + " != 2");
  const size_t m = weights.dim(0), n = weights.dim(1);
  require(input.size() == n, "fc: input length " + std::to_string(input.size()) +
                                 " != weight in_features " + std::to_string(n));
  require(bias.size() == m, "fc: bias length " + std::to_string(bias.size()) +
                                " != out_units " + std::to_string(m));
  Tensor out({m});
  const double* x = input.data();
  const double* wt = weights.data();
  for (size_t j = 0; j < m; ++j) {
    const double* row = wt + j * n;
    double acc = bias[j];
    for (size_t i = 0; i < n; ++i) acc += row[i] * x[i];
    out[j] = acc;
  }
  return out;
}

FcGrads fc_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out) {
  const size_t m = weights.dim(0), n = weights.dim(1);
  require(input.size() == n, "fc_backward: input length " + std::to_string(input.size()) +
                                 " != in_features " + std::to_string(n));
  require(grad_out.size() == m, "fc_backward: grad_out length " +
                                    std::to_string(grad_out.size()) + " != out_units " +
                                    std::to_string(m));
  FcGrads g;
  g.input = Tensor(input.shape());
  g.weights = Tensor({m, n});
  g.bias = grad_out.reshaped({m});

  const double* x = input.data();
  const double* wt = weights.data();
  double* gin = g.input.data();
  for (size_t j = 0; j < m; ++j) {
    const double gj = grad_out[j];
    const double* row = wt + j * n;
    double* grow = g.weights.data() + j * n;
    for (size_t i = 0; i < n; ++i) {
      grow[i] = gj * x[i];
      gin[i] += gj * row[i];
    }
  }
  return g;
}

Tensor relu_forward(const Tensor& x) {
  Tensor y(x.shape());
  for (size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
  require(x.same_shape(grad_out), "relu_backward: shape mismatch " + shape_str(x.shape()) +
                                      " vs " + shape_str(grad_out.shape()));
  Tensor g(x.shape());
  for (size_t i = 0; i < x.size(); ++i) g[i] = x[i] > 0.0 ? grad_out[i] : 0.0;
  return g;
}

PoolResult maxpool2x2_forward(const Tensor& input) {
  require(input.rank() == 3, "maxpool: input rank != 3");
  const size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  require(h % 2 == 0 && w % 2 == 0, "maxpool: spatial dims " + std::to_string(h) + "x" +
                                        std::to_string(w) + " must be even");
  PoolResult r;
  r.output = Tensor({c, h / 2, w / 2});
  r.argmax.resize(r.output.size());
  size_t oi = 0;
  for (size_t ch = 0; ch < c; ++ch) {
    for (size_t y = 0; y < h; y += 2) {
      for (size_t x = 0; x < w; x += 2) {
        size_t best = (ch * h + y) * w + x;
        double bv = input[best];
        const size_t cand[3] = {(ch * h + y) * w + x + 1, (ch * h + y + 1) * w + x,
                                (ch * h + y + 1) * w + x + 1};
        for (size_t idx : cand) {
          if (input[idx] > bv) {
            bv = input[idx];
            best = idx;
          }
        }
        r.output[oi] = bv;
        r.argmax[oi] = static_cast<int64_t>(best);
        ++oi;
      }
    }
  }
  return r;
}

Tensor maxpool2x2_backward(const std::vector<int64_t>& argmax, const Tensor& grad_out,
                           const std::vector<size_t>& input_shape) {
  require(argmax.size() == grad_out.size(), "maxpool_backward: argmax/grad_out size mismatch");
  Tensor g(input_shape);
  for (size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += grad_out[i];
  return g;
}

DropoutResult dropout_forward(const Tensor& x, double rate, Mode mode, Rng& rng) {
  require(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0,1)");
  DropoutResult r;
  if (mode == Mode::Eval || rate == 0.0) {
    r.output = x;
    r.mask = Tensor::full(x.shape(), 1.0);
    return r;
  }
  const double scale = 1.0 / (1.0 - rate);
  r.output = Tensor(x.shape());
  r.mask = Tensor(x.shape());
  for (size_t i = 0; i < x.size(); ++i) {
    const double m = rng.uniform() < rate ? 0.0 : scale;
    r.mask[i] = m;
    r.output[i] = x[i] * m;
  }
  return r;
}

Tensor dropout_backward(const Tensor& mask, const Tensor& grad_out) {
  require(mask.same_shape(grad_out), "dropout_backward: shape mismatch");
  Tensor g(mask.shape());
  for (size_t i = 0; i < mask.size(); ++i) g[i] = mask[i] * grad_out[i];
  return g;
}

Tensor softmax(const Tensor& logits) {
  Tensor p(logits.shape());
  double mx = logits[0];
  for (size_t i = 1; i < logits.size(); ++i) mx = std::max(mx, logits[i]);
  double sum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (size_t i = 0; i < p.size(); ++i) p[i] /= sum;
  return p;
}

LossResult softmax_cross_entropy(const Tensor& logits, int label) {
  require(label >= 0 && static_cast<size_t>(label) < logits.size(),
          "softmax_cross_entropy: label " + std::to_string(label) + " out of range for " +
              std::to_string(logits.size()) + " classes");
  double mx = logits[0];
  for (size_t i = 1; i < logits.size(); ++i) mx = std::max(mx, logits[i]);
  double sum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) sum += std::exp(logits[i] - mx);

  LossResult r;
  r.loss = std::log(sum) - (logits[label] - mx);
  r.grad = Tensor(logits.shape());
  for (size_t i = 0; i < logits.size(); ++i) r.grad[i] = std::exp(logits[i] - mx) / sum;
  r.grad[label] -= 1.0;
  return r;
}

LossResult mse_loss(const Tensor& pred, const Tensor& target) {
  require(pred.same_shape(target), "mse_loss: shape mismatch " + shape_str(pred.shape()) +
                                       " vs " + shape_str(target.shape()));
  LossResult r;
  r.grad = Tensor(pred.shape());
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  double acc = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    acc += d * d;
    r.grad[i] = 2.0 * d * inv_n;
  }
  r.loss = acc * inv_n;
  return r;
}

}  // namespace advtrain
