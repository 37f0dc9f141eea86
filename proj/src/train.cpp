#include "advtrain/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "advtrain/parallel.hpp"

namespace advtrain {

json TrainConfig::to_json() const {
  return {{"sub_lr", sub_lr},
          {"joint_prefix_lr", joint_prefix_lr},
          {"joint_rest_lr", joint_rest_lr},
          {"lr_decay_factor", lr_decay_factor},
          {"lr_decay_interval", lr_decay_interval},
          {"momentum", momentum},
          {"batch_size", batch_size},
          {"pretrain_iters", pretrain_iters},
          {"tune_iters", tune_iters},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.sub_lr = j.value("sub_lr", c.sub_lr);
  c.joint_prefix_lr = j.value("joint_prefix_lr", c.joint_prefix_lr);
  c.joint_rest_lr = j.value("joint_rest_lr", c.joint_rest_lr);
  c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
  c.lr_decay_interval = j.value("lr_decay_interval", c.lr_decay_interval);
  c.momentum = j.value("momentum", c.momentum);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.pretrain_iters = j.value("pretrain_iters", c.pretrain_iters);
  c.tune_iters = j.value("tune_iters", c.tune_iters);
  c.seed = j.value("seed", c.seed);
  if (c.sub_lr <= 0 || c.joint_prefix_lr <= 0 || c.joint_rest_lr <= 0 ||
      c.lr_decay_interval <= 0 || c.batch_size <= 0)
    throw DataError("train config: rates, decay interval and batch size must be positive");
  return c;
}

double lr_at(int64_t iter, double base, int64_t interval, double factor) {
  const int64_t steps = iter / interval;
  return base / std::pow(factor, static_cast<double>(steps));
}

void sgd_step(Tensor& w, const Tensor& g, Tensor& v, double lr, double momentum) {
  if (!w.same_shape(g) || !w.same_shape(v))
    throw std::invalid_argument("sgd_step: shape mismatch");
  for (size_t i = 0; i < w.size(); ++i) {
    v[i] = momentum * v[i] - lr * g[i];
    w[i] += v[i];
  }
}

Tensor to_model_space(const Tensor& img255) {
  Tensor t(img255.shape());
  for (size_t i = 0; i < t.size(); ++i) t[i] = img255[i] * (1.0 / 255.0);
  return t;
}

Tensor from_model_space(const Tensor& unit) {
  Tensor t(unit.shape());
  for (size_t i = 0; i < t.size(); ++i) t[i] = unit[i] * 255.0;
  return t;
}

double psnr(const Tensor& a, const Tensor& b, double peak) {
  if (!a.same_shape(b)) throw std::invalid_argument("psnr: shape mismatch");
  double mse = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

// ---------------------------------------------------------------------------
// Evaluation.
// ---------------------------------------------------------------------------

std::vector<int> topk_indices(const Tensor& logits, int k) {
  const int c = static_cast<int>(logits.size());
  k = std::min(k, c);
  std::vector<int> order(c);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (logits[a] != logits[b]) return logits[a] > logits[b];
    return a < b;
  });
  order.resize(k);
  return order;
}

EvalReport evaluate_logits(const std::vector<Tensor>& logits, const std::vector<int>& labels,
                           int num_classes, int k) {
  if (logits.size() != labels.size())
    throw std::invalid_argument("evaluate: logits/labels count mismatch");
  EvalReport rep;
  rep.k = std::min(k, num_classes);
  rep.per_class_total.assign(num_classes, 0);
  rep.per_class_top1.assign(num_classes, 0);
  size_t hit1 = 0, hitk = 0;
  for (size_t i = 0; i < logits.size(); ++i) {
    const std::vector<int> top = topk_indices(logits[i], k);
    const int label = labels[i];
    rep.per_class_total[label] += 1;
    if (!top.empty() && top[0] == label) {
      ++hit1;
      rep.per_class_top1[label] += 1;
    }
    if (std::find(top.begin(), top.end(), label) != top.end()) ++hitk;
  }
  const double n = static_cast<double>(logits.size());
  rep.top1 = n > 0 ? 100.0 * hit1 / n : 0.0;
  rep.topk = n > 0 ? 100.0 * hitk / n : 0.0;
  return rep;
}

EvalReport evaluate(const WeightedModel& m, const LabeledDataset& test, int k) {
  std::vector<Tensor> logits(test.size());
  parallel_for(test.size(), [&](size_t i) {
    logits[i] = forward(m, to_model_space(test.image(i)), Mode::Eval);
  });
  return evaluate_logits(logits, test.labels, test.num_classes, k);
}

json EvalReport::to_json() const {
  json j;
  j["top1"] = top1;
  j["topk"] = topk;
  j["k"] = k;
  j["per_class_total"] = per_class_total;
  j["per_class_top1"] = per_class_top1;
  if (!provenance.is_null()) j["provenance"] = provenance;
  return j;
}

// ---------------------------------------------------------------------------
// Shared SGD engine. Per-sample gradients land in fixed slots and are always
// reduced in slot order, so results do not depend on the worker count.
// ---------------------------------------------------------------------------

namespace {

class SgdLoop {
 public:
  SgdLoop(WeightedModel& m, const TrainConfig& cfg, const LrGroups& groups, size_t dataset_size,
          uint64_t loop_seed)
      : m_(m),
        cfg_(cfg),
        groups_(groups),
        n_(dataset_size),
        batch_(std::min<size_t>(cfg.batch_size, dataset_size)),
        shuffle_rng_(derive_seed(loop_seed, "shuffle")),
        dropout_seed_(derive_seed(loop_seed, "dropout")) {
    indices_.resize(n_);
    std::iota(indices_.begin(), indices_.end(), 0u);
    cursor_ = n_;  // force a shuffle on the first batch
    slots_.resize(batch_);
    losses_.assign(batch_, 0.0);
    hits1_.assign(batch_, -1);
    hitsk_.assign(batch_, -1);
    for (auto& g : slots_) g.init_like(m_);
    total_.init_like(m_);
    velocity_.init_like(m_);
  }

  /// sample_loss(dataset_index, slot_grads, rng, hit1, hitk) -> per-sample
  /// loss; classification closures set the hit flags, others leave them -1.
  using SampleFn = std::function<double(size_t, Gradients&, Rng&, int8_t*, int8_t*)>;

  FitResult run(int64_t iters, const SampleFn& sample_loss, MetricsWriter* metrics,
                const std::string& stage) {
    FitResult fit;
    const auto t0 = std::chrono::steady_clock::now();
    for (int64_t iter = 0; iter < iters; ++iter) {
      if (cursor_ + batch_ > n_) reshuffle();
      const size_t base = cursor_;
      cursor_ += batch_;

      parallel_for(batch_, [&](size_t s) {
        Rng rng(derive_seed(dropout_seed_,
                            static_cast<uint64_t>(iter) * batch_ + s));
        losses_[s] = sample_loss(indices_[base + s], slots_[s], rng, &hits1_[s], &hitsk_[s]);
      });

      double loss = 0.0;
      for (size_t s = 0; s < batch_; ++s) loss += losses_[s];
      loss /= static_cast<double>(batch_);
      if (!std::isfinite(loss))
        throw DivergenceError(stage + ": loss diverged (non-finite) at iteration " +
                              std::to_string(iter));

      total_.scale(0.0);
      for (size_t s = 0; s < batch_; ++s) total_.accumulate(slots_[s]);
      total_.scale(1.0 / static_cast<double>(batch_));

      const int first = groups_.freeze_prefix ? groups_.prefix_len : 0;
      for (size_t p = first; p < m_.weights.size(); ++p) {
        const double base_lr =
            static_cast<int>(p) < groups_.prefix_len ? groups_.prefix_lr : groups_.rest_lr;
        const double lr = lr_at(iter, base_lr, cfg_.lr_decay_interval, cfg_.lr_decay_factor);
        sgd_step(m_.weights[p], total_.weights[p], velocity_.weights[p], lr, cfg_.momentum);
        sgd_step(m_.biases[p], total_.biases[p], velocity_.biases[p], lr, cfg_.momentum);
      }

      fit.loss_history.push_back(loss);
      if (metrics && (iter % 50 == 0 || iter == iters - 1)) {
        const double wall =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();
        json line = {{"iter", iter},
                     {"split", "train"},
                     {"stage", stage},
                     {"loss", loss},
                     {"lr", lr_at(iter, groups_.rest_lr, cfg_.lr_decay_interval,
                                  cfg_.lr_decay_factor)},
                     {"wall_ms", wall}};
        if (hits1_[0] >= 0) {  // batch accuracy, classification loops only
          int h1 = 0, hk = 0;
          for (size_t s = 0; s < batch_; ++s) {
            h1 += hits1_[s];
            hk += hitsk_[s];
          }
          line["top1"] = 100.0 * h1 / static_cast<double>(batch_);
          line["topk"] = 100.0 * hk / static_cast<double>(batch_);
        }
        metrics->write(line);
      }
    }
    fit.iterations = iters;
    return fit;
  }

 private:
  void reshuffle() {
    for (size_t i = n_ - 1; i > 0; --i) {
      const size_t j = shuffle_rng_.uniform_int(i + 1);
      std::swap(indices_[i], indices_[j]);
    }
    cursor_ = 0;
  }

  WeightedModel& m_;
  const TrainConfig& cfg_;
  LrGroups groups_;
  size_t n_, batch_, cursor_ = 0;
  std::vector<uint32_t> indices_;
  Rng shuffle_rng_;
  uint64_t dropout_seed_;
  std::vector<Gradients> slots_;
  std::vector<double> losses_;
  std::vector<int8_t> hits1_, hitsk_;
  Gradients total_;
  Gradients velocity_;
};

Tensor slice_image(const Tensor& batch, size_t i) {
  const size_t per = batch.size() / batch.dim(0);
  return Tensor::from({batch.dim(1), batch.dim(2), batch.dim(3)},
                      std::vector<double>(batch.data() + i * per, batch.data() + (i + 1) * per));
}

}  // namespace

FitResult train_classifier(WeightedModel& m, const Tensor& images255,
                           const std::vector<int>& labels, const TrainConfig& cfg,
                           const LrGroups& groups, int64_t iters, uint64_t loop_seed,
                           MetricsWriter* metrics, const std::string& stage) {
  if (images255.rank() != 4 || images255.dim(0) != labels.size())
    throw std::invalid_argument("train_classifier: images must be [N,C,H,W] matching labels");
  SgdLoop loop(m, cfg, groups, labels.size(), loop_seed);
  const int frozen = groups.freeze_prefix ? groups.prefix_len : 0;
  return loop.run(
      iters,
      [&](size_t idx, Gradients& grads, Rng& rng, int8_t* hit1, int8_t* hitk) {
        const Tensor x = to_model_space(slice_image(images255, idx));
        ForwardTrace trace;
        const Tensor logits = forward(m, x, Mode::Train, &rng, &trace);
        LossResult loss = softmax_cross_entropy(logits, labels[idx]);
        backward(m, x, trace, loss.grad, grads, frozen);
        const std::vector<int> top = topk_indices(logits, 5);
        *hit1 = top[0] == labels[idx] ? 1 : 0;
        *hitk = std::find(top.begin(), top.end(), labels[idx]) != top.end() ? 1 : 0;
        return loss.loss;
      },
      metrics, stage);
}

FitResult train_reconstruction(WeightedModel& ms, const Tensor& lq255, const Tensor& hq255,
                               const TrainConfig& cfg, int64_t iters, uint64_t loop_seed,
                               MetricsWriter* metrics, const std::string& stage) {
  if (!lq255.same_shape(hq255) || lq255.rank() != 4)
    throw std::invalid_argument("train_reconstruction: lq/hq must be matching [N,C,H,W]");
  LrGroups groups;
  groups.prefix_len = 0;
  groups.rest_lr = cfg.sub_lr;
  SgdLoop loop(ms, cfg, groups, lq255.dim(0), loop_seed);
  return loop.run(
      iters,
      [&](size_t idx, Gradients& grads, Rng& rng, int8_t*, int8_t*) {
        const Tensor x = to_model_space(slice_image(lq255, idx));
        const Tensor target = to_model_space(slice_image(hq255, idx));
        ForwardTrace trace;
        const Tensor out = forward(ms, x, Mode::Train, &rng, &trace);
        LossResult loss = mse_loss(out, target);
        backward(ms, x, trace, loss.grad, grads);
        return loss.loss;
      },
      metrics, stage);
}

// ---------------------------------------------------------------------------
// RAP / ARAP and baselines. Stream tags are shared across entry points so
// the documented degeneracies (ARAP(a,a)=RAP(a), RAP with kp=0 = LQ) hold
// bit-exactly under a common seed.
// ---------------------------------------------------------------------------

WeightedModel arap(const ModelSpec& spec, const LabeledDataset& hq_train,
                   const DegradeTemplate& degrade, double alpha, double beta, int k, int kp,
                   const TrainConfig& cfg, RapArtifacts* artifacts, MetricsWriter* metrics) {
  if (beta < alpha)
    throw std::invalid_argument("arap: beta " + std::to_string(beta) +
                                " must be >= alpha " + std::to_string(alpha) +
                                " (larger adverse factor = severer degradation)");
  spec.validate();

  const uint64_t lq_seed = derive_seed(cfg.seed, "lq");
  const Tensor z = degrade_batch(hq_train.images, degrade.make(beta), lq_seed);
  const Tensor y =
      beta == alpha ? z : degrade_batch(hq_train.images, degrade.make(alpha), lq_seed);

  SubModelSpec sub = build_submodel(spec, k, kp, spec.in_channels);
  WeightedModel ms = init_weights(sub.spec, derive_seed(cfg.seed, "ms-init"));
  FitResult pre = train_reconstruction(ms, z, hq_train.images, cfg, cfg.pretrain_iters,
                                       derive_seed(cfg.seed, "ms-train"), metrics);

  WeightedModel m = init_weights(spec, derive_seed(cfg.seed, "m-init"));
  export_layers(ms, m, kp);
  if (artifacts) {
    artifacts->submodel = sub;
    artifacts->ms_trained = ms;
    artifacts->m_pretune = m;
    artifacts->pretrain_fit = pre;
  }

  LrGroups groups;
  groups.prefix_len = kp;
  groups.prefix_lr = cfg.joint_prefix_lr;
  groups.rest_lr = cfg.joint_rest_lr;
  FitResult tune = train_classifier(m, y, hq_train.labels, cfg, groups, cfg.tune_iters,
                                    derive_seed(cfg.seed, "m-tune"), metrics, "joint-tune");
  if (artifacts) artifacts->tune_fit = tune;
  return m;
}

WeightedModel rap(const ModelSpec& spec, const LabeledDataset& hq_train,
                  const DegradeTemplate& degrade, double alpha, int k, int kp,
                  const TrainConfig& cfg, RapArtifacts* artifacts, MetricsWriter* metrics) {
  return arap(spec, hq_train, degrade, alpha, alpha, k, kp, cfg, artifacts, metrics);
}

WeightedModel train_baseline(const ModelSpec& spec, const LabeledDataset& hq_train,
                             const DegradeTemplate& degrade, double alpha, int k, int kp,
                             const TrainConfig& cfg, BaselineMode mode, RapArtifacts* artifacts,
                             MetricsWriter* metrics) {
  spec.validate();
  const uint64_t lq_seed = derive_seed(cfg.seed, "lq");

  if (mode == BaselineMode::HQ) {
    WeightedModel m = init_weights(spec, derive_seed(cfg.seed, "m-init"));
    LrGroups groups;
    groups.rest_lr = cfg.joint_rest_lr;
    FitResult fit = train_classifier(m, hq_train.images, hq_train.labels, cfg, groups,
                                     cfg.tune_iters, derive_seed(cfg.seed, "m-tune"), metrics,
                                     "hq-train");
    if (artifacts) artifacts->tune_fit = fit;
    return m;
  }

  const Tensor y = degrade_batch(hq_train.images, degrade.make(alpha), lq_seed);
  if (mode == BaselineMode::LQ) {
    WeightedModel m = init_weights(spec, derive_seed(cfg.seed, "m-init"));
    LrGroups groups;
    groups.rest_lr = cfg.joint_rest_lr;
    FitResult fit = train_classifier(m, y, hq_train.labels, cfg, groups, cfg.tune_iters,
                                     derive_seed(cfg.seed, "m-tune"), metrics, "lq-train");
    if (artifacts) artifacts->tune_fit = fit;
    return m;
  }

  // RapNonJoint: pre-train and export exactly as RAP would, then train only
  // the remaining layers with the exported prefix fixed.
  SubModelSpec sub = build_submodel(spec, k, kp, spec.in_channels);
  WeightedModel ms = init_weights(sub.spec, derive_seed(cfg.seed, "ms-init"));
  FitResult pre = train_reconstruction(ms, y, hq_train.images, cfg, cfg.pretrain_iters,
                                       derive_seed(cfg.seed, "ms-train"), metrics);
  WeightedModel m = init_weights(spec, derive_seed(cfg.seed, "m-init"));
  export_layers(ms, m, kp);
  if (artifacts) {
    artifacts->submodel = sub;
    artifacts->ms_trained = ms;
    artifacts->m_pretune = m;
    artifacts->pretrain_fit = pre;
  }
  LrGroups groups;
  groups.prefix_len = kp;
  groups.prefix_lr = cfg.joint_prefix_lr;
  groups.rest_lr = cfg.joint_rest_lr;
  groups.freeze_prefix = true;
  FitResult tune = train_classifier(m, y, hq_train.labels, cfg, groups, cfg.tune_iters,
                                    derive_seed(cfg.seed, "m-tune"), metrics, "non-joint-tune");
  if (artifacts) artifacts->tune_fit = tune;
  return m;
}

Tensor visualize_features(const WeightedModel& model, const WeightedModel& ms, int kp,
                          const Tensor& image255) {
  const Tensor x = to_model_space(image255);
  Tensor cur = forward_prefix(model, x, kp);

  // The sub-model's prefix is kp convs, each followed by a relu; the frozen
  // reconstruction tail is everything after.
  size_t start = 0;
  size_t p = 0;
  if (kp > 0) {
    int conv_seen = 0;
    for (size_t i = 0; i < ms.spec.layers.size(); ++i) {
      if (ms.spec.layers[i].op == LayerOp::Conv && ++conv_seen == kp) {
        start = i + 1;
        if (start < ms.spec.layers.size() && ms.spec.layers[start].op == LayerOp::Relu)
          ++start;
        break;
      }
    }
    p = static_cast<size_t>(kp);
  }
  for (size_t i = start; i < ms.spec.layers.size(); ++i) {
    const LayerKind& l = ms.spec.layers[i];
    switch (l.op) {
      case LayerOp::Conv:
        cur = conv2d_forward(cur, ms.weights[p], ms.biases[p]);
        ++p;
        break;
      case LayerOp::Relu:
        cur = relu_forward(cur);
        break;
      default:
        throw std::invalid_argument("visualize_features: unsupported layer in sub-model tail");
    }
  }
  return cur;
}

}  // namespace advtrain
