#include "advtrain/transfer.hpp"

#include <cstring>
#include <numeric>
#include <sstream>

namespace advtrain {

namespace {

void check_prefix_compat(const TransferPlan& plan) {
  const auto source_convs = [&] {
    std::vector<LayerKind> v;
    for (const LayerKind& l : plan.source_spec.layers)
      if (l.op == LayerOp::Conv) v.push_back(l);
    return v;
  }();
  const auto target_convs = [&] {
    std::vector<LayerKind> v;
    for (const LayerKind& l : plan.target_spec.layers)
      if (l.op == LayerOp::Conv) v.push_back(l);
    return v;
  }();
  if (static_cast<int>(source_convs.size()) < plan.kp ||
      static_cast<int>(target_convs.size()) < plan.kp)
    throw std::invalid_argument("transfer: kp exceeds a model's conv layer count");
  if (plan.source_spec.in_channels != plan.target_spec.in_channels)
    throw std::invalid_argument("transfer: source/target input channels differ");
  for (int i = 0; i < plan.kp; ++i) {
    if (!(source_convs[i] == target_convs[i]))
      throw std::invalid_argument("transfer: prefix shape mismatch at conv layer " +
                                  std::to_string(i + 1));
  }
}

WeightedModel tune_target(const TransferPlan& plan, WeightedModel m,
                          const LabeledDataset& target, MetricsWriter* metrics,
                          const std::string& stage) {
  LrGroups groups;
  groups.prefix_len = plan.kp;
  groups.prefix_lr = plan.target_cfg.joint_prefix_lr;
  groups.rest_lr = plan.target_cfg.joint_rest_lr;
  train_classifier(m, target.images, target.labels, plan.target_cfg, groups,
                   plan.target_cfg.tune_iters, derive_seed(plan.target_cfg.seed, "m-tune"),
                   metrics, stage);
  return m;
}

}  // namespace

std::string weights_hash(const WeightedModel& m) {
  std::string payload;
  payload.reserve(1024);
  auto append = [&payload](const Tensor& t) {
    for (size_t i = 0; i < t.size(); ++i) {
      const double v = t[i];
      char buf[8];
      std::memcpy(buf, &v, 8);
      payload.append(buf, 8);
    }
  };
  for (size_t i = 0; i < m.weights.size(); ++i) {
    append(m.weights[i]);
    append(m.biases[i]);
  }
  return bytes_hash(payload.data(), payload.size());
}

json TransferPlan::to_json() const {
  return {{"degrade", degrade.text()},
          {"beta_prime", beta_prime},
          {"k", k},
          {"kp", kp},
          {"source_model", model_spec_to_json(source_spec)},
          {"target_model", model_spec_to_json(target_spec)},
          {"source_train", source_cfg.to_json()},
          {"target_train", target_cfg.to_json()}};
}

TransferPlan TransferPlan::from_json(const json& j) {
  try {
    TransferPlan plan;
    plan.degrade = DegradeTemplate(j.at("degrade").get<std::string>());
    plan.beta_prime = j.at("beta_prime").get<double>();
    plan.k = j.value("k", 3);
    plan.kp = j.value("kp", 2);
    plan.source_spec = model_spec_from_json(j.at("source_model"));
    plan.target_spec = model_spec_from_json(j.at("target_model"));
    plan.source_cfg = TrainConfig::from_json(j.value("source_train", json::object()));
    plan.target_cfg = TrainConfig::from_json(j.value("target_train", json::object()));
    return plan;
  } catch (const json::exception& e) {
    throw DataError(std::string("bad transfer plan: ") + e.what());
  }
}

TransferResult t_arap(const TransferPlan& plan, const LabeledDataset& source_hq,
                      const LabeledDataset& target_lq, MetricsWriter* metrics) {
  check_prefix_compat(plan);

  RapArtifacts art;
  WeightedModel source = rap(plan.source_spec, source_hq, plan.degrade, plan.beta_prime,
                             plan.k, plan.kp, plan.source_cfg, &art, metrics);

  WeightedModel m = init_weights(plan.target_spec, derive_seed(plan.target_cfg.seed, "m-init"));
  export_layers(source, m, plan.kp);

  TransferResult res;
  res.model = tune_target(plan, std::move(m), target_lq, metrics, "transfer-tune");
  res.source_model = std::move(source);
  res.provenance = {{"method", "t-arap"},
                    {"beta_prime", plan.beta_prime},
                    {"kp", plan.kp},
                    {"k", plan.k},
                    {"source_model_hash", weights_hash(res.source_model)},
                    {"plan", plan.to_json()}};
  return res;
}

TransferResult t_arap_non_joint(const TransferPlan& plan, const LabeledDataset& source_hq,
                                const LabeledDataset& target_lq, MetricsWriter* metrics) {
  check_prefix_compat(plan);

  // Pre-train the sub-model exactly as the full pipeline would, but skip the
  // source joint-tuning stage and export the untuned prefix.
  const uint64_t lq_seed = derive_seed(plan.source_cfg.seed, "lq");
  const Tensor z = degrade_batch(source_hq.images, plan.degrade.make(plan.beta_prime), lq_seed);
  SubModelSpec sub =
      build_submodel(plan.source_spec, plan.k, plan.kp, plan.source_spec.in_channels);
  WeightedModel ms = init_weights(sub.spec, derive_seed(plan.source_cfg.seed, "ms-init"));
  train_reconstruction(ms, z, source_hq.images, plan.source_cfg, plan.source_cfg.pretrain_iters,
                       derive_seed(plan.source_cfg.seed, "ms-train"), metrics);

  WeightedModel m = init_weights(plan.target_spec, derive_seed(plan.target_cfg.seed, "m-init"));
  export_layers(ms, m, plan.kp);

  TransferResult res;
  res.model = tune_target(plan, std::move(m), target_lq, metrics, "transfer-non-joint-tune");
  res.source_model = std::move(ms);
  res.provenance = {{"method", "t-arap-non-joint"},
                    {"beta_prime", plan.beta_prime},
                    {"kp", plan.kp},
                    {"k", plan.k},
                    {"source_model_hash", weights_hash(res.source_model)},
                    {"plan", plan.to_json()}};
  return res;
}

WeightedModel direct_baseline(const ModelSpec& target_spec, const LabeledDataset& target_lq,
                              const TrainConfig& cfg, MetricsWriter* metrics) {
  WeightedModel m = init_weights(target_spec, derive_seed(cfg.seed, "m-init"));
  LrGroups groups;
  groups.rest_lr = cfg.joint_rest_lr;
  train_classifier(m, target_lq.images, target_lq.labels, cfg, groups, cfg.tune_iters,
                   derive_seed(cfg.seed, "m-tune"), metrics, "direct-train");
  return m;
}

WeightedModel layerwise_pretrain_baseline(const ModelSpec& target_spec,
                                          const LabeledDataset& target_lq,
                                          const TrainConfig& cfg, MetricsWriter* metrics) {
  target_spec.validate();
  WeightedModel m = init_weights(target_spec, derive_seed(cfg.seed, "m-init"));
  const int d1 = target_spec.conv_count();

  // Greedy stage: autoencode each conv layer's input, frozen stack below.
  for (int layer = 0; layer < d1 && cfg.pretrain_iters > 0; ++layer) {
    const size_t in_channels =
        layer == 0 ? static_cast<size_t>(target_spec.in_channels) : m.weights[layer].dim(1);

    ModelSpec ae_spec;
    ae_spec.in_channels = static_cast<int>(in_channels);
    // Spatial size of this layer's input (pooling may have shrunk it).
    {
      int h = target_spec.in_h, w = target_spec.in_w;
      int seen = 0;
      for (const LayerKind& l : target_spec.layers) {
        if (l.op == LayerOp::Conv && seen == layer) break;
        if (l.op == LayerOp::Conv) ++seen;
        if (l.op == LayerOp::MaxPool) {
          h /= 2;
          w /= 2;
        }
      }
      ae_spec.in_h = h;
      ae_spec.in_w = w;
    }
    int kernel = 0, filters = 0, seen = 0;
    for (const LayerKind& l : target_spec.layers)
      if (l.op == LayerOp::Conv && seen++ == layer) {
        kernel = l.kernel;
        filters = l.out_channels;
        break;
      }
    ae_spec.layers = {LayerKind::conv(filters, kernel), LayerKind::relu(),
                      LayerKind::conv(static_cast<int>(in_channels), 5)};
    WeightedModel ae = init_weights(
        ae_spec, derive_seed(cfg.seed, "ae-dec-" + std::to_string(layer)));
    ae.weights[0] = m.weights[layer];
    ae.biases[0] = m.biases[layer];

    // Plain SGD over single samples of the layer input.
    Tensor vel_w0(ae.weights[0].shape()), vel_b0(ae.biases[0].shape());
    Tensor vel_w1(ae.weights[1].shape()), vel_b1(ae.biases[1].shape());
    Rng shuffle(derive_seed(cfg.seed, "ae-shuffle-" + std::to_string(layer)));
    std::vector<uint32_t> order(target_lq.size());
    std::iota(order.begin(), order.end(), 0u);
    size_t cursor = order.size();

    for (int64_t iter = 0; iter < cfg.pretrain_iters; ++iter) {
      if (cursor >= order.size()) {
        for (size_t i = order.size() - 1; i > 0; --i) {
          const size_t j = shuffle.uniform_int(i + 1);
          std::swap(order[i], order[j]);
        }
        cursor = 0;
      }
      const Tensor x0 = to_model_space(target_lq.image(order[cursor++]));
      const Tensor x = forward_prefix(m, x0, layer);

      ForwardTrace trace;
      const Tensor out = forward(ae, x, Mode::Eval, nullptr, &trace);
      LossResult loss = mse_loss(out, x);
      if (!std::isfinite(loss.loss))
        throw DivergenceError("layerwise pretrain: loss diverged at layer " +
                              std::to_string(layer + 1) + ", iteration " + std::to_string(iter));
      Gradients grads;
      backward(ae, x, trace, loss.grad, grads);
      const double lr = lr_at(iter, cfg.sub_lr, cfg.lr_decay_interval, cfg.lr_decay_factor);
      sgd_step(ae.weights[0], grads.weights[0], vel_w0, lr, cfg.momentum);
      sgd_step(ae.biases[0], grads.biases[0], vel_b0, lr, cfg.momentum);
      sgd_step(ae.weights[1], grads.weights[1], vel_w1, lr, cfg.momentum);
      sgd_step(ae.biases[1], grads.biases[1], vel_b1, lr, cfg.momentum);
      if (metrics && iter % 100 == 0)
        metrics->write({{"iter", iter},
                        {"split", "train"},
                        {"stage", "layerwise-ae-" + std::to_string(layer + 1)},
                        {"loss", loss.loss},
                        {"lr", lr}});
    }
    m.weights[layer] = ae.weights[0];
    m.biases[layer] = ae.biases[0];
  }

  // Supervised stage, identical to direct training.
  LrGroups groups;
  groups.rest_lr = cfg.joint_rest_lr;
  train_classifier(m, target_lq.images, target_lq.labels, cfg, groups, cfg.tune_iters,
                   derive_seed(cfg.seed, "m-tune"), metrics, "layerwise-tune");
  return m;
}

json TransferComparison::to_json() const {
  return {{"lq_d", lq_d.to_json()},
          {"lq_p", lq_p.to_json()},
          {"t_arap_non_joint", non_joint.to_json()},
          {"t_arap", with_tuning.to_json()}};
}

std::string TransferComparison::text_table() const {
  std::ostringstream os;
  auto row = [&os](const std::string& name, double a, double b, double c, double d) {
    os << name;
    for (double v : {a, b, c, d}) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%10.2f", v);
      os << buf;
    }
    os << "\n";
  };
  os << "          LQ_d      LQ_p      T-ARAP-nj T-ARAP\n";
  row("Top-1 ", lq_d.top1, lq_p.top1, non_joint.top1, with_tuning.top1);
  row("Top-" + std::to_string(with_tuning.k) + " ", lq_d.topk, lq_p.topk, non_joint.topk,
      with_tuning.topk);
  return os.str();
}

TransferComparison run_transfer_comparison(const TransferPlan& plan,
                                           const LabeledDataset& source_hq,
                                           const LabeledDataset& target_train,
                                           const LabeledDataset& target_test,
                                           MetricsWriter* metrics) {
  TransferComparison cmp;
  cmp.lq_d = evaluate(direct_baseline(plan.target_spec, target_train, plan.target_cfg, metrics),
                      target_test);
  cmp.lq_p = evaluate(
      layerwise_pretrain_baseline(plan.target_spec, target_train, plan.target_cfg, metrics),
      target_test);
  cmp.non_joint =
      evaluate(t_arap_non_joint(plan, source_hq, target_train, metrics).model, target_test);
  cmp.with_tuning = evaluate(t_arap(plan, source_hq, target_train, metrics).model, target_test);
  return cmp;
}

json scan_beta(const TransferPlan& plan, const LabeledDataset& source_hq,
               const LabeledDataset& target_train, const LabeledDataset& target_test,
               double beta_max, double step) {
  if (step <= 0) throw std::invalid_argument("scan_beta: step must be positive");
  json curve = json::array();
  for (double beta = beta_max; beta >= 1.0; beta -= step) {
    TransferPlan p = plan;
    p.beta_prime = beta;
    const EvalReport rep = evaluate(t_arap(p, source_hq, target_train, nullptr).model,
                                    target_test);
    curve.push_back({{"beta_prime", beta}, {"top1", rep.top1}, {"topk", rep.topk}});
  }
  return curve;
}

}  // namespace advtrain
