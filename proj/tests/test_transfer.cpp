#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "advtrain/transfer.hpp"

using namespace advtrain;

namespace {

ModelSpec small_spec(int classes, int size = 16) {
  ModelConfig cfg;
  cfg.in_channels = 1;
  cfg.in_h = cfg.in_w = size;
  cfg.num_classes = classes;
  cfg.conv = {{6, 5}, {6, 3}, {6, 3}};
  cfg.fc = {classes};
  return build_model_spec(cfg);
}

TrainConfig quick_cfg(uint64_t seed, int64_t pre, int64_t tune) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.batch_size = 8;
  cfg.sub_lr = 2e-3;
  cfg.joint_prefix_lr = 2e-3;
  cfg.joint_rest_lr = 2e-2;
  cfg.pretrain_iters = pre;
  cfg.tune_iters = tune;
  return cfg;
}

TransferPlan small_plan(uint64_t seed) {
  TransferPlan plan;
  plan.source_spec = small_spec(4);
  plan.target_spec = small_spec(4);
  plan.degrade = DegradeTemplate("lowres:{a}");
  plan.beta_prime = 2;
  plan.k = 3;
  plan.kp = 2;
  plan.source_cfg = quick_cfg(seed, 25, 25);
  plan.target_cfg = quick_cfg(seed, 0, 25);
  return plan;
}

}  // namespace

TEST_CASE("t_arap degenerates to rap when target = source LQ and beta' = alpha") {
  // Zero source joint tuning makes the transferred prefix the sub-model
  // prefix itself; with shared seeds the whole pipeline then replays RAP.
  LabeledDataset source = synth_shapes(4, 48, 16, 901);
  TransferPlan plan = small_plan(77);
  plan.source_cfg.tune_iters = 0;

  LabeledDataset target = source;
  target.images =
      degrade_batch(source.images, plan.degrade.make(plan.beta_prime),
                    derive_seed(plan.source_cfg.seed, "lq"));

  TransferResult res = t_arap(plan, source, target);

  TrainConfig rap_cfg = plan.source_cfg;
  rap_cfg.tune_iters = plan.target_cfg.tune_iters;
  WeightedModel reference =
      rap(plan.source_spec, source, plan.degrade, plan.beta_prime, plan.k, plan.kp, rap_cfg);
  CHECK(res.model == reference);
}

TEST_CASE("t_arap_non_joint") {
  LabeledDataset source = synth_shapes(4, 48, 16, 902);
  LabeledDataset target = synth_shapes(4, 40, 16, 903);
  TransferPlan plan = small_plan(88);

  SUBCASE("exported prefix is bit-identical to the source sub-model prefix") {
    TransferPlan p = plan;
    p.target_cfg.tune_iters = 0;
    TransferResult res = t_arap_non_joint(p, source, target);
    CHECK(res.model.weights[0] == res.source_model.weights[0]);
    CHECK(res.model.weights[1] == res.source_model.weights[1]);
    CHECK(res.model.biases[0] == res.source_model.biases[0]);
  }
  SUBCASE("differs from t_arap only in the exported prefix at initialization") {
    TransferPlan p = plan;
    p.target_cfg.tune_iters = 0;
    TransferResult nj = t_arap_non_joint(p, source, target);
    TransferResult full = t_arap(p, source, target);
    // Same fresh init beyond the prefix.
    CHECK(nj.model.weights[2] == full.model.weights[2]);
    CHECK(nj.model.weights[3] == full.model.weights[3]);
    // Prefixes differ once the source stage tunes.
    CHECK(nj.model.weights[0] != full.model.weights[0]);
  }
  SUBCASE("provenance links the source stage") {
    TransferResult res = t_arap_non_joint(plan, source, target);
    CHECK(res.provenance["method"] == "t-arap-non-joint");
    CHECK(res.provenance["source_model_hash"] == weights_hash(res.source_model));
    CHECK(res.provenance["beta_prime"] == plan.beta_prime);
  }
}

TEST_CASE("prefix compatibility is enforced") {
  LabeledDataset source = synth_shapes(4, 24, 16, 904);
  LabeledDataset target = synth_shapes(4, 24, 16, 905);
  TransferPlan plan = small_plan(99);
  ModelConfig cfg;
  cfg.in_channels = 1;
  cfg.in_h = cfg.in_w = 16;
  cfg.num_classes = 4;
  cfg.conv = {{6, 5}, {12, 3}, {6, 3}};  // second conv differs
  cfg.fc = {4};
  plan.target_spec = build_model_spec(cfg);
  CHECK_THROWS_WITH_AS(t_arap(plan, source, target), doctest::Contains("conv layer 2"),
                       std::invalid_argument);
}

TEST_CASE("layerwise pretraining baseline") {
  LabeledDataset target = synth_shapes(4, 40, 16, 906);
  const ModelSpec spec = small_spec(4);

  SUBCASE("zero autoencoder budget reduces to direct training bit-exactly") {
    TrainConfig cfg = quick_cfg(111, 0, 25);
    WeightedModel lq_p = layerwise_pretrain_baseline(spec, target, cfg);
    WeightedModel lq_d = direct_baseline(spec, target, cfg);
    CHECK(lq_p == lq_d);
  }
  SUBCASE("autoencoding moves the conv layers before supervised tuning") {
    TrainConfig cfg = quick_cfg(112, 40, 0);
    WeightedModel m = layerwise_pretrain_baseline(spec, target, cfg);
    WeightedModel init = init_weights(spec, derive_seed(cfg.seed, "m-init"));
    CHECK(m.weights[0] != init.weights[0]);
    CHECK(m.weights[1] != init.weights[1]);
    CHECK(m.weights[2] != init.weights[2]);
    CHECK(m.weights[3] == init.weights[3]);  // fc untouched by the greedy stage
  }
  SUBCASE("single-conv model reduces to one autoencoder plus classifier head") {
    ModelConfig mc;
    mc.in_channels = 1;
    mc.in_h = mc.in_w = 16;
    mc.num_classes = 4;
    mc.conv = {{6, 5}};
    mc.fc = {4};
    TrainConfig cfg = quick_cfg(113, 30, 20);
    WeightedModel m = layerwise_pretrain_baseline(build_model_spec(mc), target, cfg);
    CHECK(m.weights.size() == 2);
  }
}

TEST_CASE("four-way comparison table") {
  LabeledDataset source = synth_shapes(4, 32, 16, 907);
  LabeledDataset target_train = synth_shapes(4, 32, 16, 908);
  LabeledDataset target_test = synth_shapes(4, 16, 16, 909);
  TransferPlan plan = small_plan(121);
  plan.source_cfg = quick_cfg(121, 15, 15);
  plan.target_cfg = quick_cfg(121, 10, 15);

  TransferComparison cmp =
      run_transfer_comparison(plan, source, target_train, target_test);
  const json j = cmp.to_json();
  for (const char* key : {"lq_d", "lq_p", "t_arap_non_joint", "t_arap"}) {
    CHECK(j.contains(key));
    CHECK(j[key]["top1"].get<double>() >= 0.0);
    CHECK(j[key]["top1"].get<double>() <= 100.0);
  }
  const std::string table = cmp.text_table();
  CHECK(table.find("T-ARAP") != std::string::npos);
  CHECK(table.find("Top-1") != std::string::npos);
}

TEST_CASE("desk-scale transfer: t_arap beats direct training on a scarce low-res target") {
  // Clean source, target rendered at lowres 2, plan overestimates with beta' 4.
  const ModelSpec spec = small_spec(4, 32);
  LabeledDataset source = synth_shapes(4, 1200, 32, 7001);
  LabeledDataset target_hq = synth_shapes(4, 128, 32, 8001);
  LabeledDataset test_hq = synth_shapes(4, 200, 32, 8002);
  const DegradeTemplate lr("lowres:{a}");
  LabeledDataset target = target_hq;
  target.images = degrade_batch(target_hq.images, lr.make(2), 8100);
  LabeledDataset target_test = test_hq;
  target_test.images = degrade_batch(test_hq.images, lr.make(2), 8101);

  double t_mean = 0.0, d_mean = 0.0;
  for (uint64_t seed : {21ull, 22ull, 23ull}) {
    TransferPlan plan;
    plan.source_spec = spec;
    plan.target_spec = spec;
    plan.degrade = lr;
    plan.beta_prime = 4;
    plan.k = 3;
    plan.kp = 2;
    plan.source_cfg = quick_cfg(seed, 500, 400);
    plan.source_cfg.batch_size = 16;
    plan.source_cfg.sub_lr = 3e-3;
    plan.source_cfg.lr_decay_interval = 200;
    plan.target_cfg = plan.source_cfg;
    plan.target_cfg.tune_iters = 300;

    t_mean += evaluate(t_arap(plan, source, target).model, target_test).top1 / 3.0;
    d_mean += evaluate(direct_baseline(spec, target, plan.target_cfg), target_test).top1 / 3.0;
  }
  MESSAGE("transfer desk run: T-ARAP ", t_mean, " vs direct ", d_mean);
  CHECK(t_mean >= d_mean);
}

TEST_CASE("transfer plan json round trip") {
  TransferPlan plan = small_plan(131);
  TransferPlan back = TransferPlan::from_json(plan.to_json());
  CHECK(back.beta_prime == plan.beta_prime);
  CHECK(back.k == plan.k);
  CHECK(back.kp == plan.kp);
  CHECK(back.source_spec == plan.source_spec);
  CHECK(back.target_spec == plan.target_spec);
  CHECK(back.degrade.text() == plan.degrade.text());
  CHECK(back.source_cfg.seed == plan.source_cfg.seed);
}
