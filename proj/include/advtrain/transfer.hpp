#pragma once

#include <string>

#include "advtrain/data_io.hpp"
#include "advtrain/degrade.hpp"
#include "advtrain/train.hpp"

namespace advtrain {

/// Transfer setup: learn robust features on a clean source dataset with an
/// overestimated adverse factor beta', then move the shared prefix into a
/// model tuned on the real-degraded target data. The target carries no
/// clean/degraded pairing anywhere in this interface.
struct TransferPlan {
  ModelSpec source_spec;  // M
  ModelSpec target_spec;  // M'; first kp conv layers must match M's
  DegradeTemplate degrade{"lowres"};
  double beta_prime = 4.0;
  int k = 3;
  int kp = 2;
  TrainConfig source_cfg;
  TrainConfig target_cfg;

  static TransferPlan from_json(const json& j);
  json to_json() const;
};

struct TransferResult {
  WeightedModel model;         // tuned M'
  WeightedModel source_model;  // the source-stage model the prefix came from
  json provenance;             // beta', configs, source model hash
};

/// Hash of a model's weight payload (layer order, weights then biases).
std::string weights_hash(const WeightedModel& m);

/// Full pipeline: RAP with beta' on the source (pre-train, export, joint
/// tune), export the first kp layers of the tuned source model into M', then
/// tune M' end to end on the target data.
TransferResult t_arap(const TransferPlan& plan, const LabeledDataset& source_hq,
                      const LabeledDataset& target_lq, MetricsWriter* metrics = nullptr);

/// Ablation: transfers the prefix of the untuned sub-model instead, skipping
/// the source joint-tuning stage.
TransferResult t_arap_non_joint(const TransferPlan& plan, const LabeledDataset& source_hq,
                                const LabeledDataset& target_lq,
                                MetricsWriter* metrics = nullptr);

/// Classical unsupervised layer-wise pre-training baseline: each conv layer
/// is trained as a one-layer autoencoder on its own input (the frozen stack
/// below feeding it target data), then the whole model is tuned supervised.
/// cfg.pretrain_iters is the per-layer autoencoder budget; with a zero budget
/// this reduces to direct training bit-exactly.
WeightedModel layerwise_pretrain_baseline(const ModelSpec& target_spec,
                                          const LabeledDataset& target_lq,
                                          const TrainConfig& cfg,
                                          MetricsWriter* metrics = nullptr);

/// Direct end-to-end training on the target data (the LQ_d reference arm).
WeightedModel direct_baseline(const ModelSpec& target_spec, const LabeledDataset& target_lq,
                              const TrainConfig& cfg, MetricsWriter* metrics = nullptr);

// ---------------------------------------------------------------------------
// Four-way comparison on a target test split.
// ---------------------------------------------------------------------------

struct TransferComparison {
  EvalReport lq_d, lq_p, non_joint, with_tuning;
  json to_json() const;
  std::string text_table() const;
};

TransferComparison run_transfer_comparison(const TransferPlan& plan,
                                           const LabeledDataset& source_hq,
                                           const LabeledDataset& target_train,
                                           const LabeledDataset& target_test,
                                           MetricsWriter* metrics = nullptr);

/// Scans beta' downward from `beta_max` in steps of `step`, reporting the
/// target top-1/top-k per point.
json scan_beta(const TransferPlan& plan, const LabeledDataset& source_hq,
               const LabeledDataset& target_train, const LabeledDataset& target_test,
               double beta_max, double step);

}  // namespace advtrain
