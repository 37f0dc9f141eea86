#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "advtrain/data_io.hpp"
#include "advtrain/degrade.hpp"
#include "advtrain/model.hpp"

namespace advtrain {

/// Training loss left the finite range; carries the iteration diagnostic.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double sub_lr = 1e-4;           // reconstruction pre-training
  double joint_prefix_lr = 1e-3;  // first kp layers during joint tuning
  double joint_rest_lr = 1e-2;    // remaining layers
  double lr_decay_factor = 10.0;
  int64_t lr_decay_interval = 5000;  // iterations
  double momentum = 0.9;
  int batch_size = 64;
  int64_t pretrain_iters = 0;
  int64_t tune_iters = 0;
  uint64_t seed = 0;

  json to_json() const;
  static TrainConfig from_json(const json& j);
};

/// Piecewise-constant step decay: base / factor^floor(iter/interval).
double lr_at(int64_t iter, double base, int64_t interval, double factor = 10.0);

/// v <- momentum*v - lr*g; w <- w + v.
void sgd_step(Tensor& w, const Tensor& g, Tensor& v, double lr, double momentum);

/// Images enter the models scaled into [0,1].
Tensor to_model_space(const Tensor& img255);
Tensor from_model_space(const Tensor& unit);

/// Peak signal-to-noise ratio in dB over all elements.
double psnr(const Tensor& a, const Tensor& b, double peak);

// ---------------------------------------------------------------------------
// Evaluation.
// ---------------------------------------------------------------------------

struct EvalReport {
  double top1 = 0.0, topk = 0.0;  // percent
  int k = 5;
  std::vector<int> per_class_total;
  std::vector<int> per_class_top1;
  json provenance;

  json to_json() const;
};

/// Class indices of the k largest logits, ties broken by lower class index.
/// k is clipped to the class count.
std::vector<int> topk_indices(const Tensor& logits, int k);

EvalReport evaluate_logits(const std::vector<Tensor>& logits, const std::vector<int>& labels,
                           int num_classes, int k = 5);

/// Eval-mode forward over the whole split; thread-shardable, the report is
/// independent of the shard layout.
EvalReport evaluate(const WeightedModel& m, const LabeledDataset& test, int k = 5);

// ---------------------------------------------------------------------------
// Training loops. All loops derive their random streams from the given
/// loop_seed, so identical (config, seed) reruns are bit-identical.
// ---------------------------------------------------------------------------

struct FitResult {
  std::vector<double> loss_history;  // one entry per iteration (batch mean)
  int64_t iterations = 0;
};

struct LrGroups {
  int prefix_len = 0;       // parametric layers [0, prefix_len) form the prefix
  double prefix_lr = 0.0;
  double rest_lr = 0.0;
  bool freeze_prefix = false;
};

/// Cross-entropy SGD over (images, labels). Honors per-group learning rates
/// and an optionally frozen prefix. Throws DivergenceError on non-finite loss.
FitResult train_classifier(WeightedModel& m, const Tensor& images255,
                           const std::vector<int>& labels, const TrainConfig& cfg,
                           const LrGroups& groups, int64_t iters, uint64_t loop_seed,
                           MetricsWriter* metrics = nullptr, const std::string& stage = "tune");

/// MSE SGD mapping lq -> hq (both [N,C,H,W] in [0,255]).
FitResult train_reconstruction(WeightedModel& ms, const Tensor& lq255, const Tensor& hq255,
                               const TrainConfig& cfg, int64_t iters, uint64_t loop_seed,
                               MetricsWriter* metrics = nullptr,
                               const std::string& stage = "ms-pretrain");

// ---------------------------------------------------------------------------
// Robust adverse pre-training.
// ---------------------------------------------------------------------------

struct RapArtifacts {
  SubModelSpec submodel;
  WeightedModel ms_trained;   // after reconstruction pre-training
  WeightedModel m_pretune;    // after export, before joint tuning
  FitResult pretrain_fit, tune_fit;
};

/// Aggressive variant: the sub-model pre-trains on factor beta while joint
/// tuning sees factor alpha (beta >= alpha; equal factors reduce to plain
/// robust adverse pre-training bit-exactly).
WeightedModel arap(const ModelSpec& spec, const LabeledDataset& hq_train,
                   const DegradeTemplate& degrade, double alpha, double beta, int k, int kp,
                   const TrainConfig& cfg, RapArtifacts* artifacts = nullptr,
                   MetricsWriter* metrics = nullptr);

WeightedModel rap(const ModelSpec& spec, const LabeledDataset& hq_train,
                  const DegradeTemplate& degrade, double alpha, int k, int kp,
                  const TrainConfig& cfg, RapArtifacts* artifacts = nullptr,
                  MetricsWriter* metrics = nullptr);

enum class BaselineMode { HQ, LQ, RapNonJoint };

/// HQ / LQ train end to end on clean / degraded data; RapNonJoint pre-trains
/// the sub-model, exports, then trains only the remaining layers with the
/// exported prefix fixed.
WeightedModel train_baseline(const ModelSpec& spec, const LabeledDataset& hq_train,
                             const DegradeTemplate& degrade, double alpha, int k, int kp,
                             const TrainConfig& cfg, BaselineMode mode,
                             RapArtifacts* artifacts = nullptr,
                             MetricsWriter* metrics = nullptr);

// ---------------------------------------------------------------------------
// Feature visualization: run the image through the first kp layers of
// `model`, then through the frozen reconstruction tail of `ms`. With a
// freshly exported, untuned model this reproduces the sub-model's own
// reconstruction bit for bit.
// ---------------------------------------------------------------------------

Tensor visualize_features(const WeightedModel& model, const WeightedModel& ms, int kp,
                          const Tensor& image255);

}  // namespace advtrain
