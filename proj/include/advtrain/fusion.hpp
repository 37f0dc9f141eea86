#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "advtrain/data_io.hpp"
#include "advtrain/model.hpp"
#include "advtrain/train.hpp"

namespace advtrain {

// ---------------------------------------------------------------------------
// Clips.
// ---------------------------------------------------------------------------

struct Clip {
  Tensor frames;  // [(2T+1), C, H, W]
  std::string video_id;
  int start = 0;
  int label = 0;  // the source video's label
};

/// Dense sampling: clips of 2T+1 contiguous frames starting at 0, stride,
/// 2*stride, ... Requires the video to hold at least 2T+1 frames.
std::vector<Clip> extract_clips(const VideoSample& video, int T, int stride = 1);

// ---------------------------------------------------------------------------
// Temporal fusion by weight transfer from a single-frame model.
// ---------------------------------------------------------------------------

enum class FusionKind { Early, Slow };

/// A clip model built from a single-frame recognizer.
///
/// Early fusion merges frames at conv1: the stacked model's first conv sees
/// all (2T+1) frames' channels, with the single-frame kernel copied per frame
/// and scaled by 1/(2T+1). No branch stage exists.
///
/// Slow fusion runs an unscaled copy of conv1 (plus its relu/pool) on each
/// frame, concatenates the feature maps, and merges at conv2 whose kernel is
/// copied per frame and scaled by 1/(2T+1). The 2T+1 branch copies are
/// materialized and kept bit-identical by symmetric gradient averaging.
///
/// Fused biases are copied once, never scaled, so a clip of identical frames
/// reproduces the single-frame logits.
struct VideoModel {
  FusionKind kind = FusionKind::Early;
  int T = 0;
  int frame_channels = 0;
  std::vector<Tensor> branch_weights;  // slow only; size 2T+1
  std::vector<Tensor> branch_biases;
  bool branch_relu = false;
  bool branch_pool = false;
  WeightedModel stacked;  // early: the whole model; slow: conv2 onward

  int frames() const { return 2 * T + 1; }
  size_t parameter_count() const;
};

VideoModel early_fuse(const WeightedModel& single, int T);
VideoModel slow_fuse(const WeightedModel& single, int T);

/// Logits for one clip (frame values in [0,255]).
Tensor video_forward(const VideoModel& vm, const Tensor& clip255, Mode mode, Rng* rng = nullptr);

/// Mean of per-clip softmax over densely sampled clips, in clip order.
Tensor predict_video(const VideoModel& vm, const VideoSample& video, int T, int stride = 1);

struct VideoEvalReport {
  EvalReport clips;
  EvalReport videos;
};
VideoEvalReport evaluate_video(const VideoModel& vm, const VideoDataset& ds, int stride = 1,
                               int k = 5);

/// Cross-entropy tuning on clips. Gradients of the 2T+1 per-frame weight
/// groups (early: conv1 input blocks; slow: branch copies and conv2 input
/// blocks) are averaged every step, so the groups stay bit-identical.
FitResult train_video(VideoModel& vm, const std::vector<Clip>& clips, const TrainConfig& cfg,
                      int64_t iters, uint64_t loop_seed, MetricsWriter* metrics = nullptr);

// ---------------------------------------------------------------------------
// Persistence (single checkpoint file; branches ride in the extra section).
// ---------------------------------------------------------------------------

void save_video_model(const std::filesystem::path& path, const VideoModel& vm,
                      const json& provenance);
VideoModel load_video_model(const std::filesystem::path& path);

}  // namespace advtrain
