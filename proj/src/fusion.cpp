#include "advtrain/fusion.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "advtrain/parallel.hpp"

namespace advtrain {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

/// Index of the n-th conv layer (1-based) in a layer list, or npos.
size_t nth_conv_index(const std::vector<LayerKind>& layers, int n) {
  int seen = 0;
  for (size_t i = 0; i < layers.size(); ++i)
    if (layers[i].op == LayerOp::Conv && ++seen == n) return i;
  return std::string::npos;
}

/// Tiles src [n, c, k, k] to [n, copies*c, k, k], each block divided by
/// `divisor` (a plain division so W/(2T+1) is exact arithmetic).
Tensor tile_in_channels(const Tensor& src, int copies, double divisor) {
  const size_t n = src.dim(0), c = src.dim(1), k = src.dim(2);
  Tensor out({n, c * copies, k, k});
  for (size_t f = 0; f < n; ++f)
    for (int b = 0; b < copies; ++b)
      for (size_t ic = 0; ic < c; ++ic)
        for (size_t ky = 0; ky < k; ++ky)
          for (size_t kx = 0; kx < k; ++kx)
            out.at4(f, b * c + ic, ky, kx) = src.at4(f, ic, ky, kx) / divisor;
  return out;
}

/// Averages the `copies` input-channel blocks of g [n, copies*c, k, k] and
/// writes the mean back into every block.
void symmetrize_in_channels(Tensor& g, int copies) {
  const size_t n = g.dim(0), cc = g.dim(1), k = g.dim(2);
  const size_t c = cc / copies;
  const double inv = 1.0 / copies;
  for (size_t f = 0; f < n; ++f)
    for (size_t ic = 0; ic < c; ++ic)
      for (size_t ky = 0; ky < k; ++ky)
        for (size_t kx = 0; kx < k; ++kx) {
          double mean = 0.0;
          for (int b = 0; b < copies; ++b) mean += g.at4(f, b * c + ic, ky, kx);
          mean *= inv;
          for (int b = 0; b < copies; ++b) g.at4(f, b * c + ic, ky, kx) = mean;
        }
}

}  // namespace

std::vector<Clip> extract_clips(const VideoSample& video, int T, int stride) {
  require(T >= 0, "extract_clips: T must be >= 0");
  require(stride >= 1, "extract_clips: stride must be >= 1");
  const int len = static_cast<int>(video.frames.size());
  const int span = 2 * T + 1;
  require(len >= span, "extract_clips: video '" + video.id + "' has " + std::to_string(len) +
                           " frames, needs at least " + std::to_string(span));
  std::vector<Clip> clips;
  for (int start = 0; start + span <= len; start += stride) {
    Clip c;
    c.video_id = video.id;
    c.start = start;
    c.label = video.label;
    const Tensor& f0 = video.frames[start];
    c.frames = Tensor({static_cast<size_t>(span), f0.dim(0), f0.dim(1), f0.dim(2)});
    for (int f = 0; f < span; ++f) {
      const Tensor& frame = video.frames[start + f];
      require(frame.same_shape(f0), "extract_clips: inconsistent frame shapes in '" +
                                        video.id + "'");
      std::copy(frame.data(), frame.data() + frame.size(),
                c.frames.data() + static_cast<size_t>(f) * frame.size());
    }
    clips.push_back(std::move(c));
  }
  return clips;
}

size_t VideoModel::parameter_count() const {
  size_t total = stacked.spec.parameter_count();
  for (const Tensor& w : branch_weights) total += w.size();
  for (const Tensor& b : branch_biases) total += b.size();
  return total;
}

VideoModel early_fuse(const WeightedModel& single, int T) {
  require(T >= 1, "early_fuse: T must be >= 1");
  require(!single.spec.layers.empty() && single.spec.layers[0].op == LayerOp::Conv,
          "early_fuse: the single-frame model must start with a conv layer");
  const int copies = 2 * T + 1;

  VideoModel vm;
  vm.kind = FusionKind::Early;
  vm.T = T;
  vm.frame_channels = single.spec.in_channels;
  vm.stacked = single;
  vm.stacked.spec.in_channels = single.spec.in_channels * copies;
  vm.stacked.weights[0] = tile_in_channels(single.weights[0], copies, copies);
  vm.stacked.spec.validate();
  return vm;
}

VideoModel slow_fuse(const WeightedModel& single, int T) {
  require(T >= 1, "slow_fuse: T must be >= 1");
  const size_t conv1 = nth_conv_index(single.spec.layers, 1);
  const size_t conv2 = nth_conv_index(single.spec.layers, 2);
  require(conv1 == 0, "slow_fuse: the single-frame model must start with a conv layer");
  require(conv2 != std::string::npos, "slow_fuse: needs a second conv layer to merge at");
  const int copies = 2 * T + 1;

  VideoModel vm;
  vm.kind = FusionKind::Slow;
  vm.T = T;
  vm.frame_channels = single.spec.in_channels;
  for (int b = 0; b < copies; ++b) {
    vm.branch_weights.push_back(single.weights[0]);
    vm.branch_biases.push_back(single.biases[0]);
  }
  int h = single.spec.in_h, w = single.spec.in_w;
  for (size_t i = conv1 + 1; i < conv2; ++i) {
    if (single.spec.layers[i].op == LayerOp::Relu) vm.branch_relu = true;
    if (single.spec.layers[i].op == LayerOp::MaxPool) {
      vm.branch_pool = true;
      h /= 2;
      w /= 2;
    }
  }

  vm.stacked.spec.layers.assign(single.spec.layers.begin() + conv2, single.spec.layers.end());
  vm.stacked.spec.in_channels = single.spec.layers[0].out_channels * copies;
  vm.stacked.spec.in_h = h;
  vm.stacked.spec.in_w = w;
  vm.stacked.spec.num_classes = single.spec.num_classes;
  vm.stacked.init_seed = single.init_seed;
  vm.stacked.weights.push_back(tile_in_channels(single.weights[1], copies, copies));
  vm.stacked.biases.push_back(single.biases[1]);
  for (size_t p = 2; p < single.weights.size(); ++p) {
    vm.stacked.weights.push_back(single.weights[p]);
    vm.stacked.biases.push_back(single.biases[p]);
  }
  vm.stacked.spec.validate();
  return vm;
}

namespace {

struct BranchTrace {
  Tensor conv_out;                // pre-relu
  Tensor out;                     // after relu/pool
  std::vector<int64_t> pool_idx;
};

Tensor frame_of(const Tensor& clip, int f) {
  const size_t per = clip.size() / clip.dim(0);
  return Tensor::from({clip.dim(1), clip.dim(2), clip.dim(3)},
                      std::vector<double>(clip.data() + f * per, clip.data() + (f + 1) * per));
}

Tensor run_branches(const VideoModel& vm, const Tensor& clip, std::vector<BranchTrace>* traces) {
  const int copies = vm.frames();
  std::vector<Tensor> outs(copies);
  if (traces) traces->resize(copies);
  for (int b = 0; b < copies; ++b) {
    Tensor z = conv2d_forward(frame_of(clip, b), vm.branch_weights[b], vm.branch_biases[b]);
    Tensor a = vm.branch_relu ? relu_forward(z) : z;
    std::vector<int64_t> pool_idx;
    if (vm.branch_pool) {
      PoolResult pr = maxpool2x2_forward(a);
      pool_idx = std::move(pr.argmax);
      a = std::move(pr.output);
    }
    if (traces) {
      (*traces)[b].conv_out = z;
      (*traces)[b].pool_idx = std::move(pool_idx);
      (*traces)[b].out = a;
    }
    outs[b] = std::move(a);
  }
  const size_t c = outs[0].dim(0), h = outs[0].dim(1), w = outs[0].dim(2);
  Tensor cat({c * copies, h, w});
  for (int b = 0; b < copies; ++b)
    std::copy(outs[b].data(), outs[b].data() + outs[b].size(),
              cat.data() + static_cast<size_t>(b) * outs[b].size());
  return cat;
}

void check_clip(const VideoModel& vm, const Tensor& clip) {
  require(clip.rank() == 4, "video_forward: clip must be [frames,C,H,W]");
  require(static_cast<int>(clip.dim(0)) == vm.frames(),
          "video_forward: clip has " + std::to_string(clip.dim(0)) + " frames, model wants " +
              std::to_string(vm.frames()));
  require(static_cast<int>(clip.dim(1)) == vm.frame_channels,
          "video_forward: frame channels mismatch");
}

}  // namespace

Tensor video_forward(const VideoModel& vm, const Tensor& clip255, Mode mode, Rng* rng) {
  check_clip(vm, clip255);
  const Tensor x = to_model_space(clip255);
  if (vm.kind == FusionKind::Early) {
    const Tensor stacked_in = x.reshaped({x.dim(0) * x.dim(1), x.dim(2), x.dim(3)});
    return forward(vm.stacked, stacked_in, mode, rng);
  }
  return forward(vm.stacked, run_branches(vm, x, nullptr), mode, rng);
}

Tensor predict_video(const VideoModel& vm, const VideoSample& video, int T, int stride) {
  require(T == vm.T, "predict_video: T mismatch with the fused model");
  const std::vector<Clip> clips = extract_clips(video, T, stride);
  Tensor mean({static_cast<size_t>(vm.stacked.spec.num_classes)});
  for (const Clip& c : clips) {
    const Tensor p = softmax(video_forward(vm, c.frames, Mode::Eval));
    for (size_t i = 0; i < mean.size(); ++i) mean[i] += p[i];
  }
  for (size_t i = 0; i < mean.size(); ++i) mean[i] /= static_cast<double>(clips.size());
  return mean;
}

VideoEvalReport evaluate_video(const VideoModel& vm, const VideoDataset& ds, int stride, int k) {
  std::vector<Tensor> clip_logits;
  std::vector<int> clip_labels;
  std::vector<Tensor> video_probs(ds.videos.size());

  for (const VideoSample& v : ds.videos) {
    for (const Clip& c : extract_clips(v, vm.T, stride)) {
      clip_logits.push_back(video_forward(vm, c.frames, Mode::Eval));
      clip_labels.push_back(c.label);
    }
  }
  parallel_for(ds.videos.size(), [&](size_t i) {
    video_probs[i] = predict_video(vm, ds.videos[i], vm.T, stride);
  });

  VideoEvalReport rep;
  rep.clips = evaluate_logits(clip_logits, clip_labels, ds.num_classes, k);
  std::vector<int> video_labels;
  for (const VideoSample& v : ds.videos) video_labels.push_back(v.label);
  rep.videos = evaluate_logits(video_probs, video_labels, ds.num_classes, k);
  return rep;
}

FitResult train_video(VideoModel& vm, const std::vector<Clip>& clips, const TrainConfig& cfg,
                      int64_t iters, uint64_t loop_seed, MetricsWriter* metrics) {
  require(!clips.empty(), "train_video: no clips");
  const int copies = vm.frames();
  const size_t n = clips.size();
  const size_t batch = std::min<size_t>(cfg.batch_size, n);

  struct SampleGrads {
    Gradients stacked;
    Tensor branch_w, branch_b;  // summed over frames, pre-average
    double loss = 0.0;
  };
  std::vector<SampleGrads> slots(batch);
  for (auto& s : slots) {
    s.stacked.init_like(vm.stacked);
    if (vm.kind == FusionKind::Slow) {
      s.branch_w = Tensor(vm.branch_weights[0].shape());
      s.branch_b = Tensor(vm.branch_biases[0].shape());
    }
  }
  Gradients stacked_total, stacked_vel;
  stacked_total.init_like(vm.stacked);
  stacked_vel.init_like(vm.stacked);
  Tensor branch_gw, branch_gb, branch_vw, branch_vb;
  if (vm.kind == FusionKind::Slow) {
    branch_gw = Tensor(vm.branch_weights[0].shape());
    branch_gb = Tensor(vm.branch_biases[0].shape());
    branch_vw = Tensor(vm.branch_weights[0].shape());
    branch_vb = Tensor(vm.branch_biases[0].shape());
  }

  std::vector<uint32_t> indices(n);
  std::iota(indices.begin(), indices.end(), 0u);
  Rng shuffle_rng(derive_seed(loop_seed, "shuffle"));
  const uint64_t dropout_seed = derive_seed(loop_seed, "dropout");
  size_t cursor = n;

  FitResult fit;
  const auto t0 = std::chrono::steady_clock::now();
  for (int64_t iter = 0; iter < iters; ++iter) {
    if (cursor + batch > n) {
      for (size_t i = n - 1; i > 0; --i) {
        const size_t j = shuffle_rng.uniform_int(i + 1);
        std::swap(indices[i], indices[j]);
      }
      cursor = 0;
    }
    const size_t base = cursor;
    cursor += batch;

    parallel_for(batch, [&](size_t s) {
      const Clip& clip = clips[indices[base + s]];
      Rng rng(derive_seed(dropout_seed, static_cast<uint64_t>(iter) * batch + s));
      SampleGrads& sg = slots[s];

      if (vm.kind == FusionKind::Early) {
        const Tensor x = to_model_space(clip.frames)
                             .reshaped({clip.frames.dim(0) * clip.frames.dim(1),
                                        clip.frames.dim(2), clip.frames.dim(3)});
        ForwardTrace trace;
        const Tensor logits = forward(vm.stacked, x, Mode::Train, &rng, &trace);
        LossResult loss = softmax_cross_entropy(logits, clip.label);
        backward(vm.stacked, x, trace, loss.grad, sg.stacked);
        sg.loss = loss.loss;
        return;
      }

      // Slow fusion: branches -> concat -> stacked model.
      const Tensor x = to_model_space(clip.frames);
      std::vector<BranchTrace> btr;
      const Tensor cat = run_branches(vm, x, &btr);
      ForwardTrace trace;
      const Tensor logits = forward(vm.stacked, cat, Mode::Train, &rng, &trace);
      LossResult loss = softmax_cross_entropy(logits, clip.label);
      Tensor dcat;
      backward(vm.stacked, cat, trace, loss.grad, sg.stacked, 0, &dcat);
      sg.loss = loss.loss;

      // Split the concat gradient per frame and push it through each branch.
      sg.branch_w.fill(0.0);
      sg.branch_b.fill(0.0);
      const size_t per = dcat.size() / copies;
      for (int b = 0; b < copies; ++b) {
        Tensor db = Tensor::from({dcat.dim(0) / copies, dcat.dim(1), dcat.dim(2)},
                                 std::vector<double>(dcat.data() + b * per,
                                                     dcat.data() + (b + 1) * per));
        if (vm.branch_pool)
          db = maxpool2x2_backward(btr[b].pool_idx, db,
                                   {btr[b].conv_out.dim(0), btr[b].conv_out.dim(1),
                                    btr[b].conv_out.dim(2)});
        if (vm.branch_relu) db = relu_backward(btr[b].conv_out, db);
        ConvGrads g = conv2d_backward(frame_of(x, b), vm.branch_weights[b], db);
        for (size_t i = 0; i < sg.branch_w.size(); ++i) sg.branch_w[i] += g.weights[i];
        for (size_t i = 0; i < sg.branch_b.size(); ++i) sg.branch_b[i] += g.bias[i];
      }
    });

    double loss = 0.0;
    for (size_t s = 0; s < batch; ++s) loss += slots[s].loss;
    loss /= static_cast<double>(batch);
    if (!std::isfinite(loss))
      throw DivergenceError("video-tune: loss diverged (non-finite) at iteration " +
                            std::to_string(iter));

    stacked_total.scale(0.0);
    for (size_t s = 0; s < batch; ++s) stacked_total.accumulate(slots[s].stacked);
    stacked_total.scale(1.0 / static_cast<double>(batch));

    // Filter symmetry: per-frame weight groups receive their averaged grads.
    symmetrize_in_channels(stacked_total.weights[0], copies);
    if (vm.kind == FusionKind::Slow) {
      branch_gw.fill(0.0);
      branch_gb.fill(0.0);
      for (size_t s = 0; s < batch; ++s) {
        for (size_t i = 0; i < branch_gw.size(); ++i) branch_gw[i] += slots[s].branch_w[i];
        for (size_t i = 0; i < branch_gb.size(); ++i) branch_gb[i] += slots[s].branch_b[i];
      }
      // mean over batch and over the 2T+1 per-frame groups
      const double inv = 1.0 / (static_cast<double>(batch) * copies);
      for (size_t i = 0; i < branch_gw.size(); ++i) branch_gw[i] *= inv;
      for (size_t i = 0; i < branch_gb.size(); ++i) branch_gb[i] *= inv;
    }

    const double lr = lr_at(iter, cfg.joint_rest_lr, cfg.lr_decay_interval, cfg.lr_decay_factor);
    for (size_t p = 0; p < vm.stacked.weights.size(); ++p) {
      sgd_step(vm.stacked.weights[p], stacked_total.weights[p], stacked_vel.weights[p], lr,
               cfg.momentum);
      sgd_step(vm.stacked.biases[p], stacked_total.biases[p], stacked_vel.biases[p], lr,
               cfg.momentum);
    }
    if (vm.kind == FusionKind::Slow) {
      // One symmetric update applied to every branch copy.
      sgd_step(vm.branch_weights[0], branch_gw, branch_vw, lr, cfg.momentum);
      sgd_step(vm.branch_biases[0], branch_gb, branch_vb, lr, cfg.momentum);
      for (int b = 1; b < copies; ++b) {
        vm.branch_weights[b] = vm.branch_weights[0];
        vm.branch_biases[b] = vm.branch_biases[0];
      }
    }

    fit.loss_history.push_back(loss);
    if (metrics && (iter % 50 == 0 || iter == iters - 1)) {
      const double wall =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
              .count();
      metrics->write({{"iter", iter},
                      {"split", "train"},
                      {"stage", "video-tune"},
                      {"loss", loss},
                      {"lr", lr},
                      {"wall_ms", wall}});
    }
  }
  fit.iterations = iters;
  return fit;
}

void save_video_model(const std::filesystem::path& path, const VideoModel& vm,
                      const json& provenance) {
  Checkpoint ckpt;
  ckpt.model = vm.stacked;
  ckpt.provenance = provenance;
  ckpt.provenance["video"] = {{"kind", vm.kind == FusionKind::Early ? "early" : "slow"},
                              {"T", vm.T},
                              {"frame_channels", vm.frame_channels},
                              {"branch_relu", vm.branch_relu},
                              {"branch_pool", vm.branch_pool}};
  for (size_t b = 0; b < vm.branch_weights.size(); ++b) {
    ckpt.extra.push_back(vm.branch_weights[b]);
    ckpt.extra.push_back(vm.branch_biases[b]);
  }
  save_checkpoint(path, ckpt);
}

VideoModel load_video_model(const std::filesystem::path& path) {
  Checkpoint ckpt = load_checkpoint(path);
  if (!ckpt.provenance.contains("video"))
    throw DataError(path.string() + ": not a fused video checkpoint");
  const json& vj = ckpt.provenance["video"];
  VideoModel vm;
  vm.kind = vj.at("kind").get<std::string>() == "early" ? FusionKind::Early : FusionKind::Slow;
  vm.T = vj.at("T").get<int>();
  vm.frame_channels = vj.at("frame_channels").get<int>();
  vm.branch_relu = vj.value("branch_relu", false);
  vm.branch_pool = vj.value("branch_pool", false);
  vm.stacked = std::move(ckpt.model);
  if (vm.kind == FusionKind::Slow) {
    const size_t copies = static_cast<size_t>(vm.frames());
    if (ckpt.extra.size() != 2 * copies)
      throw DataError(path.string() + ": expected " + std::to_string(2 * copies) +
                      " branch tensors, found " + std::to_string(ckpt.extra.size()));
    for (size_t b = 0; b < copies; ++b) {
      vm.branch_weights.push_back(std::move(ckpt.extra[2 * b]));
      vm.branch_biases.push_back(std::move(ckpt.extra[2 * b + 1]));
    }
  }
  return vm;
}

}  // namespace advtrain
