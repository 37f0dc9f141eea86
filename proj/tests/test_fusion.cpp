#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "advtrain/fusion.hpp"
#include "advtrain/train.hpp"

using namespace advtrain;

namespace {

ModelSpec frame_spec(int classes = 4, int size = 16) {
  ModelConfig cfg;
  cfg.in_channels = 1;
  cfg.in_h = cfg.in_w = size;
  cfg.num_classes = classes;
  cfg.conv = {{6, 5}, {6, 3}, {6, 3}};
  cfg.fc = {classes};
  cfg.dropout_rate = 0.0;  // keep fused-vs-single comparisons exact in train mode too
  return build_model_spec(cfg);
}

VideoSample still_video(const Tensor& frame, int count, int label = 0) {
  VideoSample v;
  v.id = "still";
  v.label = label;
  for (int i = 0; i < count; ++i) v.frames.push_back(frame);
  return v;
}

Tensor constant_clip(const Tensor& frame, int frames) {
  Tensor clip({static_cast<size_t>(frames), frame.dim(0), frame.dim(1), frame.dim(2)});
  for (int f = 0; f < frames; ++f)
    std::copy(frame.data(), frame.data() + frame.size(),
              clip.data() + static_cast<size_t>(f) * frame.size());
  return clip;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.same_shape(b));
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool groups_identical(const Tensor& w, int copies) {
  const size_t n = w.dim(0), cc = w.dim(1), k = w.dim(2);
  const size_t c = cc / copies;
  for (size_t f = 0; f < n; ++f)
    for (int b = 1; b < copies; ++b)
      for (size_t ic = 0; ic < c; ++ic)
        for (size_t ky = 0; ky < k; ++ky)
          for (size_t kx = 0; kx < k; ++kx)
            if (w.at4(f, b * c + ic, ky, kx) != w.at4(f, ic, ky, kx)) return false;
  return true;
}

}  // namespace

TEST_CASE("extract_clips") {
  LabeledDataset base = synth_shapes(4, 4, 16, 101);

  SUBCASE("5-frame video with T=2 gives exactly one clip") {
    VideoSample v = still_video(base.image(0), 5);
    CHECK(extract_clips(v, 2).size() == 1);
  }
  SUBCASE("7-frame video with T=2 gives clips at 0,1,2") {
    VideoSample v = still_video(base.image(0), 7);
    const std::vector<Clip> clips = extract_clips(v, 2);
    REQUIRE(clips.size() == 3);
    CHECK(clips[0].start == 0);
    CHECK(clips[1].start == 1);
    CHECK(clips[2].start == 2);
  }
  SUBCASE("100-frame video with T=2 stride 1 gives 96 clips") {
    VideoSample v = still_video(base.image(0), 100);
    CHECK(extract_clips(v, 2).size() == 96);
  }
  SUBCASE("stride 2 skips starts") {
    VideoSample v = still_video(base.image(0), 9);
    const std::vector<Clip> clips = extract_clips(v, 2, 2);
    REQUIRE(clips.size() == 3);
    CHECK(clips[2].start == 4);
  }
  SUBCASE("too-short video is rejected") {
    VideoSample v = still_video(base.image(0), 4);
    CHECK_THROWS_AS(extract_clips(v, 2), std::invalid_argument);
  }
  SUBCASE("clip label equals the video label") {
    VideoSample v = still_video(base.image(0), 6, 3);
    for (const Clip& c : extract_clips(v, 2)) CHECK(c.label == 3);
  }
}

TEST_CASE("early fusion") {
  const WeightedModel single = init_weights(frame_spec(), 11);
  LabeledDataset base = synth_shapes(4, 4, 16, 102);

  SUBCASE("conv1 weight shape gains the (2T+1) frame factor; copies are scaled") {
    VideoModel vm = early_fuse(single, 2);
    CHECK(vm.stacked.weights[0].shape() == std::vector<size_t>{6, 5, 5, 5});
    for (size_t f = 0; f < 6; ++f)
      for (int b = 0; b < 5; ++b)
        for (size_t ky = 0; ky < 5; ++ky)
          for (size_t kx = 0; kx < 5; ++kx)
            CHECK(vm.stacked.weights[0].at4(f, b, ky, kx) ==
                  single.weights[0].at4(f, 0, ky, kx) / 5.0);
    CHECK(vm.stacked.biases[0] == single.biases[0]);
    // everything past conv1 is a bit copy
    for (size_t p = 1; p < single.weights.size(); ++p) {
      CHECK(vm.stacked.weights[p] == single.weights[p]);
      CHECK(vm.stacked.biases[p] == single.biases[p]);
    }
  }
  SUBCASE("identical-frames clip reproduces single-frame logits (T=1,2,3)") {
    const Tensor frame = base.image(0);
    const Tensor single_logits = forward(single, to_model_space(frame), Mode::Eval);
    for (int T : {1, 2, 3}) {
      VideoModel vm = early_fuse(single, T);
      Tensor logits = video_forward(vm, constant_clip(frame, 2 * T + 1), Mode::Eval);
      CHECK(max_abs_diff(logits, single_logits) <= 1e-10);
    }
  }
  SUBCASE("parameter count grows by (2T+1) at conv1 only") {
    const size_t single_conv1 = single.weights[0].size();
    size_t single_total = 0;
    for (size_t p = 0; p < single.weights.size(); ++p)
      single_total += single.weights[p].size() + single.biases[p].size();
    VideoModel vm = early_fuse(single, 2);
    CHECK(vm.parameter_count() == single_total + 4 * single_conv1);
  }
}

TEST_CASE("slow fusion") {
  const WeightedModel single = init_weights(frame_spec(), 21);
  LabeledDataset base = synth_shapes(4, 4, 16, 103);

  SUBCASE("branch copies are bit-identical to conv1; conv2 blocks are scaled") {
    VideoModel vm = slow_fuse(single, 2);
    REQUIRE(vm.branch_weights.size() == 5);
    for (int b = 0; b < 5; ++b) {
      CHECK(vm.branch_weights[b] == single.weights[0]);
      CHECK(vm.branch_biases[b] == single.biases[0]);
    }
    CHECK(vm.stacked.weights[0].shape() == std::vector<size_t>{6, 30, 3, 3});
    for (size_t f = 0; f < 6; ++f)
      for (int b = 0; b < 5; ++b)
        for (size_t ic = 0; ic < 6; ++ic)
          for (size_t ky = 0; ky < 3; ++ky)
            for (size_t kx = 0; kx < 3; ++kx)
              CHECK(vm.stacked.weights[0].at4(f, b * 6 + ic, ky, kx) ==
                    single.weights[1].at4(f, ic, ky, kx) / 5.0);
    CHECK(vm.stacked.biases[0] == single.biases[1]);
  }
  SUBCASE("identical-frames clip reproduces single-frame logits (T=1,2,3)") {
    const Tensor frame = base.image(1);
    const Tensor single_logits = forward(single, to_model_space(frame), Mode::Eval);
    for (int T : {1, 2, 3}) {
      VideoModel vm = slow_fuse(single, T);
      Tensor logits = video_forward(vm, constant_clip(frame, 2 * T + 1), Mode::Eval);
      CHECK(max_abs_diff(logits, single_logits) <= 1e-10);
    }
  }
  SUBCASE("conv1 and conv2 weight counts gain the (2T+1) factor") {
    VideoModel vm = slow_fuse(single, 1);
    size_t branch = 0;
    for (const Tensor& w : vm.branch_weights) branch += w.size();
    CHECK(branch == 3 * single.weights[0].size());
    CHECK(vm.stacked.weights[0].size() == 3 * single.weights[1].size());
  }
  SUBCASE("needs two conv layers") {
    ModelConfig cfg;
    cfg.in_channels = 1;
    cfg.in_h = cfg.in_w = 8;
    cfg.num_classes = 2;
    cfg.conv = {{4, 3}};
    cfg.fc = {2};
    WeightedModel one_conv = init_weights(build_model_spec(cfg), 1);
    CHECK_THROWS_AS(slow_fuse(one_conv, 1), std::invalid_argument);
  }
  SUBCASE("pool after conv1 moves into the branch") {
    ModelConfig cfg;
    cfg.in_channels = 1;
    cfg.in_h = cfg.in_w = 16;
    cfg.num_classes = 2;
    cfg.conv = {{4, 5}, {4, 3}};
    cfg.fc = {2};
    cfg.pool_after = {1};
    cfg.dropout_rate = 0.0;
    WeightedModel pooled = init_weights(build_model_spec(cfg), 2);
    VideoModel vm = slow_fuse(pooled, 1);
    CHECK(vm.branch_pool);
    CHECK(vm.stacked.spec.in_h == 8);
    const Tensor frame = synth_shapes(2, 2, 16, 9).image(0);
    Tensor a = video_forward(vm, constant_clip(frame, 3), Mode::Eval);
    Tensor b = forward(pooled, to_model_space(frame), Mode::Eval);
    CHECK(max_abs_diff(a, b) <= 1e-10);
  }
}

TEST_CASE("predict_video") {
  const WeightedModel single = init_weights(frame_spec(), 31);
  VideoModel vm = early_fuse(single, 1);
  LabeledDataset base = synth_shapes(4, 8, 16, 104);

  SUBCASE("single-clip video equals that clip's softmax") {
    VideoSample v = still_video(base.image(0), 3);
    Tensor probs = predict_video(vm, v, 1);
    Tensor expect = softmax(video_forward(vm, constant_clip(base.image(0), 3), Mode::Eval));
    CHECK(max_abs_diff(probs, expect) == 0.0);
  }
  SUBCASE("constant-frame video equals the single-frame prediction") {
    VideoSample v = still_video(base.image(2), 7);
    Tensor probs = predict_video(vm, v, 1);
    Tensor expect = softmax(forward(single, to_model_space(base.image(2)), Mode::Eval));
    CHECK(max_abs_diff(probs, expect) <= 1e-10);
  }
  SUBCASE("three-clip toy video matches the hand average") {
    VideoSample v;
    v.id = "toy";
    v.label = 0;
    for (int f = 0; f < 5; ++f) v.frames.push_back(base.image(f));
    Tensor mean({4});
    for (int s = 0; s < 3; ++s) {
      Tensor clip({3, 1, 16, 16});
      for (int f = 0; f < 3; ++f)
        std::copy(v.frames[s + f].data(), v.frames[s + f].data() + 256,
                  clip.data() + static_cast<size_t>(f) * 256);
      Tensor p = softmax(video_forward(vm, clip, Mode::Eval));
      for (size_t i = 0; i < 4; ++i) mean[i] += p[i] / 3.0;
    }
    Tensor probs = predict_video(vm, v, 1);
    CHECK(max_abs_diff(probs, mean) <= 1e-12);
  }
}

TEST_CASE("train_video") {
  const WeightedModel single = init_weights(frame_spec(), 41);
  LabeledDataset base = synth_shapes(4, 24, 16, 105);
  VideoDataset vds = synth_videos(base, 3, 5, 2, 106);
  std::vector<Clip> clips;
  for (const VideoSample& v : vds.videos)
    for (Clip& c : extract_clips(v, 1)) clips.push_back(std::move(c));

  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.joint_rest_lr = 5e-3;
  cfg.seed = 7;

  SUBCASE("0 iterations keep the fused init bit-identical") {
    for (FusionKind kind : {FusionKind::Early, FusionKind::Slow}) {
      VideoModel vm = kind == FusionKind::Early ? early_fuse(single, 1) : slow_fuse(single, 1);
      VideoModel before = vm;
      train_video(vm, clips, cfg, 0, 99);
      CHECK(vm.stacked == before.stacked);
      CHECK(vm.branch_weights == before.branch_weights);
    }
  }
  SUBCASE("filter symmetry survives 100 training steps bit-exactly") {
    for (FusionKind kind : {FusionKind::Early, FusionKind::Slow}) {
      VideoModel vm = kind == FusionKind::Early ? early_fuse(single, 1) : slow_fuse(single, 1);
      train_video(vm, clips, cfg, 100, 99);
      CHECK(groups_identical(vm.stacked.weights[0], vm.frames()));
      for (size_t b = 1; b < vm.branch_weights.size(); ++b) {
        CHECK(vm.branch_weights[b] == vm.branch_weights[0]);
        CHECK(vm.branch_biases[b] == vm.branch_biases[0]);
      }
    }
  }
  SUBCASE("tuning improves clip accuracy over the fused init") {
    VideoModel vm = slow_fuse(single, 1);
    VideoEvalReport before = evaluate_video(vm, vds);
    train_video(vm, clips, cfg, 250, 99);
    VideoEvalReport after = evaluate_video(vm, vds);
    CHECK(after.clips.top1 > before.clips.top1);
  }
  SUBCASE("training is deterministic") {
    VideoModel a = slow_fuse(single, 1);
    VideoModel b = slow_fuse(single, 1);
    train_video(a, clips, cfg, 30, 99);
    train_video(b, clips, cfg, 30, 99);
    CHECK(a.stacked == b.stacked);
    CHECK(a.branch_weights == b.branch_weights);
  }
}

TEST_CASE("video model round trip") {
  const WeightedModel single = init_weights(frame_spec(), 51);
  const std::filesystem::path tmp = std::filesystem::temp_directory_path() / "advtrain_vm.ckpt";
  LabeledDataset base = synth_shapes(4, 2, 16, 107);
  const Tensor clip = constant_clip(base.image(0), 5);

  for (FusionKind kind : {FusionKind::Early, FusionKind::Slow}) {
    VideoModel vm = kind == FusionKind::Early ? early_fuse(single, 2) : slow_fuse(single, 2);
    save_video_model(tmp, vm, {{"stage", "fuse"}});
    VideoModel back = load_video_model(tmp);
    CHECK(back.kind == vm.kind);
    CHECK(back.T == vm.T);
    CHECK(back.stacked == vm.stacked);
    CHECK(back.branch_weights == vm.branch_weights);
    CHECK(video_forward(back, clip, Mode::Eval) == video_forward(vm, clip, Mode::Eval));
  }
  std::filesystem::remove(tmp);
}
