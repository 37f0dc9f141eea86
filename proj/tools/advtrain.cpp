// advtrain: train and evaluate small convolutional recognizers under image
// degradations, with reconstruction-based robust pre-training, temporal
// fusion for clips, and cross-dataset transfer.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical divergence.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "advtrain/data_io.hpp"
#include "advtrain/degrade.hpp"
#include "advtrain/fusion.hpp"
#include "advtrain/parallel.hpp"
#include "advtrain/train.hpp"
#include "advtrain/transfer.hpp"

namespace fs = std::filesystem;
using namespace advtrain;

namespace {

// ---------------------------------------------------------------------------
// Output directory: config snapshot next to the artifacts plus a MANIFEST of
// written files with their hashes.
// ---------------------------------------------------------------------------

class OutDir {
 public:
  explicit OutDir(const fs::path& dir) : dir_(dir) { fs::create_directories(dir_); }

  const fs::path& dir() const { return dir_; }
  fs::path file(const std::string& name) {
    written_.push_back(name);
    return dir_ / name;
  }
  /// Registers a file written through other means (datasets, frame trees).
  void note(const std::string& name) { written_.push_back(name); }

  void write_config_snapshot(const json& resolved) {
    std::ofstream out(file("config.json"));
    out << resolved.dump(2) << "\n";
  }

  void write_manifest() {
    json artifacts = json::array();
    for (const std::string& name : written_) {
      const fs::path p = dir_ / name;
      if (fs::is_directory(p)) {
        for (const auto& e : fs::recursive_directory_iterator(p)) {
          if (!e.is_regular_file()) continue;
          const std::string rel = fs::relative(e.path(), dir_).string();
          artifacts.push_back({{"path", rel},
                               {"bytes", fs::file_size(e.path())},
                               {"fnv64", file_hash(e.path())}});
        }
        continue;
      }
      if (!fs::exists(p)) continue;
      artifacts.push_back(
          {{"path", name}, {"bytes", fs::file_size(p)}, {"fnv64", file_hash(p)}});
    }
    std::ofstream out(dir_ / "MANIFEST.json");
    out << json{{"artifacts", artifacts}}.dump(2) << "\n";
  }

 private:
  fs::path dir_;
  std::vector<std::string> written_;
};

json load_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": invalid JSON: " + e.what());
  }
}

uint64_t env_seed_default() {
  if (const char* s = std::getenv("ADVTRAIN_SEED")) return std::strtoull(s, nullptr, 10);
  return 0;
}

int env_threads_default() {
  if (const char* s = std::getenv("ADVTRAIN_THREADS")) return std::atoi(s);
  return 1;
}

/// Desk-scale defaults used when no --config is given: a small three-conv
/// recognizer and short schedules suited to 32x32 inputs on one CPU.
json default_config() {
  return json{
      {"model",
       {{"conv", json::array({{{"filters", 8}, {"kernel", 5}},
                              {{"filters", 8}, {"kernel", 3}},
                              {{"filters", 8}, {"kernel", 3}}})},
        {"fc", json::array()},
        {"dropout", 0.5}}},
      {"train",
       {{"sub_lr", 2e-3},
        {"joint_prefix_lr", 2e-3},
        {"joint_rest_lr", 2e-2},
        {"lr_decay_interval", 600},
        {"momentum", 0.9},
        {"batch_size", 16},
        {"pretrain_iters", 800},
        {"tune_iters", 600}}},
      {"k", 3},
      {"kp", 2}};
}

/// Builds the model from config, filling input shape/classes from the
/// dataset when the config leaves them unset.
ModelSpec model_from_config(json model_cfg, const LabeledDataset& data) {
  if (!model_cfg.contains("input"))
    model_cfg["input"] = {{"channels", data.images.dim(1)},
                          {"height", data.images.dim(2)},
                          {"width", data.images.dim(3)}};
  if (!model_cfg.contains("classes") || model_cfg["classes"].get<int>() == 0)
    model_cfg["classes"] = data.num_classes;
  json fc = model_cfg.value("fc", json::array());
  if (fc.empty() || fc.back().get<int>() == 0) {
    if (!fc.empty()) fc.erase(fc.size() - 1);
    fc.push_back(model_cfg["classes"].get<int>());
    model_cfg["fc"] = fc;
  }
  return build_model_spec(model_config_from_json(model_cfg));
}

json dataset_provenance(const fs::path& dir) {
  json j;
  j["dir"] = dir.string();
  if (fs::exists(dir / "manifest.json")) j["manifest_hash"] = file_hash(dir / "manifest.json");
  return j;
}

void print_report(const std::string& name, const EvalReport& rep) {
  std::printf("%-12s top-1 %6.2f%%   top-%d %6.2f%%\n", name.c_str(), rep.top1, rep.k,
              rep.topk);
}

// ---------------------------------------------------------------------------
// Subcommand payloads.
// ---------------------------------------------------------------------------

struct CommonArgs {
  uint64_t seed = env_seed_default();
  std::string out;
  std::string config_path;

  json resolved_config(const std::string& command) const {
    json cfg = default_config();
    if (!config_path.empty()) cfg.update(load_json_file(config_path), /*merge_objects=*/true);
    cfg["command"] = command;
    cfg["seed"] = seed;
    cfg["threads"] = threads();
    return cfg;
  }
};

int cmd_synth_shapes(const CommonArgs& common, int classes, int train_count, int test_count,
                     int size) {
  OutDir out(common.out);
  LabeledDataset train = synth_shapes(classes, train_count, size, common.seed);
  LabeledDataset test = synth_shapes(classes, test_count, size, derive_seed(common.seed, "test"));
  DatasetManifest m;
  m.name = "synth-shapes";
  m.num_classes = classes;
  m.class_names = {"circle", "square", "triangle", "cross"};
  m.class_names.resize(classes);
  m.image_shape = {1, static_cast<size_t>(size), static_cast<size_t>(size)};
  m.source_format = "synth-shapes";
  m.extra = {{"seed", common.seed}};
  save_dataset(out.dir(), m, &train, &test);
  out.note("manifest.json");
  out.note("train_images.tns");
  out.note("train_labels.tns");
  out.note("test_images.tns");
  out.note("test_labels.tns");

  json cfg = common.resolved_config("synth-shapes");
  cfg["classes"] = classes;
  cfg["train_count"] = train_count;
  cfg["test_count"] = test_count;
  cfg["size"] = size;
  out.write_config_snapshot(cfg);
  out.write_manifest();
  std::printf("wrote %d train / %d test images to %s\n", train_count, test_count,
              out.dir().c_str());
  return 0;
}

int cmd_synth_videos(const CommonArgs& common, const std::string& in, int per_class, int frames,
                     int jitter) {
  OutDir out(common.out);
  LabeledDataset base = load_split(in, "train");
  VideoDataset ds = synth_videos(base, per_class, frames, jitter, common.seed);
  save_video_dataset(out.dir(), ds);
  out.note("manifest.json");
  out.note("frames");
  json cfg = common.resolved_config("synth-videos");
  cfg["videos_per_class"] = per_class;
  cfg["frames"] = frames;
  cfg["jitter"] = jitter;
  cfg["in"] = dataset_provenance(in);
  out.write_config_snapshot(cfg);
  out.write_manifest();
  std::printf("wrote %zu videos (%d frames each) to %s\n", ds.videos.size(), frames,
              out.dir().c_str());
  return 0;
}

int cmd_import_cifar10(const CommonArgs& common, const std::string& in) {
  OutDir out(common.out);
  LabeledDataset train = load_cifar10(in, "train");
  LabeledDataset test = load_cifar10(in, "test");
  DatasetManifest m;
  m.name = "cifar10-gray";
  m.num_classes = 10;
  m.class_names = {"airplane", "automobile", "bird", "cat", "deer",
                   "dog", "frog", "horse", "ship", "truck"};
  m.image_shape = {1, 32, 32};
  m.source_format = "cifar10";
  save_dataset(out.dir(), m, &train, &test);
  for (const char* f : {"manifest.json", "train_images.tns", "train_labels.tns",
                        "test_images.tns", "test_labels.tns"})
    out.note(f);
  out.write_config_snapshot(common.resolved_config("import-cifar10"));
  out.write_manifest();
  std::printf("imported %zu train / %zu test grayscale images\n", train.size(), test.size());
  return 0;
}

int cmd_degrade(const CommonArgs& common, const std::string& in, const std::string& spec_text) {
  OutDir out(common.out);
  const DegradeSpec spec = parse_degrade_spec(spec_text);
  DatasetManifest m = load_manifest(in);
  m.degrade_spec = to_string(spec);
  m.degrade_seed = common.seed;
  m.source_format = "degraded";

  std::optional<LabeledDataset> train, test;
  if (m.train_count > 0) {
    train = load_split(in, "train");
    train->images = degrade_batch(train->images, spec, derive_seed(common.seed, "train"));
  }
  if (m.test_count > 0) {
    test = load_split(in, "test");
    test->images = degrade_batch(test->images, spec, derive_seed(common.seed, "test"));
  }
  save_dataset(out.dir(), m, train ? &*train : nullptr, test ? &*test : nullptr);
  out.note("manifest.json");
  if (train) {
    out.note("train_images.tns");
    out.note("train_labels.tns");
  }
  if (test) {
    out.note("test_images.tns");
    out.note("test_labels.tns");
  }

  json cfg = common.resolved_config("degrade");
  cfg["degrade"] = to_string(spec);
  cfg["in"] = dataset_provenance(in);
  out.write_config_snapshot(cfg);
  out.write_manifest();
  std::printf("degraded dataset written to %s (spec %s, seed %llu)\n", out.dir().c_str(),
              to_string(spec).c_str(), static_cast<unsigned long long>(common.seed));
  return 0;
}

struct TrainArgs {
  std::string mode;
  std::string data;
  double alpha = 0.0;
  double beta = -1.0;
  int k = -1, kp = -1;
  int64_t pretrain_iters = -1, tune_iters = -1;
  std::string degrade_template;
};

int cmd_train(const CommonArgs& common, const TrainArgs& args) {
  OutDir out(common.out);
  json cfg = common.resolved_config("train");
  TrainConfig tc = TrainConfig::from_json(cfg.value("train", json::object()));
  tc.seed = common.seed;
  if (args.pretrain_iters >= 0) tc.pretrain_iters = args.pretrain_iters;
  if (args.tune_iters >= 0) tc.tune_iters = args.tune_iters;
  const int k = args.k >= 0 ? args.k : cfg.value("k", 3);
  const int kp = args.kp >= 0 ? args.kp : cfg.value("kp", 2);
  const std::string deg_text = !args.degrade_template.empty()
                                   ? args.degrade_template
                                   : cfg.value("degrade", std::string("salt-pepper:{a}"));

  LabeledDataset train = load_split(args.data, "train");
  const ModelSpec spec = model_from_config(cfg.value("model", json::object()), train);
  const DegradeTemplate deg(deg_text);

  cfg["train"] = tc.to_json();
  cfg["k"] = k;
  cfg["kp"] = kp;
  cfg["degrade"] = deg.text();
  cfg["mode"] = args.mode;
  cfg["alpha"] = args.alpha;
  if (args.beta >= 0) cfg["beta"] = args.beta;
  cfg["model"] = model_spec_to_json(spec);
  cfg["data"] = dataset_provenance(args.data);
  out.write_config_snapshot(cfg);
  const std::string config_hash = file_hash(out.dir() / "config.json");

  MetricsWriter metrics(out.file("metrics.jsonl"));
  RapArtifacts art;
  WeightedModel model;
  if (args.mode == "hq") {
    model = train_baseline(spec, train, deg, std::max(args.alpha, 1.0), k, kp, tc,
                           BaselineMode::HQ, nullptr, &metrics);
  } else if (args.mode == "lq") {
    model = train_baseline(spec, train, deg, args.alpha, k, kp, tc, BaselineMode::LQ, nullptr,
                           &metrics);
  } else if (args.mode == "rap-non-joint") {
    model = train_baseline(spec, train, deg, args.alpha, k, kp, tc, BaselineMode::RapNonJoint,
                           &art, &metrics);
  } else if (args.mode == "rap") {
    model = rap(spec, train, deg, args.alpha, k, kp, tc, &art, &metrics);
  } else if (args.mode == "arap") {
    if (args.beta < 0)
      throw CLI::ValidationError("--beta is required with --mode arap");
    model = arap(spec, train, deg, args.alpha, args.beta, k, kp, tc, &art, &metrics);
  } else {
    throw CLI::ValidationError("unknown --mode '" + args.mode + "'");
  }

  json prov = {{"stage", args.mode},
               {"config_hash", config_hash},
               {"iterations", tc.tune_iters},
               {"seed", common.seed},
               {"alpha", args.alpha},
               {"degrade", deg.text()},
               {"k", k},
               {"kp", kp},
               {"dataset", dataset_provenance(args.data)}};
  if (args.beta >= 0) prov["beta"] = args.beta;

  if (!art.ms_trained.weights.empty()) {
    Checkpoint ms_ckpt;
    ms_ckpt.model = art.ms_trained;
    ms_ckpt.provenance = prov;
    ms_ckpt.provenance["stage"] = "ms-pretrain";
    ms_ckpt.provenance["iterations"] = tc.pretrain_iters;
    save_checkpoint(out.file("ms.ckpt"), ms_ckpt);
    prov["ms_checkpoint_hash"] = file_hash(out.dir() / "ms.ckpt");
  }
  Checkpoint ckpt;
  ckpt.model = model;
  ckpt.provenance = prov;
  save_checkpoint(out.file("model.ckpt"), ckpt);
  out.write_manifest();
  std::printf("checkpoint written to %s\n", (out.dir() / "model.ckpt").c_str());
  return 0;
}

int cmd_eval(const CommonArgs& common, const std::string& ckpt_path, const std::string& data,
             const std::string& split) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  LabeledDataset test = load_split(data, split);
  EvalReport rep = evaluate(ckpt.model, test);
  rep.provenance = {{"checkpoint", ckpt_path},
                    {"checkpoint_hash", file_hash(ckpt_path)},
                    {"dataset", dataset_provenance(data)},
                    {"split", split}};
  print_report("eval", rep);
  if (!common.out.empty()) {
    OutDir out(common.out);
    std::ofstream(out.file("eval.json")) << rep.to_json().dump(2) << "\n";
    json cfg = common.resolved_config("eval");
    cfg["ckpt"] = ckpt_path;
    cfg["data"] = dataset_provenance(data);
    out.write_config_snapshot(cfg);
    out.write_manifest();
  }
  return 0;
}

int cmd_fuse(const CommonArgs& common, const std::string& ckpt_path, const std::string& kind,
             int T) {
  OutDir out(common.out);
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  VideoModel vm =
      kind == "early" ? early_fuse(ckpt.model, T) : slow_fuse(ckpt.model, T);
  json prov = {{"stage", "fuse"},
               {"kind", kind},
               {"T", T},
               {"parent_checkpoint", ckpt_path},
               {"parent_hash", file_hash(ckpt_path)}};
  save_video_model(out.file("fused.ckpt"), vm, prov);
  json cfg = common.resolved_config("fuse");
  cfg["kind"] = kind;
  cfg["T"] = T;
  cfg["ckpt"] = ckpt_path;
  out.write_config_snapshot(cfg);
  out.write_manifest();
  std::printf("%s-fusion model (T=%d, %zu parameters) written to %s\n", kind.c_str(), T,
              vm.parameter_count(), (out.dir() / "fused.ckpt").c_str());
  return 0;
}

int cmd_video_train(const CommonArgs& common, const std::string& ckpt_path,
                    const std::string& videos, int stride, int64_t iters) {
  OutDir out(common.out);
  VideoModel vm = load_video_model(ckpt_path);
  VideoDataset ds = load_video_dataset(videos);
  std::vector<Clip> clips;
  for (const VideoSample& v : ds.videos)
    for (Clip& c : extract_clips(v, vm.T, stride)) clips.push_back(std::move(c));

  json cfg = common.resolved_config("video-train");
  TrainConfig tc = TrainConfig::from_json(cfg.value("train", json::object()));
  tc.seed = common.seed;
  if (iters >= 0) tc.tune_iters = iters;
  cfg["train"] = tc.to_json();
  cfg["ckpt"] = ckpt_path;
  cfg["videos"] = videos;
  cfg["stride"] = stride;
  out.write_config_snapshot(cfg);

  MetricsWriter metrics(out.file("metrics.jsonl"));
  train_video(vm, clips, tc, tc.tune_iters, derive_seed(common.seed, "video-tune"), &metrics);
  json prov = {{"stage", "video-train"},
               {"parent_checkpoint", ckpt_path},
               {"parent_hash", file_hash(ckpt_path)},
               {"iterations", tc.tune_iters},
               {"clips", clips.size()},
               {"config_hash", file_hash(out.dir() / "config.json")}};
  save_video_model(out.file("fused.ckpt"), vm, prov);
  out.write_manifest();
  std::printf("tuned video model written to %s (%zu clips)\n",
              (out.dir() / "fused.ckpt").c_str(), clips.size());
  return 0;
}

int cmd_video_eval(const CommonArgs& common, const std::string& ckpt_path,
                   const std::string& videos, int stride, const std::string& dump_probs) {
  VideoModel vm = load_video_model(ckpt_path);
  VideoDataset ds = load_video_dataset(videos);
  VideoEvalReport rep = evaluate_video(vm, ds, stride);
  print_report("clips", rep.clips);
  print_report("videos", rep.videos);
  json probs = json::array();
  if (!dump_probs.empty()) {
    for (const VideoSample& v : ds.videos) {
      const Tensor p = predict_video(vm, v, vm.T, stride);
      probs.push_back({{"id", v.id},
                       {"label", v.label},
                       {"probs", std::vector<double>(p.data(), p.data() + p.size())}});
    }
    std::ofstream(dump_probs) << probs.dump(2) << "\n";
  }
  if (!common.out.empty()) {
    OutDir out(common.out);
    std::ofstream(out.file("video_eval.json"))
        << json{{"clips", rep.clips.to_json()}, {"videos", rep.videos.to_json()}}.dump(2)
        << "\n";
    json cfg = common.resolved_config("video-eval");
    cfg["ckpt"] = ckpt_path;
    cfg["videos"] = videos;
    out.write_config_snapshot(cfg);
    out.write_manifest();
  }
  return 0;
}

int cmd_transfer(const CommonArgs& common, const std::string& plan_path,
                 const std::string& source, const std::string& target, double scan_beta_max,
                 double scan_beta_step) {
  OutDir out(common.out);
  TransferPlan plan = TransferPlan::from_json(load_json_file(plan_path));
  LabeledDataset source_hq = load_split(source, "train");
  LabeledDataset target_train = load_split(target, "train");
  LabeledDataset target_test = load_split(target, "test");

  json cfg = common.resolved_config("transfer");
  cfg["plan"] = plan.to_json();
  cfg["source"] = dataset_provenance(source);
  cfg["target"] = dataset_provenance(target);
  out.write_config_snapshot(cfg);

  if (scan_beta_max > 0) {
    const json curve = scan_beta(plan, source_hq, target_train, target_test, scan_beta_max,
                                 scan_beta_step);
    std::ofstream(out.file("beta_scan.json")) << curve.dump(2) << "\n";
    for (const json& p : curve)
      std::printf("beta' %5.1f  top-1 %6.2f%%  top-%d %6.2f%%\n",
                  p["beta_prime"].get<double>(), p["top1"].get<double>(),
                  target_test.num_classes < 5 ? target_test.num_classes : 5,
                  p["topk"].get<double>());
    out.write_manifest();
    return 0;
  }

  MetricsWriter metrics(out.file("metrics.jsonl"));
  TransferResult res = t_arap(plan, source_hq, target_train, &metrics);
  Checkpoint ckpt;
  ckpt.model = res.model;
  ckpt.provenance = res.provenance;
  ckpt.provenance["config_hash"] = file_hash(out.dir() / "config.json");
  save_checkpoint(out.file("model.ckpt"), ckpt);

  TransferComparison cmp;
  cmp.with_tuning = evaluate(res.model, target_test);
  cmp.non_joint =
      evaluate(t_arap_non_joint(plan, source_hq, target_train, &metrics).model, target_test);
  cmp.lq_d = evaluate(direct_baseline(plan.target_spec, target_train, plan.target_cfg, &metrics),
                      target_test);
  cmp.lq_p = evaluate(
      layerwise_pretrain_baseline(plan.target_spec, target_train, plan.target_cfg, &metrics),
      target_test);
  std::ofstream(out.file("comparison.json")) << cmp.to_json().dump(2) << "\n";
  std::fputs(cmp.text_table().c_str(), stdout);
  out.write_manifest();
  return 0;
}

int cmd_visualize(const CommonArgs& common, const std::string& ckpt_path,
                  const std::string& ms_ckpt_path, const std::string& data,
                  const std::string& split, int count, int kp_flag,
                  const std::string& degrade_text) {
  OutDir out(common.out);
  Checkpoint model = load_checkpoint(ckpt_path);
  Checkpoint ms = load_checkpoint(ms_ckpt_path);
  const int kp = kp_flag >= 0 ? kp_flag : ms.provenance.value("kp", 2);

  LabeledDataset images = load_split(data, split);
  count = std::min<int>(count, static_cast<int>(images.size()));
  std::optional<DegradeSpec> spec;
  if (!degrade_text.empty()) spec = parse_degrade_spec(degrade_text);

  double sum_in = 0.0, sum_fk = 0.0, sum_fkp = 0.0;
  for (int i = 0; i < count; ++i) {
    const Tensor hq = images.image(i);
    Tensor input = hq;
    if (spec) {
      Rng rng(derive_seed(common.seed, i));
      input = apply_degrade(Image::from_tensor(hq), *spec, rng).to_tensor();
    }
    // F_k: features of the untuned sub-model; its visualization is the
    // sub-model's own reconstruction. F'_k: tuned features, same frozen tail.
    const Tensor fk = visualize_features(ms.model, ms.model, kp, input);
    const Tensor fkp = visualize_features(model.model, ms.model, kp, input);

    auto to_image = [](const Tensor& unit) {
      Tensor t = from_model_space(unit);
      Image img = Image::from_tensor(t);
      clamp_pixels(img);
      return img;
    };
    char name[64];
    std::snprintf(name, sizeof name, "%03d_input.pgm", i);
    save_pnm(out.file(name), Image::from_tensor(input));
    std::snprintf(name, sizeof name, "%03d_fk.pgm", i);
    save_pnm(out.file(name), to_image(fk));
    std::snprintf(name, sizeof name, "%03d_fkprime.pgm", i);
    save_pnm(out.file(name), to_image(fkp));

    const Tensor hq_unit = to_model_space(hq);
    sum_in += psnr(to_model_space(input), hq_unit, 1.0);
    auto clamp01 = [](Tensor t) {
      for (size_t v = 0; v < t.size(); ++v) t[v] = std::clamp(t[v], 0.0, 1.0);
      return t;
    };
    sum_fk += psnr(clamp01(fk), hq_unit, 1.0);
    sum_fkp += psnr(clamp01(fkp), hq_unit, 1.0);
  }
  const json summary = {{"count", count},
                        {"mean_psnr_input", sum_in / count},
                        {"mean_psnr_fk", sum_fk / count},
                        {"mean_psnr_fkprime", sum_fkp / count}};
  std::ofstream(out.file("psnr.json")) << summary.dump(2) << "\n";
  std::printf("PSNR vs HQ over %d images: input %.2f dB, F_k %.2f dB, F'_k %.2f dB\n", count,
              sum_in / count, sum_fk / count, sum_fkp / count);

  json cfg = common.resolved_config("visualize");
  cfg["ckpt"] = ckpt_path;
  cfg["ms_ckpt"] = ms_ckpt_path;
  cfg["kp"] = kp;
  if (spec) cfg["degrade"] = to_string(*spec);
  out.write_config_snapshot(cfg);
  out.write_manifest();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adverse-condition recognition trainer"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags (--seed, --threads, --config) after the subcommand

  CommonArgs common;
  app.add_option("--seed", common.seed, "global PRNG seed (env ADVTRAIN_SEED)")
      ->capture_default_str();
  int thread_count = env_threads_default();
  app.add_option("--threads", thread_count,
                 "worker threads; 1 is the bit-exact sequential path (env ADVTRAIN_THREADS)")
      ->capture_default_str();
  app.add_option("--config", common.config_path, "JSON config file");

  // synth-shapes
  auto* synth = app.add_subcommand("synth-shapes", "generate a synthetic shape dataset");
  int classes = 4, train_count = 2000, test_count = 400, size = 32;
  synth->add_option("--classes", classes)->capture_default_str();
  synth->add_option("--train", train_count)->capture_default_str();
  synth->add_option("--test", test_count)->capture_default_str();
  synth->add_option("--size", size)->capture_default_str();
  synth->add_option("--out", common.out, "output dataset directory")->required();

  // synth-videos
  auto* sv = app.add_subcommand("synth-videos", "jittered still-image videos from a dataset");
  std::string sv_in;
  int sv_per_class = 4, sv_frames = 8, sv_jitter = 2;
  sv->add_option("--in", sv_in, "image dataset directory (uses the train split)")->required();
  sv->add_option("--per-class", sv_per_class)->capture_default_str();
  sv->add_option("--frames", sv_frames)->capture_default_str();
  sv->add_option("--jitter", sv_jitter, "max per-frame translation in pixels")
      ->capture_default_str();
  sv->add_option("--out", common.out)->required();

  // import-cifar10
  auto* imp = app.add_subcommand("import-cifar10", "convert CIFAR-10 binaries to a dataset");
  std::string import_in;
  imp->add_option("--in", import_in, "directory with data_batch_*.bin / test_batch.bin")
      ->required();
  imp->add_option("--out", common.out, "output dataset directory")->required();

  // degrade
  auto* deg = app.add_subcommand("degrade", "apply a degradation spec to a dataset");
  std::string deg_in, deg_spec;
  deg->add_option("--in", deg_in, "input dataset directory")->required();
  deg->add_option("--spec", deg_spec, "degradation spec, e.g. lowres:2|gauss-noise:25")
      ->required();
  deg->add_option("--out", common.out, "output dataset directory")->required();

  // train
  auto* tr = app.add_subcommand("train", "train a recognizer");
  TrainArgs train_args;
  tr->add_option("--mode", train_args.mode, "hq|lq|rap-non-joint|rap|arap")->required();
  tr->add_option("--data", train_args.data, "dataset directory (uses the train split)")
      ->required();
  tr->add_option("--alpha", train_args.alpha, "adverse factor for the tuning data");
  tr->add_option("--beta", train_args.beta, "pre-training adverse factor (arap)");
  tr->add_option("--k", train_args.k, "sub-model depth");
  tr->add_option("--kp", train_args.kp, "shared prefix length");
  tr->add_option("--degrade", train_args.degrade_template,
                 "degradation template with {a}, e.g. lowres:{a}|gauss-noise:25");
  tr->add_option("--pretrain-iters", train_args.pretrain_iters);
  tr->add_option("--tune-iters", train_args.tune_iters);
  tr->add_option("--out", common.out, "output directory")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  std::string eval_ckpt, eval_data, eval_split = "test";
  ev->add_option("--ckpt", eval_ckpt)->required();
  ev->add_option("--data", eval_data)->required();
  ev->add_option("--split", eval_split)->capture_default_str();
  ev->add_option("--out", common.out, "optional report directory");

  // fuse
  auto* fu = app.add_subcommand("fuse", "build a clip model from a single-frame checkpoint");
  std::string fuse_ckpt, fuse_kind;
  int fuse_T = 2;
  fu->add_option("--ckpt", fuse_ckpt)->required();
  fu->add_option("--kind", fuse_kind, "early|slow")
      ->required()
      ->check(CLI::IsMember({"early", "slow"}));
  fu->add_option("--T", fuse_T, "clip half-width; clips hold 2T+1 frames")
      ->capture_default_str();
  fu->add_option("--out", common.out)->required();

  // video-train
  auto* vt = app.add_subcommand("video-train", "tune a fused model on clips");
  std::string vt_ckpt, vt_videos;
  int vt_stride = 1;
  int64_t vt_iters = -1;
  vt->add_option("--ckpt", vt_ckpt, "fused checkpoint")->required();
  vt->add_option("--videos", vt_videos, "video dataset directory")->required();
  vt->add_option("--stride", vt_stride)->capture_default_str();
  vt->add_option("--iters", vt_iters, "tuning iterations (overrides config)");
  vt->add_option("--out", common.out)->required();

  // video-eval
  auto* ve = app.add_subcommand("video-eval", "clip- and video-level accuracy");
  std::string ve_ckpt, ve_videos, ve_dump;
  int ve_stride = 1;
  ve->add_option("--ckpt", ve_ckpt, "fused checkpoint")->required();
  ve->add_option("--videos", ve_videos)->required();
  ve->add_option("--stride", ve_stride)->capture_default_str();
  ve->add_option("--dump-probs", ve_dump, "write per-video probability vectors to this file");
  ve->add_option("--out", common.out, "optional report directory");

  // transfer
  auto* tf = app.add_subcommand("transfer", "transfer pipeline plus the four-way comparison");
  std::string tf_plan, tf_source, tf_target;
  double tf_scan_max = 0.0, tf_scan_step = 1.0;
  tf->add_option("--plan", tf_plan, "transfer plan JSON")->required();
  tf->add_option("--source", tf_source, "source dataset directory")->required();
  tf->add_option("--target", tf_target, "target dataset directory")->required();
  tf->add_option("--scan-beta-max", tf_scan_max,
                 "scan beta' downward from this value instead of running the comparison");
  tf->add_option("--scan-beta-step", tf_scan_step)->capture_default_str();
  tf->add_option("--out", common.out)->required();

  // visualize
  auto* vz = app.add_subcommand("visualize", "export feature visualizations as images");
  std::string vz_ckpt, vz_ms, vz_data, vz_split = "test", vz_degrade;
  int vz_count = 8, vz_kp = -1;
  vz->add_option("--ckpt", vz_ckpt, "tuned model checkpoint")->required();
  vz->add_option("--ms-ckpt", vz_ms, "sub-model checkpoint (provides the frozen tail)")
      ->required();
  vz->add_option("--images", vz_data, "dataset directory")->required();
  vz->add_option("--split", vz_split)->capture_default_str();
  vz->add_option("--count", vz_count)->capture_default_str();
  vz->add_option("--kp", vz_kp, "prefix length (default: from the sub-model checkpoint)");
  vz->add_option("--degrade", vz_degrade, "degrade inputs first, e.g. salt-pepper:0.5");
  vz->add_option("--out", common.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  set_threads(thread_count);
  try {
    if (*synth) return cmd_synth_shapes(common, classes, train_count, test_count, size);
    if (*sv) return cmd_synth_videos(common, sv_in, sv_per_class, sv_frames, sv_jitter);
    if (*imp) return cmd_import_cifar10(common, import_in);
    if (*deg) return cmd_degrade(common, deg_in, deg_spec);
    if (*tr) return cmd_train(common, train_args);
    if (*ev) return cmd_eval(common, eval_ckpt, eval_data, eval_split);
    if (*fu) return cmd_fuse(common, fuse_ckpt, fuse_kind, fuse_T);
    if (*vt) return cmd_video_train(common, vt_ckpt, vt_videos, vt_stride, vt_iters);
    if (*ve) return cmd_video_eval(common, ve_ckpt, ve_videos, ve_stride, ve_dump);
    if (*tf) return cmd_transfer(common, tf_plan, tf_source, tf_target, tf_scan_max, tf_scan_step);
    if (*vz)
      return cmd_visualize(common, vz_ckpt, vz_ms, vz_data, vz_split, vz_count, vz_kp,
                           vz_degrade);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
