#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "advtrain/image.hpp"
#include "advtrain/model.hpp"
#include "advtrain/tensor.hpp"

namespace advtrain {

using json = nlohmann::json;

/// File or input data problems (missing, truncated, malformed).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Generic tensor file: magic "ATNS", version, dtype (f64|f32), dims, raw
// little-endian payload. One format serves images, frames and feature dumps;
// image payloads are reals in [0,255].
// ---------------------------------------------------------------------------

enum class TensorDType : uint32_t { F64 = 0, F32 = 1 };

void save_tensor(const std::filesystem::path& path, const Tensor& t,
                 TensorDType dtype = TensorDType::F64);
Tensor load_tensor(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Labeled datasets. On disk a dataset is a directory:
//   manifest.json + {train,test}_images.tns [N,C,H,W] + {train,test}_labels.tns [N]
// Either split may be absent; the manifest records which exist.
// ---------------------------------------------------------------------------

struct LabeledDataset {
  Tensor images;  // [N,C,H,W], values in [0,255]
  std::vector<int> labels;
  int num_classes = 0;
  std::string name;

  size_t size() const { return labels.size(); }
  /// Copy of image i as [C,H,W].
  Tensor image(size_t i) const;
};

struct DatasetManifest {
  std::string name;
  int num_classes = 0;
  std::vector<std::string> class_names;
  std::vector<size_t> image_shape;  // [C,H,W]
  size_t train_count = 0, test_count = 0;
  std::string source_format;  // "cifar10" | "synth-shapes" | "generic" | "degraded"
  std::string degrade_spec;   // provenance, optional
  uint64_t degrade_seed = 0;
  json extra;
};

void save_dataset(const std::filesystem::path& dir, const DatasetManifest& manifest,
                  const LabeledDataset* train, const LabeledDataset* test);
DatasetManifest load_manifest(const std::filesystem::path& dir);
LabeledDataset load_split(const std::filesystem::path& dir, const std::string& split);

// ---------------------------------------------------------------------------
// Ingestion.
// ---------------------------------------------------------------------------

/// Reads the public CIFAR-10 binary layout (3073-byte records, label byte +
/// 3072 channel-planar pixel bytes) from data_batch_*.bin / test_batch.bin
/// under `dir` and converts to grayscale. Throws DataError on truncated
/// files or out-of-range labels.
LabeledDataset load_cifar10(const std::filesystem::path& dir, const std::string& split);

/// BT.601 luma: 0.299 R + 0.587 G + 0.114 B, clamped.
Image grayscale(const Image& rgb);
double grayscale_pixel(double r, double g, double b);

/// Anti-aliased filled shapes (circle, square, triangle, cross; class index
/// in that order, cycling when classes < 4 applies) with randomized
/// position, scale and intensity on a noisy background. Deterministic per
/// seed; class balance is exact when `classes` divides `count`.
LabeledDataset synth_shapes(int classes, int count, int size, uint64_t seed);

// ---------------------------------------------------------------------------
// Checkpoints: magic "ATCK", version, JSON header (spec, shape table,
// provenance), then 64-bit little-endian weight payload.
// ---------------------------------------------------------------------------

json model_spec_to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const json& j);
ModelConfig model_config_from_json(const json& j);

struct Checkpoint {
  WeightedModel model;
  json provenance;  // config hash, iteration, parent hash, stage, rng seed...
  /// Tensors outside the model proper (e.g. fused per-frame branch copies);
  /// stored after the model payload with their own shape table.
  std::vector<Tensor> extra;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// FNV-1a 64 of a file's bytes, hex-encoded; provenance/manifest identity.
std::string file_hash(const std::filesystem::path& path);
std::string bytes_hash(const void* data, size_t n);

// ---------------------------------------------------------------------------
// Video datasets: a directory with manifest.json listing, per video, the
// label and ordered frame tensor files ([C,H,W] each).
// ---------------------------------------------------------------------------

struct VideoSample {
  std::string id;
  int label = 0;
  std::vector<Tensor> frames;  // [C,H,W] each, values in [0,255]
};

struct VideoDataset {
  std::vector<VideoSample> videos;
  int num_classes = 0;
};

void save_video_dataset(const std::filesystem::path& dir, const VideoDataset& ds);
VideoDataset load_video_dataset(const std::filesystem::path& dir);

/// Synthetic clips for desk-scale video runs: each video is a still image
/// from `base` jittered by integer translations within +/- jitter pixels.
VideoDataset synth_videos(const LabeledDataset& base, int videos_per_class, int frames,
                          int jitter, uint64_t seed);

// ---------------------------------------------------------------------------
// Metrics and image export.
// ---------------------------------------------------------------------------

/// Line-delimited JSON; each call writes one complete line.
class MetricsWriter {
 public:
  MetricsWriter() = default;
  explicit MetricsWriter(const std::filesystem::path& path);
  void write(const json& j);
  bool open() const { return !path_.empty(); }

 private:
  std::filesystem::path path_;
};

/// 8-bit PGM (1 channel) or PPM (3 channels), rounded to nearest.
void save_pnm(const std::filesystem::path& path, const Image& img);

}  // namespace advtrain
