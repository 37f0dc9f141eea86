#include "advtrain/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "advtrain/rng.hpp"

namespace advtrain {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Little-endian primitives. All on-disk numbers are byte-order pinned.
// ---------------------------------------------------------------------------

namespace {

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f64(std::string& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}
void put_f32(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

class Reader {
 public:
  Reader(std::string data, std::string origin)
      : data_(std::move(data)), origin_(std::move(origin)) {}

  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(byte()) << (8 * i);
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(byte()) << (8 * i);
    return v;
  }
  double f64() {
    const uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  float f32() {
    const uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  size_t remaining() const { return data_.size() - pos_; }

 private:
  uint8_t byte() { return static_cast<uint8_t>(data_[pos_++]); }
  void need(size_t n) {
    if (data_.size() - pos_ < n) throw DataError(origin_ + ": truncated file");
  }
  std::string data_;
  std::string origin_;
  size_t pos_ = 0;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

void write_file(const fs::path& path, const std::string& data) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw DataError("short write to " + path.string());
}

constexpr char kTensorMagic[4] = {'A', 'T', 'N', 'S'};
constexpr char kCkptMagic[4] = {'A', 'T', 'C', 'K'};
constexpr uint32_t kFormatVersion = 1;

}  // namespace

// ---------------------------------------------------------------------------
// Tensor files.
// ---------------------------------------------------------------------------

void save_tensor(const fs::path& path, const Tensor& t, TensorDType dtype) {
  std::string out;
  out.append(kTensorMagic, 4);
  put_u32(out, kFormatVersion);
  put_u32(out, static_cast<uint32_t>(dtype));
  put_u32(out, static_cast<uint32_t>(t.rank()));
  for (size_t d : t.shape()) put_u64(out, d);
  if (dtype == TensorDType::F64) {
    for (size_t i = 0; i < t.size(); ++i) put_f64(out, t[i]);
  } else {
    for (size_t i = 0; i < t.size(); ++i) put_f32(out, static_cast<float>(t[i]));
  }
  write_file(path, out);
}

Tensor load_tensor(const fs::path& path) {
  Reader r(read_file(path), path.string());
  if (r.bytes(4) != std::string(kTensorMagic, 4))
    throw DataError(path.string() + ": not a tensor file (bad magic)");
  const uint32_t version = r.u32();
  if (version != kFormatVersion)
    throw DataError(path.string() + ": unsupported tensor format version " +
                    std::to_string(version));
  const uint32_t dtype = r.u32();
  if (dtype > 1) throw DataError(path.string() + ": unknown dtype " + std::to_string(dtype));
  const uint32_t ndim = r.u32();
  std::vector<size_t> shape(ndim);
  size_t numel = 1;
  for (uint32_t i = 0; i < ndim; ++i) {
    shape[i] = r.u64();
    numel *= shape[i];
  }
  std::vector<double> data(numel);
  if (dtype == static_cast<uint32_t>(TensorDType::F64)) {
    for (size_t i = 0; i < numel; ++i) data[i] = r.f64();
  } else {
    for (size_t i = 0; i < numel; ++i) data[i] = static_cast<double>(r.f32());
  }
  return Tensor::from(std::move(shape), std::move(data));
}

// ---------------------------------------------------------------------------
// Datasets.
// ---------------------------------------------------------------------------

Tensor LabeledDataset::image(size_t i) const {
  const size_t per = images.size() / images.dim(0);
  return Tensor::from({images.dim(1), images.dim(2), images.dim(3)},
                      std::vector<double>(images.data() + i * per,
                                          images.data() + (i + 1) * per));
}

namespace {

json manifest_to_json(const DatasetManifest& m) {
  json j;
  j["name"] = m.name;
  j["classes"] = m.num_classes;
  j["class_names"] = m.class_names;
  j["image_shape"] = m.image_shape;
  j["splits"] = {{"train", m.train_count}, {"test", m.test_count}};
  j["source_format"] = m.source_format;
  if (!m.degrade_spec.empty()) {
    j["degrade"] = {{"spec", m.degrade_spec}, {"seed", m.degrade_seed}};
  }
  if (!m.extra.is_null()) j["extra"] = m.extra;
  return j;
}

DatasetManifest manifest_from_json(const json& j, const std::string& origin) {
  try {
    DatasetManifest m;
    m.name = j.at("name").get<std::string>();
    m.num_classes = j.at("classes").get<int>();
    if (j.contains("class_names")) m.class_names = j["class_names"].get<std::vector<std::string>>();
    m.image_shape = j.at("image_shape").get<std::vector<size_t>>();
    m.train_count = j.at("splits").value("train", 0u);
    m.test_count = j.at("splits").value("test", 0u);
    m.source_format = j.value("source_format", "generic");
    if (j.contains("degrade")) {
      m.degrade_spec = j["degrade"].value("spec", "");
      m.degrade_seed = j["degrade"].value("seed", 0ull);
    }
    if (j.contains("extra")) m.extra = j["extra"];
    return m;
  } catch (const json::exception& e) {
    throw DataError(origin + ": bad manifest: " + e.what());
  }
}

void save_split_files(const fs::path& dir, const std::string& split,
                      const LabeledDataset& ds) {
  save_tensor(dir / (split + "_images.tns"), ds.images);
  Tensor labels({ds.labels.size()});
  for (size_t i = 0; i < ds.labels.size(); ++i) labels[i] = ds.labels[i];
  save_tensor(dir / (split + "_labels.tns"), labels);
}

}  // namespace

void save_dataset(const fs::path& dir, const DatasetManifest& manifest,
                  const LabeledDataset* train, const LabeledDataset* test) {
  fs::create_directories(dir);
  DatasetManifest m = manifest;
  m.train_count = train ? train->size() : 0;
  m.test_count = test ? test->size() : 0;
  if (train) save_split_files(dir, "train", *train);
  if (test) save_split_files(dir, "test", *test);
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw DataError("cannot write " + (dir / "manifest.json").string());
  out << manifest_to_json(m).dump(2) << "\n";
}

DatasetManifest load_manifest(const fs::path& dir) {
  const fs::path p = dir / "manifest.json";
  std::ifstream in(p);
  if (!in) throw DataError("cannot open " + p.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(p.string() + ": invalid JSON: " + e.what());
  }
  return manifest_from_json(j, p.string());
}

LabeledDataset load_split(const fs::path& dir, const std::string& split) {
  const DatasetManifest m = load_manifest(dir);
  const size_t expect = split == "train" ? m.train_count : m.test_count;
  if (expect == 0) throw DataError(dir.string() + ": dataset has no '" + split + "' split");

  LabeledDataset ds;
  ds.name = m.name;
  ds.num_classes = m.num_classes;
  ds.images = load_tensor(dir / (split + "_images.tns"));
  if (ds.images.rank() != 4)
    throw DataError(dir.string() + ": images must be [N,C,H,W], got " +
                    shape_str(ds.images.shape()));
  Tensor labels = load_tensor(dir / (split + "_labels.tns"));
  if (labels.size() != ds.images.dim(0))
    throw DataError(dir.string() + ": image/label count mismatch: " +
                    std::to_string(ds.images.dim(0)) + " vs " + std::to_string(labels.size()));
  if (labels.size() != expect)
    throw DataError(dir.string() + ": manifest promises " + std::to_string(expect) + " " +
                    split + " records, found " + std::to_string(labels.size()));
  ds.labels.resize(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) {
    const double v = labels[i];
    if (v != std::floor(v) || v < 0 || v >= ds.num_classes)
      throw DataError(dir.string() + ": label " + std::to_string(v) + " at record " +
                      std::to_string(i) + " out of range for " +
                      std::to_string(ds.num_classes) + " classes");
    ds.labels[i] = static_cast<int>(v);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// CIFAR-10.
// ---------------------------------------------------------------------------

double grayscale_pixel(double r, double g, double b) {
  return std::clamp(0.299 * r + 0.587 * g + 0.114 * b, 0.0, 255.0);
}

Image grayscale(const Image& rgb) {
  if (rgb.channels != 3)
    throw std::invalid_argument("grayscale: expected 3 channels, got " +
                                std::to_string(rgb.channels));
  Image out(1, rgb.height, rgb.width);
  for (int y = 0; y < rgb.height; ++y)
    for (int x = 0; x < rgb.width; ++x)
      out.at(0, y, x) = grayscale_pixel(rgb.at(0, y, x), rgb.at(1, y, x), rgb.at(2, y, x));
  return out;
}

namespace {

constexpr size_t kCifarRecord = 3073;  // label byte + 3*1024 pixel bytes

void append_cifar_file(const fs::path& file, std::vector<double>& pixels,
                       std::vector<int>& labels) {
  const std::string data = read_file(file);
  if (data.size() % kCifarRecord != 0)
    throw DataError(file.string() + ": size " + std::to_string(data.size()) +
                    " is not a multiple of the 3073-byte record");
  const size_t n = data.size() / kCifarRecord;
  for (size_t i = 0; i < n; ++i) {
    const unsigned char* rec =
        reinterpret_cast<const unsigned char*>(data.data()) + i * kCifarRecord;
    if (rec[0] >= 10)
      throw DataError(file.string() + ": label " + std::to_string(rec[0]) + " at record " +
                      std::to_string(i) + " is >= 10");
    labels.push_back(rec[0]);
    const unsigned char* r = rec + 1;
    const unsigned char* g = rec + 1 + 1024;
    const unsigned char* b = rec + 1 + 2048;
    for (size_t p = 0; p < 1024; ++p)
      pixels.push_back(grayscale_pixel(r[p], g[p], b[p]));
  }
}

}  // namespace

LabeledDataset load_cifar10(const fs::path& dir, const std::string& split) {
  std::vector<fs::path> files;
  if (split == "train") {
    for (int i = 1; i <= 5; ++i) files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
  } else if (split == "test") {
    files.push_back(dir / "test_batch.bin");
  } else {
    throw DataError("load_cifar10: unknown split '" + split + "'");
  }
  std::vector<double> pixels;
  std::vector<int> labels;
  for (const fs::path& f : files) append_cifar_file(f, pixels, labels);

  LabeledDataset ds;
  ds.name = "cifar10";
  ds.num_classes = 10;
  ds.labels = std::move(labels);
  ds.images = Tensor::from({ds.labels.size(), 1, 32, 32}, std::move(pixels));
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic shapes.
// ---------------------------------------------------------------------------

namespace {

bool in_triangle(double px, double py, double r) {
  // Upward triangle: apex (0,-r), base corners (+-0.866r, +0.5r).
  const double x0 = 0.0, y0 = -r;
  const double x1 = -0.8660254037844386 * r, y1 = 0.5 * r;
  const double x2 = 0.8660254037844386 * r, y2 = 0.5 * r;
  auto side = [&](double ax, double ay, double bx, double by) {
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
  };
  const double s0 = side(x0, y0, x1, y1);
  const double s1 = side(x1, y1, x2, y2);
  const double s2 = side(x2, y2, x0, y0);
  return (s0 >= 0 && s1 >= 0 && s2 >= 0) || (s0 <= 0 && s1 <= 0 && s2 <= 0);
}

bool in_shape(int kind, double dx, double dy, double r) {
  switch (kind) {
    case 0:  // circle
      return dx * dx + dy * dy <= r * r;
    case 1:  // square
      return std::abs(dx) <= 0.85 * r && std::abs(dy) <= 0.85 * r;
    case 2:  // triangle
      return in_triangle(dx, dy, 1.15 * r);
    default:  // cross
      return (std::abs(dx) <= 0.34 * r && std::abs(dy) <= 1.05 * r) ||
             (std::abs(dy) <= 0.34 * r && std::abs(dx) <= 1.05 * r);
  }
}

}  // namespace

LabeledDataset synth_shapes(int classes, int count, int size, uint64_t seed) {
  if (classes < 2 || classes > 4)
    throw std::invalid_argument("synth_shapes: classes must be in [2,4]");
  if (count <= 0 || size < 8) throw std::invalid_argument("synth_shapes: bad count or size");

  LabeledDataset ds;
  ds.name = "synth-shapes";
  ds.num_classes = classes;
  ds.images = Tensor({static_cast<size_t>(count), 1, static_cast<size_t>(size),
                      static_cast<size_t>(size)});
  ds.labels.resize(count);

  const size_t per = static_cast<size_t>(size) * size;
  for (int i = 0; i < count; ++i) {
    const int cls = i % classes;
    ds.labels[i] = cls;
    Rng rng(derive_seed(seed, static_cast<uint64_t>(i)));

    const double bg = rng.uniform(30.0, 70.0);
    const double noise_std = rng.uniform(3.0, 8.0);
    const double fg = rng.uniform(140.0, 230.0);
    const double cx = size / 2.0 + rng.uniform(-0.12, 0.12) * size;
    const double cy = size / 2.0 + rng.uniform(-0.12, 0.12) * size;
    const double r = rng.uniform(0.24, 0.38) * size;

    double* img = ds.images.data() + static_cast<size_t>(i) * per;
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        // 4x4 supersampled coverage for soft edges.
        int hit = 0;
        for (int sy = 0; sy < 4; ++sy)
          for (int sx = 0; sx < 4; ++sx) {
            const double px = x + (sx + 0.5) / 4.0 - cx;
            const double py = y + (sy + 0.5) / 4.0 - cy;
            if (in_shape(cls, px, py, r)) ++hit;
          }
        const double coverage = hit / 16.0;
        const double base = bg + rng.normal(0.0, noise_std);
        img[y * size + x] = std::clamp(base + coverage * (fg - base), 0.0, 255.0);
      }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Checkpoints.
// ---------------------------------------------------------------------------

namespace {

json layer_to_json(const LayerKind& l) {
  switch (l.op) {
    case LayerOp::Conv:
      return {{"op", "conv"}, {"filters", l.out_channels}, {"kernel", l.kernel}};
    case LayerOp::Relu:
      return {{"op", "relu"}};
    case LayerOp::MaxPool:
      return {{"op", "maxpool"}};
    case LayerOp::Dropout:
      return {{"op", "dropout"}, {"rate", l.rate}};
    case LayerOp::FullyConnected:
      return {{"op", "fc"}, {"units", l.out_units}};
  }
  return {};
}

LayerKind layer_from_json(const json& j) {
  const std::string op = j.at("op").get<std::string>();
  if (op == "conv") return LayerKind::conv(j.at("filters").get<int>(), j.at("kernel").get<int>());
  if (op == "relu") return LayerKind::relu();
  if (op == "maxpool") return LayerKind::maxpool();
  if (op == "dropout") return LayerKind::dropout(j.at("rate").get<double>());
  if (op == "fc") return LayerKind::fc(j.at("units").get<int>());
  throw DataError("unknown layer op '" + op + "'");
}

}  // namespace

json model_spec_to_json(const ModelSpec& spec) {
  json j;
  j["input"] = {{"channels", spec.in_channels}, {"height", spec.in_h}, {"width", spec.in_w}};
  j["classes"] = spec.num_classes;
  j["layers"] = json::array();
  for (const LayerKind& l : spec.layers) j["layers"].push_back(layer_to_json(l));
  return j;
}

ModelSpec model_spec_from_json(const json& j) {
  try {
    ModelSpec spec;
    spec.in_channels = j.at("input").at("channels").get<int>();
    spec.in_h = j.at("input").at("height").get<int>();
    spec.in_w = j.at("input").at("width").get<int>();
    spec.num_classes = j.value("classes", 0);
    for (const json& lj : j.at("layers")) spec.layers.push_back(layer_from_json(lj));
    return spec;
  } catch (const json::exception& e) {
    throw DataError(std::string("bad model spec: ") + e.what());
  }
}

ModelConfig model_config_from_json(const json& j) {
  try {
    ModelConfig cfg;
    cfg.in_channels = j.at("input").at("channels").get<int>();
    cfg.in_h = j.at("input").at("height").get<int>();
    cfg.in_w = j.at("input").at("width").get<int>();
    cfg.num_classes = j.at("classes").get<int>();
    for (const json& c : j.at("conv"))
      cfg.conv.emplace_back(c.at("filters").get<int>(), c.at("kernel").get<int>());
    cfg.fc = j.at("fc").get<std::vector<int>>();
    if (j.contains("pool_after")) cfg.pool_after = j["pool_after"].get<std::vector<int>>();
    cfg.dropout_rate = j.value("dropout", 0.5);
    return cfg;
  } catch (const json::exception& e) {
    throw DataError(std::string("bad model config: ") + e.what());
  }
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  json header;
  header["spec"] = model_spec_to_json(ckpt.model.spec);
  header["init_seed"] = ckpt.model.init_seed;
  header["provenance"] = ckpt.provenance;
  json shapes = json::array();
  for (size_t i = 0; i < ckpt.model.weights.size(); ++i) {
    shapes.push_back(ckpt.model.weights[i].shape());
    shapes.push_back(ckpt.model.biases[i].shape());
  }
  header["shapes"] = shapes;
  if (!ckpt.extra.empty()) {
    json es = json::array();
    for (const Tensor& t : ckpt.extra) es.push_back(t.shape());
    header["extra_shapes"] = es;
  }
  const std::string hdr = header.dump();

  std::string out;
  out.append(kCkptMagic, 4);
  put_u32(out, kFormatVersion);
  put_u64(out, hdr.size());
  out += hdr;
  for (size_t i = 0; i < ckpt.model.weights.size(); ++i) {
    const Tensor& w = ckpt.model.weights[i];
    for (size_t v = 0; v < w.size(); ++v) put_f64(out, w[v]);
    const Tensor& b = ckpt.model.biases[i];
    for (size_t v = 0; v < b.size(); ++v) put_f64(out, b[v]);
  }
  for (const Tensor& t : ckpt.extra)
    for (size_t v = 0; v < t.size(); ++v) put_f64(out, t[v]);
  write_file(path, out);
}

Checkpoint load_checkpoint(const fs::path& path) {
  Reader r(read_file(path), path.string());
  if (r.bytes(4) != std::string(kCkptMagic, 4))
    throw DataError(path.string() + ": not a checkpoint (bad magic)");
  const uint32_t version = r.u32();
  if (version != kFormatVersion)
    throw DataError(path.string() + ": unsupported checkpoint version " +
                    std::to_string(version));
  const uint64_t hdr_len = r.u64();
  json header;
  try {
    header = json::parse(r.bytes(hdr_len));
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": bad checkpoint header: " + e.what());
  }

  Checkpoint ckpt;
  ckpt.model.spec = model_spec_from_json(header.at("spec"));
  ckpt.model.init_seed = header.value("init_seed", 0ull);
  ckpt.provenance = header.value("provenance", json::object());

  const json& shapes = header.at("shapes");
  if (shapes.size() % 2 != 0) throw DataError(path.string() + ": odd shape table");
  const size_t layers = shapes.size() / 2;
  size_t payload = 0;
  for (const json& s : shapes) {
    size_t n = 1;
    for (size_t d : s.get<std::vector<size_t>>()) n *= d;
    payload += n;
  }
  const json extra_shapes = header.value("extra_shapes", json::array());
  for (const json& s : extra_shapes) {
    size_t n = 1;
    for (size_t d : s.get<std::vector<size_t>>()) n *= d;
    payload += n;
  }
  if (r.remaining() != payload * 8)
    throw DataError(path.string() + ": payload is " + std::to_string(r.remaining()) +
                    " bytes, shape table wants " + std::to_string(payload * 8));

  for (size_t i = 0; i < layers; ++i) {
    const std::vector<size_t> ws = shapes[2 * i].get<std::vector<size_t>>();
    const std::vector<size_t> bs = shapes[2 * i + 1].get<std::vector<size_t>>();
    Tensor w(ws);
    for (size_t v = 0; v < w.size(); ++v) w[v] = r.f64();
    Tensor b(bs);
    for (size_t v = 0; v < b.size(); ++v) b[v] = r.f64();
    ckpt.model.weights.push_back(std::move(w));
    ckpt.model.biases.push_back(std::move(b));
  }
  for (const json& s : extra_shapes) {
    Tensor t(s.get<std::vector<size_t>>());
    for (size_t v = 0; v < t.size(); ++v) t[v] = r.f64();
    ckpt.extra.push_back(std::move(t));
  }
  // The spec in the header must agree with the payload shapes.
  const WeightedModel check = init_weights(ckpt.model.spec, 0);
  for (size_t i = 0; i < ckpt.model.weights.size(); ++i) {
    if (i >= check.weights.size() || !check.weights[i].same_shape(ckpt.model.weights[i]))
      throw DataError(path.string() + ": shape table does not match the model spec at layer " +
                      std::to_string(i + 1));
  }
  if (check.weights.size() != ckpt.model.weights.size())
    throw DataError(path.string() + ": layer count does not match the model spec");
  return ckpt;
}

std::string bytes_hash(const void* data, size_t n) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_hash(const fs::path& path) {
  const std::string data = read_file(path);
  return bytes_hash(data.data(), data.size());
}

// ---------------------------------------------------------------------------
// Video datasets.
// ---------------------------------------------------------------------------

void save_video_dataset(const fs::path& dir, const VideoDataset& ds) {
  fs::create_directories(dir / "frames");
  json manifest;
  manifest["classes"] = ds.num_classes;
  manifest["videos"] = json::array();
  for (const VideoSample& v : ds.videos) {
    json vj;
    vj["id"] = v.id;
    vj["label"] = v.label;
    vj["frames"] = json::array();
    for (size_t f = 0; f < v.frames.size(); ++f) {
      const std::string rel = "frames/" + v.id + "_" + std::to_string(f) + ".tns";
      save_tensor(dir / rel, v.frames[f]);
      vj["frames"].push_back(rel);
    }
    manifest["videos"].push_back(vj);
  }
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw DataError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";
}

VideoDataset load_video_dataset(const fs::path& dir) {
  const fs::path p = dir / "manifest.json";
  std::ifstream in(p);
  if (!in) throw DataError("cannot open " + p.string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw DataError(p.string() + ": invalid JSON: " + e.what());
  }
  VideoDataset ds;
  try {
    ds.num_classes = manifest.at("classes").get<int>();
    for (const json& vj : manifest.at("videos")) {
      VideoSample v;
      v.id = vj.at("id").get<std::string>();
      v.label = vj.at("label").get<int>();
      if (v.label < 0 || v.label >= ds.num_classes)
        throw DataError(p.string() + ": video " + v.id + " label out of range");
      for (const json& f : vj.at("frames")) v.frames.push_back(load_tensor(dir / f.get<std::string>()));
      ds.videos.push_back(std::move(v));
    }
  } catch (const json::exception& e) {
    throw DataError(p.string() + ": bad manifest: " + e.what());
  }
  return ds;
}

VideoDataset synth_videos(const LabeledDataset& base, int videos_per_class, int frames,
                          int jitter, uint64_t seed) {
  VideoDataset ds;
  ds.num_classes = base.num_classes;
  const int h = static_cast<int>(base.images.dim(2));
  const int w = static_cast<int>(base.images.dim(3));

  // Source image indices per class, in dataset order.
  std::vector<std::vector<size_t>> by_class(base.num_classes);
  for (size_t i = 0; i < base.size(); ++i) by_class[base.labels[i]].push_back(i);

  for (int cls = 0; cls < base.num_classes; ++cls) {
    if (by_class[cls].empty())
      throw std::invalid_argument("synth_videos: class " + std::to_string(cls) + " is empty");
    for (int v = 0; v < videos_per_class; ++v) {
      Rng rng(derive_seed(seed, static_cast<uint64_t>(cls) * 100003 + v));
      VideoSample sample;
      sample.id = "v" + std::to_string(cls) + "_" + std::to_string(v);
      sample.label = cls;
      const Tensor still = base.image(by_class[cls][v % by_class[cls].size()]);
      for (int f = 0; f < frames; ++f) {
        const int dx = static_cast<int>(rng.uniform_int(2 * jitter + 1)) - jitter;
        const int dy = static_cast<int>(rng.uniform_int(2 * jitter + 1)) - jitter;
        Tensor frame(still.shape());
        for (size_t c = 0; c < still.dim(0); ++c)
          for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
              const int sy = std::clamp(y + dy, 0, h - 1);
              const int sx = std::clamp(x + dx, 0, w - 1);
              frame.at3(c, y, x) = still.at3(c, sy, sx);
            }
        sample.frames.push_back(std::move(frame));
      }
      ds.videos.push_back(std::move(sample));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Metrics and image export.
// ---------------------------------------------------------------------------

MetricsWriter::MetricsWriter(const fs::path& path) : path_(path) {
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
  std::ofstream out(path_, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path_.string());
}

void MetricsWriter::write(const json& j) {
  if (path_.empty()) return;
  std::ofstream out(path_, std::ios::app);
  out << j.dump() << "\n";
}

void save_pnm(const fs::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("save_pnm: expected 1 or 3 channels, got " +
                                std::to_string(img.channels));
  std::string out = img.channels == 1 ? "P5\n" : "P6\n";
  out += std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        const long v = std::lround(std::clamp(img.at(c, y, x), 0.0, 255.0));
        out.push_back(static_cast<char>(std::clamp(v, 0l, 255l)));
      }
  write_file(path, out);
}

}  // namespace advtrain
