#include "advtrain/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "advtrain/parallel.hpp"

namespace advtrain {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

double keys_cubic(double x) {
  x = std::abs(x);
  if (x < 1.0) return 1.5 * x * x * x - 2.5 * x * x + 1.0;
  if (x < 2.0) return -0.5 * x * x * x + 2.5 * x * x - 4.0 * x + 2.0;
  return 0.0;
}

struct Taps {
  int idx[4];
  double w[4];
};

// Center-aligned source coordinates with edge-replicated tap indices.
std::vector<Taps> bicubic_taps(int src, int dst) {
  std::vector<Taps> taps(dst);
  const double scale = static_cast<double>(src) / dst;
  for (int d = 0; d < dst; ++d) {
    const double c = (d + 0.5) * scale - 0.5;
    const int f = static_cast<int>(std::floor(c));
    for (int t = 0; t < 4; ++t) {
      const int s = f - 1 + t;
      taps[d].idx[t] = std::clamp(s, 0, src - 1);
      taps[d].w[t] = keys_cubic(c - s);
    }
  }
  return taps;
}

}  // namespace

Image bicubic_resize(const Image& img, int target_h, int target_w) {
  require(target_h >= 1 && target_w >= 1, "bicubic_resize: target " + std::to_string(target_h) +
                                              "x" + std::to_string(target_w) + " must be >= 1");
  const std::vector<Taps> tx = bicubic_taps(img.width, target_w);
  const std::vector<Taps> ty = bicubic_taps(img.height, target_h);

  // Horizontal pass, then vertical; no intermediate clamping.
  std::vector<double> mid(static_cast<size_t>(img.channels) * img.height * target_w);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y) {
      const double* row = &img.values[(static_cast<size_t>(c) * img.height + y) * img.width];
      double* out = &mid[(static_cast<size_t>(c) * img.height + y) * target_w];
      for (int x = 0; x < target_w; ++x) {
        const Taps& t = tx[x];
        out[x] = t.w[0] * row[t.idx[0]] + t.w[1] * row[t.idx[1]] + t.w[2] * row[t.idx[2]] +
                 t.w[3] * row[t.idx[3]];
      }
    }

  Image out(img.channels, target_h, target_w);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < target_h; ++y) {
      const Taps& t = ty[y];
      const double* r0 = &mid[(static_cast<size_t>(c) * img.height + t.idx[0]) * target_w];
      const double* r1 = &mid[(static_cast<size_t>(c) * img.height + t.idx[1]) * target_w];
      const double* r2 = &mid[(static_cast<size_t>(c) * img.height + t.idx[2]) * target_w];
      const double* r3 = &mid[(static_cast<size_t>(c) * img.height + t.idx[3]) * target_w];
      double* o = &out.values[(static_cast<size_t>(c) * target_h + y) * target_w];
      for (int x = 0; x < target_w; ++x)
        o[x] = t.w[0] * r0[x] + t.w[1] * r1[x] + t.w[2] * r2[x] + t.w[3] * r3[x];
    }
  clamp_pixels(out);
  return out;
}

Image degrade_lowres(const Image& img, int factor) {
  require(factor >= 1, "lowres: factor " + std::to_string(factor) + " must be >= 1");
  require(factor <= std::min(img.height, img.width),
          "lowres: factor " + std::to_string(factor) + " exceeds min image dimension " +
              std::to_string(std::min(img.height, img.width)));
  if (factor == 1) {
    Image out = img;
    clamp_pixels(out);
    return out;
  }
  Image small = bicubic_resize(img, img.height / factor, img.width / factor);
  return bicubic_resize(small, img.height, img.width);
}

Image degrade_salt_pepper(const Image& img, double fraction, Rng& rng) {
  require(fraction >= 0.0 && fraction <= 1.0, "salt-pepper: fraction must be in [0,1]");
  Image out = img;
  const size_t total = img.pixel_count();
  const size_t m = static_cast<size_t>(std::floor(fraction * static_cast<double>(total)));
  if (m == 0) return out;

  // Partial Fisher-Yates gives m distinct positions.
  std::vector<uint32_t> pos(total);
  std::iota(pos.begin(), pos.end(), 0u);
  for (size_t i = 0; i < m; ++i) {
    const size_t j = i + rng.uniform_int(total - i);
    std::swap(pos[i], pos[j]);
  }
  for (size_t i = 0; i < m; ++i) {
    const double v = rng.uniform() < 0.5 ? 0.0 : 255.0;
    const int y = static_cast<int>(pos[i] / img.width);
    const int x = static_cast<int>(pos[i] % img.width);
    for (int c = 0; c < img.channels; ++c) out.at(c, y, x) = v;
  }
  return out;
}

Tensor make_gaussian_kernel(double stddev, int ksize) {
  require(stddev > 0.0, "gauss kernel: std must be > 0");
  require(ksize >= 1 && ksize % 2 == 1, "gauss kernel: size must be odd, got " +
                                            std::to_string(ksize));
  Tensor k({static_cast<size_t>(ksize), static_cast<size_t>(ksize)});
  const int r = ksize / 2;
  double sum = 0.0;
  for (int y = 0; y < ksize; ++y)
    for (int x = 0; x < ksize; ++x) {
      const double dy = y - r, dx = x - r;
      const double v = std::exp(-(dy * dy + dx * dx) / (2.0 * stddev * stddev));
      k.at2(y, x) = v;
      sum += v;
    }
  for (size_t i = 0; i < k.size(); ++i) k[i] /= sum;
  return k;
}

Image degrade_gaussian_blur(const Image& img, double stddev, int ksize) {
  require(stddev > 0.0, "gauss blur: std must be > 0");
  require(ksize >= 1 && ksize % 2 == 1, "gauss blur: kernel size must be odd");
  const int r = ksize / 2;
  std::vector<double> w(ksize);
  double wsum = 0.0;
  for (int i = 0; i < ksize; ++i) {
    const double d = i - r;
    w[i] = std::exp(-d * d / (2.0 * stddev * stddev));
    wsum += w[i];
  }
  for (double& v : w) v /= wsum;

  // Separable passes with edge replication; equals the dense normalized
  // 2-D kernel because the Gaussian factorizes.
  Image mid(img.channels, img.height, img.width);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        double acc = 0.0;
        for (int i = 0; i < ksize; ++i)
          acc += w[i] * img.at(c, y, std::clamp(x + i - r, 0, img.width - 1));
        mid.at(c, y, x) = acc;
      }
  Image out(img.channels, img.height, img.width);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        double acc = 0.0;
        for (int i = 0; i < ksize; ++i)
          acc += w[i] * mid.at(c, std::clamp(y + i - r, 0, img.height - 1), x);
        out.at(c, y, x) = acc;
      }
  clamp_pixels(out);
  return out;
}

Image degrade_gaussian_noise(const Image& img, double stddev, Rng& rng) {
  require(stddev >= 0.0, "gauss noise: std must be >= 0");
  Image out = img;
  if (stddev == 0.0) return out;
  for (double& v : out.values) v += rng.normal(0.0, stddev);
  clamp_pixels(out);
  return out;
}

Occlusion sample_occlusion(const PixelRect& eye_box, const OccludeOp& params, Rng& rng) {
  Occlusion occ;
  occ.ellipse = rng.uniform() < 0.5;
  occ.cx = rng.uniform(eye_box.x, eye_box.x + eye_box.w);
  occ.cy = rng.uniform(eye_box.y, eye_box.y + eye_box.h);
  occ.w = rng.uniform(params.min_frac, params.max_frac) * eye_box.w;
  occ.h = rng.uniform(params.min_frac, params.max_frac) * eye_box.h;
  occ.value = rng.uniform(params.value_lo, params.value_hi);
  return occ;
}

Image apply_occlusion(const Image& img, const Occlusion& occ) {
  Image out = img;
  const double rx = occ.w / 2.0, ry = occ.h / 2.0;
  const int y0 = std::max(0, static_cast<int>(std::floor(occ.cy - ry)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(occ.cy + ry)));
  const int x0 = std::max(0, static_cast<int>(std::floor(occ.cx - rx)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(occ.cx + rx)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      bool covered;
      if (occ.ellipse) {
        const double dx = (x - occ.cx) / (rx > 0 ? rx : 1e-12);
        const double dy = (y - occ.cy) / (ry > 0 ? ry : 1e-12);
        covered = dx * dx + dy * dy <= 1.0;
      } else {
        covered = std::abs(x - occ.cx) <= rx && std::abs(y - occ.cy) <= ry;
      }
      if (covered)
        for (int c = 0; c < img.channels; ++c) out.at(c, y, x) = occ.value;
    }
  return out;
}

Image degrade_occlude(const Image& img, const PixelRect& eye_box, Rng& rng,
                      const OccludeOp& params) {
  require(eye_box.x >= 0 && eye_box.y >= 0 && eye_box.w > 0 && eye_box.h > 0 &&
              eye_box.x + eye_box.w <= img.width && eye_box.y + eye_box.h <= img.height,
          "occlude: eye box outside image bounds");
  return apply_occlusion(img, sample_occlusion(eye_box, params, rng));
}

Image apply_degrade(const Image& img, const DegradeSpec& spec, Rng& rng) {
  struct Visitor {
    const Image& img;
    Rng& rng;
    Image operator()(const LowResOp& op) const { return degrade_lowres(img, op.factor); }
    Image operator()(const SaltPepperOp& op) const {
      return degrade_salt_pepper(img, op.fraction, rng);
    }
    Image operator()(const GaussianBlurOp& op) const {
      return degrade_gaussian_blur(img, op.stddev, op.ksize);
    }
    Image operator()(const GaussianNoiseOp& op) const {
      return degrade_gaussian_noise(img, op.stddev, rng);
    }
    Image operator()(const OccludeOp& op) const {
      PixelRect box;
      box.x = static_cast<int>(std::floor(op.box_x * img.width));
      box.y = static_cast<int>(std::floor(op.box_y * img.height));
      box.w = std::max(1, static_cast<int>(std::floor(op.box_w * img.width)));
      box.h = std::max(1, static_cast<int>(std::floor(op.box_h * img.height)));
      box.w = std::min(box.w, img.width - box.x);
      box.h = std::min(box.h, img.height - box.y);
      return degrade_occlude(img, box, rng, op);
    }
    Image operator()(const MixedOp& op) const {
      require(!op.specs.empty(), "mixed degradation: empty list");
      Image cur = img;
      for (const DegradeSpec& s : op.specs) cur = apply_degrade(cur, s, rng);
      return cur;
    }
  };
  return std::visit(Visitor{img, rng}, spec.op);
}

Tensor degrade_batch(const Tensor& images, const DegradeSpec& spec, uint64_t seed) {
  if (images.rank() != 4)
    throw std::invalid_argument("degrade_batch: expected [N,C,H,W], got " +
                                shape_str(images.shape()));
  const size_t n = images.dim(0);
  const size_t per = images.size() / n;
  Tensor out(images.shape());
  parallel_for(n, [&](size_t i) {
    Tensor one = Tensor::from({images.dim(1), images.dim(2), images.dim(3)},
                              std::vector<double>(images.data() + i * per,
                                                  images.data() + (i + 1) * per));
    Rng rng(derive_seed(seed, i));
    Image deg = apply_degrade(Image::from_tensor(one), spec, rng);
    std::copy(deg.values.begin(), deg.values.end(), out.data() + i * per);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Spec mini-language.
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> parts;
  size_t start = 0;
  while (true) {
    const size_t p = s.find(sep, start);
    if (p == std::string_view::npos) {
      parts.emplace_back(s.substr(start));
      return parts;
    }
    parts.emplace_back(s.substr(start, p - start));
    start = p + 1;
  }
}

double parse_num(const std::string& s, const std::string& what) {
  try {
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("degrade spec: bad " + what + " '" + s + "'");
  }
}

DegradeSpec parse_single(const std::string& term) {
  const size_t colon = term.find(':');
  const std::string name = term.substr(0, colon);
  std::vector<std::string> args;
  if (colon != std::string::npos) args = split(term.substr(colon + 1), ',');

  auto want = [&](size_t lo, size_t hi) {
    if (args.size() < lo || args.size() > hi)
      throw std::invalid_argument("degrade spec: '" + name + "' takes " + std::to_string(lo) +
                                  (hi != lo ? ".." + std::to_string(hi) : "") +
                                  " parameters, got " + std::to_string(args.size()));
  };

  DegradeSpec spec;
  if (name == "lowres") {
    want(1, 1);
    const double f = parse_num(args[0], "factor");
    if (f < 1.0 || f != std::floor(f))
      throw std::invalid_argument("degrade spec: lowres factor must be an integer >= 1");
    spec.op = LowResOp{static_cast<int>(f)};
  } else if (name == "salt-pepper") {
    want(1, 1);
    spec.op = SaltPepperOp{parse_num(args[0], "fraction")};
  } else if (name == "gauss-blur") {
    want(1, 2);
    GaussianBlurOp op;
    op.stddev = parse_num(args[0], "std");
    if (args.size() == 2) op.ksize = static_cast<int>(parse_num(args[1], "kernel size"));
    spec.op = op;
  } else if (name == "gauss-noise") {
    want(1, 1);
    spec.op = GaussianNoiseOp{parse_num(args[0], "std")};
  } else if (name == "occlude") {
    if (!args.empty() && args.size() != 4 && args.size() != 6)
      throw std::invalid_argument("degrade spec: occlude takes 0, 4 or 6 parameters");
    OccludeOp op;
    if (args.size() >= 4) {
      op.box_x = parse_num(args[0], "box x");
      op.box_y = parse_num(args[1], "box y");
      op.box_w = parse_num(args[2], "box w");
      op.box_h = parse_num(args[3], "box h");
    }
    if (args.size() == 6) {
      op.min_frac = parse_num(args[4], "min frac");
      op.max_frac = parse_num(args[5], "max frac");
    }
    spec.op = op;
  } else if (name == "none") {
    want(0, 0);
    spec.op = LowResOp{1};
  } else {
    throw std::invalid_argument("degrade spec: unknown operator '" + name + "'");
  }
  return spec;
}

std::string fmt(double v) {
  std::string s = std::to_string(v);
  while (s.size() > 1 && s.back() == '0') s.pop_back();
  if (!s.empty() && s.back() == '.') s.pop_back();
  return s;
}

}  // namespace

DegradeSpec parse_degrade_spec(std::string_view text) {
  if (text.empty()) throw std::invalid_argument("degrade spec: empty");
  std::vector<std::string> terms = split(text, '|');
  if (terms.size() == 1) return parse_single(terms[0]);
  MixedOp mixed;
  for (const std::string& t : terms) mixed.specs.push_back(parse_single(t));
  DegradeSpec spec;
  spec.op = std::move(mixed);
  return spec;
}

std::string to_string(const DegradeSpec& spec) {
  struct Visitor {
    std::string operator()(const LowResOp& op) const {
      return "lowres:" + std::to_string(op.factor);
    }
    std::string operator()(const SaltPepperOp& op) const {
      return "salt-pepper:" + fmt(op.fraction);
    }
    std::string operator()(const GaussianBlurOp& op) const {
      return "gauss-blur:" + fmt(op.stddev) + "," + std::to_string(op.ksize);
    }
    std::string operator()(const GaussianNoiseOp& op) const {
      return "gauss-noise:" + fmt(op.stddev);
    }
    std::string operator()(const OccludeOp& op) const {
      return "occlude:" + fmt(op.box_x) + "," + fmt(op.box_y) + "," + fmt(op.box_w) + "," +
             fmt(op.box_h) + "," + fmt(op.min_frac) + "," + fmt(op.max_frac);
    }
    std::string operator()(const MixedOp& op) const {
      std::string s;
      for (size_t i = 0; i < op.specs.size(); ++i) {
        if (i) s += "|";
        s += to_string(op.specs[i]);
      }
      return s;
    }
  };
  return std::visit(Visitor{}, spec.op);
}

DegradeTemplate::DegradeTemplate(std::string text) : text_(std::move(text)) {
  if (text_.find(':') == std::string::npos && text_.find('{') == std::string::npos)
    text_ += ":{a}";
  make(1.0);  // validate eagerly
}

DegradeSpec DegradeTemplate::make(double factor) const {
  std::string s = text_;
  const std::string key = "{a}";
  size_t p;
  while ((p = s.find(key)) != std::string::npos) s.replace(p, key.size(), fmt(factor));
  return parse_degrade_spec(s);
}

}  // namespace advtrain
