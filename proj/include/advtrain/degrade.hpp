#pragma once

#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "advtrain/image.hpp"
#include "advtrain/rng.hpp"
#include "advtrain/tensor.hpp"

namespace advtrain {

// ---------------------------------------------------------------------------
// Degradation process descriptions. The scalar severity knob of each variant
// is its adverse factor: larger means a more severe degradation.
// ---------------------------------------------------------------------------

struct LowResOp {
  int factor = 1;  // >= 1
};

struct SaltPepperOp {
  double fraction = 0.5;  // in [0,1]
};

struct GaussianBlurOp {
  double stddev = 2.0;  // > 0
  int ksize = 9;        // odd
};

struct GaussianNoiseOp {
  double stddev = 25.0;  // >= 0
};

struct OccludeOp {
  // Landmark box in relative image coordinates.
  double box_x = 0.15, box_y = 0.20, box_w = 0.70, box_h = 0.25;
  // Shape width/height as fractions of the box dimensions.
  double min_frac = 0.25, max_frac = 0.60;
  double value_lo = 0.0, value_hi = 255.0;
};

struct DegradeSpec;

struct MixedOp {
  std::vector<DegradeSpec> specs;  // applied left to right; non-empty
};

struct DegradeSpec {
  std::variant<LowResOp, SaltPepperOp, GaussianBlurOp, GaussianNoiseOp, OccludeOp, MixedOp> op;
};

/// Parses the `name:param|name:param` mini-language:
///   lowres:F | salt-pepper:FRAC | gauss-blur:STD[,KSIZE] | gauss-noise:STD
///   | occlude[:x,y,w,h[,minfrac,maxfrac]] | none
/// A pipe chain becomes a Mixed spec. Throws std::invalid_argument on errors.
DegradeSpec parse_degrade_spec(std::string_view text);
std::string to_string(const DegradeSpec& spec);

/// Degradation family with a free adverse factor: the template string
/// contains `{a}` where the factor goes, e.g. "lowres:{a}|gauss-noise:25".
/// A bare name like "lowres" is shorthand for "lowres:{a}".
class DegradeTemplate {
 public:
  explicit DegradeTemplate(std::string text);
  DegradeSpec make(double factor) const;
  const std::string& text() const { return text_; }

 private:
  std::string text_;
};

// ---------------------------------------------------------------------------
// Operators. Each preserves image dimensions and clamps output into [0,255].
// ---------------------------------------------------------------------------

/// Keys bicubic (a = -0.5), center-aligned sampling, edge-replicate taps.
Image bicubic_resize(const Image& img, int target_h, int target_w);

/// Bicubic down to (H/f, W/f) (floored), then bicubic back up.
Image degrade_lowres(const Image& img, int factor);

/// Exactly floor(fraction * H * W) distinct pixel positions, sampled without
/// replacement, each set to 0 or 255 across all channels with probability
/// 1/2 each. Remaining pixels are untouched.
Image degrade_salt_pepper(const Image& img, double fraction, Rng& rng);

/// Gaussian sampled at integer offsets, normalized to sum 1.
Tensor make_gaussian_kernel(double stddev, int ksize);

/// Convolution with edge-replicate boundary.
Image degrade_gaussian_blur(const Image& img, double stddev, int ksize);

/// I.i.d. zero-mean Gaussian per value, then clamp.
Image degrade_gaussian_noise(const Image& img, double stddev, Rng& rng);

struct PixelRect {
  int x = 0, y = 0, w = 0, h = 0;
};

struct Occlusion {
  bool ellipse = false;
  double cx = 0, cy = 0;  // center, pixels
  double w = 0, h = 0;    // full extents, pixels
  double value = 0;       // fill, shared by every covered pixel
};

/// Shape kind is rectangle or ellipse with equal probability; center uniform
/// in eye_box; extents uniform in [min_frac,max_frac] of the box dimensions;
/// fill value uniform in [value_lo, value_hi].
Occlusion sample_occlusion(const PixelRect& eye_box, const OccludeOp& params, Rng& rng);
Image apply_occlusion(const Image& img, const Occlusion& occ);

/// Errors if eye_box is not fully inside the image.
Image degrade_occlude(const Image& img, const PixelRect& eye_box, Rng& rng,
                      const OccludeOp& params);

/// Ordered composition for Mixed; single ops dispatch to the functions above.
Image apply_degrade(const Image& img, const DegradeSpec& spec, Rng& rng);

/// Applies `spec` to every image of a [N,C,H,W] batch. Image i uses the
/// independent stream derive(seed, i), so the result does not depend on
/// visit order and is safe to parallelize.
Tensor degrade_batch(const Tensor& images, const DegradeSpec& spec, uint64_t seed);

}  // namespace advtrain
