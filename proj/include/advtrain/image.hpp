#pragma once

#include <vector>

#include "advtrain/tensor.hpp"

namespace advtrain {

/// Planar image with real-valued pixels in [0,255]. Degradation operators
/// keep dimensions fixed and clamp back into range on exit.
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;  // [C,H,W] planes

  Image() = default;
  Image(int c, int h, int w) : channels(c), height(h), width(w),
                               values(static_cast<size_t>(c) * h * w, 0.0) {}

  static Image constant(int c, int h, int w, double v) {
    Image img(c, h, w);
    for (double& p : img.values) p = v;
    return img;
  }

  double& at(int c, int y, int x) {
    return values[(static_cast<size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return values[(static_cast<size_t>(c) * height + y) * width + x];
  }

  size_t pixel_count() const { return static_cast<size_t>(height) * width; }

  Tensor to_tensor() const;
  static Image from_tensor(const Tensor& t);  // expects [C,H,W]

  bool operator==(const Image&) const = default;
};

/// Clamp all values into [0,255].
void clamp_pixels(Image& img);

}  // namespace advtrain
