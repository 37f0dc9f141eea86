#include "advtrain/image.hpp"

#include <algorithm>
#include <stdexcept>

namespace advtrain {

Tensor Image::to_tensor() const {
  return Tensor::from({static_cast<size_t>(channels), static_cast<size_t>(height),
                       static_cast<size_t>(width)},
                      values);
}

Image Image::from_tensor(const Tensor& t) {
  if (t.rank() != 3)
    throw std::invalid_argument("Image::from_tensor: expected [C,H,W], got " +
                                shape_str(t.shape()));
  Image img(static_cast<int>(t.dim(0)), static_cast<int>(t.dim(1)),
            static_cast<int>(t.dim(2)));
  std::copy(t.data(), t.data() + t.size(), img.values.begin());
  return img;
}

void clamp_pixels(Image& img) {
  for (double& v : img.values) v = std::clamp(v, 0.0, 255.0);
}

}  // namespace advtrain
