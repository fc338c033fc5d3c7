#pragma once

#include "hcl/tensor.hpp"

namespace hcl {

// Channel-planar RGB raster, values nominally in [0,1].
template <class S>
struct Image {
  int height = 0, width = 0;
  VecX<S> data;  // 3 * height * width, planes R, G, B

  static Image zeros(int h, int w) {
    Image im;
    im.height = h;
    im.width = w;
    im.data = VecX<S>::Zero(Index(3) * h * w);
    return im;
  }

  S& at(int c, int y, int x) { return data[(Index(c) * height + y) * width + x]; }
  S at(int c, int y, int x) const { return data[(Index(c) * height + y) * width + x]; }

  Tensor<S> to_tensor() const { return Tensor<S>::from({3, height, width}, data); }

  template <class S2>
  Image<S2> cast() const {
    Image<S2> out;
    out.height = height;
    out.width = width;
    out.data = data.template cast<S2>();
    return out;
  }
};

}  // namespace hcl
