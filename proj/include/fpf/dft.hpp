#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include "fpf/image.hpp"

namespace fpf {

// Direct row-column 2-D DFT. O(h*w*(h+w)) with precomputed twiddles; ample
// for desk-scale slices and size-agnostic.
inline void dft2(const cplx* in, cplx* out, std::size_t h, std::size_t w,
                 bool inverse) {
  const double sign = inverse ? 1.0 : -1.0;
  auto twiddles = [&](std::size_t n) {
    std::vector<cplx> tw(n);
    for (std::size_t k = 0; k < n; ++k) {
      const double a = sign * 2.0 * M_PI * static_cast<double>(k) / static_cast<double>(n);
      tw[k] = {std::cos(a), std::sin(a)};
    }
    return tw;
  };
  const auto tw_w = twiddles(w);
  const auto tw_h = twiddles(h);

  // rows
  std::vector<cplx> tmp(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t k = 0; k < w; ++k) {
      cplx acc = 0.0;
      for (std::size_t x = 0; x < w; ++x) acc += in[y * w + x] * tw_w[(k * x) % w];
      tmp[y * w + k] = acc;
    }
  }
  // columns
  for (std::size_t x = 0; x < w; ++x) {
    for (std::size_t k = 0; k < h; ++k) {
      cplx acc = 0.0;
      for (std::size_t y = 0; y < h; ++y) acc += tmp[y * w + x] * tw_h[(k * y) % h];
      out[k * w + x] = acc;
    }
  }
  if (inverse) {
    const double scale = 1.0 / static_cast<double>(h * w);
    for (std::size_t i = 0; i < h * w; ++i) out[i] *= scale;
  }
}

inline std::vector<cplx> dft2(const std::vector<cplx>& in, std::size_t h,
                              std::size_t w, bool inverse) {
  std::vector<cplx> out(h * w);
  dft2(in.data(), out.data(), h, w, inverse);
  return out;
}

}  // namespace fpf
