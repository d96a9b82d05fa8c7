#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace fpf {

using cplx = std::complex<double>;

// H x W x T complex image-space time series. Layout: (y, x, frame), frame fastest.
struct MrfImage {
  std::size_t h = 0, w = 0, t = 0;
  std::vector<cplx> data;

  MrfImage() = default;
  MrfImage(std::size_t h_, std::size_t w_, std::size_t t_)
      : h(h_), w(w_), t(t_), data(h_ * w_ * t_) {}

  cplx& at(std::size_t y, std::size_t x, std::size_t f) {
    return data[(y * w + x) * t + f];
  }
  cplx at(std::size_t y, std::size_t x, std::size_t f) const {
    return data[(y * w + x) * t + f];
  }
};

// H x W boolean mask.
struct Mask {
  std::size_t h = 0, w = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(std::size_t h_, std::size_t w_) : h(h_), w(w_), data(h_ * w_, 0) {}

  std::uint8_t& at(std::size_t y, std::size_t x) { return data[y * w + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return data[y * w + x]; }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : data) n += (v != 0);
    return n;
  }
};

// The five quantitative maps, planar layout: (map, y, x).
struct ParametricMaps {
  enum MapId { kFF = 0, kT1H2O = 1, kT1Fat = 2, kDeltaF = 3, kB1 = 4 };
  static constexpr std::size_t kNumMaps = 5;
  static constexpr const char* kMapNames[kNumMaps] = {"ff", "t1_h2o", "t1_fat",
                                                      "delta_f", "b1"};

  std::size_t h = 0, w = 0;
  std::vector<double> data;

  ParametricMaps() = default;
  ParametricMaps(std::size_t h_, std::size_t w_)
      : h(h_), w(w_), data(kNumMaps * h_ * w_, 0.0) {}

  double& at(std::size_t m, std::size_t y, std::size_t x) {
    return data[(m * h + y) * w + x];
  }
  double at(std::size_t m, std::size_t y, std::size_t x) const {
    return data[(m * h + y) * w + x];
  }

  // one map as a contiguous copy
  std::vector<double> map(std::size_t m) const {
    return {data.begin() + static_cast<std::ptrdiff_t>(m * h * w),
            data.begin() + static_cast<std::ptrdiff_t>((m + 1) * h * w)};
  }
};

inline void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace fpf
