#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "fpf/dft.hpp"
#include "fpf/image.hpp"
#include "fpf/rng.hpp"
#include "fpf/signal.hpp"

namespace fpf {

// 111.246 degrees
inline constexpr double kGoldenAngleRad = M_PI * 0.6180339887498949;

// Ground-truth maps plus the piecewise-constant region structure they were
// painted from. Label 0 is background, labels >= 1 are foreground regions.
struct Phantom {
  ParametricMaps maps;
  std::vector<int> region_labels;  // H x W
  Mask foreground;
  std::vector<TissueParams> region_params;  // region_params[label - 1]
};

namespace detail {

struct Ellipse {
  double cy, cx, ry, rx, angle;

  bool contains(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = (dx * c + dy * s) / rx;
    const double v = (-dx * s + dy * c) / ry;
    return u * u + v * v <= 1.0;
  }
};

inline TissueParams sample_params(Rng& rng, const ParameterGrid& grid,
                                  bool snap_to_grid) {
  TissueParams p;
  if (snap_to_grid) {
    p.ff = grid.ff[rng.index(grid.ff.size())];
    p.t1_h2o = grid.t1_h2o[rng.index(grid.t1_h2o.size())];
    p.t1_fat = grid.t1_fat[rng.index(grid.t1_fat.size())];
    p.delta_f = grid.delta_f[rng.index(grid.delta_f.size())];
    p.b1 = grid.b1[rng.index(grid.b1.size())];
    // At the FF extremes one pool carries zero weight and its T1 is not
    // identifiable; canonicalize to the grid minimum so matching, which
    // breaks ties toward the lowest atom index, reproduces the map exactly.
    if (p.ff == 0.0) p.t1_fat = grid.t1_fat.front();
    if (p.ff == 1.0) p.t1_h2o = grid.t1_h2o.front();
  } else {
    p.ff = rng.uniform(grid.ff.front(), grid.ff.back());
    p.t1_h2o = rng.uniform(grid.t1_h2o.front(), grid.t1_h2o.back());
    p.t1_fat = rng.uniform(grid.t1_fat.front(), grid.t1_fat.back());
    p.delta_f = rng.uniform(grid.delta_f.front(), grid.delta_f.back());
    p.b1 = rng.uniform(grid.b1.front(), grid.b1.back());
  }
  return p;
}

}  // namespace detail

// Piecewise-constant elliptical regions inside an elliptical body outline.
// Region 1 is the body base tissue; further regions are painted on top in
// order. Pure function of (arguments, seed).
inline Phantom generate_phantom(std::size_t h, std::size_t w, std::size_t n_regions,
                                std::uint64_t seed, const ParameterGrid& grid,
                                bool snap_to_grid) {
  require(h >= 8 && w >= 8, "phantom dims too small");
  require(n_regions >= 1, "need at least one region");
  grid.validate();
  Rng rng(mix_seed(seed, 0x70686172ULL));

  const detail::Ellipse body{static_cast<double>(h) / 2.0,
                             static_cast<double>(w) / 2.0,
                             0.42 * static_cast<double>(h),
                             0.42 * static_cast<double>(w), 0.0};

  Phantom ph;
  ph.maps = ParametricMaps(h, w);
  ph.region_labels.assign(h * w, 0);
  ph.foreground = Mask(h, w);
  ph.region_params.resize(n_regions);
  for (std::size_t r = 0; r < n_regions; ++r) {
    ph.region_params[r] = detail::sample_params(rng, grid, snap_to_grid);
  }

  std::vector<detail::Ellipse> shapes;
  for (std::size_t r = 1; r < n_regions; ++r) {
    detail::Ellipse e;
    e.cy = rng.uniform(0.2 * static_cast<double>(h), 0.8 * static_cast<double>(h));
    e.cx = rng.uniform(0.2 * static_cast<double>(w), 0.8 * static_cast<double>(w));
    e.ry = rng.uniform(0.05, 0.22) * static_cast<double>(h);
    e.rx = rng.uniform(0.05, 0.22) * static_cast<double>(w);
    e.angle = rng.uniform(0.0, M_PI);
    shapes.push_back(e);
  }

  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double fy = static_cast<double>(y), fx = static_cast<double>(x);
      if (!body.contains(fy, fx)) continue;
      int label = 1;
      for (std::size_t r = 0; r < shapes.size(); ++r) {
        if (shapes[r].contains(fy, fx)) label = static_cast<int>(r) + 2;
      }
      ph.region_labels[y * w + x] = label;
      ph.foreground.at(y, x) = 1;
      const TissueParams& p = ph.region_params[static_cast<std::size_t>(label) - 1];
      ph.maps.at(ParametricMaps::kFF, y, x) = p.ff;
      ph.maps.at(ParametricMaps::kT1H2O, y, x) = p.t1_h2o;
      ph.maps.at(ParametricMaps::kT1Fat, y, x) = p.t1_fat;
      ph.maps.at(ParametricMaps::kDeltaF, y, x) = p.delta_f;
      ph.maps.at(ParametricMaps::kB1, y, x) = p.b1;
    }
  }
  return ph;
}

// Voxel-wise fingerprint simulation; background voxels stay zero. Fingerprints
// are simulated once per region.
inline MrfImage forward_simulate(const Phantom& phantom, const SequenceTrain& seq) {
  seq.validate();
  const std::size_t h = phantom.maps.h, w = phantom.maps.w;
  MrfImage img(h, w, seq.frames());
  std::vector<Fingerprint> per_region(phantom.region_params.size());
  for (std::size_t r = 0; r < per_region.size(); ++r) {
    per_region[r] = simulate_fingerprint(seq, phantom.region_params[r]);
  }
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const int label = phantom.region_labels[y * w + x];
      if (label == 0) continue;
      const Fingerprint& fp = per_region[static_cast<std::size_t>(label) - 1];
      for (std::size_t f = 0; f < img.t; ++f) img.at(y, x, f) = fp[f];
    }
  }
  return img;
}

// Per-frame k-space retention mask: spokes_per_frame pseudo-radial lines
// through the k-space center, rotated by the golden angle from spoke to spoke
// and frame to frame. Centered coordinates.
inline Mask spoke_mask(std::size_t h, std::size_t w, std::size_t spokes,
                       std::size_t frame) {
  Mask m(h, w);
  const double cy = static_cast<double>(h) / 2.0;
  const double cx = static_cast<double>(w) / 2.0;
  const double len = std::hypot(static_cast<double>(h), static_cast<double>(w)) / 2.0;
  for (std::size_t s = 0; s < spokes; ++s) {
    const double theta =
        static_cast<double>(frame * spokes + s) * kGoldenAngleRad;
    const double c = std::cos(theta), sn = std::sin(theta);
    for (double r = -len; r <= len; r += 0.5) {
      const auto y = static_cast<long>(std::lround(cy + r * sn));
      const auto x = static_cast<long>(std::lround(cx + r * c));
      if (y >= 0 && y < static_cast<long>(h) && x >= 0 && x < static_cast<long>(w)) {
        m.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = 1;
      }
    }
  }
  return m;
}

// Additive complex white Gaussian noise at the requested SNR (signal power
// measured over nonzero-signal voxels), then, if requested, per-frame
// golden-angle line masking in k-space. snr_db = +infinity skips the noise.
inline MrfImage corrupt(const MrfImage& img, double snr_db,
                        std::optional<std::size_t> spokes_per_frame,
                        std::uint64_t rng_seed) {
  require(!std::isnan(snr_db), "snr_db must not be NaN");
  MrfImage out = img;

  if (std::isfinite(snr_db)) {
    double power = 0.0;
    std::size_t n_fg = 0;
    for (std::size_t v = 0; v < img.h * img.w; ++v) {
      bool fg = false;
      for (std::size_t f = 0; f < img.t; ++f) {
        if (img.data[v * img.t + f] != cplx(0.0, 0.0)) fg = true;
      }
      if (!fg) continue;
      ++n_fg;
      for (std::size_t f = 0; f < img.t; ++f) power += std::norm(img.data[v * img.t + f]);
    }
    require(n_fg > 0, "cannot set an SNR on an all-zero image");
    power /= static_cast<double>(n_fg * img.t);
    const double sigma = std::sqrt(power * std::pow(10.0, -snr_db / 10.0) / 2.0);
    Rng rng(mix_seed(rng_seed, 0x6e6f6973ULL));
    for (auto& v : out.data) v += cplx(sigma * rng.normal(), sigma * rng.normal());
  }

  // Masking more samples than the grid holds is a no-op.
  if (spokes_per_frame && *spokes_per_frame < std::min(img.h, img.w)) {
    const std::size_t hw = img.h * img.w;
    std::vector<cplx> frame(hw), spec(hw);
    const std::size_t cy = img.h / 2, cx = img.w / 2;
    for (std::size_t f = 0; f < img.t; ++f) {
      for (std::size_t v = 0; v < hw; ++v) frame[v] = out.data[v * img.t + f];
      dft2(frame.data(), spec.data(), img.h, img.w, false);
      const Mask m = spoke_mask(img.h, img.w, *spokes_per_frame, f);
      for (std::size_t u = 0; u < img.h; ++u) {
        for (std::size_t v = 0; v < img.w; ++v) {
          // spectrum bin (u, v) sits at centered-mask position
          const std::size_t my = (u + cy) % img.h;
          const std::size_t mx = (v + cx) % img.w;
          if (!m.at(my, mx)) spec[u * img.w + v] = 0.0;
        }
      }
      dft2(spec.data(), frame.data(), img.h, img.w, true);
      for (std::size_t v = 0; v < hw; ++v) out.data[v * img.t + f] = frame[v];
    }
  }
  return out;
}

}  // namespace fpf
