#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fpf/dft.hpp"
#include "fpf/image.hpp"
#include "fpf/net.hpp"
#include "fpf/pipeline.hpp"
#include "fpf/rng.hpp"

namespace fpf {

inline constexpr double kFfExclusionThreshold = 0.7;

// fastMRI-convention NRMSE: ||pred - ref||_2 / ||ref||_2 over masked voxels.
inline double nrmse(const std::vector<double>& ref, const std::vector<double>& pred,
                    const Mask& mask) {
  require(ref.size() == pred.size() && ref.size() == mask.data.size(),
          "nrmse operands must agree in size");
  double num = 0.0, den = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (!mask.data[i]) continue;
    ++n;
    const double d = pred[i] - ref[i];
    num += d * d;
    den += ref[i] * ref[i];
  }
  require(n > 0, "nrmse over an empty mask");
  require(den > 0.0, "nrmse reference has zero norm");
  return std::sqrt(num / den);
}

// PSNR = 10 log10(max(ref)^2 / MSE) with the max taken over the mask;
// identical maps give +infinity.
inline double psnr(const std::vector<double>& ref, const std::vector<double>& pred,
                   const Mask& mask) {
  require(ref.size() == pred.size() && ref.size() == mask.data.size(),
          "psnr operands must agree in size");
  double mse = 0.0, peak = -std::numeric_limits<double>::infinity();
  std::size_t n = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (!mask.data[i]) continue;
    ++n;
    const double d = pred[i] - ref[i];
    mse += d * d;
    peak = std::max(peak, ref[i]);
  }
  require(n > 0, "psnr over an empty mask");
  mse /= static_cast<double>(n);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

// Mean local SSIM over all valid 7x7 uniform windows, stride 1. K1 = 0.01,
// K2 = 0.03, L = max of the reference map.
inline double ssim(const std::vector<double>& ref, const std::vector<double>& pred,
                   std::size_t h, std::size_t w, std::size_t window = 7,
                   double k1 = 0.01, double k2 = 0.03) {
  require(ref.size() == h * w && pred.size() == h * w, "ssim shape mismatch");
  require(h >= window && w >= window, "map smaller than the ssim window");
  double peak = 0.0;
  for (auto v : ref) peak = std::max(peak, v);
  const double c1 = (k1 * peak) * (k1 * peak);
  const double c2 = (k2 * peak) * (k2 * peak);
  const auto wn = static_cast<double>(window * window);
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t y0 = 0; y0 + window <= h; ++y0) {
    for (std::size_t x0 = 0; x0 + window <= w; ++x0) {
      double mx = 0.0, my = 0.0;
      for (std::size_t y = 0; y < window; ++y) {
        for (std::size_t x = 0; x < window; ++x) {
          mx += ref[(y0 + y) * w + x0 + x];
          my += pred[(y0 + y) * w + x0 + x];
        }
      }
      mx /= wn;
      my /= wn;
      double vx = 0.0, vy = 0.0, cov = 0.0;
      for (std::size_t y = 0; y < window; ++y) {
        for (std::size_t x = 0; x < window; ++x) {
          const double dx = ref[(y0 + y) * w + x0 + x] - mx;
          const double dy = pred[(y0 + y) * w + x0 + x] - my;
          vx += dx * dx;
          vy += dy * dy;
          cov += dx * dy;
        }
      }
      vx /= wn;
      vy /= wn;
      cov /= wn;
      acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) /
             ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return acc / static_cast<double>(count);
}

// --- ROI analysis -----------------------------------------------------------

struct RoiPair {
  int roi_id = 0;
  double ref_mean = 0.0;
  double pred_mean = 0.0;
};

struct RegressionResult {
  double slope = 0.0, intercept = 0.0, r2 = 0.0;
  std::vector<RoiPair> pairs;
};

struct BlandAltman {
  double bias = 0.0, lower = 0.0, upper = 0.0;
};

// Per-ROI means from a label image; label 0 is background. ROIs whose voxels
// are fully excluded are dropped.
inline std::vector<RoiPair> roi_means(const std::vector<double>& ref,
                                      const std::vector<double>& pred,
                                      const std::vector<int>& labels,
                                      const Mask& mask) {
  std::map<int, std::array<double, 3>> acc;  // label -> (sum ref, sum pred, n)
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] <= 0 || !mask.data[i]) continue;
    auto& a = acc[labels[i]];
    a[0] += ref[i];
    a[1] += pred[i];
    a[2] += 1.0;
  }
  std::vector<RoiPair> pairs;
  for (const auto& [id, a] : acc) {
    pairs.push_back({id, a[0] / a[2], a[1] / a[2]});
  }
  return pairs;
}

// Ordinary least squares of pred on ref; R^2 is the coefficient of
// determination of the fit.
inline RegressionResult roi_regression(const std::vector<RoiPair>& pairs) {
  require(pairs.size() >= 3, "regression needs at least 3 ROIs");
  double mx = 0.0, my = 0.0;
  for (const auto& p : pairs) {
    mx += p.ref_mean;
    my += p.pred_mean;
  }
  const auto n = static_cast<double>(pairs.size());
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& p : pairs) {
    sxx += (p.ref_mean - mx) * (p.ref_mean - mx);
    sxy += (p.ref_mean - mx) * (p.pred_mean - my);
    syy += (p.pred_mean - my) * (p.pred_mean - my);
  }
  require(sxx > 0.0, "degenerate ROI means: all reference values equal");
  RegressionResult r;
  r.slope = sxy / sxx;
  r.intercept = my - r.slope * mx;
  double ss_res = 0.0;
  for (const auto& p : pairs) {
    const double e = p.pred_mean - (r.slope * p.ref_mean + r.intercept);
    ss_res += e * e;
  }
  r.r2 = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
  r.pairs = pairs;
  return r;
}

// bias = mean difference, limits = bias +- 1.96 * sample std of differences.
inline BlandAltman bland_altman(const std::vector<RoiPair>& pairs) {
  require(!pairs.empty(), "bland-altman needs pairs");
  double mean = 0.0;
  for (const auto& p : pairs) mean += p.pred_mean - p.ref_mean;
  mean /= static_cast<double>(pairs.size());
  double var = 0.0;
  for (const auto& p : pairs) {
    const double d = p.pred_mean - p.ref_mean - mean;
    var += d * d;
  }
  var = pairs.size() > 1 ? var / static_cast<double>(pairs.size() - 1) : 0.0;
  const double sd = std::sqrt(var);
  return {mean, mean - 1.96 * sd, mean + 1.96 * sd};
}

// Evaluation masks per map: background always excluded; voxels with
// reference FF > 0.7 additionally excluded for T1_H2O only.
inline std::array<Mask, ParametricMaps::kNumMaps> apply_exclusions(
    const ParametricMaps& ref, const Mask& foreground,
    double ff_threshold = kFfExclusionThreshold) {
  std::array<Mask, ParametricMaps::kNumMaps> masks;
  for (std::size_t m = 0; m < ParametricMaps::kNumMaps; ++m) {
    masks[m] = foreground;
    if (m == ParametricMaps::kT1H2O) {
      for (std::size_t y = 0; y < ref.h; ++y) {
        for (std::size_t x = 0; x < ref.w; ++x) {
          if (ref.at(ParametricMaps::kFF, y, x) > ff_threshold) {
            masks[m].at(y, x) = 0;
          }
        }
      }
    }
  }
  return masks;
}

// --- blurriness ------------------------------------------------------------

inline constexpr std::array<double, 9> kBlurrinessThresholds = {
    0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95};

// Ratio of high-frequency energy to total energy, per radial threshold
// (fraction of the Nyquist radius). Computed on the mean-subtracted map so
// the DC term never dominates.
inline std::array<double, 9> blurriness(const std::vector<double>& map, std::size_t h,
                                        std::size_t w) {
  require(map.size() == h * w, "blurriness shape mismatch");
  double mean = 0.0;
  for (auto v : map) mean += v;
  mean /= static_cast<double>(map.size());
  std::vector<cplx> in(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) in[i] = map[i] - mean;
  const std::vector<cplx> spec = dft2(in, h, w, false);

  std::array<double, 9> high{};
  double total = 0.0;
  for (std::size_t u = 0; u < h; ++u) {
    const double fu = (u <= h / 2 ? static_cast<double>(u)
                                  : static_cast<double>(u) - static_cast<double>(h)) /
                      static_cast<double>(h);
    for (std::size_t v = 0; v < w; ++v) {
      const double fv = (v <= w / 2 ? static_cast<double>(v)
                                    : static_cast<double>(v) - static_cast<double>(w)) /
                        static_cast<double>(w);
      const double e = std::norm(spec[u * w + v]);
      const double radius = std::hypot(fu, fv) / 0.5;  // fraction of Nyquist
      total += e;
      for (std::size_t t = 0; t < kBlurrinessThresholds.size(); ++t) {
        if (radius > kBlurrinessThresholds[t]) high[t] += e;
      }
    }
  }
  std::array<double, 9> out{};
  for (std::size_t t = 0; t < out.size(); ++t) {
    out[t] = total > 0.0 ? high[t] / total : 0.0;
  }
  return out;
}

// --- temporal permutation importance -----------------------------------------

// Spatially shuffle the complex values of one temporal frame across the
// foreground voxels (real and imaginary move together).
inline MrfImage permute_frame(const MrfImage& img, const Mask& foreground,
                              std::size_t frame, std::uint64_t seed) {
  require(frame < img.t, "frame out of range");
  MrfImage out = img;
  std::vector<std::size_t> fg;
  for (std::size_t v = 0; v < img.h * img.w; ++v) {
    if (foreground.data[v]) fg.push_back(v);
  }
  std::vector<std::size_t> perm(fg.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  Rng rng(mix_seed(seed, 0x7065726dULL));
  rng.shuffle(perm);
  for (std::size_t i = 0; i < fg.size(); ++i) {
    out.data[fg[i] * img.t + frame] = img.data[fg[perm[i]] * img.t + frame];
  }
  return out;
}

// |difference in NRMSE| between the permuted and non-permuted reconstruction,
// per map, averaged over permutation seeds.
template <typename T>
std::array<double, ParametricMaps::kNumMaps> permutation_importance(
    Network<T>& net, const MrfImage& img, const NormalizationState& norm,
    const ParametricMaps& ref, const Mask& foreground, std::size_t qp,
    std::size_t frame, const std::vector<std::uint64_t>& seeds) {
  const auto masks = apply_exclusions(ref, foreground);
  const ParametricMaps base = reconstruct_slice(net, img, norm, qp);
  std::array<double, ParametricMaps::kNumMaps> base_err{};
  for (std::size_t m = 0; m < ParametricMaps::kNumMaps; ++m) {
    base_err[m] = nrmse(ref.map(m), base.map(m), masks[m]);
  }
  std::array<double, ParametricMaps::kNumMaps> importance{};
  for (auto seed : seeds) {
    const MrfImage permuted = permute_frame(img, foreground, frame, seed);
    const ParametricMaps rec = reconstruct_slice(net, permuted, norm, qp);
    for (std::size_t m = 0; m < ParametricMaps::kNumMaps; ++m) {
      importance[m] += std::abs(nrmse(ref.map(m), rec.map(m), masks[m]) - base_err[m]);
    }
  }
  for (auto& v : importance) v /= static_cast<double>(seeds.size());
  return importance;
}

}  // namespace fpf
