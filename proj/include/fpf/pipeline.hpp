#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fpf/image.hpp"
#include "fpf/net.hpp"
#include "fpf/rng.hpp"
#include "fpf/signal.hpp"

namespace fpf {

// Subject-wise input statistics plus the dictionary-range map scaling.
struct NormalizationState {
  double mean = 0.0;
  double stddev = 1.0;
  std::array<double, ParametricMaps::kNumMaps> map_min{};
  std::array<double, ParametricMaps::kNumMaps> map_max{};
};

// Mean/std over all voxels and all 2T real channels jointly; map ranges from
// the grid.
inline NormalizationState compute_normalization(const MrfImage& img,
                                                const ParameterGrid& grid) {
  NormalizationState s;
  double sum = 0.0, sum2 = 0.0;
  const auto n = static_cast<double>(2 * img.data.size());
  for (const auto& v : img.data) {
    sum += v.real() + v.imag();
    sum2 += v.real() * v.real() + v.imag() * v.imag();
  }
  s.mean = sum / n;
  const double var = sum2 / n - s.mean * s.mean;
  require(var > 0.0, "constant image cannot be normalized");
  s.stddev = std::sqrt(var);
  for (std::size_t m = 0; m < ParametricMaps::kNumMaps; ++m) {
    s.map_min[m] = grid.min(m);
    s.map_max[m] = grid.max(m);
  }
  return s;
}

// Real and imaginary parts concatenated as 2T channels: channel f is the real
// part of frame f, channel T + f its imaginary part.
template <typename T>
Tensor4<T> image_to_channels(const MrfImage& img, const NormalizationState& norm) {
  Tensor4<T> x(1, 2 * img.t, img.h, img.w);
  const double mu = norm.mean, inv = 1.0 / norm.stddev;
  for (std::size_t y = 0; y < img.h; ++y) {
    for (std::size_t xx = 0; xx < img.w; ++xx) {
      for (std::size_t f = 0; f < img.t; ++f) {
        const cplx v = img.at(y, xx, f);
        x.at(0, f, y, xx) = static_cast<T>((v.real() - mu) * inv);
        x.at(0, img.t + f, y, xx) = static_cast<T>((v.imag() - mu) * inv);
      }
    }
  }
  return x;
}

template <typename T>
Tensor4<T> normalize_maps(const ParametricMaps& maps, const NormalizationState& norm) {
  Tensor4<T> q(1, ParametricMaps::kNumMaps, maps.h, maps.w);
  for (std::size_t m = 0; m < ParametricMaps::kNumMaps; ++m) {
    const double lo = norm.map_min[m], span = norm.map_max[m] - norm.map_min[m];
    for (std::size_t y = 0; y < maps.h; ++y) {
      for (std::size_t x = 0; x < maps.w; ++x) {
        q.at(0, m, y, x) = static_cast<T>((maps.at(m, y, x) - lo) / span);
      }
    }
  }
  return q;
}

template <typename T>
ParametricMaps denormalize_maps(const Tensor4<T>& q, const NormalizationState& norm) {
  ParametricMaps maps(q.h, q.w);
  for (std::size_t m = 0; m < ParametricMaps::kNumMaps; ++m) {
    const double lo = norm.map_min[m], span = norm.map_max[m] - norm.map_min[m];
    for (std::size_t y = 0; y < q.h; ++y) {
      for (std::size_t x = 0; x < q.w; ++x) {
        maps.at(m, y, x) = static_cast<double>(q.at(0, m, y, x)) * span + lo;
      }
    }
  }
  return maps;
}

// Reflection (mirror about the edge pixel, edge not repeated).
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  const auto sn = static_cast<std::ptrdiff_t>(n);
  while (i < 0 || i >= sn) {
    if (i < 0) i = -i;
    if (i >= sn) i = 2 * sn - 2 - i;
  }
  return static_cast<std::size_t>(i);
}

template <typename T>
Tensor4<T> reflect_pad(const Tensor4<T>& x, std::size_t r) {
  if (r == 0) return x;
  require(x.h > r && x.w > r, "padding radius too large for image");
  Tensor4<T> out(x.n, x.c, x.h + 2 * r, x.w + 2 * r);
  for (std::size_t in = 0; in < x.n; ++in) {
    for (std::size_t c = 0; c < x.c; ++c) {
      const T* src = x.plane(in, c);
      T* dst = out.plane(in, c);
      for (std::size_t y = 0; y < out.h; ++y) {
        const std::size_t sy =
            reflect_index(static_cast<std::ptrdiff_t>(y) - static_cast<std::ptrdiff_t>(r), x.h);
        for (std::size_t xx = 0; xx < out.w; ++xx) {
          const std::size_t sx = reflect_index(
              static_cast<std::ptrdiff_t>(xx) - static_cast<std::ptrdiff_t>(r), x.w);
          dst[y * out.w + xx] = src[sy * x.w + sx];
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor4<T> crop(const Tensor4<T>& x, std::size_t y0, std::size_t x0, std::size_t h,
                std::size_t w) {
  Tensor4<T> out(x.n, x.c, h, w);
  for (std::size_t in = 0; in < x.n; ++in) {
    for (std::size_t c = 0; c < x.c; ++c) {
      const T* src = x.plane(in, c);
      T* dst = out.plane(in, c);
      for (std::size_t y = 0; y < h; ++y) {
        std::copy(src + (y0 + y) * x.w + x0, src + (y0 + y) * x.w + x0 + w,
                  dst + y * w);
      }
    }
  }
  return out;
}

// One subject ready for training: normalized input channels, normalized
// target maps, foreground voxel count.
template <typename T>
struct SubjectTensors {
  Tensor4<T> input;   // (1, 2T, H, W)
  Tensor4<T> target;  // (1, M, H, W)
  std::size_t foreground_voxels = 0;
};

template <typename T>
SubjectTensors<T> prepare_subject(const MrfImage& img, const ParametricMaps& maps,
                                  const Mask& foreground, const ParameterGrid& grid) {
  const NormalizationState norm = compute_normalization(img, grid);
  SubjectTensors<T> s;
  s.input = image_to_channels<T>(img, norm);
  s.target = normalize_maps<T>(maps, norm);
  s.foreground_voxels = foreground.count();
  return s;
}

// Seeded uniform patch sampler. Target patches are QP x QP top-left anywhere
// in the slice; inputs come from the reflection-padded image so IP = QP+R-1
// everywhere.
template <typename T>
class PatchSampler {
 public:
  PatchSampler(const std::vector<SubjectTensors<T>>* subjects, std::size_t qp,
               std::size_t receptive_field, std::uint64_t seed)
      : subjects_(subjects), qp_(qp), r_((receptive_field - 1) / 2),
        rng_(mix_seed(seed, 0x70617463ULL)) {
    require(!subjects->empty(), "patch sampler needs at least one subject");
    for (const auto& s : *subjects) {
      require(s.input.h >= qp + 2 * r_ && s.input.w >= qp + 2 * r_,
              "slice smaller than the input patch");
      padded_.push_back(reflect_pad(s.input, r_));
    }
  }

  struct Position {
    std::size_t subject, y, x;
  };

  Position sample_position() {
    const std::size_t si = rng_.index(subjects_->size());
    const auto& s = (*subjects_)[si];
    return {si, rng_.index(s.input.h - qp_ + 1), rng_.index(s.input.w - qp_ + 1)};
  }

  // One batch: inputs (B, 2T, QP+2r, QP+2r), targets (B, M, QP, QP).
  void next_batch(std::size_t batch_size, Tensor4<T>& inputs, Tensor4<T>& targets) {
    const auto& first = (*subjects_)[0];
    const std::size_t ip = qp_ + 2 * r_;
    inputs = Tensor4<T>(batch_size, first.input.c, ip, ip);
    targets = Tensor4<T>(batch_size, first.target.c, qp_, qp_);
    for (std::size_t b = 0; b < batch_size; ++b) {
      const Position p = sample_position();
      const Tensor4<T>& pad = padded_[p.subject];
      const Tensor4<T>& tgt = (*subjects_)[p.subject].target;
      for (std::size_t c = 0; c < pad.c; ++c) {
        for (std::size_t y = 0; y < ip; ++y) {
          const T* src = pad.plane(0, c) + (p.y + y) * pad.w + p.x;
          std::copy(src, src + ip, inputs.plane(b, c) + y * ip);
        }
      }
      for (std::size_t c = 0; c < tgt.c; ++c) {
        for (std::size_t y = 0; y < qp_; ++y) {
          const T* src = tgt.plane(0, c) + (p.y + y) * tgt.w + p.x;
          std::copy(src, src + qp_, targets.plane(b, c) + y * qp_);
        }
      }
    }
  }

  std::size_t qp() const { return qp_; }
  std::size_t pad_radius() const { return r_; }

 private:
  const std::vector<SubjectTensors<T>>* subjects_;
  std::size_t qp_, r_;
  Rng rng_;
  std::vector<Tensor4<T>> padded_;
};

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 20;
  double lr = 1e-3;
  double lr_final = 0.0;  // >0: geometric per-epoch decay from lr down to this
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::size_t qp = 32;
  std::uint64_t seed = 0;
  std::size_t batches_per_epoch = 0;  // 0: derive from foreground voxel count
  std::size_t val_patches_per_subject = 4;
};

struct TrainRecord {
  std::vector<double> batch_loss;
  std::vector<double> val_nrmse;  // per epoch, mean over maps
  std::size_t batches_per_epoch = 0;
};

// Eq.-style MSE minimization with Adam over randomly sampled patch batches.
// One epoch covers ceil(foreground voxels / (batch * QP^2)) batches.
template <typename T>
TrainRecord train(Network<T>& net, const std::vector<SubjectTensors<T>>& train_set,
                  const std::vector<SubjectTensors<T>>& val_set,
                  const TrainConfig& cfg) {
  PatchSampler<T> sampler(&train_set, cfg.qp, net.spec().realized_receptive_field,
                          cfg.seed);
  TrainRecord rec;
  std::size_t fg = 0;
  for (const auto& s : train_set) fg += s.foreground_voxels;
  rec.batches_per_epoch =
      cfg.batches_per_epoch > 0
          ? cfg.batches_per_epoch
          : (fg + cfg.batch_size * cfg.qp * cfg.qp - 1) / (cfg.batch_size * cfg.qp * cfg.qp);

  // fixed validation patches
  std::vector<Tensor4<T>> val_in, val_tgt;
  if (!val_set.empty()) {
    PatchSampler<T> vs(&val_set, cfg.qp, net.spec().realized_receptive_field,
                       mix_seed(cfg.seed, 0x76616cULL));
    for (std::size_t i = 0; i < cfg.val_patches_per_subject * val_set.size(); ++i) {
      Tensor4<T> in, tg;
      vs.next_batch(1, in, tg);
      val_in.push_back(std::move(in));
      val_tgt.push_back(std::move(tg));
    }
  }

  Adam<T> opt(cfg.lr, cfg.beta1, cfg.beta2);
  Tensor4<T> inputs, targets, dloss;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    if (cfg.lr_final > 0.0 && cfg.epochs > 1) {
      const double frac = static_cast<double>(e) / static_cast<double>(cfg.epochs - 1);
      opt.set_learning_rate(cfg.lr * std::pow(cfg.lr_final / cfg.lr, frac));
    }
    for (std::size_t b = 0; b < rec.batches_per_epoch; ++b) {
      sampler.next_batch(cfg.batch_size, inputs, targets);
      net.zero_grad();
      Tensor4<T> pred = net.forward(inputs, true);
      const T loss = mse_loss(pred, targets, &dloss);
      if (!std::isfinite(static_cast<double>(loss))) {
        throw std::runtime_error("training diverged: non-finite loss at epoch " +
                                 std::to_string(e) + ", batch " + std::to_string(b));
      }
      net.backward(dloss);
      opt.step(net);
      rec.batch_loss.push_back(static_cast<double>(loss));
    }
    if (!val_in.empty()) {
      double num = 0.0, den = 0.0;
      for (std::size_t i = 0; i < val_in.size(); ++i) {
        Tensor4<T> pred = net.forward(val_in[i], false);
        for (std::size_t j = 0; j < pred.data.size(); ++j) {
          const double d = static_cast<double>(pred.data[j]) -
                           static_cast<double>(val_tgt[i].data[j]);
          num += d * d;
          den += static_cast<double>(val_tgt[i].data[j]) *
                 static_cast<double>(val_tgt[i].data[j]);
        }
      }
      rec.val_nrmse.push_back(den > 0.0 ? std::sqrt(num / den) : 0.0);
    } else {
      rec.val_nrmse.push_back(0.0);
    }
  }
  return rec;
}

// Whole-slice inference: reflection-pad by (R-1)/2, run non-overlapping QP
// tiles (final row/column shifted inward, later write wins), stitch and
// denormalize.
template <typename T>
ParametricMaps reconstruct_slice(Network<T>& net, const MrfImage& img,
                                 const NormalizationState& norm, std::size_t qp) {
  const std::size_t r = (net.spec().realized_receptive_field - 1) / 2;
  Tensor4<T> x = image_to_channels<T>(img, norm);
  require(qp >= 1 && qp <= x.h && qp <= x.w, "tile size must fit the image");
  Tensor4<T> padded = reflect_pad(x, r);
  Tensor4<T> out(1, ParametricMaps::kNumMaps, img.h, img.w);

  auto tile_starts = [](std::size_t extent, std::size_t qp_) {
    std::vector<std::size_t> v;
    for (std::size_t p = 0; p + qp_ <= extent; p += qp_) v.push_back(p);
    if (v.empty() || v.back() + qp_ < extent) v.push_back(extent - qp_);
    return v;
  };
  const std::size_t ip = qp + 2 * r;
  for (std::size_t y0 : tile_starts(img.h, qp)) {
    for (std::size_t x0 : tile_starts(img.w, qp)) {
      Tensor4<T> in = crop(padded, y0, x0, ip, ip);
      Tensor4<T> pred = net.forward(in, false);
      for (std::size_t m = 0; m < ParametricMaps::kNumMaps; ++m) {
        for (std::size_t y = 0; y < qp; ++y) {
          const T* src = pred.plane(0, m) + y * qp;
          std::copy(src, src + qp, out.plane(0, m) + (y0 + y) * img.w + x0);
        }
      }
    }
  }
  return denormalize_maps(out, norm);
}

}  // namespace fpf
