#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fpf/archgen.hpp"
#include "fpf/container.hpp"
#include "fpf/rng.hpp"

namespace fpf {

// (batch, channels, height, width), row-major, width fastest.
template <typename T>
struct Tensor4 {
  std::size_t n = 0, c = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor4() = default;
  Tensor4(std::size_t n_, std::size_t c_, std::size_t h_, std::size_t w_)
      : n(n_), c(c_), h(h_), w(w_), data(n_ * c_ * h_ * w_, T(0)) {}

  std::size_t size() const { return data.size(); }

  T* plane(std::size_t in, std::size_t ic) {
    return data.data() + ((in * c + ic) * h) * w;
  }
  const T* plane(std::size_t in, std::size_t ic) const {
    return data.data() + ((in * c + ic) * h) * w;
  }

  T& at(std::size_t in, std::size_t ic, std::size_t y, std::size_t x) {
    return data[(((in * c + ic) * h) + y) * w + x];
  }
  T at(std::size_t in, std::size_t ic, std::size_t y, std::size_t x) const {
    return data[(((in * c + ic) * h) + y) * w + x];
  }
};

template <typename T>
struct Param {
  std::vector<T> value, grad;

  explicit Param(std::size_t size = 0) : value(size, T(0)), grad(size, T(0)) {}
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

// Valid convolution, stride 1, kernel 1x1 or 3x3.
template <typename T>
class Conv2d {
 public:
  Conv2d(std::size_t cin, std::size_t cout, std::size_t k)
      : cin_(cin), cout_(cout), k_(k), w_(cout * cin * k * k), b_(cout) {
    if (k != 1 && k != 3) throw std::invalid_argument("kernel must be 1 or 3");
  }

  void init(Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(cin_ * k_ * k_));
    for (auto& v : w_.value) v = static_cast<T>(rng.uniform(-limit, limit));
    std::fill(b_.value.begin(), b_.value.end(), T(0));
  }

  Tensor4<T> forward(const Tensor4<T>& x) {
    if (x.c != cin_) throw std::invalid_argument("conv input channel mismatch");
    if (x.h < k_ || x.w < k_) throw std::invalid_argument("input smaller than kernel");
    x_ = x;
    const std::size_t oh = x.h - k_ + 1, ow = x.w - k_ + 1;
    Tensor4<T> y(x.n, cout_, oh, ow);
    for (std::size_t in = 0; in < x.n; ++in) {
      for (std::size_t co = 0; co < cout_; ++co) {
        T* yp = y.plane(in, co);
        const T bias = b_.value[co];
        for (std::size_t i = 0; i < oh * ow; ++i) yp[i] = bias;
        for (std::size_t ci = 0; ci < cin_; ++ci) {
          const T* xp = x.plane(in, ci);
          for (std::size_t ky = 0; ky < k_; ++ky) {
            for (std::size_t kx = 0; kx < k_; ++kx) {
              const T wv = w_.value[((co * cin_ + ci) * k_ + ky) * k_ + kx];
              for (std::size_t yy = 0; yy < oh; ++yy) {
                const T* row = xp + (yy + ky) * x.w + kx;
                T* out = yp + yy * ow;
                for (std::size_t xx = 0; xx < ow; ++xx) out[xx] += wv * row[xx];
              }
            }
          }
        }
      }
    }
    return y;
  }

  Tensor4<T> backward(const Tensor4<T>& dy) {
    const Tensor4<T>& x = x_;
    const std::size_t oh = dy.h, ow = dy.w;
    Tensor4<T> dx(x.n, x.c, x.h, x.w);
    for (std::size_t in = 0; in < x.n; ++in) {
      for (std::size_t co = 0; co < cout_; ++co) {
        const T* dyp = dy.plane(in, co);
        T db = T(0);
        for (std::size_t i = 0; i < oh * ow; ++i) db += dyp[i];
        b_.grad[co] += db;
        for (std::size_t ci = 0; ci < cin_; ++ci) {
          const T* xp = x.plane(in, ci);
          T* dxp = dx.plane(in, ci);
          for (std::size_t ky = 0; ky < k_; ++ky) {
            for (std::size_t kx = 0; kx < k_; ++kx) {
              const std::size_t wi = ((co * cin_ + ci) * k_ + ky) * k_ + kx;
              const T wv = w_.value[wi];
              T dw = T(0);
              for (std::size_t yy = 0; yy < oh; ++yy) {
                const T* xrow = xp + (yy + ky) * x.w + kx;
                T* dxrow = dxp + (yy + ky) * x.w + kx;
                const T* drow = dyp + yy * ow;
                for (std::size_t xx = 0; xx < ow; ++xx) {
                  dw += drow[xx] * xrow[xx];
                  dxrow[xx] += wv * drow[xx];
                }
              }
              w_.grad[wi] += dw;
            }
          }
        }
      }
    }
    return dx;
  }

  std::size_t cin() const { return cin_; }
  std::size_t cout() const { return cout_; }
  std::size_t kernel() const { return k_; }
  Param<T>& weights() { return w_; }
  Param<T>& bias() { return b_; }

 private:
  std::size_t cin_, cout_, k_;
  Param<T> w_, b_;
  Tensor4<T> x_;
};

template <typename T>
class Relu {
 public:
  Tensor4<T> forward(const Tensor4<T>& x) {
    y_ = x;
    for (auto& v : y_.data) v = v > T(0) ? v : T(0);
    return y_;
  }
  Tensor4<T> backward(const Tensor4<T>& dy) {
    Tensor4<T> dx = dy;
    for (std::size_t i = 0; i < dx.data.size(); ++i) {
      if (!(y_.data[i] > T(0))) dx.data[i] = T(0);
    }
    return dx;
  }

 private:
  Tensor4<T> y_;
};

// Per-channel batch normalization over (batch, H, W). Biased variance, epsilon
// 1e-5, running-stat momentum 0.1.
template <typename T>
class BatchNorm {
 public:
  explicit BatchNorm(std::size_t c)
      : c_(c), gamma_(c), beta_(c), run_mean_(c, T(0)), run_var_(c, T(1)) {
    std::fill(gamma_.value.begin(), gamma_.value.end(), T(1));
  }

  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  Tensor4<T> forward(const Tensor4<T>& x, bool train) {
    if (x.c != c_) throw std::invalid_argument("batch norm channel mismatch");
    train_ = train;
    Tensor4<T> y(x.n, x.c, x.h, x.w);
    const std::size_t plane = x.h * x.w;
    const std::size_t m = x.n * plane;
    if (train) {
      if (x.n < 2) throw std::invalid_argument("batch norm needs batch >= 2 in train mode");
      xhat_ = Tensor4<T>(x.n, x.c, x.h, x.w);
      invstd_.assign(c_, T(0));
      for (std::size_t c = 0; c < c_; ++c) {
        T mean = T(0);
        for (std::size_t in = 0; in < x.n; ++in) {
          const T* xp = x.plane(in, c);
          for (std::size_t i = 0; i < plane; ++i) mean += xp[i];
        }
        mean /= static_cast<T>(m);
        T var = T(0);
        for (std::size_t in = 0; in < x.n; ++in) {
          const T* xp = x.plane(in, c);
          for (std::size_t i = 0; i < plane; ++i) {
            const T d = xp[i] - mean;
            var += d * d;
          }
        }
        var /= static_cast<T>(m);
        const T inv = T(1) / std::sqrt(var + static_cast<T>(kEps));
        invstd_[c] = inv;
        run_mean_[c] = static_cast<T>(1.0 - kMomentum) * run_mean_[c] +
                       static_cast<T>(kMomentum) * mean;
        run_var_[c] = static_cast<T>(1.0 - kMomentum) * run_var_[c] +
                      static_cast<T>(kMomentum) * var;
        const T g = gamma_.value[c], b = beta_.value[c];
        for (std::size_t in = 0; in < x.n; ++in) {
          const T* xp = x.plane(in, c);
          T* hp = xhat_.plane(in, c);
          T* yp = y.plane(in, c);
          for (std::size_t i = 0; i < plane; ++i) {
            hp[i] = (xp[i] - mean) * inv;
            yp[i] = g * hp[i] + b;
          }
        }
      }
    } else {
      for (std::size_t c = 0; c < c_; ++c) {
        const T inv = T(1) / std::sqrt(run_var_[c] + static_cast<T>(kEps));
        const T g = gamma_.value[c], b = beta_.value[c], mu = run_mean_[c];
        for (std::size_t in = 0; in < x.n; ++in) {
          const T* xp = x.plane(in, c);
          T* yp = y.plane(in, c);
          for (std::size_t i = 0; i < plane; ++i) yp[i] = g * (xp[i] - mu) * inv + b;
        }
      }
    }
    return y;
  }

  Tensor4<T> backward(const Tensor4<T>& dy) {
    if (!train_) throw std::logic_error("batch norm backward requires a train forward");
    Tensor4<T> dx(dy.n, dy.c, dy.h, dy.w);
    const std::size_t plane = dy.h * dy.w;
    const auto m = static_cast<T>(dy.n * plane);
    for (std::size_t c = 0; c < c_; ++c) {
      T sum_dy = T(0), sum_dy_xhat = T(0);
      for (std::size_t in = 0; in < dy.n; ++in) {
        const T* dp = dy.plane(in, c);
        const T* hp = xhat_.plane(in, c);
        for (std::size_t i = 0; i < plane; ++i) {
          sum_dy += dp[i];
          sum_dy_xhat += dp[i] * hp[i];
        }
      }
      gamma_.grad[c] += sum_dy_xhat;
      beta_.grad[c] += sum_dy;
      const T scale = gamma_.value[c] * invstd_[c] / m;
      for (std::size_t in = 0; in < dy.n; ++in) {
        const T* dp = dy.plane(in, c);
        const T* hp = xhat_.plane(in, c);
        T* xp = dx.plane(in, c);
        for (std::size_t i = 0; i < plane; ++i) {
          xp[i] = scale * (m * dp[i] - sum_dy - hp[i] * sum_dy_xhat);
        }
      }
    }
    return dx;
  }

  Param<T>& gamma() { return gamma_; }
  Param<T>& beta() { return beta_; }
  std::vector<T>& running_mean() { return run_mean_; }
  std::vector<T>& running_var() { return run_var_; }

 private:
  std::size_t c_;
  Param<T> gamma_, beta_;
  std::vector<T> run_mean_, run_var_;
  Tensor4<T> xhat_;
  std::vector<T> invstd_;
  bool train_ = false;
};

// --- channel concat helpers -------------------------------------------------

template <typename T>
Tensor4<T> concat_channels(const std::vector<const Tensor4<T>*>& parts) {
  std::size_t ctot = 0;
  for (const auto* p : parts) ctot += p->c;
  const auto& f = *parts.front();
  Tensor4<T> out(f.n, ctot, f.h, f.w);
  for (std::size_t in = 0; in < f.n; ++in) {
    std::size_t co = 0;
    for (const auto* p : parts) {
      for (std::size_t c = 0; c < p->c; ++c, ++co) {
        const T* src = p->plane(in, c);
        std::copy(src, src + f.h * f.w, out.plane(in, co));
      }
    }
  }
  return out;
}

template <typename T>
void split_add_channels(const Tensor4<T>& grad, std::vector<Tensor4<T>>& parts) {
  for (std::size_t in = 0; in < grad.n; ++in) {
    std::size_t co = 0;
    for (auto& p : parts) {
      for (std::size_t c = 0; c < p.c; ++c, ++co) {
        const T* src = grad.plane(in, co);
        T* dst = p.plane(in, c);
        for (std::size_t i = 0; i < grad.h * grad.w; ++i) dst[i] += src[i];
      }
    }
  }
}

// --- network ----------------------------------------------------------------

// conv -> ReLU -> BN (paper order); set relu_before_bn = false to swap.
template <typename T>
struct ConvUnit {
  Conv2d<T> conv;
  Relu<T> relu;
  BatchNorm<T> bn;
  bool relu_before_bn;

  ConvUnit(std::size_t cin, std::size_t cout, std::size_t k, bool relu_first)
      : conv(cin, cout, k), bn(cout), relu_before_bn(relu_first) {}

  Tensor4<T> forward(const Tensor4<T>& x, bool train) {
    Tensor4<T> y = conv.forward(x);
    if (relu_before_bn) return bn.forward(relu.forward(y), train);
    return relu.forward(bn.forward(y, train));
  }

  Tensor4<T> backward(const Tensor4<T>& dy) {
    Tensor4<T> d = relu_before_bn ? relu.backward(bn.backward(dy))
                                  : bn.backward(relu.backward(dy));
    return conv.backward(d);
  }
};

// Interleaved dense temporal blocks and valid 3x3 spatial blocks realized from
// an ArchSpec, ending in a linear 1x1 convolution with one channel per map.
template <typename T>
class Network {
 public:
  Network(const ArchSpec& spec, std::uint64_t seed, bool relu_before_bn = true)
      : spec_(spec), relu_before_bn_(relu_before_bn),
        final_conv_(final_in_channels(spec), spec.output_maps, 1) {
    std::size_t x = spec.input_channels;
    for (std::size_t b = 0; b < spec.layers_per_block.size(); ++b) {
      Block blk;
      const std::size_t growth = spec.temporal_channels[b];
      for (std::size_t j = 0; j < spec.layers_per_block[b]; ++j) {
        blk.layers.emplace_back(x + j * growth, growth, 1, relu_before_bn);
      }
      x += spec.layers_per_block[b] * growth;
      if (b < spec.n_blocks) {
        blk.spatial.emplace_back(x, spec.spatial_channels[b], 3, relu_before_bn);
        x = spec.spatial_channels[b];
      }
      blocks_.push_back(std::move(blk));
    }
    Rng rng(mix_seed(seed, 0x6e657477ULL));
    for (auto& blk : blocks_) {
      for (auto& u : blk.layers) u.conv.init(rng);
      for (auto& u : blk.spatial) u.conv.init(rng);
    }
    final_conv_.init(rng);
  }

  const ArchSpec& spec() const { return spec_; }
  bool relu_before_bn() const { return relu_before_bn_; }

  Tensor4<T> forward(const Tensor4<T>& x, bool train) {
    if (x.c != spec_.input_channels) {
      throw std::invalid_argument("network input channel mismatch");
    }
    if (x.h < spec_.realized_receptive_field ||
        x.w < spec_.realized_receptive_field) {
      throw std::invalid_argument("input smaller than the receptive field");
    }
    grads_ready_ = false;
    Tensor4<T> cur = x;
    for (auto& blk : blocks_) {
      std::vector<Tensor4<T>> feats;
      feats.push_back(std::move(cur));
      for (auto& u : blk.layers) {
        std::vector<const Tensor4<T>*> parts;
        for (const auto& f : feats) parts.push_back(&f);
        feats.push_back(u.forward(concat_channels(parts), train));
      }
      std::vector<const Tensor4<T>*> parts;
      for (const auto& f : feats) parts.push_back(&f);
      cur = concat_channels(parts);
      blk.feat_shapes.clear();
      for (const auto& f : feats) blk.feat_shapes.push_back({f.n, f.c, f.h, f.w});
      if (!blk.spatial.empty()) cur = blk.spatial.front().forward(cur, train);
    }
    return final_conv_.forward(cur);
  }

  // Gradient of the loss w.r.t. every parameter; grads accumulate, call
  // zero_grad first. Returns the input gradient.
  Tensor4<T> backward(const Tensor4<T>& dout) {
    Tensor4<T> d = final_conv_.backward(dout);
    for (std::size_t bi = blocks_.size(); bi-- > 0;) {
      Block& blk = blocks_[bi];
      if (!blk.spatial.empty()) d = blk.spatial.front().backward(d);
      std::vector<Tensor4<T>> grads;
      for (const auto& s : blk.feat_shapes) grads.emplace_back(s[0], s[1], s[2], s[3]);
      split_add_channels(d, grads);
      for (std::size_t j = blk.layers.size(); j-- > 0;) {
        Tensor4<T> dcat = blk.layers[j].backward(grads[j + 1]);
        std::vector<Tensor4<T>> head(grads.begin(),
                                     grads.begin() + static_cast<std::ptrdiff_t>(j + 1));
        split_add_channels(dcat, head);
        for (std::size_t i = 0; i <= j; ++i) grads[i] = std::move(head[i]);
      }
      d = std::move(grads[0]);
    }
    grads_ready_ = true;
    return d;
  }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> ps;
    auto add_unit = [&](ConvUnit<T>& u) {
      ps.push_back(&u.conv.weights());
      ps.push_back(&u.conv.bias());
      ps.push_back(&u.bn.gamma());
      ps.push_back(&u.bn.beta());
    };
    for (auto& blk : blocks_) {
      for (auto& u : blk.layers) add_unit(u);
      for (auto& u : blk.spatial) add_unit(u);
    }
    ps.push_back(&final_conv_.weights());
    ps.push_back(&final_conv_.bias());
    return ps;
  }

  std::vector<std::vector<T>*> running_stats() {
    std::vector<std::vector<T>*> rs;
    for (auto& blk : blocks_) {
      for (auto& u : blk.layers) {
        rs.push_back(&u.bn.running_mean());
        rs.push_back(&u.bn.running_var());
      }
      for (auto& u : blk.spatial) {
        rs.push_back(&u.bn.running_mean());
        rs.push_back(&u.bn.running_var());
      }
    }
    return rs;
  }

  void zero_grad() {
    for (auto* p : params()) p->zero_grad();
  }

  bool grads_ready() const { return grads_ready_; }
  void mark_grads_consumed() { grads_ready_ = false; }

  Conv2d<T>& final_conv() { return final_conv_; }
  ConvUnit<T>& first_unit() { return blocks_.front().layers.front(); }

  void save(const std::string& path) const;
  static Network load(const std::string& path);

 private:
  static std::size_t final_in_channels(const ArchSpec& spec) {
    std::size_t x = spec.input_channels;
    for (std::size_t b = 0; b < spec.layers_per_block.size(); ++b) {
      x += spec.layers_per_block[b] * spec.temporal_channels[b];
      if (b < spec.n_blocks) x = spec.spatial_channels[b];
    }
    return x;
  }

  struct Block {
    std::vector<ConvUnit<T>> layers;
    std::vector<ConvUnit<T>> spatial;  // zero or one entry
    std::vector<std::array<std::size_t, 4>> feat_shapes;
  };

  ArchSpec spec_;
  bool relu_before_bn_;
  std::vector<Block> blocks_;
  Conv2d<T> final_conv_;
  bool grads_ready_ = false;
};

// Mean squared error over all elements; fills the loss gradient if requested.
template <typename T>
T mse_loss(const Tensor4<T>& pred, const Tensor4<T>& target, Tensor4<T>* dloss) {
  if (pred.data.size() != target.data.size()) {
    throw std::invalid_argument("mse operands must match in size");
  }
  T acc = T(0);
  if (dloss != nullptr) *dloss = Tensor4<T>(pred.n, pred.c, pred.h, pred.w);
  const auto n = static_cast<T>(pred.data.size());
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const T d = pred.data[i] - target.data[i];
    acc += d * d;
    if (dloss != nullptr) dloss->data[i] = T(2) * d / n;
  }
  return acc / n;
}

// Adam with bias correction; defaults lr=0.001, beta1=0.9, beta2=0.999.
template <typename T>
class Adam {
 public:
  explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Param<T>*>& params) {
    if (m_.empty()) {
      for (const auto* p : params) {
        m_.emplace_back(p->value.size(), T(0));
        v_.emplace_back(p->value.size(), T(0));
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      Param<T>& p = *params[pi];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const T g = p.grad[i];
        m_[pi][i] = static_cast<T>(beta1_) * m_[pi][i] + static_cast<T>(1.0 - beta1_) * g;
        v_[pi][i] = static_cast<T>(beta2_) * v_[pi][i] + static_cast<T>(1.0 - beta2_) * g * g;
        const double mhat = static_cast<double>(m_[pi][i]) / bc1;
        const double vhat = static_cast<double>(v_[pi][i]) / bc2;
        p.value[i] -= static_cast<T>(lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  void step(Network<T>& net) {
    if (!net.grads_ready()) {
      throw std::logic_error("optimizer step before backward");
    }
    auto ps = net.params();
    step(ps);
    net.mark_grads_consumed();
  }

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::vector<std::vector<T>> m_, v_;
  long t_ = 0;
};

// --- checkpointing ----------------------------------------------------------

template <typename T>
void Network<T>::save(const std::string& path) const {
  auto* self = const_cast<Network<T>*>(this);
  std::vector<T> blob;
  for (auto* p : self->params()) {
    blob.insert(blob.end(), p->value.begin(), p->value.end());
  }
  for (auto* rs : self->running_stats()) {
    blob.insert(blob.end(), rs->begin(), rs->end());
  }
  TensorContainer c;
  if constexpr (sizeof(T) == 4) {
    std::vector<float> f(blob.begin(), blob.end());
    c = TensorContainer::from_f32({blob.size()}, f, {"param"});
  } else {
    std::vector<double> d(blob.begin(), blob.end());
    c = TensorContainer::from_f64({blob.size()}, d, {"param"});
  }
  c.provenance = {{"kind", "network_checkpoint"},
                  {"arch_spec", spec_.to_json()},
                  {"relu_before_bn", relu_before_bn_}};
  write_container(path, c);
}

template <typename T>
Network<T> Network<T>::load(const std::string& path) {
  TensorContainer c = read_container(path);
  const ArchSpec spec = ArchSpec::from_json(c.provenance.at("arch_spec"));
  Network net(spec, 0, c.provenance.at("relu_before_bn").get<bool>());
  std::vector<T> blob;
  if constexpr (sizeof(T) == 4) {
    auto f = c.as_f32();
    blob.assign(f.begin(), f.end());
  } else {
    auto d = c.as_f64();
    blob.assign(d.begin(), d.end());
  }
  std::size_t off = 0;
  for (auto* p : net.params()) {
    std::copy(blob.begin() + static_cast<std::ptrdiff_t>(off),
              blob.begin() + static_cast<std::ptrdiff_t>(off + p->value.size()),
              p->value.begin());
    off += p->value.size();
  }
  for (auto* rs : net.running_stats()) {
    std::copy(blob.begin() + static_cast<std::ptrdiff_t>(off),
              blob.begin() + static_cast<std::ptrdiff_t>(off + rs->size()),
              rs->begin());
    off += rs->size();
  }
  if (off != blob.size()) throw std::runtime_error("checkpoint size mismatch");
  return net;
}

}  // namespace fpf
