#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "fpf/net.hpp"

using namespace fpf;
using Catch::Approx;

namespace {

Tensor4<double> random_tensor(std::size_t n, std::size_t c, std::size_t h,
                              std::size_t w, Rng& rng) {
  Tensor4<double> t(n, c, h, w);
  for (auto& v : t.data) v = rng.normal();
  return t;
}

// independent convolution oracle: direct 6-loop definition
Tensor4<double> conv_oracle(const Tensor4<double>& x, const std::vector<double>& w,
                            const std::vector<double>& b, std::size_t cout,
                            std::size_t k) {
  const std::size_t oh = x.h - k + 1, ow = x.w - k + 1;
  Tensor4<double> y(x.n, cout, oh, ow);
  for (std::size_t in = 0; in < x.n; ++in) {
    for (std::size_t co = 0; co < cout; ++co) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double acc = b[co];
          for (std::size_t ci = 0; ci < x.c; ++ci) {
            for (std::size_t ky = 0; ky < k; ++ky) {
              for (std::size_t kx = 0; kx < k; ++kx) {
                acc += w[((co * x.c + ci) * k + ky) * k + kx] *
                       x.at(in, ci, oy + ky, ox + kx);
              }
            }
          }
          y.at(in, co, oy, ox) = acc;
        }
      }
    }
  }
  return y;
}

ArchSpec tiny_spec() {
  ArchSpec s;
  s.n_blocks = 1;
  s.layers_per_block = {2};
  s.temporal_channels = {3};
  s.spatial_channels = {4};
  s.c_t_start = 3;
  s.input_channels = 6;
  s.output_maps = 2;
  s.realized_receptive_field = 3;
  s.realized_param_count = count_parameters(s, 6, 2);
  return s;
}

ArchSpec two_block_spec() {
  ArchSpec s;
  s.n_blocks = 2;
  s.layers_per_block = {2, 1};
  s.temporal_channels = {3, 2};
  s.spatial_channels = {5, 4};
  s.c_t_start = 3;
  s.input_channels = 4;
  s.output_maps = 2;
  s.realized_receptive_field = 5;
  s.realized_param_count = count_parameters(s, 4, 2);
  return s;
}

}  // namespace

TEST_CASE("convolution forward matches the direct-definition oracle") {
  Rng rng(21);
  for (std::size_t k : {1u, 3u}) {
    Conv2d<double> conv(3, 4, k);
    conv.init(rng);
    const Tensor4<double> x = random_tensor(2, 3, 6, 7, rng);
    const Tensor4<double> y = conv.forward(x);
    const Tensor4<double> ref =
        conv_oracle(x, conv.weights().value, conv.bias().value, 4, k);
    REQUIRE(y.data.size() == ref.data.size());
    for (std::size_t i = 0; i < y.data.size(); ++i) {
      CHECK(y.data[i] == Approx(ref.data[i]).margin(1e-12));
    }
  }
}

TEST_CASE("convolution gradients pass a central finite-difference check") {
  Rng rng(22);
  Conv2d<double> conv(2, 3, 3);
  conv.init(rng);
  const Tensor4<double> x = random_tensor(2, 2, 5, 5, rng);
  // scalar loss: sum of squared outputs / 2, so dL/dy = y
  auto loss = [&](Conv2d<double>& c, const Tensor4<double>& in) {
    const Tensor4<double> y = c.forward(in);
    double l = 0.0;
    for (auto v : y.data) l += 0.5 * v * v;
    return l;
  };
  Tensor4<double> y = conv.forward(x);
  conv.weights().zero_grad();
  conv.bias().zero_grad();
  const Tensor4<double> dx = conv.backward(y);

  const double eps = 1e-6;
  for (std::size_t i = 0; i < conv.weights().value.size(); i += 7) {
    const double keep = conv.weights().value[i];
    conv.weights().value[i] = keep + eps;
    const double lp = loss(conv, x);
    conv.weights().value[i] = keep - eps;
    const double lm = loss(conv, x);
    conv.weights().value[i] = keep;
    CHECK(conv.weights().grad[i] == Approx((lp - lm) / (2 * eps)).epsilon(1e-6));
  }
  for (std::size_t i = 0; i < conv.bias().value.size(); ++i) {
    const double keep = conv.bias().value[i];
    conv.bias().value[i] = keep + eps;
    const double lp = loss(conv, x);
    conv.bias().value[i] = keep - eps;
    const double lm = loss(conv, x);
    conv.bias().value[i] = keep;
    CHECK(conv.bias().grad[i] == Approx((lp - lm) / (2 * eps)).epsilon(1e-6));
  }
  Tensor4<double> xp = x;
  for (std::size_t i = 0; i < x.data.size(); i += 11) {
    const double keep = xp.data[i];
    xp.data[i] = keep + eps;
    const double lp = loss(conv, xp);
    xp.data[i] = keep - eps;
    const double lm = loss(conv, xp);
    xp.data[i] = keep;
    CHECK(dx.data[i] == Approx((lp - lm) / (2 * eps)).epsilon(1e-6));
  }
}

TEST_CASE("relu clips negatives and gates the gradient") {
  Relu<double> r;
  Tensor4<double> x(1, 1, 1, 4);
  x.data = {-1.0, 0.0, 2.0, -0.5};
  const Tensor4<double> y = r.forward(x);
  CHECK(y.data == std::vector<double>{0.0, 0.0, 2.0, 0.0});
  Tensor4<double> dy(1, 1, 1, 4);
  dy.data = {1.0, 1.0, 1.0, 1.0};
  const Tensor4<double> dx = r.backward(dy);
  CHECK(dx.data == std::vector<double>{0.0, 0.0, 1.0, 0.0});
}

TEST_CASE("batch norm standardizes per channel in train mode") {
  Rng rng(23);
  BatchNorm<double> bn(3);
  Tensor4<double> x = random_tensor(4, 3, 5, 5, rng);
  for (auto& v : x.data) v = 2.0 * v + 1.5;
  const Tensor4<double> y = bn.forward(x, true);
  const std::size_t plane = 25, m = 4 * plane;
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    for (std::size_t in = 0; in < 4; ++in) {
      const double* p = y.plane(in, c);
      for (std::size_t i = 0; i < plane; ++i) mean += p[i];
    }
    mean /= static_cast<double>(m);
    for (std::size_t in = 0; in < 4; ++in) {
      const double* p = y.plane(in, c);
      for (std::size_t i = 0; i < plane; ++i) var += (p[i] - mean) * (p[i] - mean);
    }
    var /= static_cast<double>(m);  // biased
    CHECK(mean == Approx(0.0).margin(1e-10));
    CHECK(var == Approx(1.0).epsilon(1e-3));  // off by var/(var+eps)
  }
}

TEST_CASE("batch norm eval mode uses running statistics") {
  BatchNorm<double> bn(1);
  // untouched running stats: mean 0, var 1 -> y = x / sqrt(1 + eps)
  Tensor4<double> x(1, 1, 1, 3);
  x.data = {1.0, -2.0, 0.5};
  const Tensor4<double> y = bn.forward(x, false);
  const double inv = 1.0 / std::sqrt(1.0 + BatchNorm<double>::kEps);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(y.data[i] == Approx(x.data[i] * inv).epsilon(1e-12));
  }
  // train once, running stats move by momentum 0.1
  Rng rng(3);
  Tensor4<double> big = random_tensor(4, 1, 4, 4, rng);
  for (auto& v : big.data) v += 10.0;
  bn.forward(big, true);
  CHECK(bn.running_mean()[0] == Approx(0.9 * 0.0 + 0.1 * 10.0).epsilon(0.1));
  CHECK_THROWS(bn.forward(x, true));  // batch of one in train mode
}

TEST_CASE("batch norm gradients pass a finite-difference check") {
  Rng rng(24);
  BatchNorm<double> bn(2);
  bn.gamma().value = {1.3, 0.7};
  bn.beta().value = {0.2, -0.4};
  Tensor4<double> x = random_tensor(3, 2, 3, 3, rng);
  auto loss = [&](const Tensor4<double>& in) {
    const Tensor4<double> y = bn.forward(in, true);
    double l = 0.0;
    for (std::size_t i = 0; i < y.data.size(); ++i) {
      l += 0.5 * y.data[i] * y.data[i] * (1.0 + 0.01 * static_cast<double>(i % 5));
    }
    return l;
  };
  Tensor4<double> y = bn.forward(x, true);
  Tensor4<double> dy = y;
  for (std::size_t i = 0; i < dy.data.size(); ++i) {
    dy.data[i] *= 1.0 + 0.01 * static_cast<double>(i % 5);
  }
  bn.gamma().zero_grad();
  bn.beta().zero_grad();
  const Tensor4<double> dx = bn.backward(dy);

  const double eps = 1e-6;
  for (std::size_t c = 0; c < 2; ++c) {
    double keep = bn.gamma().value[c];
    bn.gamma().value[c] = keep + eps;
    const double lp = loss(x);
    bn.gamma().value[c] = keep - eps;
    const double lm = loss(x);
    bn.gamma().value[c] = keep;
    CHECK(bn.gamma().grad[c] == Approx((lp - lm) / (2 * eps)).epsilon(1e-5));

    keep = bn.beta().value[c];
    bn.beta().value[c] = keep + eps;
    const double lp2 = loss(x);
    bn.beta().value[c] = keep - eps;
    const double lm2 = loss(x);
    bn.beta().value[c] = keep;
    CHECK(bn.beta().grad[c] == Approx((lp2 - lm2) / (2 * eps)).epsilon(1e-5));
  }
  Tensor4<double> xp = x;
  for (std::size_t i = 0; i < x.data.size(); i += 5) {
    const double keep = xp.data[i];
    xp.data[i] = keep + eps;
    const double lp = loss(xp);
    xp.data[i] = keep - eps;
    const double lm = loss(xp);
    xp.data[i] = keep;
    CHECK(dx.data[i] == Approx((lp - lm) / (2 * eps)).margin(1e-5));
  }
}

TEST_CASE("channel concat and split-add are inverse up to accumulation") {
  Rng rng(25);
  Tensor4<double> a = random_tensor(2, 2, 3, 3, rng);
  Tensor4<double> b = random_tensor(2, 3, 3, 3, rng);
  const Tensor4<double> cat = concat_channels<double>({&a, &b});
  REQUIRE(cat.c == 5);
  CHECK(cat.at(1, 0, 2, 2) == a.at(1, 0, 2, 2));
  CHECK(cat.at(1, 4, 0, 1) == b.at(1, 2, 0, 1));
  std::vector<Tensor4<double>> parts;
  parts.emplace_back(2, 2, 3, 3);
  parts.emplace_back(2, 3, 3, 3);
  split_add_channels(cat, parts);
  CHECK(parts[0].data == a.data);
  CHECK(parts[1].data == b.data);
}

TEST_CASE("mse loss value and gradient are exact") {
  Tensor4<double> p(1, 1, 1, 4), t(1, 1, 1, 4);
  p.data = {1.0, 2.0, 3.0, 4.0};
  t.data = {1.0, 0.0, 3.0, 2.0};
  Tensor4<double> d;
  const double l = mse_loss(p, t, &d);
  CHECK(l == Approx((0.0 + 4.0 + 0.0 + 4.0) / 4.0).epsilon(1e-15));
  CHECK(d.data == std::vector<double>{0.0, 1.0, 0.0, 1.0});
}

TEST_CASE("full network gradient check against finite differences") {
  const ArchSpec spec = two_block_spec();
  Network<double> net(spec, 77);
  Rng rng(26);
  const Tensor4<double> x = random_tensor(2, 4, 7, 7, rng);
  Tensor4<double> target(2, 2, 3, 3);
  for (auto& v : target.data) v = rng.normal();

  auto loss = [&]() {
    const Tensor4<double> y = net.forward(x, true);
    return mse_loss<double>(y, target, nullptr);
  };
  const Tensor4<double> y = net.forward(x, true);
  Tensor4<double> dl;
  mse_loss(y, target, &dl);
  net.zero_grad();
  net.backward(dl);

  const double eps = 1e-5;
  auto params = net.params();
  std::size_t checked = 0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Param<double>& p = *params[pi];
    const std::size_t stride = std::max<std::size_t>(1, p.value.size() / 4);
    for (std::size_t i = 0; i < p.value.size(); i += stride) {
      const double keep = p.value[i];
      p.value[i] = keep + eps;
      const double lp = loss();
      p.value[i] = keep - eps;
      const double lm = loss();
      p.value[i] = keep;
      const double num = (lp - lm) / (2 * eps);
      CHECK(p.grad[i] == Approx(num).margin(1e-4).epsilon(1e-4));
      ++checked;
    }
  }
  CHECK(checked > 30);
}

TEST_CASE("input gradient of the full network is correct") {
  const ArchSpec spec = tiny_spec();
  Network<double> net(spec, 5);
  Rng rng(27);
  Tensor4<double> x = random_tensor(2, 6, 5, 5, rng);
  Tensor4<double> target(2, 2, 3, 3);
  for (auto& v : target.data) v = rng.normal();

  const Tensor4<double> y = net.forward(x, true);
  Tensor4<double> dl;
  mse_loss(y, target, &dl);
  net.zero_grad();
  const Tensor4<double> dx = net.backward(dl);
  REQUIRE(dx.data.size() == x.data.size());

  const double eps = 1e-5;
  for (std::size_t i = 0; i < x.data.size(); i += 17) {
    const double keep = x.data[i];
    x.data[i] = keep + eps;
    const Tensor4<double> yp = net.forward(x, true);
    const double lp = mse_loss<double>(yp, target, nullptr);
    x.data[i] = keep - eps;
    const Tensor4<double> ym = net.forward(x, true);
    const double lm = mse_loss<double>(ym, target, nullptr);
    x.data[i] = keep;
    CHECK(dx.data[i] == Approx((lp - lm) / (2 * eps)).margin(1e-5).epsilon(1e-4));
  }
}

TEST_CASE("output only depends on the receptive field") {
  const ArchSpec spec = two_block_spec();  // R = 5
  Network<double> net(spec, 13);
  Rng rng(28);
  const std::size_t hw = 11;
  Tensor4<double> x = random_tensor(1, 4, hw, hw, rng);
  const Tensor4<double> y0 = net.forward(x, false);
  // output (oy, ox) sees input rows oy..oy+R-1; perturbing outside that
  // window must leave it bit-identical
  const std::size_t oy = 0, ox = 0, r = 5;
  Tensor4<double> xp = x;
  xp.at(0, 1, oy + r + 1, ox) += 10.0;
  xp.at(0, 2, hw - 1, hw - 1) -= 3.0;
  const Tensor4<double> y1 = net.forward(xp, false);
  for (std::size_t c = 0; c < 2; ++c) {
    CHECK(y1.at(0, c, oy, ox) == y0.at(0, c, oy, ox));
  }
  // and perturbing inside the window must change it
  Tensor4<double> xq = x;
  xq.at(0, 0, oy + 2, ox + 2) += 1.0;
  const Tensor4<double> y2 = net.forward(xq, false);
  CHECK(y2.at(0, 0, oy, ox) != y0.at(0, 0, oy, ox));
}

TEST_CASE("realized parameter vector length matches the archgen count") {
  for (const ArchSpec& spec : {tiny_spec(), two_block_spec()}) {
    Network<double> net(spec, 1);
    std::size_t n = 0;
    for (auto* p : net.params()) n += p->value.size();
    // archgen counts convolutions only; subtract the BN scale/shift pairs
    std::size_t bn = 0;
    for (auto* rs : net.running_stats()) bn += rs->size();
    CHECK(n - bn == spec.realized_param_count);
  }
}

TEST_CASE("adam drives a quadratic to its minimum and bias-corrects the first step") {
  Param<double> p(1);
  p.value[0] = 5.0;
  Adam<double> opt(0.1);
  // first update magnitude equals the learning rate regardless of gradient scale
  p.grad[0] = 1e-4;
  opt.step({&p});
  CHECK(p.value[0] == Approx(5.0 - 0.1).epsilon(1e-3));
  for (int i = 0; i < 400; ++i) {
    p.grad[0] = 2.0 * p.value[0];  // d/dx x^2
    opt.step({&p});
  }
  CHECK(std::abs(p.value[0]) < 1e-2);
}

TEST_CASE("optimizer step without a fresh backward is a logic error") {
  const ArchSpec spec = tiny_spec();
  Network<double> net(spec, 9);
  Adam<double> opt;
  CHECK_THROWS_AS(opt.step(net), std::logic_error);
  Rng rng(30);
  const Tensor4<double> x = random_tensor(2, 6, 5, 5, rng);
  Tensor4<double> target(2, 2, 3, 3);
  const Tensor4<double> y = net.forward(x, true);
  Tensor4<double> dl;
  mse_loss(y, target, &dl);
  net.zero_grad();
  net.backward(dl);
  opt.step(net);  // fine
  CHECK_THROWS_AS(opt.step(net), std::logic_error);  // grads already consumed
}

TEST_CASE("checkpoint round trip is bit-exact") {
  const ArchSpec spec = two_block_spec();
  Network<double> net(spec, 55);
  Rng rng(31);
  // push the network through a training step so running stats are non-trivial
  const Tensor4<double> x = random_tensor(2, 4, 7, 7, rng);
  Tensor4<double> target(2, 2, 3, 3);
  for (auto& v : target.data) v = rng.normal();
  const Tensor4<double> y = net.forward(x, true);
  Tensor4<double> dl;
  mse_loss(y, target, &dl);
  net.zero_grad();
  net.backward(dl);
  Adam<double> opt;
  opt.step(net);

  const std::string path =
      (std::filesystem::temp_directory_path() / "fpf_test_ckpt.fpft").string();
  net.save(path);
  Network<double> net2 = Network<double>::load(path);
  std::remove(path.c_str());

  auto p1 = net.params();
  auto p2 = net2.params();
  REQUIRE(p1.size() == p2.size());
  for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i]->value == p2[i]->value);
  auto r1 = net.running_stats();
  auto r2 = net2.running_stats();
  for (std::size_t i = 0; i < r1.size(); ++i) CHECK(*r1[i] == *r2[i]);

  const Tensor4<double> a = net.forward(x, false);
  const Tensor4<double> b = net2.forward(x, false);
  CHECK(a.data == b.data);
}

TEST_CASE("network rejects wrong channel counts and undersized inputs") {
  const ArchSpec spec = tiny_spec();
  Network<double> net(spec, 2);
  Tensor4<double> bad_c(1, 5, 5, 5);
  CHECK_THROWS(net.forward(bad_c, false));
  Tensor4<double> bad_hw(1, 6, 2, 2);
  CHECK_THROWS(net.forward(bad_hw, false));
}

TEST_CASE("same seed gives identical weights, different seeds differ") {
  const ArchSpec spec = tiny_spec();
  Network<double> a(spec, 4), b(spec, 4), c(spec, 5);
  CHECK(a.params()[0]->value == b.params()[0]->value);
  CHECK(a.params()[0]->value != c.params()[0]->value);
}
