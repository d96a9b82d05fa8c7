#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "fpf/phantom.hpp"
#include "fpf/pipeline.hpp"

using namespace fpf;
using Catch::Approx;

namespace {

ArchSpec small_spec(std::size_t input_channels) {
  ArchSpec s;
  s.n_blocks = 1;
  s.layers_per_block = {1};
  s.temporal_channels = {8};
  s.spatial_channels = {8};
  s.c_t_start = 8;
  s.input_channels = input_channels;
  s.output_maps = ParametricMaps::kNumMaps;
  s.realized_receptive_field = 3;
  s.realized_param_count = count_parameters(s, input_channels, s.output_maps);
  return s;
}

SubjectTensors<double> make_subject(std::size_t h, std::size_t w, std::size_t t,
                                    std::uint64_t seed, const ParameterGrid& grid,
                                    const SequenceTrain& seq) {
  const Phantom ph = generate_phantom(h, w, 3, seed, grid, true);
  const MrfImage img = forward_simulate(ph, seq);
  return prepare_subject<double>(img, ph.maps, ph.foreground, grid);
}

}  // namespace

TEST_CASE("normalization statistics are the joint mean/std over 2T real values") {
  MrfImage img(1, 2, 1);
  img.at(0, 0, 0) = {1.0, 3.0};
  img.at(0, 1, 0) = {5.0, 7.0};
  const ParameterGrid g = ParameterGrid::desk_default();
  const NormalizationState s = compute_normalization(img, g);
  CHECK(s.mean == Approx(4.0));
  // population std of {1, 3, 5, 7}
  CHECK(s.stddev == Approx(std::sqrt(5.0)));
  CHECK(s.map_min[ParametricMaps::kT1H2O] == 600.0);
  CHECK(s.map_max[ParametricMaps::kT1H2O] == 1400.0);

  MrfImage flat(2, 2, 1);
  for (auto& v : flat.data) v = {2.0, 2.0};
  CHECK_THROWS(compute_normalization(flat, g));
}

TEST_CASE("channel layout: real parts first, imaginary parts after") {
  MrfImage img(2, 2, 3);
  Rng rng(41);
  for (auto& v : img.data) v = {rng.normal(), rng.normal()};
  NormalizationState norm;
  norm.mean = 0.5;
  norm.stddev = 2.0;
  const Tensor4<double> x = image_to_channels<double>(img, norm);
  REQUIRE(x.c == 6);
  for (std::size_t y = 0; y < 2; ++y) {
    for (std::size_t xx = 0; xx < 2; ++xx) {
      for (std::size_t f = 0; f < 3; ++f) {
        CHECK(x.at(0, f, y, xx) ==
              Approx((img.at(y, xx, f).real() - 0.5) / 2.0).epsilon(1e-14));
        CHECK(x.at(0, 3 + f, y, xx) ==
              Approx((img.at(y, xx, f).imag() - 0.5) / 2.0).epsilon(1e-14));
      }
    }
  }
}

TEST_CASE("map normalization is the grid-range [0, 1] scaling and inverts exactly") {
  const ParameterGrid g = ParameterGrid::desk_default();
  const Phantom ph = generate_phantom(16, 16, 3, 12, g, true);
  MrfImage img = forward_simulate(ph, SequenceTrain::default_train(4));
  const NormalizationState norm = compute_normalization(img, g);

  const Tensor4<double> q = normalize_maps<double>(ph.maps, norm);
  // on-grid foreground values land in [0, 1]; zero-filled background may not
  for (std::size_t m = 0; m < ParametricMaps::kNumMaps; ++m) {
    for (std::size_t y = 0; y < 16; ++y) {
      for (std::size_t x = 0; x < 16; ++x) {
        if (!ph.foreground.at(y, x)) continue;
        CHECK(q.at(0, m, y, x) >= -1e-12);
        CHECK(q.at(0, m, y, x) <= 1.0 + 1e-12);
      }
    }
  }
  const ParametricMaps back = denormalize_maps(q, norm);
  for (std::size_t i = 0; i < back.data.size(); ++i) {
    CHECK(back.data[i] == Approx(ph.maps.data[i]).margin(1e-9));
  }
}

TEST_CASE("reflection padding mirrors about the edge pixel") {
  CHECK(reflect_index(-1, 5) == 1);
  CHECK(reflect_index(-2, 5) == 2);
  CHECK(reflect_index(5, 5) == 3);
  CHECK(reflect_index(6, 5) == 2);

  Tensor4<double> x(1, 1, 1, 3);
  x.data = {1.0, 2.0, 3.0};
  // pad radius 1 in both dims; row reflection repeats the single row
  const Tensor4<double> p = reflect_pad(x, 0);
  CHECK(p.data == x.data);
}

TEST_CASE("padded 2-D tensor has the mirrored border") {
  Tensor4<double> x(1, 1, 3, 3);
  for (std::size_t i = 0; i < 9; ++i) x.data[i] = static_cast<double>(i);
  const Tensor4<double> p = reflect_pad(x, 1);
  REQUIRE(p.h == 5);
  // row -1 is row 1, column -1 is column 1
  CHECK(p.at(0, 0, 0, 1) == x.at(0, 0, 1, 0));
  CHECK(p.at(0, 0, 1, 0) == x.at(0, 0, 0, 1));
  CHECK(p.at(0, 0, 0, 0) == x.at(0, 0, 1, 1));
  CHECK(p.at(0, 0, 4, 4) == x.at(0, 0, 1, 1));
  // interior untouched
  CHECK(p.at(0, 0, 2, 2) == x.at(0, 0, 1, 1));
}

TEST_CASE("patch sampler: geometry, content and uniform coverage") {
  const ParameterGrid g = ParameterGrid::desk_default();
  const SequenceTrain seq = SequenceTrain::default_train(4);
  std::vector<SubjectTensors<double>> subs;
  subs.push_back(make_subject(16, 16, 4, 61, g, seq));

  const std::size_t qp = 8, rf = 3;
  PatchSampler<double> sampler(&subs, qp, rf, 99);
  Tensor4<double> in, tg;
  sampler.next_batch(3, in, tg);
  CHECK(in.n == 3);
  CHECK(in.c == 8);
  CHECK(in.h == qp + rf - 1);
  CHECK(tg.c == ParametricMaps::kNumMaps);
  CHECK(tg.h == qp);

  // chi-squared uniformity over the 9 x 9 top-left positions
  PatchSampler<double> s2(&subs, qp, rf, 7);
  const std::size_t npos = 16 - qp + 1;
  std::vector<double> count(npos * npos, 0.0);
  const std::size_t draws = 20000;
  for (std::size_t i = 0; i < draws; ++i) {
    const auto p = s2.sample_position();
    count[p.y * npos + p.x] += 1.0;
  }
  const double expect = static_cast<double>(draws) / static_cast<double>(npos * npos);
  double chi2 = 0.0;
  for (double c : count) chi2 += (c - expect) * (c - expect) / expect;
  // 80 degrees of freedom; 0.001 quantile is ~124.8
  CHECK(chi2 < 125.0);
}

TEST_CASE("sampled input patches equal the padded crop at the same position") {
  const ParameterGrid g = ParameterGrid::desk_default();
  const SequenceTrain seq = SequenceTrain::default_train(4);
  std::vector<SubjectTensors<double>> subs;
  subs.push_back(make_subject(16, 16, 4, 8, g, seq));
  const std::size_t qp = 6, rf = 5, r = 2;
  const Tensor4<double> padded = reflect_pad(subs[0].input, r);

  PatchSampler<double> pos_sampler(&subs, qp, rf, 3);
  PatchSampler<double> batch_sampler(&subs, qp, rf, 3);
  const auto p = pos_sampler.sample_position();
  Tensor4<double> in, tg;
  batch_sampler.next_batch(1, in, tg);
  const Tensor4<double> ref = crop(padded, p.y, p.x, qp + 2 * r, qp + 2 * r);
  CHECK(in.data == ref.data);
  const Tensor4<double> tref = crop(subs[0].target, p.y, p.x, qp, qp);
  CHECK(tg.data == tref.data);
}

TEST_CASE("training with zero learning rate leaves the weights untouched") {
  const ParameterGrid g = ParameterGrid::desk_default();
  const SequenceTrain seq = SequenceTrain::default_train(4);
  std::vector<SubjectTensors<double>> subs;
  subs.push_back(make_subject(16, 16, 4, 21, g, seq));

  Network<double> net(small_spec(8), 10);
  std::vector<std::vector<double>> before;
  for (auto* p : net.params()) before.push_back(p->value);

  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  cfg.lr = 0.0;
  cfg.qp = 8;
  cfg.batches_per_epoch = 3;
  train(net, subs, {}, cfg);

  auto params = net.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    CHECK(params[i]->value == before[i]);
  }
}

TEST_CASE("training is deterministic in the seed") {
  const ParameterGrid g = ParameterGrid::desk_default();
  const SequenceTrain seq = SequenceTrain::default_train(4);
  std::vector<SubjectTensors<double>> subs;
  subs.push_back(make_subject(16, 16, 4, 5, g, seq));
  std::vector<SubjectTensors<double>> val;
  val.push_back(make_subject(16, 16, 4, 6, g, seq));

  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  cfg.qp = 8;
  cfg.seed = 44;
  cfg.batches_per_epoch = 3;

  Network<double> n1(small_spec(8), 10);
  Network<double> n2(small_spec(8), 10);
  const TrainRecord r1 = train(n1, subs, val, cfg);
  const TrainRecord r2 = train(n2, subs, val, cfg);
  CHECK(r1.batch_loss == r2.batch_loss);
  CHECK(r1.val_nrmse == r2.val_nrmse);
  auto p1 = n1.params();
  auto p2 = n2.params();
  for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i]->value == p2[i]->value);

  cfg.seed = 45;
  Network<double> n3(small_spec(8), 10);
  const TrainRecord r3 = train(n3, subs, val, cfg);
  CHECK(r1.batch_loss != r3.batch_loss);
}

TEST_CASE("epoch size derives from the foreground voxel count") {
  const ParameterGrid g = ParameterGrid::desk_default();
  const SequenceTrain seq = SequenceTrain::default_train(4);
  std::vector<SubjectTensors<double>> subs;
  subs.push_back(make_subject(24, 24, 4, 51, g, seq));
  const std::size_t fg = subs[0].foreground_voxels;

  Network<double> net(small_spec(8), 1);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 3;
  cfg.qp = 8;
  const TrainRecord rec = train(net, subs, {}, cfg);
  const std::size_t expected = (fg + 3 * 64 - 1) / (3 * 64);
  CHECK(rec.batches_per_epoch == expected);
  CHECK(rec.batch_loss.size() == expected);
}

TEST_CASE("overfitting a single subject drops the loss by 10x") {
  const ParameterGrid g = ParameterGrid::desk_default();
  const SequenceTrain seq = SequenceTrain::default_train(4);
  std::vector<SubjectTensors<double>> subs;
  subs.push_back(make_subject(16, 16, 4, 31, g, seq));

  Network<double> net(small_spec(8), 3);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 4;
  cfg.lr = 3e-3;
  cfg.qp = 8;
  cfg.seed = 2;
  cfg.batches_per_epoch = 2;
  const TrainRecord rec = train(net, subs, {}, cfg);

  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < 4; ++i) first += rec.batch_loss[i];
  for (std::size_t i = rec.batch_loss.size() - 4; i < rec.batch_loss.size(); ++i) {
    last += rec.batch_loss[i];
  }
  CHECK(last < first / 10.0);
}

TEST_CASE("tiled reconstruction is independent of the tile size") {
  const ParameterGrid g = ParameterGrid::desk_default();
  const SequenceTrain seq = SequenceTrain::default_train(4);
  const Phantom ph = generate_phantom(20, 20, 3, 71, g, true);
  const MrfImage img = forward_simulate(ph, seq);
  const NormalizationState norm = compute_normalization(img, g);

  Network<double> net(small_spec(8), 17);
  const ParametricMaps a = reconstruct_slice(net, img, norm, 20);
  const ParametricMaps b = reconstruct_slice(net, img, norm, 8);
  const ParametricMaps c = reconstruct_slice(net, img, norm, 7);
  CHECK(a.data == b.data);
  CHECK(a.data == c.data);
}

TEST_CASE("an overfit network reconstructs its training slice accurately") {
  const ParameterGrid g = ParameterGrid::desk_default();
  const SequenceTrain seq = SequenceTrain::default_train(4);
  const Phantom ph = generate_phantom(16, 16, 3, 91, g, true);
  const MrfImage img = forward_simulate(ph, seq);
  std::vector<SubjectTensors<double>> subs;
  subs.push_back(prepare_subject<double>(img, ph.maps, ph.foreground, g));

  Network<double> net(small_spec(8), 29);
  TrainConfig cfg;
  cfg.epochs = 300;
  cfg.batch_size = 4;
  cfg.lr = 3e-3;
  cfg.qp = 8;
  cfg.seed = 6;
  cfg.batches_per_epoch = 2;
  train(net, subs, {}, cfg);

  const NormalizationState norm = compute_normalization(img, g);
  const ParametricMaps rec = reconstruct_slice(net, img, norm, 8);
  // normalized-space NRMSE over the foreground, averaged across maps
  double total = 0.0;
  for (std::size_t m = 0; m < ParametricMaps::kNumMaps; ++m) {
    const double span = norm.map_max[m] - norm.map_min[m];
    double num = 0.0;
    std::size_t n = 0;
    for (std::size_t y = 0; y < 16; ++y) {
      for (std::size_t x = 0; x < 16; ++x) {
        if (!ph.foreground.at(y, x)) continue;
        const double d = (rec.at(m, y, x) - ph.maps.at(m, y, x)) / span;
        num += d * d;
        ++n;
      }
    }
    total += std::sqrt(num / static_cast<double>(n));
  }
  CHECK(total / ParametricMaps::kNumMaps < 0.08);
}
