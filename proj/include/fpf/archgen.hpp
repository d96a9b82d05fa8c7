#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace fpf {

// Requested receptive field, capacity and non-linearity count, plus the
// empirical channel schedule constants.
struct ArchConfig {
  std::size_t receptive_field = 15;  // R, odd
  std::size_t n_params = 5'000'000;  // N_P, convolution weights + biases
  std::size_t n_nonlinearities = 21; // N_L, one ReLU per block convolution
  std::size_t c_s_stop = 64;
  std::size_t c_s_dec = 32;
  std::size_t c_t_stop = 32;
  std::size_t c_t_dec = 32;
  std::size_t input_channels = 350;  // 2T
  std::size_t output_maps = 5;       // M

  std::size_t n_spatial_blocks() const { return (receptive_field - 1) / 2; }

  void validate() const {
    if (receptive_field < 1 || receptive_field % 2 == 0) {
      throw std::invalid_argument("receptive field must be an odd integer >= 1");
    }
    const std::size_t n_b = n_spatial_blocks();
    if (n_nonlinearities < n_b + std::max<std::size_t>(n_b, 1)) {
      throw std::invalid_argument(
          "too few non-linearities: every temporal and spatial block needs one");
    }
    if (c_s_stop < 1 || c_s_dec < 1 || c_t_stop < 1 || c_t_dec < 1 ||
        input_channels < 1 || output_maps < 1) {
      throw std::invalid_argument("channel constants must be >= 1");
    }
  }

  static ArchConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// Fully resolved network description.
struct ArchSpec {
  std::size_t n_blocks = 0;                 // N_B, spatial blocks
  std::vector<std::size_t> layers_per_block;    // L, one entry per temporal block
  std::vector<std::size_t> temporal_channels;   // C_T
  std::vector<std::size_t> spatial_channels;    // C_S
  std::size_t c_t_start = 0;
  std::size_t input_channels = 0;
  std::size_t output_maps = 0;
  std::size_t realized_param_count = 0;
  std::size_t realized_receptive_field = 0;

  static ArchSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// Spatial channels decrease in steps of c_s_dec down to c_s_stop.
inline std::vector<std::size_t> spatial_channels(std::size_t n_b, std::size_t c_s_stop,
                                                 std::size_t c_s_dec) {
  std::vector<std::size_t> cs;
  cs.reserve(n_b);
  for (std::size_t i = n_b; i-- > 0;) cs.push_back(i * c_s_dec + c_s_stop);
  return cs;
}

// Distribute n_lt convolution layers over n_b temporal blocks, larger counts
// first. The indicator condition is i <= (n_lt mod n_b) for i = 1..n_b.
inline std::vector<std::size_t> layers_per_block(std::size_t n_lt, std::size_t n_b) {
  if (n_b < 1 || n_lt < n_b) {
    throw std::invalid_argument("layers_per_block needs n_lt >= n_b >= 1");
  }
  const std::size_t base = n_lt / n_b;
  const std::size_t rem = n_lt % n_b;
  std::vector<std::size_t> l;
  l.reserve(n_b);
  for (std::size_t i = 1; i <= n_b; ++i) l.push_back(base + (i <= rem ? 1 : 0));
  return l;
}

// Temporal channels decrease from c_t_start in steps of c_t_dec, floored at
// c_t_stop.
inline std::vector<std::size_t> temporal_channels(std::size_t c_t_start, std::size_t n_b,
                                                  std::size_t c_t_stop,
                                                  std::size_t c_t_dec) {
  std::vector<std::size_t> ct;
  ct.reserve(n_b);
  for (std::size_t i = 0; i < n_b; ++i) {
    std::size_t dec = i * c_t_dec;
    std::size_t v = (c_t_start >= c_t_stop + dec) ? c_t_start - dec : c_t_stop;
    ct.push_back(v);
  }
  return ct;
}

inline std::size_t conv_param_count(std::size_t k, std::size_t c_in, std::size_t c_out) {
  return k * k * c_in * c_out + c_out;
}

// Convolution weights + biases of the realized network. Dense connectivity:
// layer j of a temporal block sees the block input plus all j previous layer
// outputs; the block emits input and all layer outputs concatenated.
// Batch-normalization scale/shift is not counted.
inline std::size_t count_parameters(const ArchSpec& spec, std::size_t c_in,
                                    std::size_t m) {
  std::size_t total = 0;
  std::size_t x = c_in;
  for (std::size_t b = 0; b < spec.layers_per_block.size(); ++b) {
    const std::size_t growth = spec.temporal_channels[b];
    for (std::size_t j = 0; j < spec.layers_per_block[b]; ++j) {
      total += conv_param_count(1, x + j * growth, growth);
    }
    x += spec.layers_per_block[b] * growth;
    if (b < spec.n_blocks) {
      total += conv_param_count(3, x, spec.spatial_channels[b]);
      x = spec.spatial_channels[b];
    }
  }
  total += conv_param_count(1, x, m);
  return total;
}

namespace detail {

inline ArchSpec realize(const ArchConfig& cfg, std::size_t c_t_start) {
  ArchSpec s;
  s.n_blocks = cfg.n_spatial_blocks();
  // R = 1 degenerates to a fingerprint-wise network: no spatial blocks, all
  // non-linearities in a single temporal block.
  const std::size_t n_temporal = std::max<std::size_t>(s.n_blocks, 1);
  s.layers_per_block = layers_per_block(cfg.n_nonlinearities - s.n_blocks, n_temporal);
  s.temporal_channels = temporal_channels(c_t_start, n_temporal, cfg.c_t_stop, cfg.c_t_dec);
  s.spatial_channels = spatial_channels(s.n_blocks, cfg.c_s_stop, cfg.c_s_dec);
  s.c_t_start = s.temporal_channels.front();
  s.input_channels = cfg.input_channels;
  s.output_maps = cfg.output_maps;
  s.realized_receptive_field = 2 * s.n_blocks + 1;
  s.realized_param_count = count_parameters(s, cfg.input_channels, cfg.output_maps);
  return s;
}

}  // namespace detail

// Incremental search over C_T_start; the parameter count is monotone in
// C_T_start, so the first increase of the budget gap ends the search.
inline ArchSpec build_architecture(const ArchConfig& cfg) {
  cfg.validate();
  const ArchSpec floor_spec = detail::realize(cfg, cfg.c_t_stop);
  if (cfg.n_params < floor_spec.realized_param_count) {
    throw std::invalid_argument(
        "parameter budget " + std::to_string(cfg.n_params) +
        " below the minimum achievable " +
        std::to_string(floor_spec.realized_param_count));
  }
  auto gap = [&](const ArchSpec& s) {
    return s.realized_param_count > cfg.n_params
               ? s.realized_param_count - cfg.n_params
               : cfg.n_params - s.realized_param_count;
  };
  ArchSpec best = floor_spec;
  std::size_t best_gap = gap(best);
  for (std::size_t start = cfg.c_t_stop + 1;; ++start) {
    ArchSpec cur = detail::realize(cfg, start);
    const std::size_t g = gap(cur);
    if (g < best_gap) {
      best = cur;
      best_gap = g;
    } else {
      return best;
    }
  }
}

// --- JSON I/O ---------------------------------------------------------------

inline ArchConfig ArchConfig::from_json(const nlohmann::json& j) {
  ArchConfig c;
  c.receptive_field = j.at("receptive_field").get<std::size_t>();
  c.n_params = j.at("n_params").get<std::size_t>();
  c.n_nonlinearities = j.at("n_nonlinearities").get<std::size_t>();
  c.c_s_stop = j.value("c_s_stop", c.c_s_stop);
  c.c_s_dec = j.value("c_s_dec", c.c_s_dec);
  c.c_t_stop = j.value("c_t_stop", c.c_t_stop);
  c.c_t_dec = j.value("c_t_dec", c.c_t_dec);
  c.input_channels = j.at("input_channels").get<std::size_t>();
  c.output_maps = j.at("output_maps").get<std::size_t>();
  c.validate();
  return c;
}

inline nlohmann::json ArchConfig::to_json() const {
  return {{"receptive_field", receptive_field},
          {"n_params", n_params},
          {"n_nonlinearities", n_nonlinearities},
          {"c_s_stop", c_s_stop},
          {"c_s_dec", c_s_dec},
          {"c_t_stop", c_t_stop},
          {"c_t_dec", c_t_dec},
          {"input_channels", input_channels},
          {"output_maps", output_maps}};
}

inline ArchSpec ArchSpec::from_json(const nlohmann::json& j) {
  ArchSpec s;
  s.n_blocks = j.at("n_blocks").get<std::size_t>();
  s.layers_per_block = j.at("layers_per_block").get<std::vector<std::size_t>>();
  s.temporal_channels = j.at("temporal_channels").get<std::vector<std::size_t>>();
  s.spatial_channels = j.at("spatial_channels").get<std::vector<std::size_t>>();
  s.c_t_start = j.at("c_t_start").get<std::size_t>();
  s.input_channels = j.at("input_channels").get<std::size_t>();
  s.output_maps = j.at("output_maps").get<std::size_t>();
  s.realized_param_count = j.at("realized_param_count").get<std::size_t>();
  s.realized_receptive_field = j.at("realized_receptive_field").get<std::size_t>();
  return s;
}

inline nlohmann::json ArchSpec::to_json() const {
  return {{"n_blocks", n_blocks},
          {"layers_per_block", layers_per_block},
          {"temporal_channels", temporal_channels},
          {"spatial_channels", spatial_channels},
          {"c_t_start", c_t_start},
          {"input_channels", input_channels},
          {"output_maps", output_maps},
          {"realized_param_count", realized_param_count},
          {"realized_receptive_field", realized_receptive_field}};
}

}  // namespace fpf
