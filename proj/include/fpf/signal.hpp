#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "fpf/image.hpp"

namespace fpf {

using Fingerprint = std::vector<cplx>;

// Fat chemical shift at 3 T (3.4 ppm), relative to water.
inline constexpr double kFatShiftHz = -440.0;

// Per-frame acquisition parameters of the variable FLASH echo train.
struct SequenceTrain {
  std::vector<double> flip_deg;  // nominal flip angle per frame, degrees
  std::vector<double> tr_ms;     // repetition time per frame, ms
  std::vector<double> te_ms;     // echo time per frame, ms
  bool inversion = true;         // non-selective inversion at t = 0

  std::size_t frames() const { return flip_deg.size(); }

  void validate() const {
    require(!flip_deg.empty(), "sequence train must have at least one frame");
    require(tr_ms.size() == flip_deg.size() && te_ms.size() == flip_deg.size(),
            "flip/TR/TE arrays must share the same length");
    for (std::size_t i = 0; i < frames(); ++i) {
      require(flip_deg[i] > 0.0 && flip_deg[i] <= 180.0,
              "flip angle must be in (0, 180] degrees");
      require(te_ms[i] > 0.0 && tr_ms[i] > te_ms[i], "need TR > TE > 0 per frame");
    }
  }

  // Shape-faithful default train: flip angle piecewise-varying between 5 and 60
  // degrees with breakpoints at frames 75/100/125/150 (scaled for shorter T),
  // TE alternating 1.2/3.45 ms in the final segment for in/out-of-phase fat
  // contrast, TR within [4, 8] ms.
  static SequenceTrain default_train(std::size_t t) {
    SequenceTrain s;
    s.inversion = true;
    s.flip_deg.resize(t);
    s.tr_ms.resize(t);
    s.te_ms.resize(t);
    auto bp = [&](double f) {
      return static_cast<std::size_t>(std::lround(f * static_cast<double>(t) / 175.0));
    };
    const std::size_t b1 = bp(75), b2 = bp(100), b3 = bp(125), b4 = bp(150);
    for (std::size_t i = 0; i < t; ++i) {
      double fa, tr, te;
      if (i < b1) {
        double u = b1 > 1 ? static_cast<double>(i) / static_cast<double>(b1 - 1) : 0.0;
        fa = 5.0 + 30.0 * u;  // ramp 5 -> 35
        tr = 8.0;
        te = 1.2;
      } else if (i < b2) {
        fa = 60.0;
        tr = 6.0;
        te = 1.2;
      } else if (i < b3) {
        fa = 10.0;
        tr = 5.0;
        te = 1.2;
      } else if (i < b4) {
        fa = 45.0;
        tr = 7.0;
        te = 1.2;
      } else {
        fa = 25.0;
        tr = 4.0;
        te = (i % 2 == 0) ? 1.2 : 3.45;
      }
      s.flip_deg[i] = fa;
      s.tr_ms[i] = tr;
      s.te_ms[i] = te;
    }
    s.validate();
    return s;
  }

  static SequenceTrain from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// One voxel's tissue description: the five quantified parameters.
struct TissueParams {
  double ff = 0.0;      // fat fraction, [0, 1]
  double t1_h2o = 1000; // ms
  double t1_fat = 300;  // ms
  double delta_f = 0.0; // Hz
  double b1 = 1.0;      // flip angle efficacy

  void validate() const {
    require(ff >= 0.0 && ff <= 1.0, "ff must be in [0, 1]");
    require(t1_h2o > 0.0 && t1_fat > 0.0, "relaxation times must be positive");
    require(b1 > 0.0, "b1 must be positive");
  }
};

// Sorted sampling values per parameter; the dictionary covers the Cartesian
// product in row-major order (ff, t1_h2o, t1_fat, delta_f, b1), b1 fastest.
struct ParameterGrid {
  std::vector<double> ff, t1_h2o, t1_fat, delta_f, b1;

  void validate() const {
    for (const auto* v : {&ff, &t1_h2o, &t1_fat, &delta_f, &b1}) {
      require(!v->empty(), "every parameter list must be non-empty");
      require(std::is_sorted(v->begin(), v->end()) &&
                  std::adjacent_find(v->begin(), v->end()) == v->end(),
              "parameter lists must be strictly increasing");
    }
  }

  std::size_t size() const {
    return ff.size() * t1_h2o.size() * t1_fat.size() * delta_f.size() * b1.size();
  }

  TissueParams at(std::size_t index) const {
    TissueParams p;
    p.b1 = b1[index % b1.size()];
    index /= b1.size();
    p.delta_f = delta_f[index % delta_f.size()];
    index /= delta_f.size();
    p.t1_fat = t1_fat[index % t1_fat.size()];
    index /= t1_fat.size();
    p.t1_h2o = t1_h2o[index % t1_h2o.size()];
    index /= t1_h2o.size();
    p.ff = ff[index];
    return p;
  }

  const std::vector<double>& list(std::size_t m) const {
    switch (m) {
      case 0: return ff;
      case 1: return t1_h2o;
      case 2: return t1_fat;
      case 3: return delta_f;
      default: return b1;
    }
  }

  double min(std::size_t m) const { return list(m).front(); }
  double max(std::size_t m) const { return list(m).back(); }

  static std::vector<double> segment(double start, double inc, double stop) {
    std::vector<double> v;
    auto n = static_cast<std::size_t>(std::lround((stop - start) / inc)) + 1;
    v.reserve(n);
    for (std::size_t i = 0; i < n; ++i) v.push_back(start + static_cast<double>(i) * inc);
    return v;
  }

  // Desk-scale default: 11 * 9 * 4 * 7 * 5 = 13,860 atoms.
  static ParameterGrid desk_default() {
    ParameterGrid g;
    g.ff = segment(0.0, 0.1, 1.0);
    g.t1_h2o = segment(600.0, 100.0, 1400.0);
    g.t1_fat = {250.0, 300.0, 350.0, 400.0};
    g.delta_f = segment(-60.0, 20.0, 60.0);
    g.b1 = segment(0.6, 0.1, 1.0);
    return g;
  }

  // The published dictionary grids (7,182,000 combinations).
  static ParameterGrid paper_default() {
    ParameterGrid g;
    g.ff = segment(0.0, 0.05, 1.0);
    g.t1_h2o = segment(550.0, 10.0, 1600.0);
    auto tail = segment(1650.0, 50.0, 2000.0);
    g.t1_h2o.insert(g.t1_h2o.end(), tail.begin(), tail.end());
    g.t1_fat = segment(225.0, 25.0, 400.0);
    g.delta_f = segment(-120.0, 10.0, 120.0);
    g.b1 = segment(0.3, 0.05, 1.0);
    return g;
  }

  static ParameterGrid from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// Single-pool spoiled FLASH evolution: tip, read transverse signal at TE with
// off-resonance phase, relax Mz over TR. Perfect spoiling, T2 ignored, M0 = 1.
inline void simulate_pool(const SequenceTrain& seq, double t1_ms, double off_hz,
                          double b1, cplx* out) {
  const double deg2rad = M_PI / 180.0;
  double mz = seq.inversion ? -1.0 : 1.0;
  for (std::size_t i = 0; i < seq.frames(); ++i) {
    const double a = b1 * seq.flip_deg[i] * deg2rad;
    const double phase = 2.0 * M_PI * off_hz * seq.te_ms[i] * 1e-3;
    out[i] = mz * std::sin(a) * cplx(std::cos(phase), std::sin(phase));
    mz = 1.0 + (mz * std::cos(a) - 1.0) * std::exp(-seq.tr_ms[i] / t1_ms);
  }
}

// Two-pool mixture: output = (1 - ff) * water + ff * fat.
inline Fingerprint simulate_fingerprint(const SequenceTrain& seq,
                                        const TissueParams& tissue) {
  seq.validate();
  tissue.validate();
  const std::size_t t = seq.frames();
  Fingerprint water(t), fat(t), out(t);
  simulate_pool(seq, tissue.t1_h2o, tissue.delta_f, tissue.b1, water.data());
  simulate_pool(seq, tissue.t1_fat, tissue.delta_f + kFatShiftHz, tissue.b1,
                fat.data());
  for (std::size_t i = 0; i < t; ++i) {
    out[i] = (1.0 - tissue.ff) * water[i] + tissue.ff * fat[i];
  }
  return out;
}

// Atom matrix plus the parameter tuple behind each atom.
struct Dictionary {
  std::size_t n_atoms = 0, t = 0;
  std::vector<cplx> atoms;  // row-major, n_atoms x t
  std::vector<TissueParams> params;
  std::vector<double> norms;  // original L2 norms, kept when normalized
  bool normalized = false;

  cplx* atom(std::size_t i) { return atoms.data() + i * t; }
  const cplx* atom(std::size_t i) const { return atoms.data() + i * t; }
};

inline constexpr std::size_t kDefaultAtomBudget = 2'000'000;

inline Dictionary build_dictionary(const SequenceTrain& seq, const ParameterGrid& grid,
                                   bool normalize,
                                   std::size_t atom_budget = kDefaultAtomBudget) {
  seq.validate();
  grid.validate();
  const std::size_t n = grid.size();
  require(n > 0, "grid must be non-empty");
  if (n > atom_budget) {
    throw std::invalid_argument("grid product " + std::to_string(n) +
                                " exceeds atom budget " + std::to_string(atom_budget));
  }
  Dictionary d;
  d.n_atoms = n;
  d.t = seq.frames();
  d.atoms.resize(n * d.t);
  d.params.resize(n);
  d.normalized = normalize;
  if (normalize) d.norms.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    d.params[i] = grid.at(i);
    Fingerprint fp = simulate_fingerprint(seq, d.params[i]);
    if (normalize) {
      double s = 0.0;
      for (auto v : fp) s += std::norm(v);
      s = std::sqrt(s);
      d.norms[i] = s;
      if (s > 0.0) {
        for (auto& v : fp) v /= s;
      }
    }
    std::copy(fp.begin(), fp.end(), d.atom(i));
  }
  return d;
}

// --- JSON I/O ---------------------------------------------------------------

inline SequenceTrain SequenceTrain::from_json(const nlohmann::json& j) {
  SequenceTrain s;
  if (j.contains("default_frames")) {
    s = default_train(j.at("default_frames").get<std::size_t>());
    if (j.contains("inversion")) s.inversion = j.at("inversion").get<bool>();
    return s;
  }
  s.flip_deg = j.at("flip_deg").get<std::vector<double>>();
  s.tr_ms = j.at("tr_ms").get<std::vector<double>>();
  s.te_ms = j.at("te_ms").get<std::vector<double>>();
  s.inversion = j.value("inversion", true);
  s.validate();
  return s;
}

inline nlohmann::json SequenceTrain::to_json() const {
  return {{"flip_deg", flip_deg},
          {"tr_ms", tr_ms},
          {"te_ms", te_ms},
          {"inversion", inversion}};
}

// Each parameter is either an explicit "values" list or a list of
// {start, increment, stop} segments.
inline ParameterGrid ParameterGrid::from_json(const nlohmann::json& j) {
  auto parse = [&](const char* name) {
    const auto& p = j.at(name);
    std::vector<double> v;
    if (p.is_array()) {
      v = p.get<std::vector<double>>();
    } else if (p.contains("values")) {
      v = p.at("values").get<std::vector<double>>();
    } else {
      for (const auto& seg : p.at("segments")) {
        auto s = segment(seg.at("start").get<double>(), seg.at("increment").get<double>(),
                         seg.at("stop").get<double>());
        v.insert(v.end(), s.begin(), s.end());
      }
    }
    return v;
  };
  ParameterGrid g;
  g.ff = parse("ff");
  g.t1_h2o = parse("t1_h2o");
  g.t1_fat = parse("t1_fat");
  g.delta_f = parse("delta_f");
  g.b1 = parse("b1");
  g.validate();
  return g;
}

inline nlohmann::json ParameterGrid::to_json() const {
  return {{"ff", ff},       {"t1_h2o", t1_h2o},   {"t1_fat", t1_fat},
          {"delta_f", delta_f}, {"b1", b1}};
}

}  // namespace fpf
