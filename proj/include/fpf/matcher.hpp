#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstddef>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "fpf/image.hpp"
#include "fpf/signal.hpp"

namespace fpf {

constexpr int kBackgroundAtom = -1;

// Background fill for masked-out / zero voxels: 0 for FF and B1, the grid
// minimum for T1_H2O, T1_fat and delta_f.
inline TissueParams background_params(const ParameterGrid& grid) {
  TissueParams p;
  p.ff = 0.0;
  p.t1_h2o = grid.t1_h2o.front();
  p.t1_fat = grid.t1_fat.front();
  p.delta_f = grid.delta_f.front();
  p.b1 = 0.0;
  return p;
}

struct VoxelMatch {
  int index = kBackgroundAtom;
  double correlation = 0.0;
};

struct MatchResult {
  ParametricMaps maps;
  std::vector<int> atom_index;      // H x W
  std::vector<double> correlation;  // H x W
  double voxels_per_second = 0.0;   // tracked, not asserted
};

namespace detail {

inline Eigen::Map<const Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic,
                                      Eigen::RowMajor>>
atom_matrix(const Dictionary& d) {
  return {d.atoms.data(), static_cast<Eigen::Index>(d.n_atoms),
          static_cast<Eigen::Index>(d.t)};
}

template <typename Derived>
inline VoxelMatch argmax_scores(const Eigen::MatrixBase<Derived>& scores) {
  Eigen::Index best = 0;
  const double val = scores.maxCoeff(&best);  // first maximal entry wins ties
  return {static_cast<int>(best), val};
}

}  // namespace detail

// Maximum magnitude of the complex inner product between the unit-normalized
// query and the (unit-norm) atoms. Ties break to the lowest atom index.
inline VoxelMatch match_voxel(const Fingerprint& fp, const Dictionary& dict) {
  require(dict.normalized, "dictionary must be normalized for matching");
  require(fp.size() == dict.t, "fingerprint length must match dictionary");
  double nrm = 0.0;
  for (auto v : fp) nrm += std::norm(v);
  nrm = std::sqrt(nrm);
  if (nrm == 0.0) return {kBackgroundAtom, 0.0};
  Eigen::VectorXcd q(static_cast<Eigen::Index>(fp.size()));
  for (std::size_t i = 0; i < fp.size(); ++i) q[static_cast<Eigen::Index>(i)] = fp[i] / nrm;
  Eigen::VectorXd scores = (detail::atom_matrix(dict).conjugate() * q).cwiseAbs();
  return detail::argmax_scores(scores);
}

// Rank-k subspace from the truncated SVD of the atom matrix; matching happens
// on projected atoms and queries.
struct CompressedDictionary {
  std::size_t rank = 0;
  Eigen::MatrixXcd basis;        // t x k, right singular vectors
  Eigen::MatrixXcd atoms_proj;   // n_atoms x k
  const Dictionary* source = nullptr;
};

inline CompressedDictionary compress_dictionary(const Dictionary& dict,
                                                std::size_t rank) {
  require(dict.normalized, "dictionary must be normalized before compression");
  require(rank >= 1 && rank <= std::min(dict.n_atoms, dict.t),
          "rank must be in [1, min(n_atoms, t)]");
  auto a = detail::atom_matrix(dict);
  // Right singular vectors via the t x t Gram matrix; eigenvalues ascending.
  Eigen::MatrixXcd gram = a.adjoint() * a;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(gram);
  CompressedDictionary c;
  c.rank = rank;
  c.basis.resize(a.cols(), static_cast<Eigen::Index>(rank));
  for (std::size_t k = 0; k < rank; ++k) {
    c.basis.col(static_cast<Eigen::Index>(k)) =
        es.eigenvectors().col(a.cols() - 1 - static_cast<Eigen::Index>(k));
  }
  // rows are Bᴴ·atom, so that conj(atoms_proj)·(Bᴴ q) = conj(A)·q at full rank
  c.atoms_proj = a * c.basis.conjugate();
  c.source = &dict;
  return c;
}

inline VoxelMatch match_voxel_compressed(const Fingerprint& fp,
                                         const CompressedDictionary& cd) {
  double nrm = 0.0;
  for (auto v : fp) nrm += std::norm(v);
  nrm = std::sqrt(nrm);
  if (nrm == 0.0) return {kBackgroundAtom, 0.0};
  Eigen::VectorXcd q(static_cast<Eigen::Index>(fp.size()));
  for (std::size_t i = 0; i < fp.size(); ++i) q[static_cast<Eigen::Index>(i)] = fp[i] / nrm;
  Eigen::VectorXcd qp = cd.basis.adjoint() * q;
  Eigen::VectorXd scores = (cd.atoms_proj.conjugate() * qp).cwiseAbs();
  return detail::argmax_scores(scores);
}

// Voxel-wise matching over a slice. Voxels outside the mask (or with zero
// signal) get the background fill.
inline MatchResult match_image(const MrfImage& img, const Dictionary& dict,
                               const ParameterGrid& grid,
                               const Mask* mask = nullptr,
                               const CompressedDictionary* compressed = nullptr) {
  if (mask != nullptr) {
    require(mask->h == img.h && mask->w == img.w, "mask dims must match image");
  }
  MatchResult r;
  r.maps = ParametricMaps(img.h, img.w);
  r.atom_index.assign(img.h * img.w, kBackgroundAtom);
  r.correlation.assign(img.h * img.w, 0.0);
  const TissueParams bg = background_params(grid);
  const auto t0 = std::chrono::steady_clock::now();

  // Gather foreground voxels and match them in chunks so the score
  // computation runs as one matrix product per chunk.
  std::vector<std::size_t> active;
  active.reserve(img.h * img.w);
  for (std::size_t v = 0; v < img.h * img.w; ++v) {
    if (mask == nullptr || mask->data[v]) active.push_back(v);
  }
  const std::size_t qdim = compressed != nullptr ? compressed->rank : img.t;
  constexpr std::size_t kChunk = 256;
  Eigen::MatrixXcd queries(static_cast<Eigen::Index>(qdim), kChunk);
  Eigen::VectorXcd fp(static_cast<Eigen::Index>(img.t));
  for (std::size_t c0 = 0; c0 < active.size(); c0 += kChunk) {
    const std::size_t n = std::min(kChunk, active.size() - c0);
    std::vector<int> cols;  // voxel per used column; zero-norm handled inline
    cols.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t v = active[c0 + i];
      double nrm = 0.0;
      for (std::size_t f = 0; f < img.t; ++f) {
        fp[static_cast<Eigen::Index>(f)] = img.data[v * img.t + f];
        nrm += std::norm(img.data[v * img.t + f]);
      }
      if (nrm == 0.0) continue;  // background flag stays
      fp /= std::sqrt(nrm);
      const auto col = static_cast<Eigen::Index>(cols.size());
      if (compressed != nullptr) {
        queries.col(col) = compressed->basis.adjoint() * fp;
      } else {
        queries.col(col) = fp;
      }
      cols.push_back(static_cast<int>(v));
    }
    if (cols.empty()) continue;
    const auto used = static_cast<Eigen::Index>(cols.size());
    Eigen::MatrixXd scores;
    if (compressed != nullptr) {
      scores = (compressed->atoms_proj.conjugate() * queries.leftCols(used)).cwiseAbs();
    } else {
      scores = (detail::atom_matrix(dict).conjugate() * queries.leftCols(used)).cwiseAbs();
    }
    for (Eigen::Index j = 0; j < used; ++j) {
      const auto v = static_cast<std::size_t>(cols[static_cast<std::size_t>(j)]);
      VoxelMatch m = detail::argmax_scores(scores.col(j));
      r.atom_index[v] = m.index;
      r.correlation[v] = m.correlation;
    }
  }

  for (std::size_t y = 0; y < img.h; ++y) {
    for (std::size_t x = 0; x < img.w; ++x) {
      const int idx = r.atom_index[y * img.w + x];
      const TissueParams& p =
          idx >= 0 ? dict.params[static_cast<std::size_t>(idx)] : bg;
      r.maps.at(ParametricMaps::kFF, y, x) = p.ff;
      r.maps.at(ParametricMaps::kT1H2O, y, x) = p.t1_h2o;
      r.maps.at(ParametricMaps::kT1Fat, y, x) = p.t1_fat;
      r.maps.at(ParametricMaps::kDeltaF, y, x) = p.delta_f;
      r.maps.at(ParametricMaps::kB1, y, x) = p.b1;
    }
  }
  const auto t1 = std::chrono::steady_clock::now();
  const double secs = std::chrono::duration<double>(t1 - t0).count();
  if (secs > 0.0) {
    r.voxels_per_second = static_cast<double>(img.h * img.w) / secs;
  }
  return r;
}

}  // namespace fpf
