#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fpf/container.hpp"
#include "fpf/image.hpp"
#include "fpf/signal.hpp"

namespace fpf {

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
  f << j.dump(2) << '\n';
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path.string());
  return nlohmann::json::parse(f);
}

// --- dictionaries -------------------------------------------------------------

inline void save_dictionary(const std::filesystem::path& dir, const Dictionary& d,
                            const SequenceTrain& seq, const ParameterGrid& grid,
                            const nlohmann::json& provenance = {}) {
  std::filesystem::create_directories(dir);
  TensorContainer atoms =
      TensorContainer::from_c64({d.n_atoms, d.t}, d.atoms, {"atom", "frame"});
  atoms.provenance = provenance;
  write_container((dir / "atoms.fpft").string(), atoms);

  std::vector<double> pv(d.n_atoms * 5);
  for (std::size_t i = 0; i < d.n_atoms; ++i) {
    const TissueParams& p = d.params[i];
    pv[i * 5 + 0] = p.ff;
    pv[i * 5 + 1] = p.t1_h2o;
    pv[i * 5 + 2] = p.t1_fat;
    pv[i * 5 + 3] = p.delta_f;
    pv[i * 5 + 4] = p.b1;
  }
  write_container((dir / "params.fpft").string(),
                  TensorContainer::from_f64({d.n_atoms, 5}, pv, {"atom", "param"}));
  if (!d.norms.empty()) {
    write_container((dir / "norms.fpft").string(),
                    TensorContainer::from_f64({d.n_atoms}, d.norms, {"atom"}));
  }
  write_json(dir / "meta.json", {{"kind", "dictionary"},
                                 {"n_atoms", d.n_atoms},
                                 {"frames", d.t},
                                 {"normalized", d.normalized},
                                 {"sequence", seq.to_json()},
                                 {"grid", grid.to_json()}});
}

struct LoadedDictionary {
  Dictionary dict;
  SequenceTrain sequence;
  ParameterGrid grid;
};

inline LoadedDictionary load_dictionary(const std::filesystem::path& dir) {
  const nlohmann::json meta = read_json(dir / "meta.json");
  LoadedDictionary out;
  out.sequence = SequenceTrain::from_json(meta.at("sequence"));
  out.grid = ParameterGrid::from_json(meta.at("grid"));
  out.dict.n_atoms = meta.at("n_atoms").get<std::size_t>();
  out.dict.t = meta.at("frames").get<std::size_t>();
  out.dict.normalized = meta.at("normalized").get<bool>();
  out.dict.atoms = read_container((dir / "atoms.fpft").string()).as_c64();
  const auto pv = read_container((dir / "params.fpft").string()).as_f64();
  out.dict.params.resize(out.dict.n_atoms);
  for (std::size_t i = 0; i < out.dict.n_atoms; ++i) {
    out.dict.params[i] = {pv[i * 5 + 0], pv[i * 5 + 1], pv[i * 5 + 2], pv[i * 5 + 3],
                          pv[i * 5 + 4]};
  }
  if (std::filesystem::exists(dir / "norms.fpft")) {
    out.dict.norms = read_container((dir / "norms.fpft").string()).as_f64();
  }
  if (out.dict.atoms.size() != out.dict.n_atoms * out.dict.t) {
    throw std::runtime_error("dictionary atom payload does not match meta.json");
  }
  // float storage loses the low bits of the unit norms; restore them exactly
  if (out.dict.normalized) {
    for (std::size_t i = 0; i < out.dict.n_atoms; ++i) {
      double s = 0.0;
      cplx* a = out.dict.atom(i);
      for (std::size_t f = 0; f < out.dict.t; ++f) s += std::norm(a[f]);
      s = std::sqrt(s);
      if (s > 0.0) {
        for (std::size_t f = 0; f < out.dict.t; ++f) a[f] /= s;
      }
    }
  }
  return out;
}

// --- images, maps, masks ------------------------------------------------------

inline void save_image(const std::filesystem::path& path, const MrfImage& img,
                       const nlohmann::json& provenance = {}) {
  TensorContainer c =
      TensorContainer::from_c64({img.h, img.w, img.t}, img.data, {"y", "x", "frame"});
  c.provenance = provenance;
  write_container(path.string(), c);
}

inline MrfImage load_image(const std::filesystem::path& path) {
  const TensorContainer c = read_container(path.string());
  if (c.shape.size() != 3) throw std::runtime_error("image container must be 3-D");
  MrfImage img(c.shape[0], c.shape[1], c.shape[2]);
  img.data = c.as_c64();
  return img;
}

inline void save_maps(const std::filesystem::path& path, const ParametricMaps& maps,
                      const nlohmann::json& provenance = {}) {
  TensorContainer c = TensorContainer::from_f64(
      {ParametricMaps::kNumMaps, maps.h, maps.w}, maps.data, {"map", "y", "x"});
  c.provenance = provenance;
  write_container(path.string(), c);
}

inline ParametricMaps load_maps(const std::filesystem::path& path) {
  const TensorContainer c = read_container(path.string());
  if (c.shape.size() != 3 || c.shape[0] != ParametricMaps::kNumMaps) {
    throw std::runtime_error("maps container must be (5, H, W)");
  }
  ParametricMaps maps(c.shape[1], c.shape[2]);
  maps.data = c.as_f64();
  return maps;
}

inline void save_mask(const std::filesystem::path& path, const Mask& m) {
  std::vector<double> v(m.data.begin(), m.data.end());
  write_container(path.string(),
                  TensorContainer::from_f64({m.h, m.w}, v, {"y", "x"}));
}

inline Mask load_mask(const std::filesystem::path& path) {
  const TensorContainer c = read_container(path.string());
  if (c.shape.size() != 2) throw std::runtime_error("mask container must be 2-D");
  Mask m(c.shape[0], c.shape[1]);
  const auto v = c.as_f64();
  for (std::size_t i = 0; i < v.size(); ++i) m.data[i] = v[i] != 0.0 ? 1 : 0;
  return m;
}

inline void save_labels(const std::filesystem::path& path,
                        const std::vector<int>& labels, std::size_t h, std::size_t w) {
  std::vector<double> v(labels.begin(), labels.end());
  write_container(path.string(),
                  TensorContainer::from_f64({h, w}, v, {"y", "x"}));
}

inline std::vector<int> load_labels(const std::filesystem::path& path) {
  const auto v = read_container(path.string()).as_f64();
  std::vector<int> labels(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) labels[i] = static_cast<int>(v[i]);
  return labels;
}

// --- dataset manifest ----------------------------------------------------------

struct DatasetEntry {
  std::size_t id = 0;
  std::string split;
  std::uint64_t seed = 0;
  std::string dir;  // relative to the dataset root
};

struct DatasetIndex {
  std::size_t height = 0, width = 0, frames = 0;
  SequenceTrain sequence;
  ParameterGrid grid;
  std::vector<DatasetEntry> entries;
  nlohmann::json config;

  std::vector<DatasetEntry> split(const std::string& name) const {
    std::vector<DatasetEntry> out;
    for (const auto& e : entries) {
      if (e.split == name) out.push_back(e);
    }
    return out;
  }
};

inline DatasetIndex load_dataset_index(const std::filesystem::path& root) {
  const nlohmann::json j = read_json(root / "manifest.json");
  DatasetIndex d;
  d.height = j.at("height").get<std::size_t>();
  d.width = j.at("width").get<std::size_t>();
  d.frames = j.at("frames").get<std::size_t>();
  d.sequence = SequenceTrain::from_json(j.at("sequence"));
  d.grid = ParameterGrid::from_json(j.at("grid"));
  d.config = j.value("config", nlohmann::json::object());
  for (const auto& e : j.at("entries")) {
    d.entries.push_back({e.at("id").get<std::size_t>(),
                         e.at("split").get<std::string>(),
                         e.at("seed").get<std::uint64_t>(),
                         e.at("dir").get<std::string>()});
  }
  return d;
}

}  // namespace fpf
