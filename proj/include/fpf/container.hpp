#pragma once

#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fpf/image.hpp"

namespace fpf {

// On-disk array format: 8-byte magic, u64 little-endian header length, JSON
// header, raw little-endian payload. The header records shape, element type,
// axis names, units, provenance and an FNV-1a hash of the payload.
inline constexpr char kContainerMagic[8] = {'F', 'P', 'F', 'T', 'E', 'N', 'S', '\n'};
inline constexpr int kContainerSchemaVersion = 1;

enum class Dtype { f32, f64, c64 };  // c64 = interleaved pair of f32

inline std::size_t dtype_size(Dtype d) {
  switch (d) {
    case Dtype::f32: return 4;
    case Dtype::f64: return 8;
    default: return 8;
  }
}

inline std::string dtype_name(Dtype d) {
  switch (d) {
    case Dtype::f32: return "f32";
    case Dtype::f64: return "f64";
    default: return "c64";
  }
}

inline Dtype dtype_from_name(const std::string& s) {
  if (s == "f32") return Dtype::f32;
  if (s == "f64") return Dtype::f64;
  if (s == "c64") return Dtype::c64;
  throw std::runtime_error("unknown dtype: " + s);
}

inline std::uint64_t fnv1a64(const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct TensorContainer {
  Dtype dtype = Dtype::f64;
  std::vector<std::size_t> shape;
  std::vector<std::string> axes;
  std::string units;
  nlohmann::json provenance;  // seed, config hash, free-form
  std::vector<std::uint8_t> payload;

  std::size_t elements() const {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    return n;
  }

  static TensorContainer from_f64(std::vector<std::size_t> shape,
                                  const std::vector<double>& v,
                                  std::vector<std::string> axes = {},
                                  std::string units = {}) {
    TensorContainer c;
    c.dtype = Dtype::f64;
    c.shape = std::move(shape);
    c.axes = std::move(axes);
    c.units = std::move(units);
    c.payload.resize(v.size() * sizeof(double));
    std::memcpy(c.payload.data(), v.data(), c.payload.size());
    return c;
  }

  static TensorContainer from_f32(std::vector<std::size_t> shape,
                                  const std::vector<float>& v,
                                  std::vector<std::string> axes = {},
                                  std::string units = {}) {
    TensorContainer c;
    c.dtype = Dtype::f32;
    c.shape = std::move(shape);
    c.axes = std::move(axes);
    c.units = std::move(units);
    c.payload.resize(v.size() * sizeof(float));
    std::memcpy(c.payload.data(), v.data(), c.payload.size());
    return c;
  }

  // complex<double> values narrowed to complex<float> storage
  static TensorContainer from_c64(std::vector<std::size_t> shape,
                                  const std::vector<cplx>& v,
                                  std::vector<std::string> axes = {},
                                  std::string units = {}) {
    TensorContainer c;
    c.dtype = Dtype::c64;
    c.shape = std::move(shape);
    c.axes = std::move(axes);
    c.units = std::move(units);
    std::vector<std::complex<float>> f(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      f[i] = {static_cast<float>(v[i].real()), static_cast<float>(v[i].imag())};
    }
    c.payload.resize(f.size() * sizeof(std::complex<float>));
    std::memcpy(c.payload.data(), f.data(), c.payload.size());
    return c;
  }

  std::vector<double> as_f64() const {
    if (dtype != Dtype::f64) throw std::runtime_error("container is not f64");
    std::vector<double> v(elements());
    std::memcpy(v.data(), payload.data(), payload.size());
    return v;
  }

  std::vector<float> as_f32() const {
    if (dtype != Dtype::f32) throw std::runtime_error("container is not f32");
    std::vector<float> v(elements());
    std::memcpy(v.data(), payload.data(), payload.size());
    return v;
  }

  std::vector<cplx> as_c64() const {
    if (dtype != Dtype::c64) throw std::runtime_error("container is not c64");
    std::vector<std::complex<float>> f(elements());
    std::memcpy(f.data(), payload.data(), payload.size());
    std::vector<cplx> v(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) v[i] = {f[i].real(), f[i].imag()};
    return v;
  }
};

inline void write_container(const std::string& path, const TensorContainer& c) {
  if (c.payload.size() != c.elements() * dtype_size(c.dtype)) {
    throw std::runtime_error("payload size does not match shape for " + path);
  }
  nlohmann::json header = {
      {"schema_version", kContainerSchemaVersion},
      {"shape", c.shape},
      {"dtype", dtype_name(c.dtype)},
      {"axes", c.axes},
      {"units", c.units},
      {"provenance", c.provenance.is_null() ? nlohmann::json::object() : c.provenance},
      {"payload_bytes", c.payload.size()},
      {"payload_fnv1a64", fnv1a64(c.payload.data(), c.payload.size())},
  };
  const std::string hs = header.dump();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(kContainerMagic, sizeof(kContainerMagic));
  const std::uint64_t hlen = hs.size();
  char lenbuf[8];
  for (int i = 0; i < 8; ++i) lenbuf[i] = static_cast<char>((hlen >> (8 * i)) & 0xff);
  f.write(lenbuf, 8);
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  f.write(reinterpret_cast<const char*>(c.payload.data()),
          static_cast<std::streamsize>(c.payload.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

inline TensorContainer read_container(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kContainerMagic, 8) != 0) {
    throw std::runtime_error("not a tensor container: " + path);
  }
  char lenbuf[8];
  f.read(lenbuf, 8);
  std::uint64_t hlen = 0;
  for (int i = 0; i < 8; ++i) {
    hlen |= static_cast<std::uint64_t>(static_cast<unsigned char>(lenbuf[i])) << (8 * i);
  }
  std::string hs(hlen, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(hlen));
  const nlohmann::json header = nlohmann::json::parse(hs);
  if (header.at("schema_version").get<int>() != kContainerSchemaVersion) {
    throw std::runtime_error("unsupported container schema version in " + path);
  }
  TensorContainer c;
  c.dtype = dtype_from_name(header.at("dtype").get<std::string>());
  c.shape = header.at("shape").get<std::vector<std::size_t>>();
  c.axes = header.at("axes").get<std::vector<std::string>>();
  c.units = header.at("units").get<std::string>();
  c.provenance = header.at("provenance");
  const auto payload_bytes = header.at("payload_bytes").get<std::size_t>();
  if (payload_bytes != c.elements() * dtype_size(c.dtype)) {
    throw std::runtime_error("payload size does not match shape in " + path);
  }
  c.payload.resize(payload_bytes);
  f.read(reinterpret_cast<char*>(c.payload.data()),
         static_cast<std::streamsize>(c.payload.size()));
  if (!f) throw std::runtime_error("truncated container: " + path);
  const auto h = fnv1a64(c.payload.data(), c.payload.size());
  if (h != header.at("payload_fnv1a64").get<std::uint64_t>()) {
    throw std::runtime_error("payload hash mismatch in " + path);
  }
  return c;
}

}  // namespace fpf
