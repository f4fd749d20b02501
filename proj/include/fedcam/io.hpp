#pragma once

// Binary snapshots and image dumps.
//
// Model snapshot:   u64 LE header length | JSON header | count x f64 LE
// Dataset container: "FCDS" | u32 LE version | u64 LE n, classes, C, H, W |
//                    n x u64 LE labels | n*C*H*W x f64 LE pixels
// Heat maps:        binary PGM (P5), 8-bit, row-major

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedcam/data.hpp"
#include "fedcam/errors.hpp"
#include "fedcam/nn.hpp"

namespace fedcam {

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  os.write(b, 8);
}

inline std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw Error("unexpected end of stream");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }
inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

}  // namespace detail

inline nlohmann::json layers_to_json(const std::vector<LayerSpec>& layers) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& l : layers) {
    arr.push_back({{"kind", std::string(to_string(l.kind))}, {"in", l.in}, {"out", l.out}, {"kernel", l.kernel}});
  }
  return arr;
}

inline std::vector<LayerSpec> layers_from_json(const nlohmann::json& arr) {
  std::vector<LayerSpec> layers;
  for (const auto& j : arr) {
    layers.push_back({layer_kind_from_string(j.at("kind").get<std::string>()), j.at("in").get<std::size_t>(),
                      j.at("out").get<std::size_t>(), j.at("kernel").get<std::size_t>()});
  }
  return layers;
}

inline void write_params(std::ostream& os, const ModelParams& p) {
  const nlohmann::json header{{"format", "fedcam-params"}, {"version", 1}, {"layers", layers_to_json(p.layers)},
                              {"count", p.values.size()}};
  const std::string text = header.dump();
  detail::put_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (double v : p.values) detail::put_f64(os, v);
  if (!os) throw Error("write_params: stream error");
}

inline ModelParams read_params(std::istream& is) {
  const std::uint64_t len = detail::get_u64(is);
  if (len > (1u << 24)) throw Error("read_params: implausible header length");
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw Error("read_params: truncated header");
  const auto header = nlohmann::json::parse(text);
  if (header.value("format", "") != "fedcam-params") throw Error("read_params: not a parameter snapshot");
  auto layers = layers_from_json(header.at("layers"));
  const auto count = header.at("count").get<std::size_t>();
  std::vector<Real> values(count);
  for (auto& v : values) v = detail::get_f64(is);
  return ModelParams(std::move(layers), std::move(values));
}

inline void save_params(const std::filesystem::path& path, const ModelParams& p) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string());
  write_params(os, p);
}

inline ModelParams load_params(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  return read_params(is);
}

inline void write_dataset(std::ostream& os, const Dataset& ds) {
  if (ds.size() == 0) throw ParameterError("write_dataset: empty dataset");
  const Shape& s = ds.images.front().shape();
  os.write("FCDS", 4);
  const std::uint32_t version = 1;
  for (int i = 0; i < 4; ++i) os.put(static_cast<char>((version >> (8 * i)) & 0xffu));
  for (std::uint64_t v : {std::uint64_t{ds.size()}, std::uint64_t{ds.num_classes}, std::uint64_t{s.at(0)},
                          std::uint64_t{s.at(1)}, std::uint64_t{s.at(2)}}) {
    detail::put_u64(os, v);
  }
  for (std::size_t y : ds.labels) detail::put_u64(os, y);
  for (const auto& img : ds.images) {
    if (img.shape() != s) throw ShapeError("write_dataset: images differ in shape");
    for (double v : img.values()) detail::put_f64(os, v);
  }
  if (!os) throw Error("write_dataset: stream error");
}

inline Dataset read_dataset(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "FCDS") throw Error("read_dataset: bad magic");
  char ver[4];
  if (!is.read(ver, 4) || ver[0] != 1) throw Error("read_dataset: unsupported version");
  const std::uint64_t n = detail::get_u64(is), classes = detail::get_u64(is);
  const Shape shape{detail::get_u64(is), detail::get_u64(is), detail::get_u64(is)};
  Dataset ds;
  ds.num_classes = classes;
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto y = detail::get_u64(is);
    if (y >= classes) throw Error("read_dataset: label out of range");
    ds.labels.push_back(y);
  }
  const std::size_t vol = shape_volume(shape);
  for (std::uint64_t i = 0; i < n; ++i) {
    std::vector<Real> px(vol);
    for (auto& v : px) v = detail::get_f64(is);
    ds.images.emplace_back(shape, std::move(px));
  }
  return ds;
}

/// 8-bit binary PGM; values are scaled by the map maximum (all-zero maps stay black).
inline void write_pgm(std::ostream& os, const Tensor& map) {
  if (map.rank() != 2) throw ShapeError("write_pgm: expected an H x B map");
  const double mx = map.empty() ? 0.0 : *std::max_element(map.values().begin(), map.values().end());
  os << "P5\n" << map.extent(1) << " " << map.extent(0) << "\n255\n";
  for (double v : map.values()) {
    const double s = mx > 0.0 ? std::clamp(v / mx, 0.0, 1.0) : 0.0;
    os.put(static_cast<char>(static_cast<unsigned char>(std::lround(s * 255.0))));
  }
}

inline void save_pgm(const std::filesystem::path& path, const Tensor& map) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string());
  write_pgm(os, map);
}

/// Reads an 8-bit P5 image back as an H x B map with values in [0, 1].
inline Tensor read_pgm(std::istream& is) {
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  if (magic != "P5" || maxval != 255) throw Error("read_pgm: unsupported image");
  is.get();
  Tensor map({h, w});
  for (auto& v : map.values()) {
    const int c = is.get();
    if (c == EOF) throw Error("read_pgm: truncated image");
    v = static_cast<double>(c) / 255.0;
  }
  return map;
}

}  // namespace fedcam
