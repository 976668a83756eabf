// SPDX-License-Identifier: Apache-2.0
#ifndef TUBELABEL_NPY_HPP
#define TUBELABEL_NPY_HPP

// NPY v1.0 reader/writer restricted to the two dtypes the pipeline uses:
// little-endian float32 ('<f4') and uint16 ('<u2'), C-order only.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "tubelabel/error.hpp"
#include "tubelabel/tensor.hpp"

namespace tubelabel::npy {

static_assert(std::endian::native == std::endian::little, "NPY I/O assumes a little-endian host");

enum class Dtype { Float32, UInt16 };

struct Header {
  Dtype dtype = Dtype::Float32;
  Shape shape;
  std::size_t data_offset = 0;
};

template <typename T>
constexpr Dtype dtype_of() {
  if constexpr (std::is_same_v<T, float>) {
    return Dtype::Float32;
  } else {
    static_assert(std::is_same_v<T, std::uint16_t>, "NPY I/O supports float and uint16_t only");
    return Dtype::UInt16;
  }
}

inline std::string_view descr(Dtype d) { return d == Dtype::Float32 ? "<f4" : "<u2"; }

namespace detail {

inline constexpr char kMagic[] = "\x93NUMPY";

[[noreturn]] inline void malformed(const std::filesystem::path& path, const std::string& why) {
  throw Error(ErrorKind::MalformedFile, path.string() + ": " + why);
}

// Returns the text following `'key':` in the header dict, or npos.
inline std::size_t find_value(std::string_view dict, std::string_view key) {
  const std::string quoted = "'" + std::string(key) + "'";
  auto pos = dict.find(quoted);
  if (pos == std::string_view::npos) return pos;
  pos = dict.find(':', pos + quoted.size());
  if (pos == std::string_view::npos) return pos;
  ++pos;
  while (pos < dict.size() && dict[pos] == ' ') ++pos;
  return pos;
}

inline Header parse_dict(std::string_view dict, const std::filesystem::path& path) {
  Header header;

  auto d = find_value(dict, "descr");
  if (d == std::string_view::npos || dict[d] != '\'') malformed(path, "missing descr");
  const auto d_end = dict.find('\'', d + 1);
  if (d_end == std::string_view::npos) malformed(path, "unterminated descr");
  const auto dtype = dict.substr(d + 1, d_end - d - 1);
  if (dtype == "<f4") {
    header.dtype = Dtype::Float32;
  } else if (dtype == "<u2") {
    header.dtype = Dtype::UInt16;
  } else {
    malformed(path, "unsupported dtype '" + std::string(dtype) + "'");
  }

  auto f = find_value(dict, "fortran_order");
  if (f == std::string_view::npos) malformed(path, "missing fortran_order");
  if (dict.substr(f, 5) != "False") malformed(path, "fortran-order arrays are not supported");

  auto s = find_value(dict, "shape");
  if (s == std::string_view::npos || dict[s] != '(') malformed(path, "missing shape");
  const auto s_end = dict.find(')', s);
  if (s_end == std::string_view::npos) malformed(path, "unterminated shape");
  std::size_t i = s + 1;
  while (i < s_end) {
    while (i < s_end && (dict[i] == ' ' || dict[i] == ',')) ++i;
    if (i >= s_end) break;
    std::size_t value = 0;
    bool any = false;
    while (i < s_end && dict[i] >= '0' && dict[i] <= '9') {
      value = value * 10 + static_cast<std::size_t>(dict[i] - '0');
      ++i;
      any = true;
    }
    if (!any) malformed(path, "bad shape entry");
    header.shape.push_back(value);
  }
  return header;
}

}  // namespace detail

inline Header read_header(std::istream& in, const std::filesystem::path& path) {
  char prefix[10];
  if (!in.read(prefix, sizeof prefix)) detail::malformed(path, "truncated header");
  if (std::memcmp(prefix, detail::kMagic, 6) != 0) detail::malformed(path, "bad magic");
  const auto major = static_cast<unsigned char>(prefix[6]);
  if (major != 1) detail::malformed(path, "unsupported NPY version " + std::to_string(major));
  const std::size_t len = static_cast<unsigned char>(prefix[8]) |
                          (static_cast<std::size_t>(static_cast<unsigned char>(prefix[9])) << 8);
  std::string dict(len, '\0');
  if (!in.read(dict.data(), static_cast<std::streamsize>(len))) detail::malformed(path, "truncated header");
  Header header = detail::parse_dict(dict, path);
  header.data_offset = 10 + len;
  return header;
}

inline Header read_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, path.string());
  return read_header(in, path);
}

/// Loads a C-order NPY array. Fails on dtype or rank disagreement rather
/// than converting.
template <typename T>
Tensor<T> load_array(const std::filesystem::path& path, std::size_t expected_rank) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, path.string());
  const Header header = read_header(in, path);
  if (header.dtype != dtype_of<T>()) {
    detail::malformed(path, "dtype " + std::string(descr(header.dtype)) + ", expected " +
                                std::string(descr(dtype_of<T>())));
  }
  if (header.shape.size() != expected_rank) {
    throw Error(ErrorKind::ShapeMismatch, path.string() + ": rank " + std::to_string(header.shape.size()) +
                                              ", expected " + std::to_string(expected_rank));
  }
  std::vector<T> values(shape_volume(header.shape));
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(T)));
  if (static_cast<std::size_t>(in.gcount()) != values.size() * sizeof(T)) {
    detail::malformed(path, "payload shorter than shape " + shape_string(header.shape));
  }
  return Tensor<T>(header.shape, std::move(values));
}

template <typename T>
std::string encode_header(const Shape& shape) {
  std::string dict = "{'descr': '" + std::string(descr(dtype_of<T>())) + "', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    dict += std::to_string(shape[i]);
    if (shape.size() == 1 || i + 1 < shape.size()) dict += ",";
    if (i + 1 < shape.size()) dict += " ";
  }
  dict += "), }";
  // Pad with spaces so magic + len + dict + '\n' is a multiple of 64.
  const std::size_t unpadded = 10 + dict.size() + 1;
  dict.append((64 - unpadded % 64) % 64, ' ');
  dict += '\n';

  std::string out(detail::kMagic, 6);
  out += '\x01';
  out += '\x00';
  out += static_cast<char>(dict.size() & 0xff);
  out += static_cast<char>((dict.size() >> 8) & 0xff);
  out += dict;
  return out;
}

template <typename T>
void save_array(const std::filesystem::path& path, const Tensor<T>& tensor) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot open " + path.string() + " for writing");
  const std::string header = encode_header<T>(tensor.shape());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(tensor.data()), static_cast<std::streamsize>(tensor.size() * sizeof(T)));
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

inline SoftSegMap load_softseg(const std::filesystem::path& path, int frame_id = 0) {
  return SoftSegMap{load_array<float>(path, 3), frame_id};
}

inline LabelMap load_labels(const std::filesystem::path& path) { return LabelMap(load_array<std::uint16_t>(path, 2)); }

inline ImageFrame load_image(const std::filesystem::path& path) {
  ImageFrame img{load_array<float>(path, 3)};
  if (img.data.dim(0) != 3) {
    throw Error(ErrorKind::ShapeMismatch, path.string() + ": image must have 3 channels, got shape " +
                                              shape_string(img.data.shape()));
  }
  return img;
}

inline FlowField load_flow(const std::filesystem::path& path, int from_frame, int to_frame) {
  FlowField flow{load_array<float>(path, 3), from_frame, to_frame};
  if (flow.data.dim(0) != 2) {
    throw Error(ErrorKind::ShapeMismatch, path.string() + ": flow must have 2 channels, got shape " +
                                              shape_string(flow.data.shape()));
  }
  return flow;
}

}  // namespace tubelabel::npy

#endif  // TUBELABEL_NPY_HPP
