// Copyright 2026 The px2graph Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// File formats:
//  - PXG1 tensor container: magic "PXG1", u32 LE rank, rank x u32 LE dims,
//    row-major IEEE-754 LE 32-bit floats.
//  - Parameter archive: u32 LE index length, JSON index, then concatenated
//    PXG1 records. The index maps each name to {offset, shape} with offsets
//    relative to the start of the record region, plus caller metadata.
//  - PPM P6, 8-bit RGB.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "px2graph/common.hpp"
#include "px2graph/tensor.hpp"

namespace px2graph::io {

inline void write_u32_le(std::ostream& os, uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>((v >> 8) & 0xff),
                              static_cast<unsigned char>((v >> 16) & 0xff),
                              static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32_le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) fail("io: truncated u32");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void write_f32_le(std::ostream& os, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32_le(os, bits);
}

inline float read_f32_le(std::istream& is) {
  const uint32_t bits = read_u32_le(is);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

// ---------------------------------------------------------------------------
// PXG1
// ---------------------------------------------------------------------------

inline void write_pxg1(std::ostream& os, const ad::Tensor<float>& t) {
  os.write("PXG1", 4);
  write_u32_le(os, static_cast<uint32_t>(t.rank()));
  for (int d : t.shape) write_u32_le(os, static_cast<uint32_t>(d));
  for (size_t i = 0; i < t.numel(); ++i) write_f32_le(os, t[i]);
}

inline ad::Tensor<float> read_pxg1(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "PXG1", 4) != 0) fail("pxg1: bad magic");
  const uint32_t rank = read_u32_le(is);
  if (rank > 8) fail("pxg1: unreasonable rank " + std::to_string(rank));
  std::vector<int> shape(rank);
  for (auto& d : shape) d = static_cast<int>(read_u32_le(is));
  auto t = ad::Tensor<float>::zeros(shape);
  for (size_t i = 0; i < t.numel(); ++i) t[i] = read_f32_le(is);
  if (!is) fail("pxg1: truncated payload");
  return t;
}

inline size_t pxg1_byte_size(const ad::Tensor<float>& t) {
  return 4 + 4 + 4 * t.shape.size() + 4 * t.numel();
}

inline void save_pxg1(const std::string& path, const ad::Tensor<float>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail("io: cannot open '" + path + "' for writing");
  write_pxg1(os, t);
}

inline ad::Tensor<float> load_pxg1(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("io: cannot open '" + path + "'");
  return read_pxg1(is);
}

// ---------------------------------------------------------------------------
// Parameter archive
// ---------------------------------------------------------------------------

inline void write_archive(const std::string& path, const nlohmann::json& meta,
                          const std::vector<std::pair<std::string, const ad::Tensor<float>*>>&
                              tensors) {
  nlohmann::json index;
  index["meta"] = meta;
  nlohmann::json params = nlohmann::json::object();
  size_t offset = 0;
  for (const auto& [name, t] : tensors) {
    params[name] = {{"offset", offset}, {"shape", t->shape}};
    offset += pxg1_byte_size(*t);
  }
  index["params"] = params;
  const std::string blob = index.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) fail("io: cannot open '" + path + "' for writing");
  write_u32_le(os, static_cast<uint32_t>(blob.size()));
  os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  for (const auto& [name, t] : tensors) write_pxg1(os, *t);
  if (!os) fail("io: write failure on '" + path + "'");
}

struct Archive {
  nlohmann::json meta;
  std::vector<std::pair<std::string, ad::Tensor<float>>> tensors;  // index order
};

inline Archive read_archive(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("io: cannot open '" + path + "'");
  const uint32_t len = read_u32_le(is);
  std::string blob(len, '\0');
  is.read(blob.data(), len);
  if (!is) fail("io: truncated archive index in '" + path + "'");
  nlohmann::json index = nlohmann::json::parse(blob);
  Archive a;
  a.meta = index.at("meta");
  const std::streampos base = is.tellg();
  // nlohmann objects iterate in key order; offsets restore the write order.
  std::vector<std::pair<size_t, std::string>> order;
  for (auto it = index.at("params").begin(); it != index.at("params").end(); ++it) {
    order.emplace_back(it.value().at("offset").get<size_t>(), it.key());
  }
  std::sort(order.begin(), order.end());
  for (const auto& [offset, name] : order) {
    is.seekg(base + static_cast<std::streamoff>(offset));
    a.tensors.emplace_back(name, read_pxg1(is));
    const auto& want = index.at("params").at(name).at("shape").get<std::vector<int>>();
    if (a.tensors.back().second.shape != want) {
      fail("archive: shape mismatch for '" + name + "' in '" + path + "'");
    }
  }
  return a;
}

// ---------------------------------------------------------------------------
// PPM (P6, 8-bit)
// ---------------------------------------------------------------------------

inline void write_ppm(const std::string& path, int width, int height,
                      const std::vector<uint8_t>& rgb) {
  if (static_cast<size_t>(width) * height * 3 != rgb.size()) fail("ppm: buffer size mismatch");
  std::ofstream os(path, std::ios::binary);
  if (!os) fail("io: cannot open '" + path + "' for writing");
  os << "P6\n" << width << " " << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!os) fail("io: write failure on '" + path + "'");
}

struct PpmImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> rgb;
};

inline PpmImage read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("io: cannot open '" + path + "'");
  std::string magic;
  is >> magic;
  if (magic != "P6") fail("ppm: '" + path + "' is not a P6 file");
  auto next_int = [&is, &path]() {
    // Skip whitespace and '#' comment lines between header fields.
    for (;;) {
      const int c = is.peek();
      if (c == '#') {
        std::string line;
        std::getline(is, line);
      } else if (std::isspace(c)) {
        is.get();
      } else {
        break;
      }
    }
    int v = -1;
    is >> v;
    if (!is || v < 0) fail("ppm: malformed header in '" + path + "'");
    return v;
  };
  PpmImage img;
  img.width = next_int();
  img.height = next_int();
  const int maxval = next_int();
  if (maxval != 255) fail("ppm: only maxval 255 supported, '" + path + "' has " +
                          std::to_string(maxval));
  is.get();  // single whitespace after maxval
  img.rgb.resize(static_cast<size_t>(img.width) * img.height * 3);
  is.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (!is) fail("ppm: truncated pixel data in '" + path + "'");
  return img;
}

}  // namespace px2graph::io
