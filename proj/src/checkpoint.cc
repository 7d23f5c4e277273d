// Copyright 2026 The CMI Authors.
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

#include "cmi/checkpoint.h"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <string>

#include "cmi/error.h"

namespace cmi {
namespace {

constexpr std::array<char, 4> kMagic = {'C', 'M', 'I', '1'};

void PutU32(std::ostream& out, std::uint32_t v) {
  const unsigned char bytes[4] = {
      static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
      static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(bytes), 4);
}

std::uint32_t GetU32(std::istream& in) {
  unsigned char bytes[4];
  if (!in.read(reinterpret_cast<char*>(bytes), 4)) {
    throw ConfigError("checkpoint truncated in header");
  }
  return static_cast<std::uint32_t>(bytes[0]) |
         static_cast<std::uint32_t>(bytes[1]) << 8 |
         static_cast<std::uint32_t>(bytes[2]) << 16 |
         static_cast<std::uint32_t>(bytes[3]) << 24;
}

void PutFloats(std::ostream& out, std::span<const float> values) {
  for (float v : values) PutU32(out, std::bit_cast<std::uint32_t>(v));
}

void GetFloats(std::istream& in, std::span<float> values) {
  for (float& v : values) {
    unsigned char bytes[4];
    if (!in.read(reinterpret_cast<char*>(bytes), 4)) {
      throw ConfigError("checkpoint truncated in parameter data");
    }
    const std::uint32_t bits = static_cast<std::uint32_t>(bytes[0]) |
                               static_cast<std::uint32_t>(bytes[1]) << 8 |
                               static_cast<std::uint32_t>(bytes[2]) << 16 |
                               static_cast<std::uint32_t>(bytes[3]) << 24;
    v = std::bit_cast<float>(bits);
  }
}

std::uint32_t CheckedU32(std::size_t v) {
  if (v > std::numeric_limits<std::uint32_t>::max()) {
    throw ConfigError("dimension too large for checkpoint format");
  }
  return static_cast<std::uint32_t>(v);
}

}  // namespace

void WriteCheckpoint(std::ostream& out, const ModelParameters& params) {
  const auto dims = params.dims();
  out.write(kMagic.data(), kMagic.size());
  PutU32(out, CheckedU32(dims.num_items));
  PutU32(out, CheckedU32(dims.dim));
  PutU32(out, CheckedU32(dims.num_interests));
  PutFloats(out, params.item_embeddings.flat());
  PutFloats(out, params.category_matrix.flat());
  for (auto array : params.gru.Arrays()) PutFloats(out, array);
}

ModelParameters ReadCheckpoint(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw ConfigError("not a CMI1 checkpoint (bad magic bytes)");
  }
  ModelDims dims;
  dims.num_items = GetU32(in);
  dims.dim = GetU32(in);
  dims.num_interests = GetU32(in);
  if (dims.num_items == 0 || dims.dim == 0 || dims.num_interests == 0) {
    throw ConfigError("checkpoint has a zero dimension");
  }
  ModelParameters params{Matrix<float>(dims.num_items, dims.dim),
                         Matrix<float>(dims.num_interests, dims.dim),
                         GruParameters<float>::Zeros(dims.dim)};
  GetFloats(in, params.item_embeddings.flat());
  GetFloats(in, params.category_matrix.flat());
  for (auto array : params.gru.Arrays()) GetFloats(in, array);
  if (in.peek() != std::char_traits<char>::eof()) {
    throw ConfigError("checkpoint has trailing bytes");
  }
  return params;
}

void SaveCheckpoint(const std::filesystem::path& path,
                    const ModelParameters& params) {
  auto temp = path;
  temp += ".tmp";
  {
    std::ofstream out(temp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + temp.string());
    WriteCheckpoint(out, params);
    out.flush();
    if (!out) throw ConfigError("failed writing " + temp.string());
  }
  std::filesystem::rename(temp, path);
}

ModelParameters LoadCheckpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  return ReadCheckpoint(in);
}

}  // namespace cmi
