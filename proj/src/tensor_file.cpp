/*
 * Copyright 2026 The qshape Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include <bit>
#include <cstring>

#include "qshape/error.hpp"
#include "qshape/io.hpp"

namespace qshape {

namespace {

constexpr char kMagic[4] = {'Q', 'T', 'E', 'N'};
constexpr std::size_t kMaxDims = 16;

template <class T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
}

template <class T>
T get_le(std::string_view bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) throw FormatError("tensor file truncated");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<T>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
  }
  pos += sizeof(T);
  return v;
}

}  // namespace

std::string encode_tensor(const Tensor& t) {
  std::string out(kMagic, sizeof(kMagic));
  out.reserve(16 + 8 * t.ndim() + 4 * t.numel());
  put_le<std::uint32_t>(out, kTensorFileVersion);
  put_le<std::uint32_t>(out, kDtypeFloat32);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.ndim()));
  for (std::size_t d : t.shape()) put_le<std::uint64_t>(out, d);
  for (float v : t.values()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

Tensor decode_tensor(std::string_view bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("not a tensor file (bad magic)");
  }
  std::size_t pos = 4;
  const auto version = get_le<std::uint32_t>(bytes, pos);
  if (version != kTensorFileVersion) {
    throw FormatError("unsupported tensor file version " + std::to_string(version));
  }
  const auto dtype = get_le<std::uint32_t>(bytes, pos);
  if (dtype != kDtypeFloat32) {
    throw FormatError("unsupported tensor dtype code " + std::to_string(dtype));
  }
  const auto ndim = get_le<std::uint32_t>(bytes, pos);
  if (ndim > kMaxDims) throw FormatError("tensor file: too many dimensions");
  Shape shape(ndim);
  std::size_t count = 1;
  for (auto& d : shape) {
    d = static_cast<std::size_t>(get_le<std::uint64_t>(bytes, pos));
    if (d != 0 && count > (bytes.size() / 4) / d) {
      throw FormatError("tensor file: payload shorter than declared shape");
    }
    count *= d;
  }
  if (bytes.size() - pos != 4 * count) {
    throw FormatError("tensor file: payload is " + std::to_string(bytes.size() - pos) +
                      " bytes, shape needs " + std::to_string(4 * count));
  }
  std::vector<float> data(count);
  for (auto& v : data) v = std::bit_cast<float>(get_le<std::uint32_t>(bytes, pos));
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor_file(const std::filesystem::path& path, const Tensor& t) {
  write_file_atomic(path, encode_tensor(t));
}

Tensor load_tensor_file(const std::filesystem::path& path) {
  try {
    return decode_tensor(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace qshape
