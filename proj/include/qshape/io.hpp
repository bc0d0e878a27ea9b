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
#pragma once

// Binary tensor files and crash-safe file replacement.
//
// TensorFile layout (all integers little-endian):
//   offset 0   4 bytes   magic "QTEN"
//          4   u32       format version (1)
//          8   u32       dtype code (1 = float32)
//         12   u32       ndim
//         16   u64[ndim] dims
//          .   f32[prod(dims)] row-major payload

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "qshape/tensor.hpp"

namespace qshape {

inline constexpr std::uint32_t kTensorFileVersion = 1;
inline constexpr std::uint32_t kDtypeFloat32 = 1;

std::string encode_tensor(const Tensor& t);
Tensor decode_tensor(std::string_view bytes);

void save_tensor_file(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor_file(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file, flushes, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

/// Fresh empty directory next to `target` for staging a replacement.
std::filesystem::path make_staging_dir(const std::filesystem::path& target);

/// Moves a fully written staging directory into place. An existing target is
/// swapped out atomically where the platform allows and then removed.
void commit_directory(const std::filesystem::path& staged,
                      const std::filesystem::path& target);

}  // namespace qshape
