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

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "qshape/error.hpp"
#include "qshape/train.hpp"

namespace qshape {

/// Group-size x weight-bitwidth sweep over several seeds. Each seed is
/// pretrained once and finetuned for every cell.
struct GridSpec {
  std::vector<int> group_sizes{1, 4, kWholeLayer};
  std::vector<int> bits_w{2, 3};
  std::vector<std::uint64_t> seeds{1, 2, 3};
};

struct ExperimentConfig {
  DatasetSpec dataset;
  ModelSpec model;
  ClipConfig clip{2.0};
  QuantConfig quant;
  ScheduleConfig schedule;
  std::uint64_t seed = 1;
  std::string output_dir = "runs/default";
  std::optional<GridSpec> grid;

  void validate() const;
};

/// Thrown for unknown keys and ill-typed or out-of-range values; the message
/// names the offending key path.
class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

nlohmann::json config_to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// JSON number, or the strings "inf"/"-inf"/"nan" for non-finite values.
nlohmann::json encode_real(double v);
double decode_real(const nlohmann::json& j, const std::string& key);

}  // namespace qshape
