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
#include "qshape/config.hpp"

#include <cmath>
#include <limits>
#include <set>

#include "qshape/io.hpp"

namespace qshape {

using nlohmann::json;

json encode_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double decode_real(const json& j, const std::string& key) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  }
  throw ConfigError("config key '" + key + "' must be a number or \"inf\"");
}

namespace {

// Reads known keys of one JSON object and rejects everything else.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config key '" + path_ + "' must be an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  template <class T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, double>) {
        out = decode_real(v, name(key));
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("");
        out = v.get<bool>();
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError("");
        if constexpr (std::is_unsigned_v<T>) {
          if (v.get<long long>() < 0) throw ConfigError("");
        }
        out = v.get<T>();
      } else {
        out = v.get<T>();
      }
    } catch (const ConfigError& e) {
      if (std::string(e.what()).empty()) {
        throw ConfigError("config key '" + name(key) + "' has the wrong type");
      }
      throw;
    } catch (const json::exception&) {
      throw ConfigError("config key '" + name(key) + "' has the wrong type");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, _] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + name(k.c_str()) + "'");
    }
  }

  std::string name(const char* key) const {
    return path_.empty() ? std::string(key) : path_ + "." + key;
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class Fn>
void guard(const std::string& key, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  guard("clip", [&] { clip.validate(); });
  if (dataset.classes < 2) throw ConfigError("config key 'dataset.classes' must be >= 2");
  if (dataset.height < 3 || dataset.width < 3 || dataset.channels == 0) {
    throw ConfigError("config key 'dataset' has an invalid image shape");
  }
  if (dataset.noise < 0.0) throw ConfigError("config key 'dataset.noise' must be >= 0");
  if (dataset.amplitude_jitter < 0.0 || dataset.amplitude_jitter >= 1.0) {
    throw ConfigError("config key 'dataset.amplitude_jitter' must be in [0, 1)");
  }
  if (dataset.train_per_class == 0 || dataset.test_per_class == 0) {
    throw ConfigError("config key 'dataset.train_per_class' and 'test_per_class' must be > 0");
  }
  if (model.widths.empty() || model.widths.size() != model.strides.size()) {
    throw ConfigError("config key 'model.widths' must match 'model.strides' in length");
  }
  for (auto s : model.strides) {
    if (s == 0) throw ConfigError("config key 'model.strides' must be positive");
  }
  if (quant.bits_w < 1 || quant.bits_w > 8) throw ConfigError("config key 'quant.bits_w' must be in [1, 8]");
  if (quant.bits_a < 1 || quant.bits_a > 8) throw ConfigError("config key 'quant.bits_a' must be in [1, 8]");
  if (quant.group_size == 0 || quant.group_size < kWholeLayer) {
    throw ConfigError("config key 'quant.group_size' must be >= 1 or -1");
  }
  if (quant.alpha_source == AlphaSource::ScaleClip && !clip.reshapes_weights()) {
    throw ConfigError("config key 'quant.alpha_source': scale_clip needs a finite clip.k_w");
  }
  if (schedule.pretrain_epochs < 0 || schedule.finetune_epochs < 0) {
    throw ConfigError("config key 'schedule' epochs must be >= 0");
  }
  if (schedule.batch_size == 0) throw ConfigError("config key 'schedule.batch_size' must be > 0");
  if (schedule.alpha_refresh_steps < 1) {
    throw ConfigError("config key 'schedule.alpha_refresh_steps' must be >= 1");
  }
  if (!(schedule.pretrain_lr > 0.0) || !(schedule.finetune_lr > 0.0)) {
    throw ConfigError("config key 'schedule' learning rates must be > 0");
  }
  if (output_dir.empty()) throw ConfigError("config key 'output_dir' must not be empty");
  if (grid) {
    if (grid->group_sizes.empty() || grid->bits_w.empty() || grid->seeds.empty()) {
      throw ConfigError("config key 'grid' lists must be non-empty");
    }
    for (int gs : grid->group_sizes) {
      if (gs == 0 || gs < kWholeLayer) throw ConfigError("config key 'grid.group_sizes' has an invalid entry");
    }
    for (int b : grid->bits_w) {
      if (b < 1 || b > 8) throw ConfigError("config key 'grid.bits_w' entries must be in [1, 8]");
    }
  }
}

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["dataset"] = {{"seed", c.dataset.seed},
                  {"classes", c.dataset.classes},
                  {"channels", c.dataset.channels},
                  {"height", c.dataset.height},
                  {"width", c.dataset.width},
                  {"train_per_class", c.dataset.train_per_class},
                  {"test_per_class", c.dataset.test_per_class},
                  {"noise", c.dataset.noise},
                  {"max_shift", c.dataset.max_shift},
                  {"amplitude_jitter", c.dataset.amplitude_jitter}};
  j["model"] = {{"widths", c.model.widths}, {"strides", c.model.strides}};
  j["clip"] = {{"k_w", encode_real(c.clip.k_w)},
               {"k_a", encode_real(c.clip.k_a)},
               {"lambda", c.clip.lambda}};
  j["quant"] = {{"bits_w", c.quant.bits_w},
                {"bits_a", c.quant.bits_a},
                {"group_size", c.quant.group_size},
                {"alpha_source", std::string(to_string(c.quant.alpha_source))},
                {"skip_first_layer", c.quant.skip_first_layer},
                {"quantize_activations", c.quant.quantize_activations}};
  const auto& s = c.schedule;
  j["schedule"] = {{"pretrain_epochs", s.pretrain_epochs},
                   {"finetune_epochs", s.finetune_epochs},
                   {"batch_size", s.batch_size},
                   {"pretrain_lr", s.pretrain_lr},
                   {"finetune_lr", s.finetune_lr},
                   {"momentum", s.momentum},
                   {"weight_decay", s.weight_decay},
                   {"lr_decay_fraction", s.lr_decay_fraction},
                   {"lr_decay_factor", s.lr_decay_factor},
                   {"alpha_refresh_steps", s.alpha_refresh_steps}};
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  if (c.grid) {
    j["grid"] = {{"group_sizes", c.grid->group_sizes},
                 {"bits_w", c.grid->bits_w},
                 {"seeds", c.grid->seeds}};
  }
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  Section root(j, "");
  if (const json* d = root.child("dataset")) {
    Section s(*d, "dataset");
    s.read("seed", c.dataset.seed);
    s.read("classes", c.dataset.classes);
    s.read("channels", c.dataset.channels);
    s.read("height", c.dataset.height);
    s.read("width", c.dataset.width);
    s.read("train_per_class", c.dataset.train_per_class);
    s.read("test_per_class", c.dataset.test_per_class);
    s.read("noise", c.dataset.noise);
    s.read("max_shift", c.dataset.max_shift);
    s.read("amplitude_jitter", c.dataset.amplitude_jitter);
    s.finish();
  }
  if (const json* m = root.child("model")) {
    Section s(*m, "model");
    s.read("widths", c.model.widths);
    s.read("strides", c.model.strides);
    s.finish();
  }
  if (const json* k = root.child("clip")) {
    Section s(*k, "clip");
    s.read("k_w", c.clip.k_w);
    s.read("k_a", c.clip.k_a);
    s.read("lambda", c.clip.lambda);
    s.finish();
  }
  if (const json* q = root.child("quant")) {
    Section s(*q, "quant");
    s.read("bits_w", c.quant.bits_w);
    s.read("bits_a", c.quant.bits_a);
    s.read("group_size", c.quant.group_size);
    std::string source(to_string(c.quant.alpha_source));
    s.read("alpha_source", source);
    guard("quant.alpha_source", [&] { c.quant.alpha_source = alpha_source_from_string(source); });
    s.read("skip_first_layer", c.quant.skip_first_layer);
    s.read("quantize_activations", c.quant.quantize_activations);
    s.finish();
  }
  if (const json* sc = root.child("schedule")) {
    Section s(*sc, "schedule");
    auto& t = c.schedule;
    s.read("pretrain_epochs", t.pretrain_epochs);
    s.read("finetune_epochs", t.finetune_epochs);
    s.read("batch_size", t.batch_size);
    s.read("pretrain_lr", t.pretrain_lr);
    s.read("finetune_lr", t.finetune_lr);
    s.read("momentum", t.momentum);
    s.read("weight_decay", t.weight_decay);
    s.read("lr_decay_fraction", t.lr_decay_fraction);
    s.read("lr_decay_factor", t.lr_decay_factor);
    s.read("alpha_refresh_steps", t.alpha_refresh_steps);
    s.finish();
  }
  root.read("seed", c.seed);
  root.read("output_dir", c.output_dir);
  if (const json* g = root.child("grid")) {
    Section s(*g, "grid");
    GridSpec grid;
    s.read("group_sizes", grid.group_sizes);
    s.read("bits_w", grid.bits_w);
    s.read("seeds", grid.seeds);
    s.finish();
    c.grid = grid;
  }
  root.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  }
  return config_from_json(j);
}

}  // namespace qshape
