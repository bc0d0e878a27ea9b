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
#include "qshape/checkpoint.hpp"

#include <map>

#include "qshape/error.hpp"
#include "qshape/io.hpp"

namespace qshape {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kManifest = "manifest.json";

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

json optional_real(const std::optional<double>& v) {
  return v ? encode_real(*v) : json(nullptr);
}

std::optional<double> read_optional_real(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return decode_real(j.at(key), key);
}

json scheme_to_json(const GroupScheme& s) {
  json bounds = json::array();
  for (const auto& b : s.boundaries) bounds.push_back({b.begin, b.end});
  json alphas = json::array(), thresholds = json::array();
  for (double a : s.alphas) alphas.push_back(encode_real(a));
  for (double t : s.thresholds) thresholds.push_back(encode_real(t));
  return {{"group_size", s.group_size},
          {"boundaries", bounds},
          {"alphas", alphas},
          {"thresholds", thresholds}};
}

GroupScheme scheme_from_json(const json& j) {
  GroupScheme s;
  s.group_size = j.at("group_size").get<int>();
  for (const auto& b : j.at("boundaries")) {
    s.boundaries.push_back({b.at(0).get<std::size_t>(), b.at(1).get<std::size_t>()});
  }
  for (const auto& a : j.at("alphas")) s.alphas.push_back(decode_real(a, "alphas"));
  for (const auto& t : j.at("thresholds")) s.thresholds.push_back(decode_real(t, "thresholds"));
  return s;
}

json site_to_json(const QuantSite& site) {
  json j;
  j["enabled"] = site.enabled;
  j["quantize_calls"] = site.quantize_calls;
  j["folded_reference_alpha"] = optional_real(site.folded_reference_alpha);
  if (site.weight) {
    const auto& w = *site.weight;
    j["weight"] = {{"bits", w.bits},
                   {"quantize", w.quantize},
                   {"k_w", encode_real(w.k_w)},
                   {"alpha_source", std::string(to_string(w.alpha_source))},
                   {"scheme", scheme_to_json(w.scheme)}};
  } else {
    j["weight"] = nullptr;
  }
  if (site.act) {
    const auto& a = *site.act;
    j["act"] = {{"bits", a.bits},
                {"k_a", encode_real(a.k_a)},
                {"lambda", a.lambda},
                {"tracker",
                 {{"t_a", a.tracker.t_a},
                  {"initialized", a.tracker.initialized},
                  {"update_count", a.tracker.update_count}}}};
  } else {
    j["act"] = nullptr;
  }
  return j;
}

QuantSite site_from_json(const json& j) {
  QuantSite site;
  site.enabled = j.at("enabled").get<bool>();
  site.quantize_calls = j.at("quantize_calls").get<std::uint64_t>();
  site.folded_reference_alpha = read_optional_real(j, "folded_reference_alpha");
  if (const auto& w = j.at("weight"); !w.is_null()) {
    WeightQuantConfig c;
    c.bits = w.at("bits").get<int>();
    c.quantize = w.at("quantize").get<bool>();
    c.k_w = decode_real(w.at("k_w"), "k_w");
    c.alpha_source = alpha_source_from_string(w.at("alpha_source").get<std::string>());
    c.scheme = scheme_from_json(w.at("scheme"));
    site.weight = std::move(c);
  }
  if (const auto& a = j.at("act"); !a.is_null()) {
    ActQuantConfig c;
    c.bits = a.at("bits").get<int>();
    c.k_a = decode_real(a.at("k_a"), "k_a");
    c.lambda = a.at("lambda").get<double>();
    const auto& t = a.at("tracker");
    c.tracker.t_a = t.at("t_a").get<double>();
    c.tracker.initialized = t.at("initialized").get<bool>();
    c.tracker.update_count = t.at("update_count").get<std::uint64_t>();
    site.act = c;
  }
  return site;
}

// Every tensor that makes up the graph's state, keyed by file stem.
std::map<std::string, Tensor*> state_tensors(LayerGraph& graph) {
  std::map<std::string, Tensor*> out;
  for (auto& ref : parameters(graph)) {
    out[ref.name] = &ref.param->value;
    out[ref.name + ".velocity"] = &ref.param->velocity;
  }
  for (auto& node : graph.nodes) {
    if (auto* bn = std::get_if<BatchNorm>(&node.layer)) {
      out[node.name + ".running_mean"] = &bn->running_mean;
      out[node.name + ".running_var"] = &bn->running_var;
    }
  }
  return out;
}

json run_state_to_json(const TrainRun& run) {
  json log = json::array();
  for (const auto& m : run.log) log.push_back(metrics_to_json(m));
  return {{"phase", std::string(to_string(run.phase))},
          {"seed", run.seed},
          {"epoch", run.epoch},
          {"phase_epoch", run.phase_epoch},
          {"float_accuracy", optional_real(run.float_accuracy)},
          {"accuracy_before_finetune", optional_real(run.accuracy_before_finetune)},
          {"log", log}};
}

}  // namespace

json metrics_to_json(const EpochMetrics& m) {
  json layers = json::array();
  for (const auto& l : m.layers) {
    layers.push_back({{"layer", l.layer}, {"ql", l.ql}, {"kurtosis", l.kurtosis}});
  }
  return {{"epoch", m.epoch},
          {"phase", std::string(to_string(m.phase))},
          {"loss", m.loss},
          {"accuracy", m.accuracy},
          {"layers", layers}};
}

EpochMetrics metrics_from_json(const json& j) {
  EpochMetrics m;
  m.epoch = j.at("epoch").get<int>();
  m.phase = phase_from_string(j.at("phase").get<std::string>());
  m.loss = j.at("loss").get<double>();
  m.accuracy = j.at("accuracy").get<double>();
  for (const auto& l : j.at("layers")) {
    m.layers.push_back({l.at("layer").get<std::string>(), l.at("ql").get<double>(),
                        l.at("kurtosis").get<double>()});
  }
  return m;
}

json graph_to_json(const LayerGraph& graph) {
  json nodes = json::array();
  for (const auto& node : graph.nodes) {
    json n = {{"name", node.name}};
    std::visit(Overloaded{
                   [&](const Conv2D& c) {
                     n["type"] = "conv2d";
                     n["in_channels"] = c.in_channels;
                     n["out_channels"] = c.out_channels;
                     n["kernel"] = c.kernel;
                     n["stride"] = c.stride;
                     n["padding"] = c.padding;
                     n["bias"] = c.bias.has_value();
                     n["site"] = site_to_json(c.site);
                   },
                   [&](const Dense& d) {
                     n["type"] = "dense";
                     n["in_features"] = d.in_features;
                     n["out_features"] = d.out_features;
                     n["bias"] = d.bias.has_value();
                     n["site"] = site_to_json(d.site);
                   },
                   [&](const BatchNorm& b) {
                     n["type"] = "batchnorm";
                     n["channels"] = b.channels;
                     n["eps"] = b.eps;
                     n["momentum"] = b.momentum;
                     n["frozen"] = b.frozen;
                   },
                   [&](const ReLU&) { n["type"] = "relu"; },
               },
               node.layer);
    nodes.push_back(std::move(n));
  }
  return {{"input_shape", graph.input_shape}, {"nodes", nodes}};
}

LayerGraph graph_from_json(const json& j) {
  LayerGraph g;
  g.input_shape = j.at("input_shape").get<Shape>();
  for (const auto& n : j.at("nodes")) {
    const auto type = n.at("type").get<std::string>();
    Node node{n.at("name").get<std::string>(), ReLU{}};
    if (type == "conv2d") {
      Conv2D c = make_conv(n.at("in_channels").get<std::size_t>(),
                           n.at("out_channels").get<std::size_t>(),
                           n.at("kernel").get<std::size_t>(), n.at("stride").get<std::size_t>(),
                           n.at("padding").get<std::size_t>(), n.at("bias").get<bool>());
      c.site = site_from_json(n.at("site"));
      node.layer = std::move(c);
    } else if (type == "dense") {
      Dense d = make_dense(n.at("in_features").get<std::size_t>(),
                           n.at("out_features").get<std::size_t>(), n.at("bias").get<bool>());
      d.site = site_from_json(n.at("site"));
      node.layer = std::move(d);
    } else if (type == "batchnorm") {
      BatchNorm b = make_batchnorm(n.at("channels").get<std::size_t>());
      b.eps = n.at("eps").get<float>();
      b.momentum = n.at("momentum").get<float>();
      b.frozen = n.at("frozen").get<bool>();
      node.layer = std::move(b);
    } else if (type != "relu") {
      throw FormatError("unknown layer type '" + type + "' in node " + node.name);
    }
    g.nodes.push_back(std::move(node));
  }
  validate_graph(g);
  return g;
}

void save_checkpoint(const fs::path& dir, const ExperimentConfig& config, const TrainRun& run) {
  LayerGraph graph = run.graph;
  json index = json::object();
  const fs::path staged = make_staging_dir(dir);
  try {
    for (const auto& [name, tensor] : state_tensors(graph)) {
      const std::string file = name + ".qten";
      save_tensor_file(staged / file, *tensor);
      index[name] = file;
    }
    json manifest;
    manifest["schema"] = kCheckpointSchema;
    manifest["format"] = "qshape-checkpoint";
    manifest["config"] = config_to_json(config);
    manifest["run"] = run_state_to_json(run);
    manifest["run"]["clip"] = {{"k_w", encode_real(run.clip.k_w)},
                               {"k_a", encode_real(run.clip.k_a)},
                               {"lambda", run.clip.lambda}};
    ExperimentConfig run_cfg = config;
    run_cfg.quant = run.quant;
    run_cfg.schedule = run.schedule;
    const json rc = config_to_json(run_cfg);
    manifest["run"]["quant"] = rc.at("quant");
    manifest["run"]["schedule"] = rc.at("schedule");
    manifest["graph"] = graph_to_json(graph);
    manifest["tensors"] = index;
    write_file_atomic(staged / kManifest, manifest.dump(2) + "\n");
    commit_directory(staged, dir);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(staged, ec);
    throw;
  }
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const fs::path manifest_path = dir / kManifest;
  json manifest;
  try {
    manifest = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": malformed manifest: " + e.what());
  }
  if (!manifest.is_object() || !manifest.contains("schema") ||
      !manifest.at("schema").is_number_integer()) {
    throw FormatError(manifest_path.string() + ": missing schema version");
  }
  const int schema = manifest.at("schema").get<int>();
  if (schema != kCheckpointSchema) {
    throw FormatError(manifest_path.string() + ": unsupported checkpoint schema " +
                      std::to_string(schema));
  }

  Checkpoint ck;
  try {
    ck.config = config_from_json(manifest.at("config"));
    const json& r = manifest.at("run");
    ExperimentConfig run_cfg = ck.config;
    json patched = config_to_json(ck.config);
    patched["quant"] = r.at("quant");
    patched["schedule"] = r.at("schedule");
    patched["clip"] = r.at("clip");
    run_cfg = config_from_json(patched);

    TrainRun& run = ck.run;
    run.graph = graph_from_json(manifest.at("graph"));
    run.clip = run_cfg.clip;
    run.quant = run_cfg.quant;
    run.schedule = run_cfg.schedule;
    run.phase = phase_from_string(r.at("phase").get<std::string>());
    run.seed = r.at("seed").get<std::uint64_t>();
    run.epoch = r.at("epoch").get<int>();
    run.phase_epoch = r.at("phase_epoch").get<int>();
    run.float_accuracy = read_optional_real(r, "float_accuracy");
    run.accuracy_before_finetune = read_optional_real(r, "accuracy_before_finetune");
    for (const auto& m : r.at("log")) run.log.push_back(metrics_from_json(m));

    const json& index = manifest.at("tensors");
    auto targets = state_tensors(run.graph);
    if (index.size() != targets.size()) {
      throw FormatError("tensor index lists " + std::to_string(index.size()) +
                        " tensors, architecture needs " + std::to_string(targets.size()));
    }
    for (auto& [name, tensor] : targets) {
      if (!index.contains(name)) throw FormatError("tensor '" + name + "' missing from index");
      const auto file = index.at(name).get<std::string>();
      if (file.find('/') != std::string::npos || file == ".." || file == ".") {
        throw FormatError("tensor '" + name + "' has an invalid file name");
      }
      Tensor loaded = load_tensor_file(dir / file);
      if (loaded.shape() != tensor->shape()) {
        throw FormatError("tensor '" + name + "' has shape " + shape_to_string(loaded.shape()) +
                          ", expected " + shape_to_string(tensor->shape()));
      }
      *tensor = std::move(loaded);
    }
  } catch (const FormatError& e) {
    throw FormatError(dir.string() + ": " + e.what());
  } catch (const json::exception& e) {
    throw FormatError(dir.string() + ": malformed manifest: " + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(dir.string() + ": invalid manifest: " + e.what());
  } catch (const ShapeError& e) {
    throw FormatError(dir.string() + ": invalid architecture: " + e.what());
  }
  return ck;
}

}  // namespace qshape
