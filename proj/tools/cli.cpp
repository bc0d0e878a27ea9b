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
#include "cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

#include "qshape/checkpoint.hpp"
#include "qshape/error.hpp"
#include "qshape/experiments.hpp"
#include "qshape/io.hpp"
#include "qshape/reports.hpp"

namespace qshape::cli {

namespace fs = std::filesystem;

namespace {

struct QlBenchArgs {
  std::vector<int> bits{2, 3, 4, 5, 6, 7, 8};
  std::size_t count = 1000;
  std::uint64_t seed = 1;
  double mean_abs = 1.0;
  std::string out;
};

struct TrainArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string output;
  bool resume = false;
  int stop_after = 0;
};

struct MergeArgs {
  std::string checkpoint;
  std::string out;
  std::uint64_t seed = 1;
  std::size_t batch = 200;
  double tolerance = 1e-5;
};

struct InspectArgs {
  std::string checkpoint;
  std::string layer;
  std::string out;
  std::uint64_t seed = 1;
};

struct DefaultsArgs {
  bool grid = false;
  std::uint64_t seed = 1;
};

void emit(const std::string& text, const std::string& path, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
  } else {
    write_file_atomic(path, text);
  }
}

int cmd_ql_bench(const QlBenchArgs& a, std::ostream& out) {
  const auto rows = ql_bench(a.bits, a.count, a.seed, a.mean_abs);
  emit(ql_bench_csv(rows), a.out, out);
  return kExitOk;
}

void write_run_outputs(const fs::path& dir, const ExperimentConfig& config,
                       const TrainRun& run) {
  save_checkpoint(dir / "checkpoint", config, run);
  write_file_atomic(dir / "metrics.csv", metrics_csv(run.log));
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  ExperimentConfig config;
  TrainRun run;
  fs::path dir;
  if (a.resume) {
    fs::path ck_dir;
    if (!a.output.empty()) {
      ck_dir = fs::path(a.output) / "checkpoint";
    } else if (!a.config.empty()) {
      ck_dir = fs::path(load_config(a.config).output_dir) / "checkpoint";
    } else {
      throw ConfigError("--resume needs --output or --config to locate the checkpoint");
    }
    Checkpoint ck = load_checkpoint(ck_dir);
    config = ck.config;
    run = std::move(ck.run);
    dir = ck_dir.parent_path();
  } else {
    if (a.config.empty()) throw ConfigError("train needs --config (see 'defaults')");
    config = load_config(a.config);
    if (a.seed) config.seed = *a.seed;
    if (!a.output.empty()) config.output_dir = a.output;
    dir = config.output_dir;
  }
  fs::create_directories(dir);
  const ToyDataset data = generate_toy_dataset(config.dataset);

  if (config.grid) {
    const auto rows = run_group_grid(config, data, [&](const std::string& line) {
      out << line << "\n" << std::flush;
    });
    write_file_atomic(dir / "table1.csv", group_grid_csv(rows));
    out << "wrote " << (dir / "table1.csv").string() << "\n";
    return kExitOk;
  }

  if (!a.resume) {
    run = make_train_run(config.model, config.dataset, config.quant, config.clip,
                         config.schedule, config.seed);
  }
  int budget = a.stop_after;
  bool stopped = false;
  const EpochHook hook = [&](const TrainRun& r) {
    write_run_outputs(dir, config, r);
    const auto& m = r.log.back();
    out << "epoch " << m.epoch << " " << to_string(m.phase) << " loss "
        << format_real(m.loss) << " acc " << format_real(m.accuracy) << "\n"
        << std::flush;
    if (budget > 0 && --budget == 0) {
      stopped = true;
      return false;
    }
    return true;
  };

  try {
    if (run.phase == Phase::FloatPretrain) {
      pretrain_float(run, data, hook);
    }
    if (!stopped && config.schedule.finetune_epochs > 0) {
      finetune_lowbit(run, data, config.quant.bits_w, config.quant.bits_a, hook);
    }
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "; last good checkpoint kept in "
        << (dir / "checkpoint").string() << "\n";
    return kExitDivergence;
  }
  write_run_outputs(dir, config, run);
  if (stopped) {
    out << "stopped after " << a.stop_after << " epoch(s); resume with --resume\n";
  } else {
    out << "done: " << run.epoch << " epoch(s), final accuracy "
        << format_real(run.log.empty() ? 0.0 : run.log.back().accuracy) << "\n";
  }
  return kExitOk;
}

int cmd_merge_bn(const MergeArgs& a, std::ostream& out, std::ostream& err) {
  Checkpoint ck = load_checkpoint(a.checkpoint);
  validate_graph(ck.run.graph);
  LayerGraph folded = finalize_for_inference(ck.run.graph);

  DatasetSpec spec = ck.config.dataset;
  spec.seed = a.seed;
  spec.train_per_class = 1;
  spec.test_per_class = std::max<std::size_t>(1, a.batch / static_cast<std::size_t>(spec.classes));
  const ToyDataset val = generate_toy_dataset(spec);

  LayerGraph reference = ck.run.graph;
  const Tensor before = predict(reference, val.test_x);
  const Tensor after = predict(folded, val.test_x);
  const double discrepancy = max_relative_error(after, before);
  const auto top_before = argmax_rows(before);
  const auto top_after = argmax_rows(after);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < top_before.size(); ++i) changed += top_before[i] != top_after[i];
  out << "max relative logit discrepancy: " << format_real(discrepancy) << "\n"
      << "top-1 changes: " << changed << " of " << top_before.size() << "\n";
  if (!(discrepancy <= a.tolerance)) {
    err << "error: discrepancy above " << format_real(a.tolerance) << "; nothing written\n";
    return kExitDiscrepancy;
  }
  TrainRun run = std::move(ck.run);
  run.graph = std::move(folded);
  save_checkpoint(a.out, ck.config, run);
  out << "wrote " << a.out << "\n";
  return kExitOk;
}

int cmd_inspect(const InspectArgs& a, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const auto report = inspect_layer(ck.run.graph, a.layer);
  emit(report.dump(2) + "\n", a.out, out);
  return kExitOk;
}

int cmd_defaults(const DefaultsArgs& a, std::ostream& out) {
  ExperimentConfig config;
  config.seed = a.seed;
  if (a.grid) {
    config.grid = GridSpec{};
    config.clip.k_w = kNoReshape;
    config.quant.alpha_source = AlphaSource::QlSearch;
    config.output_dir = "runs/group_grid";
  }
  out << config_to_json(config).dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"qshape: low-bit quantization with distribution reshaping", "qshape"};
  app.require_subcommand(1);

  QlBenchArgs qb;
  auto* ql = app.add_subcommand("ql-bench", "QL of matched-scale Laplace/Gaussian/Uniform samples");
  ql->add_option("--bits", qb.bits, "Bitwidths (repeatable)")->check(CLI::Range(1, 16));
  ql->add_option("--count", qb.count, "Samples per distribution")->check(CLI::Range(2, 100000000));
  ql->add_option("--seed", qb.seed, "Sampling seed");
  ql->add_option("--mean-abs", qb.mean_abs, "Common E|x| of the three distributions");
  ql->add_option("--out", qb.out, "Output CSV path (default stdout)");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Float pretrain and low-bit finetune (or a grid)");
  tr->add_option("--config", ta.config, "Experiment config JSON");
  tr->add_option("--seed", ta.seed, "Overrides the config seed");
  tr->add_option("--output", ta.output, "Overrides the config output_dir");
  tr->add_flag("--resume", ta.resume, "Continue from <output>/checkpoint");
  tr->add_option("--stop-after", ta.stop_after, "Stop after this many epochs")
      ->check(CLI::NonNegativeNumber);

  MergeArgs ma;
  auto* mb = app.add_subcommand("merge-bn", "Fold per-group scales into batch norms");
  mb->add_option("--checkpoint", ma.checkpoint, "Input checkpoint directory")->required();
  mb->add_option("--out", ma.out, "Output checkpoint directory")->required();
  mb->add_option("--seed", ma.seed, "Seed of the validation batch");
  mb->add_option("--batch", ma.batch, "Validation batch size")->check(CLI::Range(1, 100000));
  mb->add_option("--tolerance", ma.tolerance, "Largest accepted relative logit discrepancy")
      ->check(CLI::NonNegativeNumber);

  InspectArgs ia;
  auto* in = app.add_subcommand("inspect", "Per-layer group alphas, histogram and QL as JSON");
  in->add_option("--checkpoint", ia.checkpoint, "Checkpoint directory")->required();
  in->add_option("--layer", ia.layer, "Layer name")->required();
  in->add_option("--out", ia.out, "Output JSON path (default stdout)");
  in->add_option("--seed", ia.seed, "Accepted for uniformity; inspect draws no randomness");

  DefaultsArgs da;
  auto* df = app.add_subcommand("defaults", "Print the default experiment config");
  df->add_flag("--grid", da.grid, "Print the group-size grid config instead");
  df->add_option("--seed", da.seed, "Seed written into the printed config");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*ql) return cmd_ql_bench(qb, out);
    if (*tr) return cmd_train(ta, out, err);
    if (*mb) return cmd_merge_bn(ma, out, err);
    if (*in) return cmd_inspect(ia, out);
    if (*df) return cmd_defaults(da, out);
  } catch (const FoldError& e) {
    err << "error: " << e.what() << "\n";
    return kExitStructural;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace qshape::cli
