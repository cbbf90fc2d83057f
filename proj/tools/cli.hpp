// Copyright 2026 The voxclass Authors
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

// Command-line front end: synth, preprocess, train, predict, evaluate.
// Every invocation writes a JSON run manifest, on success or failure.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "voxclass/voxclass.hpp"

namespace voxclass::cli {

namespace fs = std::filesystem;

inline constexpr std::string_view kVolumeExtension = ".c3d";

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json inputs = nlohmann::json::object();
  nlohmann::json outputs = nlohmann::json::object();
  std::optional<std::uint64_t> seed;
  std::string started = utc_timestamp();
  fs::path path;  // where the manifest is written

  void write(int exit_status, const std::string& error) const {
    nlohmann::json j;
    j["command"] = command;
    j["config"] = config;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["seed"] = seed ? nlohmann::json(*seed) : nlohmann::json(nullptr);
    j["started"] = started;
    j["finished"] = utc_timestamp();
    j["exit_status"] = exit_status;
    if (!error.empty()) j["error"] = error;
    try {
      if (path.has_parent_path()) fs::create_directories(path.parent_path());
      write_text_atomic(path, j.dump(2) + "\n");
    } catch (const std::exception& e) {
      std::cerr << "warning: cannot write run manifest '" << path.string() << "': " << e.what() << "\n";
    }
  }
};

inline std::uint64_t fresh_seed() {
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

inline fs::path volume_path(const fs::path& dir, const std::string& scan_id) {
  return dir / (scan_id + std::string(kVolumeExtension));
}

// ---- synth ---------------------------------------------------------------

struct SynthArgs {
  fs::path out;
  SyntheticSpec spec;
  std::optional<std::uint64_t> seed;
};

inline int cmd_synth(const SynthArgs& a, RunManifest& m) {
  SyntheticSpec spec = a.spec;
  spec.seed = a.seed ? *a.seed : fresh_seed();
  m.seed = spec.seed;
  m.config = {{"n_scans_per_class", spec.n_scans_per_class},
              {"n_test_per_class", spec.n_test_per_class},
              {"depth", {spec.depth.min, spec.depth.max}},
              {"height", {spec.height.min, spec.height.max}},
              {"width", {spec.width.min, spec.width.max}},
              {"validation_fraction", spec.validation_fraction},
              {"unlabeled_fraction", spec.unlabeled_fraction}};
  m.outputs["dataset_root"] = a.out.string();
  auto set = generate_synthetic_dataset(spec, a.out);
  std::cout << "wrote " << set.size() << " scans to " << a.out.string() << "\n";
  return 0;
}

// ---- preprocess ----------------------------------------------------------

struct PreprocessArgs {
  fs::path dataset_root;
  fs::path out_dir;
  SizePreset preset = SizePreset::small;
  bool force = false;
};

inline int cmd_preprocess(const PreprocessArgs& a, RunManifest& m) {
  m.config = {{"preset", std::string(to_string(a.preset))}, {"force", a.force}};
  m.inputs["dataset_root"] = a.dataset_root.string();
  m.outputs["out_dir"] = a.out_dir.string();
  const auto set = scan_dataset(a.dataset_root);
  fs::create_directories(a.out_dir);
  const Dims3 target = preset_dims(a.preset);
  std::size_t written = 0, skipped = 0, failed = 0;
  for (const auto& rec : set.records()) {
    const auto out = volume_path(a.out_dir, rec.scan_id);
    if (!a.force) {
      auto dims = peek_volume_dims(out);
      if (dims && *dims == target) {
        ++skipped;
        continue;
      }
    }
    try {
      auto raw = load_slice_stack(scan_directory(a.dataset_root, rec));
      raw.scan_id = rec.scan_id;
      write_volume_file(preprocess_volume(raw, a.preset), out);
      ++written;
    } catch (const Error& e) {
      ++failed;
      std::cerr << "scan " << rec.scan_id << ": " << e.what() << "\n";
    }
  }
  write_text_atomic(a.out_dir / std::string(kAnnotationsFile), format_annotations(set));
  m.outputs["written"] = written;
  m.outputs["skipped"] = skipped;
  m.outputs["failed"] = failed;
  std::cout << "preprocessed " << written << ", skipped " << skipped << ", failed " << failed << "\n";
  return failed ? 2 : 0;
}

// ---- train ---------------------------------------------------------------

struct TrainArgs {
  fs::path config_file;
  fs::path data_dir;
  fs::path out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> preset;
  std::vector<std::string> overrides;  // key=value
  bool quiet = false;
};

inline TrainConfig resolve_train_config(const TrainArgs& a) {
  KeyValues kv = parse_key_values(read_text_file(a.config_file), a.config_file.string());
  for (const auto& o : a.overrides) {
    auto eq = o.find('=');
    if (eq == std::string::npos) fail(ErrorKind::parameter, "--set expects key=value, got '" + o + "'");
    kv[std::string(detail::trim(o.substr(0, eq)))] = std::string(detail::trim(o.substr(eq + 1)));
  }
  if (a.seed) kv["seed"] = std::to_string(*a.seed);
  if (a.preset) kv["preset"] = *a.preset;
  TrainConfig cfg = train_config_from_kv(kv);
  validate(cfg);
  return cfg;
}

inline std::vector<LabeledVolume> load_partition(const fs::path& dir, const AnnotationSet& set, Partition p,
                                                 const Dims3& expected, SizePreset preset) {
  std::vector<LabeledVolume> out;
  for (const auto& r : set.in_partition(p)) {
    if (!r.covid_label) continue;
    auto vol = read_volume_file(volume_path(dir, r.scan_id));
    if (vol.voxels.dims != expected)
      fail(ErrorKind::configuration, "volume '" + r.scan_id + "' is " + to_string(vol.voxels.dims) +
                                         ", preset " + std::string(to_string(preset)) + " needs " + to_string(expected));
    out.push_back({r, std::move(vol.voxels)});
  }
  return out;
}

inline int cmd_train(const TrainArgs& a, RunManifest& m) {
  m.inputs["config_file"] = a.config_file.string();
  m.inputs["data_dir"] = a.data_dir.string();
  m.outputs["out_dir"] = a.out_dir.string();
  TrainConfig cfg = resolve_train_config(a);
  if (!cfg.seed) cfg.seed = fresh_seed();
  m.seed = cfg.seed;
  for (const auto& [k, v] : train_config_to_kv(cfg)) m.config[k] = v;

  const auto set = read_annotations(a.data_dir / std::string(kAnnotationsFile));
  const Dims3 dims = preset_dims(cfg.preset);
  TrainingData data;
  data.train = load_partition(a.data_dir, set, Partition::train, dims, cfg.preset);
  data.validation = load_partition(a.data_dir, set, Partition::validation, dims, cfg.preset);

  Network<float> net(cfg.resolved_network(), derive_seed(*cfg.seed, 0));
  FitOptions opts;
  opts.out_dir = a.out_dir;
  if (!a.quiet)
    opts.on_epoch = [](const EpochRecord& e) {
      std::cout << "epoch " << e.epoch << " loss " << format_double(e.train_loss);
      if (e.f1_task1) std::cout << " f1_task1 " << fmt6(*e.f1_task1);
      if (e.f1_task2) std::cout << " f1_task2 " << fmt6(*e.f1_task2);
      std::cout << std::endl;
    };
  auto result = fit(net, data, cfg, opts);
  for (auto task : {Task::presence, Task::severity}) {
    if (auto e = select_best_epoch(result.history, task)) {
      const auto& rec = result.history.epochs[static_cast<std::size_t>(*e - 1)];
      const double s = task == Task::presence ? *rec.f1_task1 : *rec.f1_task2;
      std::cout << "best " << (task == Task::presence ? "task1" : "task2") << " macro_f1 " << fmt6(s) << " at epoch "
                << *e << "\n";
      m.outputs[task == Task::presence ? "best_task1" : "best_task2"] = {{"epoch", *e}, {"macro_f1", s}};
    }
  }
  return 0;
}

// ---- predict -------------------------------------------------------------

struct PredictArgs {
  std::vector<fs::path> checkpoints;
  std::optional<fs::path> ensemble_manifest;
  fs::path data_dir;
  fs::path out_file;
  bool tta = false;
  std::optional<std::string> partition;
};

inline std::vector<PreprocessedVolume> load_volumes(const fs::path& dir, std::optional<Partition> partition) {
  std::vector<fs::path> files;
  if (partition) {
    for (const auto& r : read_annotations(dir / std::string(kAnnotationsFile)).in_partition(*partition))
      files.push_back(volume_path(dir, r.scan_id));
  } else {
    if (!fs::is_directory(dir)) fail(ErrorKind::structural, "'" + dir.string() + "' is not a directory");
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && e.path().extension() == kVolumeExtension) files.push_back(e.path());
    std::sort(files.begin(), files.end());
  }
  if (files.empty()) fail(ErrorKind::structural, "no volumes found in '" + dir.string() + "'");
  std::vector<PreprocessedVolume> out;
  for (const auto& f : files) out.push_back(read_volume_file(f));
  return out;
}

inline int cmd_predict(const PredictArgs& a, RunManifest& m) {
  std::vector<fs::path> members = a.checkpoints;
  if (a.ensemble_manifest) {
    auto listed = read_ensemble_manifest(*a.ensemble_manifest);
    members.insert(members.end(), listed.begin(), listed.end());
  }
  if (members.empty()) fail(ErrorKind::input, "predict needs at least one checkpoint");
  m.config = {{"tta", a.tta}, {"members", members.size()}};
  for (const auto& p : members) m.inputs["checkpoints"].push_back(p.string());
  m.inputs["data_dir"] = a.data_dir.string();
  m.outputs["predictions"] = a.out_file.string();

  std::optional<Partition> part;
  if (a.partition) {
    part = parse_partition(*a.partition);
    if (!part) fail(ErrorKind::parameter, "unknown partition '" + *a.partition + "'");
  }
  const auto volumes = load_volumes(a.data_dir, part);
  std::vector<Checkpoint> cks;
  for (const auto& p : members) {
    cks.push_back(read_checkpoint(p));
    const Dims3 want = cks.back().network.input_dims;
    for (const auto& v : volumes)
      if (v.voxels.dims != want)
        fail(ErrorKind::configuration, "checkpoint '" + p.string() + "' expects " + to_string(want) + " volumes but '" +
                                           v.scan_id + "' is " + to_string(v.voxels.dims));
  }
  std::vector<std::vector<ScanPrediction>> tables;
  for (const auto& ck : cks) {
    auto net = restore_network(ck);
    std::vector<ScanPrediction> t;
    for (const auto& v : volumes) t.push_back(predict_volume(net, v, a.tta));
    tables.push_back(std::move(t));
  }
  const auto preds = tables.size() == 1 ? tables.front() : ensemble_tables(tables);
  write_predictions(preds, a.out_file);
  std::cout << "wrote " << preds.size() << " predictions to " << a.out_file.string() << "\n";
  return 0;
}

// ---- evaluate ------------------------------------------------------------

struct EvaluateArgs {
  fs::path predictions;
  fs::path dataset_root;
  std::string task = "1";
  std::string partition = "validation";
  std::optional<fs::path> report;
};

inline int cmd_evaluate(const EvaluateArgs& a, RunManifest& m) {
  m.config = {{"task", a.task}, {"partition", a.partition}};
  m.inputs["predictions"] = a.predictions.string();
  m.inputs["dataset_root"] = a.dataset_root.string();
  Task task;
  if (a.task == "1" || a.task == "presence")
    task = Task::presence;
  else if (a.task == "2" || a.task == "severity")
    task = Task::severity;
  else
    fail(ErrorKind::parameter, "--task must be 1, 2, presence or severity");
  auto part = parse_partition(a.partition);
  if (!part) fail(ErrorKind::parameter, "unknown partition '" + a.partition + "'");
  const auto truth = load_annotations(a.dataset_root);
  const auto decisions = decisions_of(read_predictions(a.predictions));
  const auto report = task == Task::presence ? evaluate_task1(truth, decisions, *part) : evaluate_task2(truth, decisions, *part);
  std::cout << format_report_table(report);
  if (a.report) {
    write_text_atomic(*a.report, format_report_kv(report));
    m.outputs["report"] = a.report->string();
  }
  m.outputs["macro_f1"] = report.macro_f1;
  m.outputs["n_items"] = report.n_items;
  return 0;
}

// ---- entry point ---------------------------------------------------------

inline int run(int argc, const char* const* argv) {
  CLI::App app{"voxclass: volumetric CT classification pipeline"};
  app.require_subcommand(1);
  std::optional<fs::path> manifest_override;
  app.add_option("--manifest", manifest_override, "Run manifest path");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic slice-stack dataset");
  s->add_option("--out", synth.out, "Dataset root to create")->required();
  s->add_option("--per-class", synth.spec.n_scans_per_class, "Labeled scans per class (5 classes)");
  s->add_option("--test-per-class", synth.spec.n_test_per_class, "Unlabeled test scans per class");
  s->add_option("--seed", synth.seed, "Random seed");
  s->add_option("--depth-min", synth.spec.depth.min);
  s->add_option("--depth-max", synth.spec.depth.max);
  s->add_option("--height-min", synth.spec.height.min);
  s->add_option("--height-max", synth.spec.height.max);
  s->add_option("--width-min", synth.spec.width.min);
  s->add_option("--width-max", synth.spec.width.max);
  s->add_option("--validation-fraction", synth.spec.validation_fraction);
  s->add_option("--unlabeled-fraction", synth.spec.unlabeled_fraction);

  PreprocessArgs pre;
  std::string pre_preset = "small";
  std::optional<std::uint64_t> pre_seed;
  auto* p = app.add_subcommand("preprocess", "Resample slice stacks into fixed-shape volume files");
  p->add_option("dataset_root", pre.dataset_root)->required();
  p->add_option("out_dir", pre.out_dir)->required();
  p->add_option("--preset", pre_preset, "small, medium or large");
  p->add_flag("--force", pre.force, "Rewrite existing volume files");
  p->add_option("--seed", pre_seed, "Recorded only; preprocessing is deterministic");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a network on preprocessed volumes");
  t->add_option("config_file", train.config_file)->required();
  t->add_option("data_dir", train.data_dir)->required();
  t->add_option("out_dir", train.out_dir)->required();
  t->add_option("--seed", train.seed);
  t->add_option("--preset", train.preset);
  t->add_option("--set", train.overrides, "Override a config field, key=value");
  t->add_flag("--quiet", train.quiet);

  PredictArgs pred;
  auto* pr = app.add_subcommand("predict", "Predict with one checkpoint or an ensemble");
  pr->add_option("checkpoints", pred.checkpoints);
  pr->add_option("--ensemble", pred.ensemble_manifest, "File listing member checkpoints");
  pr->add_option("--data", pred.data_dir, "Preprocessed volume directory")->required();
  pr->add_option("--out", pred.out_file, "Prediction table to write")->required();
  pr->add_flag("--tta", pred.tta, "Average over the sagittal reflection");
  pr->add_option("--partition", pred.partition, "Restrict to one partition (needs annotations.csv)");
  std::optional<std::uint64_t> pred_seed;
  pr->add_option("--seed", pred_seed, "Recorded only; inference is deterministic");

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Score a prediction table");
  e->add_option("predictions", ev.predictions)->required();
  e->add_option("dataset_root", ev.dataset_root)->required();
  e->add_option("--task", ev.task, "1/presence or 2/severity")->required();
  e->add_option("--partition", ev.partition);
  e->add_option("--report", ev.report, "Key/value report file");
  std::optional<std::uint64_t> ev_seed;
  e->add_option("--seed", ev_seed, "Recorded only");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err) == 0 ? 0 : 1;
  }

  RunManifest m;
  if (s->parsed()) {
    m.command = "synth";
    m.path = synth.out / "run_manifest.json";
  } else if (p->parsed()) {
    m.command = "preprocess";
    m.seed = pre_seed;
    m.path = pre.out_dir / "run_manifest.json";
  } else if (t->parsed()) {
    m.command = "train";
    m.seed = train.seed;
    m.path = train.out_dir / "run_manifest.json";
  } else if (pr->parsed()) {
    m.command = "predict";
    m.seed = pred_seed;
    m.path = fs::path(pred.out_file.string() + ".manifest.json");
  } else {
    m.command = "evaluate";
    m.seed = ev_seed;
    m.path = fs::path(ev.predictions.string() + ".evaluate.manifest.json");
  }
  if (manifest_override) m.path = *manifest_override;

  int status = 3;
  std::string error;
  try {
    if (s->parsed()) {
      status = cmd_synth(synth, m);
    } else if (p->parsed()) {
      pre.preset = parse_preset(pre_preset);
      status = cmd_preprocess(pre, m);
    } else if (t->parsed()) {
      status = cmd_train(train, m);
    } else if (pr->parsed()) {
      status = cmd_predict(pred, m);
    } else {
      status = cmd_evaluate(ev, m);
    }
  } catch (const Error& err) {
    error = err.what();
    status = exit_code(err.kind());
  } catch (const std::exception& err) {
    error = std::string("internal error: ") + err.what();
    status = 3;
  }
  if (!error.empty()) std::cerr << "voxclass " << m.command << ": " << error << "\n";
  m.write(status, error);
  return status;
}

}  // namespace voxclass::cli
