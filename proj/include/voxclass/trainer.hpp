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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <set>
#include <tuple>
#include <vector>

#include "voxclass/checkpoint.hpp"
#include "voxclass/dataset.hpp"
#include "voxclass/inference.hpp"
#include "voxclass/keyvalue.hpp"
#include "voxclass/metrics.hpp"
#include "voxclass/network.hpp"
#include "voxclass/objectives.hpp"
#include "voxclass/optim.hpp"
#include "voxclass/random.hpp"

namespace voxclass {

struct TrainConfig {
  int epochs = 40;
  std::size_t batch_size = 2;
  double max_lr = 1e-4;
  double weight_decay = 1e-5;
  LossConfig loss;
  SizePreset preset = SizePreset::small;
  bool reflection_augment = true;
  std::optional<std::uint64_t> seed;
  OneCycleParams schedule;
  // input_dims and head_mode are derived from preset and lambda
  NetworkConfig network;

  /// Network config with the derived fields filled in.
  NetworkConfig resolved_network() const {
    NetworkConfig n = network;
    n.input_dims = preset_dims(preset);
    n.head_mode = head_mode_for_lambda(loss.lambda);
    return n;
  }
};

inline void validate(const TrainConfig& c) {
  auto bad = [](const char* field, const std::string& why) {
    fail(ErrorKind::configuration, std::string("field '") + field + "': " + why);
  };
  if (c.epochs < 1) bad("epochs", "must be >= 1");
  if (c.batch_size < 1) bad("batch_size", "must be >= 1");
  if (!(c.max_lr > 0)) bad("max_lr", "must be > 0");
  if (!(c.weight_decay >= 0)) bad("weight_decay", "must be >= 0");
  if (!(c.loss.lambda >= 0.0 && c.loss.lambda <= 1.0)) bad("lambda", "must be in [0,1]");
  if (!(c.loss.smoothing.eps_p >= 0.0 && c.loss.smoothing.eps_p < 0.5)) bad("eps_p", "must be in [0,0.5)");
  if (!(c.loss.smoothing.eps_s >= 0.0 && c.loss.smoothing.eps_s < 0.5)) bad("eps_s", "must be in [0,0.5)");
  const auto& s = c.schedule;
  if (!(s.warmup_fraction > 0.0 && s.warmup_fraction < 1.0)) bad("one_cycle.warmup_fraction", "must be in (0,1)");
  if (!(s.start_div >= 1.0)) bad("one_cycle.start_div", "must be >= 1");
  if (!(s.final_div >= 1.0)) bad("one_cycle.final_div", "must be >= 1");
  if (!(s.momentum_min > 0.0 && s.momentum_min <= s.momentum_max && s.momentum_max < 1.0))
    bad("one_cycle.momentum_min", "need 0 < momentum_min <= momentum_max < 1");
  validate(c.resolved_network());
}

inline KeyValues train_config_to_kv(const TrainConfig& c) {
  KeyValues kv = network_config_to_kv(c.resolved_network());
  kv.erase("net.input_dims");
  kv.erase("net.head_mode");
  kv["epochs"] = std::to_string(c.epochs);
  kv["batch_size"] = std::to_string(c.batch_size);
  kv["max_lr"] = format_double(c.max_lr);
  kv["weight_decay"] = format_double(c.weight_decay);
  kv["lambda"] = format_double(c.loss.lambda);
  kv["eps_p"] = format_double(c.loss.smoothing.eps_p);
  kv["eps_s"] = format_double(c.loss.smoothing.eps_s);
  kv["class_weighting"] = c.loss.class_weighting ? "true" : "false";
  kv["preset"] = std::string(to_string(c.preset));
  kv["reflection_augment"] = c.reflection_augment ? "true" : "false";
  if (c.seed) kv["seed"] = std::to_string(*c.seed);
  kv["one_cycle.warmup_fraction"] = format_double(c.schedule.warmup_fraction);
  kv["one_cycle.start_div"] = format_double(c.schedule.start_div);
  kv["one_cycle.final_div"] = format_double(c.schedule.final_div);
  kv["one_cycle.momentum_max"] = format_double(c.schedule.momentum_max);
  kv["one_cycle.momentum_min"] = format_double(c.schedule.momentum_min);
  return kv;
}

/// Reads a config from key/values; unknown keys are rejected by name.
inline TrainConfig train_config_from_kv(const KeyValues& kv) {
  static const std::set<std::string> known = {
      "epochs", "batch_size", "max_lr", "weight_decay", "lambda", "eps_p", "eps_s", "class_weighting", "preset",
      "reflection_augment", "seed", "one_cycle.warmup_fraction", "one_cycle.start_div", "one_cycle.final_div",
      "one_cycle.momentum_max", "one_cycle.momentum_min", "net.stage_widths", "net.blocks_per_stage",
      "net.stage_dropout", "net.head_hidden", "net.head_dropout"};
  for (const auto& [k, v] : kv)
    if (!known.count(k)) fail(ErrorKind::configuration, "field '" + k + "': unknown key");
  TrainConfig c;
  FieldReader r(kv);
  r.get_int("epochs", c.epochs);
  r.get_int("batch_size", c.batch_size);
  r.get("max_lr", c.max_lr);
  r.get("weight_decay", c.weight_decay);
  r.get("lambda", c.loss.lambda);
  r.get("eps_p", c.loss.smoothing.eps_p);
  r.get("eps_s", c.loss.smoothing.eps_s);
  r.get("class_weighting", c.loss.class_weighting);
  if (auto* p = r.raw("preset")) {
    bool ok = false;
    for (auto preset : kAllPresets)
      if (to_string(preset) == *p) c.preset = preset, ok = true;
    if (!ok) r.bad("preset", "expected small, medium or large");
  }
  r.get("reflection_augment", c.reflection_augment);
  if (r.has("seed")) {
    std::uint64_t s = 0;
    r.get_int("seed", s);
    c.seed = s;
  }
  r.get("one_cycle.warmup_fraction", c.schedule.warmup_fraction);
  r.get("one_cycle.start_div", c.schedule.start_div);
  r.get("one_cycle.final_div", c.schedule.final_div);
  r.get("one_cycle.momentum_max", c.schedule.momentum_max);
  r.get("one_cycle.momentum_min", c.schedule.momentum_min);
  c.network = network_config_from_kv(kv, c.network);
  return c;
}

struct LabeledVolume {
  ScanRecord record;
  Volume voxels;
};

struct TrainingData {
  std::vector<LabeledVolume> train;
  std::vector<LabeledVolume> validation;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  std::optional<double> f1_task1;
  std::optional<double> f1_task2;
  double lr_last = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::vector<double> lr_trace;  // one entry per optimizer step

  friend bool operator==(const TrainHistory&, const TrainHistory&) = default;
};

inline std::string format_history(const TrainHistory& h) {
  std::string out = "epoch,train_loss,f1_task1,f1_task2,lr_last\n";
  for (const auto& e : h.epochs) {
    out += std::to_string(e.epoch) + "," + format_double(e.train_loss) + ",";
    if (e.f1_task1) out += format_double(*e.f1_task1);
    out += ",";
    if (e.f1_task2) out += format_double(*e.f1_task2);
    out += "," + format_double(e.lr_last) + "\n";
  }
  return out;
}

/// Epoch with the highest score for the task, earliest on ties; empty when
/// no epoch carries a score for it.
inline std::optional<int> select_best_epoch(const TrainHistory& h, Task task) {
  std::optional<int> best;
  double best_score = -std::numeric_limits<double>::infinity();
  for (const auto& e : h.epochs) {
    const auto& s = task == Task::presence ? e.f1_task1 : e.f1_task2;
    if (s && *s > best_score) {
      best_score = *s;
      best = e.epoch;
    }
  }
  return best;
}

using CheckpointStore = std::map<int, Checkpoint>;

inline const Checkpoint& select_best(const TrainHistory& h, const CheckpointStore& store, Task task) {
  auto epoch = select_best_epoch(h, task);
  if (!epoch) fail(ErrorKind::input, "history has no " + std::string(to_string(task)) + " scores");
  auto it = store.find(*epoch);
  if (it == store.end()) fail(ErrorKind::input, "no checkpoint retained for epoch " + std::to_string(*epoch));
  return it->second;
}

/// Reverses the width axis with probability one half.
inline Volume random_sagittal_reflect(Volume v, Rng& rng) {
  if (coin(rng)) reflect_sagittal_inplace(v);
  return v;
}

struct FitOptions {
  std::optional<std::filesystem::path> out_dir;  // checkpoints + history written here
  bool complement_reflection = false;            // invert every augmentation coin
  std::function<void(const EpochRecord&)> on_epoch;
};

struct FitResult {
  TrainHistory history;
  std::optional<Checkpoint> best_task1;
  std::optional<Checkpoint> best_task2;
  Checkpoint last;
};

inline constexpr std::string_view kHistoryFile = "history.csv";
inline constexpr std::string_view kConfigEchoFile = "config.txt";

/// Validation scores for the heads the network carries.
inline std::pair<std::optional<double>, std::optional<double>> validation_scores(Network<float>& net,
                                                                               const std::vector<LabeledVolume>& val) {
  std::map<std::string, LabelDecision> decisions;
  std::vector<ScanRecord> records;
  for (const auto& item : val) {
    auto p = single_pass(net, item.voxels, item.record.scan_id);
    decisions[item.record.scan_id] = {p.covid_label, p.severity_label};
    ScanRecord r = item.record;
    r.partition = Partition::validation;
    records.push_back(r);
  }
  AnnotationSet truth(records);
  const auto mode = net.config().head_mode;
  std::optional<double> f1, f2;
  const auto& counts = truth.counts(Partition::validation);
  if (has_covid_head(mode) && counts.positive + counts.negative > 0) f1 = evaluate_task1(truth, decisions).macro_f1;
  std::size_t annotated = 0;
  for (auto n : counts.severity) annotated += n;
  if (has_severity_head(mode) && annotated > 0) f2 = evaluate_task2(truth, decisions).macro_f1;
  return {f1, f2};
}

/// Trains `net` in place. Data order, augmentation coins and dropout masks
/// come from independent streams derived from the seed, so runs with the
/// same seed are bitwise reproducible.
inline FitResult fit(Network<float>& net, const TrainingData& data, const TrainConfig& cfg, const FitOptions& opts = {}) {
  validate(cfg);
  if (!cfg.seed) fail(ErrorKind::configuration, "field 'seed': fit requires a resolved seed");
  if (net.config() != cfg.resolved_network())
    fail(ErrorKind::configuration, "network configuration does not match the training config");
  std::vector<const LabeledVolume*> train;
  std::vector<ScanRecord> train_records;
  for (const auto& item : data.train) {
    if (!item.record.covid_label) continue;
    if (item.voxels.dims != net.config().input_dims)
      fail(ErrorKind::shape, "training volume '" + item.record.scan_id + "' has dims " + to_string(item.voxels.dims));
    train.push_back(&item);
    train_records.push_back(item.record);
  }
  if (train.empty()) fail(ErrorKind::configuration, "training set has no labeled scans");

  const auto weights = loss_weights_from_records(train_records);
  const std::uint64_t seed = *cfg.seed;
  Rng order_rng(derive_seed(seed, 1));
  Rng augment_rng(derive_seed(seed, 2));
  Rng dropout_rng(derive_seed(seed, 3));
  Adam<float> adam(net.parameters());

  const std::size_t B = cfg.batch_size;
  const std::size_t batches = (train.size() + B - 1) / B;
  const std::size_t total_steps = batches * static_cast<std::size_t>(cfg.epochs);
  std::size_t step = 0;

  FitResult result;
  double best1 = -1, best2 = -1;
  KeyValues ck_meta = train_config_to_kv(cfg);
  if (opts.out_dir) {
    std::filesystem::create_directories(*opts.out_dir);
    write_text_atomic(*opts.out_dir / std::string(kConfigEchoFile), format_key_values(ck_meta));
  }

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto perm = random_permutation(order_rng, train.size());
    double loss_sum = 0;
    double lr = 0;
    for (std::size_t b = 0; b < batches; ++b) {
      std::vector<Volume> inputs;
      std::vector<const LabeledVolume*> items;
      for (std::size_t k = b * B; k < std::min(train.size(), (b + 1) * B); ++k) {
        const auto* item = train[perm[k]];
        items.push_back(item);
        inputs.push_back(item->voxels);
        if (cfg.reflection_augment) {
          bool flip = coin(augment_rng);
          if (opts.complement_reflection) flip = !flip;
          if (flip) reflect_sagittal_inplace(inputs.back());
        }
      }
      std::vector<const Volume*> ptrs;
      for (const auto& v : inputs) ptrs.push_back(&v);
      const auto sched = one_cycle(step, total_steps, cfg.max_lr, cfg.schedule);
      lr = sched.lr;
      result.history.lr_trace.push_back(lr);

      net.zero_grad();
      auto out = net.forward(make_batch<float>(ptrs), {nn::Mode::train, &dropout_rng, true});
      HeadGradients grads;
      grads.batch = out.batch;
      if (out.x) grads.x.emplace(out.batch, 0.0);
      if (out.z) grads.z.emplace(out.batch);
      const double inv_b = 1.0 / static_cast<double>(out.batch);
      for (std::size_t i = 0; i < out.batch; ++i) {
        const auto target = make_item_target(items[i]->record, cfg.loss, weights);
        const auto l = combined_loss(cfg.loss, prediction_at(out, i), target);
        loss_sum += l.value;
        if (grads.x) (*grads.x)[i] = l.dx.value_or(0.0) * inv_b;
        if (grads.z) {
          const auto dz = l.dz.value_or(SeverityVector{});
          for (std::size_t c = 0; c < kSeverityClasses; ++c) (*grads.z)[i][c] = dz[c] * inv_b;
        }
      }
      net.backward(grads);
      adam.step(sched.lr, sched.momentum, cfg.weight_decay);
      ++step;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train.size());
    rec.lr_last = lr;
    std::tie(rec.f1_task1, rec.f1_task2) = validation_scores(net, data.validation);
    result.history.epochs.push_back(rec);

    KeyValues meta = ck_meta;
    meta["train_loss"] = format_double(rec.train_loss);
    if (rec.f1_task1) meta["f1_task1"] = format_double(*rec.f1_task1);
    if (rec.f1_task2) meta["f1_task2"] = format_double(*rec.f1_task2);
    result.last = capture_checkpoint(net, seed, static_cast<std::uint32_t>(epoch), meta);
    bool new1 = false, new2 = false;
    if (rec.f1_task1 && *rec.f1_task1 > best1) best1 = *rec.f1_task1, result.best_task1 = result.last, new1 = true;
    if (rec.f1_task2 && *rec.f1_task2 > best2) best2 = *rec.f1_task2, result.best_task2 = result.last, new2 = true;
    if (opts.out_dir) {
      const auto& dir = *opts.out_dir;
      write_checkpoint(result.last, dir / "last.ckpt");
      if (new1) write_checkpoint(*result.best_task1, dir / "best_task1.ckpt");
      if (new2) write_checkpoint(*result.best_task2, dir / "best_task2.ckpt");
      write_text_atomic(dir / std::string(kHistoryFile), format_history(result.history));
    }
    if (opts.on_epoch) opts.on_epoch(rec);
  }
  return result;
}

}  // namespace voxclass
