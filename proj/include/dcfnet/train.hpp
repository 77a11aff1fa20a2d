// Copyright 2026 dcfnet authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Training loop: seeded shuffling, batch-parallel forward/backward over
// shared frozen parameters with a fixed gradient reduction order, gradient
// clipping, AdamW steps on a warmup-cosine schedule, per-epoch validation
// and checkpointing. Fully reproducible from (seed, config, manifest).

#pragma once

#include <filesystem>
#include <future>
#include <iostream>

#include "dcfnet/checkpoint.hpp"
#include "dcfnet/metrics.hpp"
#include "dcfnet/model.hpp"
#include "dcfnet/optim.hpp"
#include "dcfnet/synth.hpp"

namespace dcfnet {

struct TrainOptions {
  size_t epochs = 30;
  size_t batch = 4;
  uint64_t seed = 1;
  double clip_norm = 5.0;
  double weight_decay = 0.01;
  double val_fraction = 0.1;
  size_t threads = 2;
  Schedule schedule;
  std::string out_dir = "run";
  std::string resume_from;  // checkpoint path, empty = fresh start
  bool quiet = false;
};

struct EpochLogRow {
  size_t epoch = 0;       // 1-based
  size_t step = 0;        // global optimizer steps so far
  double lr = 0.0;        // lr_at(epoch)
  double loss = 0.0;      // mean training loss of the epoch
  double val_si_sdri = 0.0;
};

struct TrainResult {
  std::vector<EpochLogRow> log;
  std::string best_checkpoint;
  std::string last_checkpoint;
  double best_val_si_sdri = -1e300;
};

namespace detail {

struct LoadedItem {
  std::vector<double> mix, enroll, target;
  std::string id;
};

inline std::vector<LoadedItem> load_items(const Manifest& manifest) {
  std::vector<LoadedItem> items;
  items.reserve(manifest.records.size());
  for (const auto& r : manifest.records) {
    LoadedItem it;
    it.id = r.id;
    it.mix = read_wav(r.mix).samples;
    it.enroll = read_wav(r.enroll).samples;
    it.target = read_wav(r.target).samples;
    check(it.mix.size() == it.target.size(), "manifest item " + r.id + ": length mismatch");
    items.push_back(std::move(it));
  }
  return items;
}

template <typename T>
Tensor<T> to_tensor_vec(const std::vector<double>& v) {
  std::vector<T> out(v.size());
  for (size_t i = 0; i < v.size(); ++i) out[i] = static_cast<T>(v[i]);
  return Tensor<T>::from({v.size()}, std::move(out));
}

}  // namespace detail

inline void write_train_log_csv(const std::string& path, const std::vector<EpochLogRow>& rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "epoch,step,lr,loss,val_si_sdri\n";
  f.precision(12);
  for (const auto& r : rows)
    f << r.epoch << ',' << r.step << ',' << r.lr << ',' << r.loss << ',' << r.val_si_sdri << '\n';
  if (!f) throw IoError("short write: " + path);
}

// Mean SI-SDR improvement of the model over a list of items.
template <typename T>
double validate_model(const DcfNet<T>& net, const std::vector<detail::LoadedItem>& items) {
  if (items.empty()) return 0.0;
  NoGradGuard no_grad;
  double sum = 0.0;
  for (const auto& it : items) {
    auto est = net.forward(detail::to_tensor_vec<T>(it.mix), detail::to_tensor_vec<T>(it.enroll));
    Waveform w_est;
    w_est.samples.assign(est.data().begin(), est.data().end());
    Waveform w_mix, w_tgt;
    w_mix.samples = it.mix;
    w_tgt.samples = it.target;
    sum += si_sdr(w_tgt, w_est) - si_sdr(w_tgt, w_mix);
  }
  return sum / static_cast<double>(items.size());
}

// One optimizer step over a batch of items. Per-item forward/backward may run
// on worker threads (parameters are frozen during the pass); gradients are
// reduced in item order so the result is identical at any thread count.
template <typename T>
double train_batch(DcfNet<T>& net, const std::vector<const detail::LoadedItem*>& batch,
                   AdamW<T>& opt, double lr, double clip_norm, size_t threads,
                   std::string* fail_item = nullptr) {
  const size_t B = batch.size();
  std::vector<GradMap<T>> sinks(B);
  std::vector<double> losses(B);

  auto run_item = [&](size_t i) {
    auto loss = net.loss(detail::to_tensor_vec<T>(batch[i]->mix),
                         detail::to_tensor_vec<T>(batch[i]->enroll),
                         detail::to_tensor_vec<T>(batch[i]->target));
    losses[i] = static_cast<double>(loss.item());
    loss.backward_collect(sinks[i]);
  };
  if (threads <= 1 || B == 1) {
    for (size_t i = 0; i < B; ++i) run_item(i);
  } else {
    std::vector<std::future<void>> futs;
    for (size_t i = 0; i < B; ++i)
      futs.push_back(std::async(std::launch::async, run_item, i));
    for (auto& f : futs) f.get();
  }

  double mean_loss = 0.0;
  for (size_t i = 0; i < B; ++i) {
    if (!std::isfinite(losses[i])) {
      if (fail_item) *fail_item = batch[i]->id;
      return std::numeric_limits<double>::quiet_NaN();
    }
    mean_loss += losses[i];
  }
  mean_loss /= static_cast<double>(B);

  // Node pointer -> name resolution, then ordered reduction.
  std::unordered_map<const void*, std::string> names;
  for (const auto& [name, t] : net.params.entries()) names[t.id()] = name;
  NamedGrads<T> grads;
  for (const auto& [name, t] : net.params.entries()) grads[name].assign(t.numel(), T(0));
  for (size_t i = 0; i < B; ++i)
    for (auto& [ptr, g] : sinks[i]) {
      auto it = names.find(ptr);
      if (it == names.end()) continue;
      auto& acc = grads[it->second];
      for (size_t j = 0; j < g.size(); ++j) acc[j] += g[j];
    }
  const T inv_b = T(1) / static_cast<T>(B);
  for (auto& [name, g] : grads)
    for (T& v : g) v *= inv_b;
  clip_grad_norm(grads, clip_norm);
  opt.step(net.params, grads, lr);
  return mean_loss;
}

template <typename T>
TrainResult train_loop(DcfNet<T>& net, const Manifest& manifest, const TrainOptions& opt,
                       const std::string& config_json) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(opt.out_dir) / "checkpoints");
  check(!manifest.records.empty(), "train: empty manifest");
  check(opt.epochs >= 1, "train: epochs must be >= 1");

  auto items = detail::load_items(manifest);
  // Deterministic held-out validation slice: the tail of the manifest order.
  const size_t n_val = std::min(items.size() - 1,
                                static_cast<size_t>(items.size() * opt.val_fraction));
  std::vector<detail::LoadedItem> val_items(items.end() - n_val, items.end());
  items.resize(items.size() - n_val);
  const size_t n_train = items.size();
  const size_t steps_per_epoch = (n_train + opt.batch - 1) / opt.batch;

  AdamW<T> adamw;
  adamw.weight_decay = opt.weight_decay;
  size_t start_epoch = 1;  // 1-based
  TrainResult result;

  if (!opt.resume_from.empty()) {
    auto ckpt = load_checkpoint(opt.resume_from);
    auto meta = nlohmann::json::parse(ckpt.config_json);
    apply_checkpoint(net.params, ckpt);
    adamw.set_step_count(meta.at("optim_step").get<uint64_t>());
    start_epoch = meta.at("epoch").get<size_t>() + 1;
    result.best_val_si_sdri = meta.value("best_val_si_sdri", -1e300);
    for (auto& [name, t] : net.params.entries()) {
      const auto& m = ckpt.tensors.at("optim.m." + name);
      const auto& v = ckpt.tensors.at("optim.v." + name);
      adamw.first_moments()[name].assign(m.data.begin(), m.data.end());
      adamw.second_moments()[name].assign(v.data.begin(), v.data.end());
    }
  }

  size_t global_step = adamw.step_count();
  for (size_t epoch = start_epoch; epoch <= opt.epochs; ++epoch) {
    // Seeded shuffle, independent of any earlier epoch (resume-stable).
    std::vector<size_t> order(n_train);
    std::iota(order.begin(), order.end(), size_t(0));
    Rng shuffle_rng(derive_seed(opt.seed, 0x5Fu, epoch));
    for (size_t i = n_train; i > 1; --i) {
      const size_t j = shuffle_rng.randint(i);
      std::swap(order[i - 1], order[j]);
    }

    double epoch_loss = 0.0;
    size_t n_batches = 0;
    for (size_t b = 0; b < steps_per_epoch; ++b) {
      std::vector<const detail::LoadedItem*> batch;
      for (size_t i = b * opt.batch; i < std::min((b + 1) * opt.batch, n_train); ++i)
        batch.push_back(&items[order[i]]);
      if (batch.empty()) break;
      const double e_coord =
          static_cast<double>(epoch - 1) +
          static_cast<double>(b + 1) / static_cast<double>(steps_per_epoch);
      const double lr = lr_at(std::min(e_coord, opt.schedule.total_epochs), opt.schedule);
      std::string fail_item;
      const double loss =
          train_batch(net, batch, adamw, lr, opt.clip_norm, opt.threads, &fail_item);
      if (!std::isfinite(loss))
        throw Error("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                    std::to_string(b) + " (item " + fail_item + ")");
      epoch_loss += loss;
      ++n_batches;
      ++global_step;
    }
    epoch_loss /= static_cast<double>(n_batches);

    EpochLogRow row;
    row.epoch = epoch;
    row.step = global_step;
    row.lr = lr_at(std::min(static_cast<double>(epoch), opt.schedule.total_epochs), opt.schedule);
    row.loss = epoch_loss;
    row.val_si_sdri = validate_model(net, val_items);
    result.log.push_back(row);
    if (!opt.quiet)
      std::cerr << "epoch " << epoch << "  lr " << row.lr << "  loss " << row.loss
                << "  val_si_sdri " << row.val_si_sdri << "\n";

    // Checkpoint with optimizer state for resume.
    nlohmann::json meta;
    meta["config"] = nlohmann::json::parse(config_json.empty() ? "{}" : config_json);
    meta["epoch"] = epoch;
    meta["optim_step"] = adamw.step_count();
    meta["best_val_si_sdri"] =
        std::max(result.best_val_si_sdri, row.val_si_sdri);
    auto ckpt = make_checkpoint(net.params, meta.dump());
    for (auto& [name, t] : net.params.entries()) {
      CheckpointTensor m, v;
      m.shape = t.shape();
      v.shape = t.shape();
      const auto& mm = adamw.first_moments()[name];
      const auto& vv = adamw.second_moments()[name];
      m.data.assign(mm.begin(), mm.end());
      v.data.assign(vv.begin(), vv.end());
      if (m.data.empty()) m.data.assign(t.numel(), 0.0f);
      if (v.data.empty()) v.data.assign(t.numel(), 0.0f);
      ckpt.tensors.emplace("optim.m." + name, std::move(m));
      ckpt.tensors.emplace("optim.v." + name, std::move(v));
    }
    const std::string last = (fs::path(opt.out_dir) / "checkpoints" / "last.ckpt").string();
    save_checkpoint(last, ckpt);
    result.last_checkpoint = last;

    if (row.val_si_sdri > result.best_val_si_sdri || result.best_checkpoint.empty()) {
      result.best_val_si_sdri = row.val_si_sdri;
      nlohmann::json best_meta;
      best_meta["config"] = nlohmann::json::parse(config_json.empty() ? "{}" : config_json);
      best_meta["epoch"] = epoch;
      best_meta["optim_step"] = adamw.step_count();
      best_meta["best_val_si_sdri"] = result.best_val_si_sdri;
      const std::string best = (fs::path(opt.out_dir) / "checkpoints" / "best.ckpt").string();
      save_checkpoint(best, make_checkpoint(net.params, best_meta.dump()));
      result.best_checkpoint = best;
    }
    write_train_log_csv((fs::path(opt.out_dir) / "train_log.csv").string(), result.log);
  }
  return result;
}

}  // namespace dcfnet
