#pragma once

// Two-stage protocol: stage 1 trains only the classifier head, stage 2 fine-tunes everything.
// Parameters and velocities are kept at float precision after every update so a
// checkpoint captures the training state exactly and resuming is bit-identical.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mgcap/checkpoint.hpp"
#include "mgcap/config.hpp"
#include "mgcap/dataset.hpp"
#include "mgcap/error.hpp"
#include "mgcap/head.hpp"
#include "mgcap/model.hpp"
#include "mgcap/optim.hpp"
#include "mgcap/rng.hpp"

namespace mgcap {

struct EpochStats {
  double loss = 0.0;
  double top1 = 0.0;
  std::size_t count = 0;
};

struct EvalResult {
  double loss = 0.0;
  double top1 = 0.0;
  std::size_t count = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]

  std::vector<double> per_class_accuracy() const {
    std::vector<double> out;
    for (std::size_t c = 0; c < confusion.size(); ++c) {
      const std::size_t n = std::accumulate(confusion[c].begin(), confusion[c].end(), std::size_t{0});
      out.push_back(n ? static_cast<double>(confusion[c][c]) / static_cast<double>(n) : 0.0);
    }
    return out;
  }
};

inline std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Forward-only pass over the centered evaluation view of every image.
inline EvalResult evaluate(const Model& model, const LabeledImages& data) {
  if (data.size() == 0) throw Error(ErrorKind::EmptyDataset, "nothing to evaluate");
  const std::size_t k = model.config().num_classes;
  EvalResult r;
  r.confusion.assign(k, std::vector<std::size_t>(k, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto probs = model.predict(data.images[i]);
    const std::size_t label = data.labels[i];
    r.loss += cross_entropy(probs, label);
    const std::size_t pred = argmax(probs);
    correct += pred == label;
    ++r.confusion[label][pred];
  }
  r.count = data.size();
  r.loss /= static_cast<double>(r.count);
  r.top1 = static_cast<double>(correct) / static_cast<double>(r.count);
  return r;
}

/// Deterministic Fisher-Yates permutation for one epoch.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng({seed, 0x0bd3u, static_cast<std::uint64_t>(epoch)});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
  return order;
}

struct TrainContext {
  const RunConfig* cfg = nullptr;
  Model* model = nullptr;
  OptimizerState* opt = nullptr;
};

/// One pass over `data` in mini-batches. `stage` 1 updates only the head.
inline EpochStats train_epoch(TrainContext ctx, const LabeledImages& data, int stage, int epoch, double lr) {
  if (data.size() == 0) throw Error(ErrorKind::EmptyDataset, "training split is empty");
  const RunConfig& cfg = *ctx.cfg;
  Model& model = *ctx.model;
  auto params = model.parameters();
  std::vector<bool> active_flags(params.size(), stage != 1);
  for (std::size_t k = model.head_param_offset(); k < params.size(); ++k) active_flags[k] = true;
  const std::unique_ptr<bool[]> active(new bool[params.size()]);
  std::copy(active_flags.begin(), active_flags.end(), active.get());

  const auto order = epoch_order(data.size(), cfg.seed, epoch);
  EpochStats st;
  std::size_t correct = 0;
  ForwardCache cache;
  for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
    const std::size_t end = std::min(order.size(), start + cfg.batch_size);
    const double inv = 1.0 / static_cast<double>(end - start);
    auto grads = model.zero_grads();
    for (std::size_t b = start; b < end; ++b) {
      const std::size_t idx = order[b];
      Rng rng = make_rng({cfg.seed, 0xa06u, static_cast<std::uint64_t>(epoch), idx});
      const Image view = model.train_view(data.images[idx], rng, cfg.hflip);
      const auto probs = model.forward(view, cache, stage != 1);
      const std::size_t label = data.labels[idx];
      st.loss += cross_entropy(probs, label);
      correct += argmax(probs) == label;
      auto d_logits = cross_entropy_grad(probs, label);
      for (double& g : d_logits) g *= inv;
      model.backward(cache, d_logits, grads, stage == 1);
    }
    sgd_momentum_step(params, grads, *ctx.opt, lr, std::span<const bool>(active.get(), params.size()));
    for (std::size_t k = 0; k < params.size(); ++k) {
      if (!active[k]) continue;
      round_to_storage(*params[k].tensor);
      round_to_storage(ctx.opt->velocity[k]);
    }
    for (const auto& p : params)
      for (double v : p.tensor->values)
        if (!std::isfinite(v)) throw Error(ErrorKind::NonFinite, "parameter " + p.name + " diverged");
  }
  st.count = data.size();
  st.loss /= static_cast<double>(st.count);
  st.top1 = static_cast<double>(correct) / static_cast<double>(st.count);
  return st;
}

inline std::string metrics_row(int epoch, const std::string& stage, const std::string& split, double loss,
                               double top1) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d,%s,%s,%.6f,%.6f\n", epoch, stage.c_str(), split.c_str(), loss, top1);
  return buf;
}

inline constexpr const char* kMetricsHeader = "epoch,stage,split,loss,top1\n";

inline void write_confusion_csv(const EvalResult& r, const std::vector<std::string>& class_names,
                                const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << "true\\pred";
  for (std::size_t c = 0; c < r.confusion.size(); ++c) out << ',' << class_names[c];
  out << '\n';
  for (std::size_t t = 0; t < r.confusion.size(); ++t) {
    out << class_names[t];
    for (std::size_t v : r.confusion[t]) out << ',' << v;
    out << '\n';
  }
}

/// Parameters plus the optimizer state needed to resume.
inline std::vector<CheckpointRecord> training_records(Model& model, const OptimizerState& opt, int epochs_done) {
  std::vector<CheckpointRecord> out;
  const auto params = model.parameters();
  for (const auto& p : params) out.push_back(to_record(p.name, *p.tensor));
  out.push_back({"state.epoch", {1}, {static_cast<float>(epochs_done)}});
  for (std::size_t k = 0; k < params.size() && k < opt.velocity.size(); ++k)
    out.push_back(to_record("state.velocity." + params[k].name, opt.velocity[k]));
  return out;
}

/// Restores parameters and optimizer state; returns the number of completed epochs.
inline int restore_training(std::span<const CheckpointRecord> records, Model& model, OptimizerState& opt) {
  const auto params = model.parameters();
  restore_parameters(records, params);
  opt.init_like(params);
  int epochs_done = 0;
  for (const auto& r : records) {
    if (r.name == "state.epoch" && r.data.size() == 1) epochs_done = static_cast<int>(r.data[0]);
    for (std::size_t k = 0; k < params.size(); ++k)
      if (r.name == "state.velocity." + params[k].name) from_record(r, r.name, opt.velocity[k]);
  }
  return epochs_done;
}

struct TrainOutputs {
  std::filesystem::path out_dir;  // empty: keep everything in memory
  bool resume = false;
  std::ostream* log = nullptr;
  int eval_every = 1;  // test-split evaluation cadence in epochs; 0 only at the end
};

struct TrainSummary {
  std::vector<std::string> metrics_rows;  // without header
  EvalResult final_train;
  EvalResult final_test;
  int epochs_run = 0;
};

inline constexpr const char* kCheckpointName = "checkpoint.mgcap";
inline constexpr const char* kMetricsName = "metrics.csv";

/// Runs both stages. With an output directory: writes run.cfg, a checkpoint after every
/// epoch and metrics.csv; with `resume` it continues from an existing checkpoint.
inline TrainSummary train_model(const RunConfig& cfg, Model& model, const LabeledImages& train,
                                const LabeledImages& test, const TrainOutputs& io = {}) {
  namespace fs = std::filesystem;
  TrainSummary sum;
  OptimizerState opt;
  opt.momentum = cfg.momentum;
  opt.weight_decay = cfg.weight_decay;
  for (const auto& p : model.parameters()) round_to_storage(*p.tensor);
  opt.init_like(model.parameters());

  int start_epoch = 0;
  const bool persist = !io.out_dir.empty();
  if (persist) {
    std::error_code ec;
    fs::create_directories(io.out_dir, ec);
    if (ec) throw Error(ErrorKind::IoError, "cannot create " + io.out_dir.string());
    if (io.resume && fs::exists(io.out_dir / kCheckpointName)) {
      start_epoch = restore_training(load_checkpoint(io.out_dir / kCheckpointName), model, opt);
      std::ifstream in(io.out_dir / kMetricsName);
      std::string line;
      std::getline(in, line);  // header
      while (std::getline(in, line)) {
        const int e = std::stoi(line.substr(0, line.find(',')));
        if (e <= start_epoch && line.find(",final,") == std::string::npos) sum.metrics_rows.push_back(line + "\n");
      }
    }
    std::ofstream(io.out_dir / "run.cfg", std::ios::binary | std::ios::trunc) << cfg.to_text();
  }

  auto flush_metrics = [&] {
    if (!persist) return;
    const auto path = io.out_dir / kMetricsName;
    std::ofstream out(path.string() + ".tmp", std::ios::binary | std::ios::trunc);
    out << kMetricsHeader;
    for (const auto& r : sum.metrics_rows) out << r;
    out.close();
    fs::rename(path.string() + ".tmp", path);
  };

  const int total = cfg.epochs_stage1 + cfg.epochs_stage2;
  std::optional<EvalResult> last_test;
  for (int e = start_epoch; e < total; ++e) {
    const int stage = e < cfg.epochs_stage1 ? 1 : 2;
    const int local = stage == 1 ? e : e - cfg.epochs_stage1;
    if (stage == 2 && local == 0) opt.init_like(model.parameters());  // fresh momentum for fine-tuning
    const double lr = cfg.schedule(stage).at(local);
    const EpochStats st = train_epoch({&cfg, &model, &opt}, train, stage, e, lr);
    const std::string stage_tag = std::to_string(stage);
    sum.metrics_rows.push_back(metrics_row(e + 1, stage_tag, "train", st.loss, st.top1));
    std::string test_note;
    const bool eval_now = test.size() > 0 && ((io.eval_every > 0 && (e + 1) % io.eval_every == 0) || e + 1 == total);
    if (eval_now) {
      const EvalResult ev = evaluate(model, test);
      if (e + 1 == total) last_test = ev;
      sum.metrics_rows.push_back(metrics_row(e + 1, stage_tag, "test", ev.loss, ev.top1));
      char buf[64];
      std::snprintf(buf, sizeof buf, "  test loss %.4f top1 %.4f", ev.loss, ev.top1);
      test_note = buf;
    }
    ++sum.epochs_run;
    if (persist) {
      save_checkpoint(io.out_dir / kCheckpointName, training_records(model, opt, e + 1));
      flush_metrics();
    }
    if (io.log) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "epoch %d stage %d lr %.6g  train loss %.4f top1 %.4f", e + 1, stage, lr, st.loss,
                    st.top1);
      *io.log << buf << test_note << std::endl;
    }
  }

  sum.final_train = evaluate(model, train);
  sum.metrics_rows.push_back(metrics_row(total, "final", "train", sum.final_train.loss, sum.final_train.top1));
  if (test.size() > 0) {
    sum.final_test = last_test ? *last_test : evaluate(model, test);
    sum.metrics_rows.push_back(metrics_row(total, "final", "test", sum.final_test.loss, sum.final_test.top1));
  }
  flush_metrics();
  return sum;
}

}  // namespace mgcap
