#pragma once

// Implementations behind the mgcap subcommands. Each returns a process exit code and
// writes human-readable output to `out`; failures surface as mgcap::Error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "mgcap/canonical.hpp"
#include "mgcap/checkpoint.hpp"
#include "mgcap/config.hpp"
#include "mgcap/dataset.hpp"
#include "mgcap/error.hpp"
#include "mgcap/gradcheck.hpp"
#include "mgcap/model.hpp"
#include "mgcap/trainer.hpp"

namespace mgcap {

struct LoadedData {
  LabeledImages train;
  LabeledImages test;
  std::vector<std::string> class_names;
  std::size_t channels = 1;
};

/// The manifest named in the config (split with train_ratio when it has no test
/// records), or the synthetic set generated in memory when no manifest is given.
inline LoadedData load_data(const RunConfig& cfg) {
  LoadedData d;
  if (cfg.manifest.empty()) {
    const SyntheticSpec spec = cfg.synthetic();
    auto [train, test] = synthetic_in_memory(spec, cfg.train_ratio, cfg.effective_split_seed());
    d.train = std::move(train);
    d.test = std::move(test);
    d.class_names.assign(synthetic_class_names().begin(),
                         synthetic_class_names().begin() + static_cast<std::ptrdiff_t>(spec.num_classes));
  } else {
    const std::filesystem::path path(cfg.manifest);
    DatasetManifest m = read_manifest(path);
    if (m.count(Split::Test) == 0) m = split(m, cfg.train_ratio, cfg.effective_split_seed());
    d.train = load_split(m, path.parent_path(), Split::Train);
    d.test = load_split(m, path.parent_path(), Split::Test);
    d.class_names = m.class_names;
  }
  if (d.train.size() == 0) throw Error(ErrorKind::EmptyDataset, "training split is empty");
  d.channels = d.train.images.front().channels;
  return d;
}

struct TrainCommand {
  RunConfig cfg;
  std::filesystem::path out_dir = "runs/default";
  bool resume = false;
  int eval_every = 1;
};

inline int cmd_train(const TrainCommand& c, std::ostream& out) {
  c.cfg.validate();
  const LoadedData data = load_data(c.cfg);
  Model model(c.cfg.model(data.class_names.size(), data.channels), c.cfg.seed);
  out << "train: " << data.train.size() << " images, test: " << data.test.size() << " images, "
      << data.class_names.size() << " classes\n";
  const TrainSummary s = train_model(c.cfg, model, data.train, data.test, {c.out_dir, c.resume, &out, c.eval_every});
  if (data.test.size() > 0) write_confusion_csv(s.final_test, data.class_names, c.out_dir / "confusion.csv");
  char buf[160];
  std::snprintf(buf, sizeof buf, "final train top1 %.4f, test top1 %.4f\n", s.final_train.top1,
                data.test.size() ? s.final_test.top1 : 0.0);
  out << buf << "wrote " << (c.out_dir / kCheckpointName).string() << " and " << (c.out_dir / kMetricsName).string()
      << "\n";
  return 0;
}

/// Model with weights from `checkpoint`; the architecture comes from `cfg`.
inline Model load_model(const RunConfig& cfg, std::size_t num_classes, std::size_t channels,
                        const std::filesystem::path& checkpoint) {
  if (!std::filesystem::exists(checkpoint))
    throw Error(ErrorKind::IoError, "checkpoint not found: " + checkpoint.string());
  Model model(cfg.model(num_classes, channels), cfg.seed);
  restore_parameters(load_checkpoint(checkpoint), model.parameters());
  return model;
}

/// run.cfg beside the checkpoint unless a config path is given.
inline RunConfig config_for_checkpoint(const std::filesystem::path& checkpoint, const std::filesystem::path& config) {
  const auto path = config.empty() ? checkpoint.parent_path() / "run.cfg" : config;
  if (!std::filesystem::exists(path))
    throw Error(ErrorKind::ConfigError, "no config given and " + path.string() + " does not exist");
  return load_config(path);
}

struct EvalCommand {
  RunConfig cfg;
  std::filesystem::path checkpoint;
  std::string split = "test";  // train | test
  std::filesystem::path confusion_csv;  // empty: beside the checkpoint
};

inline int cmd_eval(const EvalCommand& c, std::ostream& out) {
  c.cfg.validate();
  const LoadedData data = load_data(c.cfg);
  const Model model = load_model(c.cfg, data.class_names.size(), data.channels, c.checkpoint);
  const Split which = parse_split(c.split);
  const LabeledImages& set = which == Split::Train ? data.train : data.test;
  const EvalResult r = evaluate(model, set);
  const auto per_class = r.per_class_accuracy();
  char buf[200];
  for (std::size_t k = 0; k < per_class.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%-16s %.4f\n", data.class_names[k].c_str(), per_class[k]);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "%s: %zu images, loss %.6f, top1 %.6f\n", c.split.c_str(), r.count, r.loss, r.top1);
  out << buf;
  const auto csv = c.confusion_csv.empty() ? c.checkpoint.parent_path() / "confusion.csv" : c.confusion_csv;
  write_confusion_csv(r, data.class_names, csv);
  out << "wrote " << csv.string() << "\n";
  return 0;
}

struct GradcheckCommand {
  std::string scope;
  std::size_t trials = 100;
  std::uint64_t seed = 7;
  bool degenerate = false;
};

inline int cmd_gradcheck(const GradcheckCommand& c, std::ostream& out) {
  GradChecker checker(c.scope, c.seed);
  const GradcheckResult r = c.degenerate ? checker.run_degenerate(c.trials) : checker.run(c.trials);
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s%s: trials %zu, redraws %zu, max rel err %.3e (tol %.0e), finite %s: %s\n",
                r.scope.c_str(), r.degenerate ? " (degenerate)" : "", r.trials, r.redraws, r.worst_rel_error,
                r.tolerance, r.all_finite ? "yes" : "no", r.passed() ? "PASS" : "FAIL");
  out << buf;
  return r.passed() ? 0 : 1;
}

struct SynthCommand {
  RunConfig cfg;
  std::filesystem::path out_dir = "data/synthetic";
};

/// Writes images, classes.txt, and manifest.csv already split by train_ratio.
inline int cmd_synth(const SynthCommand& c, std::ostream& out) {
  c.cfg.validate();
  const DatasetManifest all = generate_synthetic(c.cfg.synthetic(), c.out_dir);
  const DatasetManifest m = split(all, c.cfg.train_ratio, c.cfg.effective_split_seed());
  write_manifest(m, c.out_dir / "manifest.csv");
  out << "wrote " << m.records.size() << " images in " << m.num_classes() << " classes (" << m.count(Split::Train)
      << " train, " << m.count(Split::Test) << " test) to " << c.out_dir.string() << "\n";
  return 0;
}

struct InspectCommand {
  RunConfig cfg;
  std::filesystem::path checkpoint;
  std::filesystem::path image;
  std::vector<std::string> class_names;  // empty: from the manifest or the synthetic set
};

inline int cmd_inspect(const InspectCommand& c, std::ostream& out) {
  c.cfg.validate();
  std::vector<std::string> names = c.class_names;
  if (names.empty()) {
    if (c.cfg.manifest.empty())
      names.assign(synthetic_class_names().begin(),
                   synthetic_class_names().begin() + static_cast<std::ptrdiff_t>(c.cfg.synth_classes));
    else
      names = read_manifest(c.cfg.manifest).class_names;
  }
  const Image img = load_ppm(c.image);
  const Model model = load_model(c.cfg, names.size(), img.channels, c.checkpoint);
  ForwardCache cache;
  model.forward(model.eval_view(img), cache, false);

  char buf[200];
  out << "probabilities:\n";
  for (std::size_t k = 0; k < names.size(); ++k) {
    std::snprintf(buf, sizeof buf, "  %-16s %.6f\n", names[k].c_str(), cache.probs[k]);
    out << buf;
  }
  out << "predicted: " << names[argmax(cache.probs)] << "\n";

  std::vector<MaxoutCache> maxouts;
  for (const auto& l : cache.levels) maxouts.push_back(l.maxout);
  const CanonicalReport rep = canonical_report(maxouts);
  for (std::size_t s = 0; s < rep.canonical_index.size(); ++s) {
    std::snprintf(buf, sizeof buf, "granularity %zu (ratio %g): canonical angle %g deg, dominance", s,
                  model.config().granularity_ratios[s], rep.canonical_angle_deg[s]);
    out << buf;
    for (std::size_t d : rep.dominance[s]) out << ' ' << d;
    out << "\n";
  }

  const auto after = cache.spectral.normalized_spectrum();
  out << "spectrum (eigenvalue, rectified, normalized):\n";
  for (std::size_t i = 0; i < after.size(); ++i) {
    std::snprintf(buf, sizeof buf, "  %3zu %.6e %.6e %.6e\n", i, cache.spectral.eig.values[i],
                  cache.spectral.rect.values[i], after[i]);
    out << buf;
  }
  return 0;
}

}  // namespace mgcap
