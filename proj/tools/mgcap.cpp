// mgcap command-line front end.
//
//   mgcap train     [--config run.cfg] [--out DIR] [--resume] [--key=value ...]
//   mgcap eval      --checkpoint FILE [--config run.cfg] [--split test|train] [--confusion FILE] [--key=value ...]
//   mgcap gradcheck SCOPE [--trials N] [--seed S] [--degenerate]
//   mgcap synth     [--out DIR] [--key=value ...]
//   mgcap inspect   --checkpoint FILE --image FILE [--config run.cfg] [--key=value ...]
//
// Any RunConfig key may be overridden as --key=value or --key value; dashes and
// underscores are interchangeable. Overrides win over the config file.

#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "mgcap/commands.hpp"

namespace {

std::vector<std::pair<std::string, std::string>> parse_overrides(const std::vector<std::string>& extras) {
  std::vector<std::pair<std::string, std::string>> kv;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& tok = extras[i];
    if (tok.rfind("--", 0) != 0)
      throw mgcap::Error(mgcap::ErrorKind::ConfigError, "unexpected argument '" + tok + "'");
    const std::string body = tok.substr(2);
    if (const auto eq = body.find('='); eq != std::string::npos) {
      kv.emplace_back(body.substr(0, eq), body.substr(eq + 1));
    } else {
      if (i + 1 >= extras.size())
        throw mgcap::Error(mgcap::ErrorKind::ConfigError, "missing value for '" + tok + "'");
      kv.emplace_back(body, extras[++i]);
    }
  }
  return kv;
}

mgcap::RunConfig build_config(const std::string& path, const CLI::App* sub) {
  mgcap::RunConfig cfg = path.empty() ? mgcap::RunConfig{} : mgcap::load_config(path);
  mgcap::apply_overrides(cfg, parse_overrides(sub->remaining()));
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MG-CAP second-order pooling: training, evaluation and gradient verification"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "runs/default", checkpoint, split = "test", confusion, image;
  bool resume = false;
  int eval_every = 1;

  auto* train = app.add_subcommand("train", "two-stage training; writes checkpoint, metrics.csv, confusion.csv");
  train->allow_extras();
  train->add_option("--config", config_path, "key = value config file");
  train->add_option("--out", out_dir, "output directory")->capture_default_str();
  train->add_flag("--resume", resume, "continue from the checkpoint in --out");
  train->add_option("--eval-every", eval_every, "evaluate the test split every N epochs (0: only at the end)")
      ->capture_default_str();

  auto* eval = app.add_subcommand("eval", "top-1 accuracy per class and overall, confusion CSV");
  eval->allow_extras();
  eval->add_option("--config", config_path, "config (default: run.cfg beside the checkpoint)");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  eval->add_option("--confusion", confusion, "confusion CSV path (default: beside the checkpoint)");

  std::string scope;
  mgcap::GradcheckCommand gc;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference verification of a backward pass");
  grad->add_option("scope", scope, "covariance|gaussian|ridge|spectral_log|spectral_sqrt|maxout|backbone|full")
      ->required();
  grad->add_option("--trials", gc.trials, "random trials")->capture_default_str();
  grad->add_option("--seed", gc.seed, "seed")->capture_default_str();
  grad->add_flag("--degenerate", gc.degenerate, "scaled-identity and rank-one inputs (spectral scopes)");

  auto* synth = app.add_subcommand("synth", "write the synthetic rotated-texture dataset and its manifest");
  synth->allow_extras();
  synth->add_option("--config", config_path, "key = value config file");
  synth->add_option("--out", out_dir, "output directory")->default_val("data/synthetic");

  auto* inspect = app.add_subcommand("inspect", "single-image forward with canonical-angle and spectrum report");
  inspect->allow_extras();
  inspect->add_option("--config", config_path, "config (default: run.cfg beside the checkpoint)");
  inspect->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  inspect->add_option("--image", image, "PPM/PGM image")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      return mgcap::cmd_train({build_config(config_path, train), out_dir, resume, eval_every}, std::cout);
    }
    if (*eval) {
      mgcap::RunConfig cfg = mgcap::config_for_checkpoint(checkpoint, config_path);
      mgcap::apply_overrides(cfg, parse_overrides(eval->remaining()));
      return mgcap::cmd_eval({cfg, checkpoint, split, confusion}, std::cout);
    }
    if (*grad) {
      gc.scope = scope;
      return mgcap::cmd_gradcheck(gc, std::cout);
    }
    if (*synth) {
      return mgcap::cmd_synth({build_config(config_path, synth), out_dir}, std::cout);
    }
    if (*inspect) {
      mgcap::RunConfig cfg = mgcap::config_for_checkpoint(checkpoint, config_path);
      mgcap::apply_overrides(cfg, parse_overrides(inspect->remaining()));
      return mgcap::cmd_inspect({cfg, checkpoint, image, {}}, std::cout);
    }
  } catch (const mgcap::Error& e) {
    std::cerr << "mgcap: " << e.what() << "\n";
    return e.kind() == mgcap::ErrorKind::ConfigError || e.kind() == mgcap::ErrorKind::InvalidArgument ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "mgcap: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
