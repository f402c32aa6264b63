#include "cli_app.hpp"

#include <algorithm>
#include <map>
#include <ostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "seqrec/metrics.hpp"

namespace seqrec::cli {
namespace {

struct UsageError : Error {
  using Error::Error;
};

/// One "--key value" option per config key, applied over the JSON file.
class Overrides {
 public:
  void attach(CLI::App& app) {
    const nlohmann::json defaults = default_config_json();
    for (auto it = defaults.begin(); it != defaults.end(); ++it) {
      app.add_option("--" + it.key(), values_[it.key()], "override config key " + it.key());
    }
  }

  RunConfig resolve(const std::string& path, CLI::App& app) const {
    nlohmann::json doc = read_config_json(path);
    for (const auto& [key, text] : values_) {
      if (app.count("--" + key) > 0) apply_override(doc, key, text);
    }
    RunConfig config = config_from_json(doc);
    if (app.count("--jobs") == 0) config.jobs = eval::threads_from_env(config.jobs);
    config.train.threads = config.jobs;
    return config;
  }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Temporal mixture-of-heads sequential recommender", "seqrec"};
  app.require_subcommand(1);
  // "-h" stays free for the hidden-size override.
  app.set_help_flag("--help", "print this help and exit");

  std::string config_path;
  auto add_config = [&](CLI::App* sub, Overrides& overrides) {
    sub->add_option("--config", config_path, "JSON run configuration")->required();
    overrides.attach(*sub);
  };

  Overrides pre_over, train_over, eval_over, ablate_over;
  CLI::App* pre = app.add_subcommand("preprocess", "filter the raw log and write the cache");
  add_config(pre, pre_over);

  std::string out_dir;
  CLI::App* trn = app.add_subcommand("train", "train a model; writes model.ckpt and train_log.csv");
  add_config(trn, train_over);
  trn->add_option("--out", out_dir, "checkpoint directory")->required();

  std::string checkpoint;
  std::string split = "test";
  CLI::App* evl = app.add_subcommand("evaluate", "leave-one-out ranking metrics as CSV");
  add_config(evl, eval_over);
  evl->add_option("--checkpoint", checkpoint, "checkpoint file or directory");
  evl->add_option("--split", split, "val or test")->check(CLI::IsMember({"val", "test"}));

  std::string combos;
  std::size_t seeds = 1;
  std::string grid_out;
  CLI::App* abl = app.add_subcommand("ablate", "train and test one model per combination and seed");
  add_config(abl, ablate_over);
  abl->add_option("--combos", combos, "one '+'-joined kind list per line")->required();
  abl->add_option("--seeds", seeds, "seeds per combination (seed, seed+1, ...)");
  abl->add_option("--grid-out", grid_out, "grid CSV path (default <output_dir>/ablation.csv)");

  std::uint64_t gc_seed = 0;
  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference check of the micro model");
  gc->add_option("--seed", gc_seed, "initialization seed");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (pre->parsed()) return preprocess_command(pre_over.resolve(config_path, *pre), out, err);
    if (trn->parsed()) {
      return train_command(train_over.resolve(config_path, *trn), out_dir, out, err);
    }
    if (evl->parsed()) {
      if (checkpoint.empty()) throw UsageError("checkpoint required");
      return evaluate_command(eval_over.resolve(config_path, *evl), checkpoint,
                              split == "val" ? data::SplitKind::validation : data::SplitKind::test,
                              out, err);
    }
    if (abl->parsed()) {
      const RunConfig config = ablate_over.resolve(config_path, *abl);
      const std::string path =
          grid_out.empty() ? (std::filesystem::path(config.output_dir) / "ablation.csv").string()
                           : grid_out;
      return ablate_command(config, combos, seeds, path, out, err);
    }
    if (gc->parsed()) return gradcheck_command(gc_seed, out, err);
  } catch (const UsageError& e) {
    out << std::flush;
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    out << std::flush;
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace seqrec::cli
