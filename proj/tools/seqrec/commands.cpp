#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "seqrec/ablation.hpp"
#include "seqrec/metrics.hpp"
#include "seqrec/trainer.hpp"

namespace seqrec::cli {
namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

std::string combo_of(const model::ModelConfig& config) {
  std::vector<temporal::EmbeddingKind> kinds;
  for (const auto& h : config.heads) kinds.push_back(h.kind);
  return temporal::combo_name(kinds);
}

model::ModelConfig configured_model(const RunConfig& config, const data::Catalog& catalog) {
  model::ModelConfig m = config.model;
  train::configure_for_catalog(m, catalog, config.day_slack);
  return m;
}

}  // namespace

data::SequenceData build_dataset(const RunConfig& config) {
  data::SequenceData d =
      data::build_sequences(data::ingest(config.dataset_path, config.schema), config.min_count,
                            config.filter);
  if (config.max_users > 0) {
    d = data::subsample_users(d, config.max_users, config.subsample_seed, config.min_count,
                              config.filter);
  }
  return d;
}

data::SequenceData load_dataset(const RunConfig& config, std::ostream& log) {
  const fs::path dir = config.cache_dir;
  const fs::path stamp = dir / "fingerprint.txt";
  if (fs::exists(dir / "catalog.txt") && fs::exists(stamp) &&
      read_text(stamp).find("data=" + config.data_fingerprint()) != std::string::npos) {
    return data::read_cache(dir);
  }
  log << "cache " << dir.string() << " missing or stale; reading " << config.dataset_path << '\n';
  return build_dataset(config);
}

int preprocess_command(const RunConfig& config, std::ostream& out, std::ostream&) {
  const data::SequenceData d = build_dataset(config);
  data::write_cache(config.cache_dir, d);
  write_text(fs::path(config.cache_dir) / "fingerprint.txt",
             "data=" + config.data_fingerprint() + "\nconfig=" + config.fingerprint() + "\n");
  out << "users " << d.catalog.num_users() << "\nitems " << d.catalog.num_items()
      << "\ninteractions " << d.catalog.total_interactions() << "\ncache " << config.cache_dir
      << '\n';
  return 0;
}

int train_command(const RunConfig& config, const fs::path& out_dir, std::ostream& out,
                  std::ostream& log) {
  const data::SplitDataset split = data::leave_one_out_split(load_dataset(config, log));
  const model::ModelConfig m = configured_model(config, split.catalog);
  const train::TrainResult result =
      train::train(m, split, config.train, [&](const train::EpochLog& e) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "epoch %zu loss %.5f val_ndcg10 %.4f (%.1fs)\n", e.epoch,
                      e.train_loss, e.val_ndcg10, e.seconds);
        log << buf << std::flush;
      });

  fs::create_directories(out_dir);
  const std::string fp = config.fingerprint();
  result.model.save(out_dir / "model.ckpt",
                    {{"fingerprint", fp},
                     {"dataset", config.dataset_name},
                     {"seed", std::to_string(config.train.seed)},
                     {"best_epoch", std::to_string(result.state.best_epoch)}});
  std::ostringstream csv;
  csv << "# fingerprint=" << fp << '\n';
  train::write_training_log(csv, result.log);
  write_text(out_dir / "train_log.csv", csv.str());
  out << "checkpoint " << (out_dir / "model.ckpt").string() << "\nbest_epoch "
      << result.state.best_epoch << "\nepochs " << result.log.size() << '\n';
  return 0;
}

int evaluate_command(const RunConfig& config, const fs::path& checkpoint, data::SplitKind which,
                     std::ostream& out, std::ostream& log) {
  const bool is_dir = fs::is_directory(checkpoint);
  const fs::path file = is_dir ? checkpoint / "model.ckpt" : checkpoint;
  if (!fs::exists(file)) throw Error("checkpoint not found: " + file.string());
  const model::TemporalRecommender net = model::TemporalRecommender::load(file);
  const data::SplitDataset split = data::leave_one_out_split(load_dataset(config, log));
  if (net.config().num_items != split.catalog.num_items()) {
    throw Error("checkpoint has " + std::to_string(net.config().num_items) +
                " items but the dataset has " + std::to_string(split.catalog.num_items()));
  }

  eval::EvalOptions options;
  options.which = which;
  options.negatives = config.negatives;
  options.ks = config.ks;
  options.seed = config.train.seed;
  options.threads = config.jobs;
  eval::MetricsReport report = eval::evaluate(net, split, options);
  report.fingerprint = config.fingerprint();
  if (report.skipped > 0) log << report.skipped << " users skipped (too few eligible negatives)\n";

  std::ostringstream csv;
  eval::write_metrics_csv(csv, report, config.dataset_name, combo_of(net.config()),
                          "seed=" + std::to_string(config.train.seed));
  const std::string name =
      std::string("metrics_") + (which == data::SplitKind::test ? "test" : "val") + ".csv";
  write_text((is_dir ? checkpoint : checkpoint.parent_path()) / name, csv.str());
  out << csv.str();
  return 0;
}

int ablate_command(const RunConfig& config, const fs::path& combos_path, std::size_t seeds,
                   const fs::path& out_path, std::ostream& out, std::ostream& log) {
  if (seeds == 0) throw Error("--seeds must be positive");
  std::ifstream in(combos_path);
  if (!in) throw Error("cannot open combos file " + combos_path.string());
  const auto combos = ablation::read_combos(in);
  if (combos.empty()) throw Error("combos file lists no combinations");

  const data::SplitDataset split = data::leave_one_out_split(load_dataset(config, log));
  ablation::GridOptions options;
  options.base = configured_model(config, split.catalog);
  options.train = config.train;
  options.jobs = config.jobs;
  options.eval_negatives = config.negatives;
  options.seeds.clear();
  for (std::size_t s = 0; s < seeds; ++s) options.seeds.push_back(config.train.seed + s);

  const ablation::GridResult grid =
      ablation::ablation_grid(combos, split, options, [&](const ablation::RunResult& r) {
        if (r.ok) {
          char buf[64];
          std::snprintf(buf, sizeof(buf), "%.4f", r.test.ndcg_at(10));
          log << "run " << r.combo << " seed=" << r.seed << " ndcg@10 " << buf << '\n';
        } else {
          log << "run " << r.combo << " seed=" << r.seed << " failed: " << r.error << '\n';
        }
        log << std::flush;
      });
  std::ostringstream csv;
  ablation::write_grid_csv(csv, grid, config.fingerprint());
  write_text(out_path, csv.str());
  out << csv.str();
  return 0;
}

model::ModelConfig micro_config(std::vector<temporal::EmbeddingKind> kinds) {
  model::ModelConfig c;
  c.hidden = 8;
  c.max_len = 8;
  c.layers = 1;
  c.heads = model::heads_from_kinds(kinds);
  c.dropout = 0.0;
  c.num_items = 20;
  c.num_days = 16;
  c.t_min = 1'000'000;
  return c;
}

std::vector<GradCheckResult> micro_gradcheck(std::uint64_t seed, const model::ModelConfig& config) {
  model::TemporalRecommender net(config, seed);
  Rng rng(derive_seed(seed, Stream::init, 1));
  std::normal_distribution<double> weight(0.0, 0.5);
  for (Parameter* p : net.parameters().list()) {
    const bool gain = p->name.ends_with(".gain");
    for (double& v : p->value.data()) v = gain ? 1.0 + 0.2 * weight(rng) : weight(rng);
    if (!p->frozen_rows.empty()) {
      const std::size_t stride = p->value.size() / p->value.dim(0);
      for (std::size_t r : p->frozen_rows) {
        std::fill_n(p->value.data().begin() + static_cast<std::ptrdiff_t>(r * stride), stride, 0.0);
      }
    }
  }

  const data::ItemIndex mask = config.num_items + 1;
  const data::Timestamp t0 = config.t_min;
  const data::Timestamp day = 86400;
  data::MaskedBatch batch;
  batch.append({{0, 0, 3, 7, mask, 12, mask, 5},
                {0, 0, t0, t0 + day, t0 + 3 * day, t0 + 3 * day + 7200, t0 + 6 * day, t0 + 9 * day},
                {-1, -1, -1, -1, 9, -1, 4, -1}});
  batch.append({{mask, 2, 2, 19, 8, mask, 20, mask},
                {t0, t0 + 600, t0 + 2 * day, t0 + 2 * day, t0 + 4 * day, t0 + 5 * day,
                 t0 + 11 * day, t0 + 12 * day},
                {11, -1, -1, -1, -1, 1, -1, 20}});

  const LossBuilder loss = [&](Tape& tape) {
    model::Context ctx;
    return net.batch_loss(tape, batch, ctx);
  };
  GradCheckOptions options;
  options.seed = seed;
  const std::vector<Parameter*> params = net.parameters().list();
  return finite_difference_check(loss, params, options);
}

int gradcheck_command(std::uint64_t seed, std::ostream& out, std::ostream& log) {
  const auto results = micro_gradcheck(seed);
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-24s %8s %14s\n", "parameter", "entries", "max_rel_error");
  out << buf;
  double worst = 0.0;
  std::vector<std::string> failed;
  for (const GradCheckResult& r : results) {
    std::snprintf(buf, sizeof(buf), "%-24s %8zu %14.3e\n", r.name.c_str(), r.checked,
                  r.max_rel_error);
    out << buf;
    worst = std::max(worst, r.max_rel_error);
    if (!(r.max_rel_error < kGradcheckThreshold)) failed.push_back(r.name);
  }
  std::snprintf(buf, sizeof(buf), "max relative error %.3e (threshold %.0e)\n", worst,
                kGradcheckThreshold);
  out << buf << std::flush;
  if (!failed.empty()) {
    std::string names;
    for (const auto& n : failed) names += (names.empty() ? "" : ", ") + n;
    log << "error: gradient check failed for " << names << '\n';
    return 1;
  }
  return 0;
}

}  // namespace seqrec::cli
