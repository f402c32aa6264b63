#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "run_config.hpp"
#include "seqrec/gradcheck.hpp"
#include "seqrec/temporal.hpp"

namespace seqrec::cli {

/// Reads the preprocessed cache when it matches the config, otherwise
/// rebuilds the dataset from the raw log in memory.
data::SequenceData load_dataset(const RunConfig& config, std::ostream& log);

/// Raw log -> filtered sequences -> optional user subsample.
data::SequenceData build_dataset(const RunConfig& config);

int preprocess_command(const RunConfig& config, std::ostream& out, std::ostream& log);
int train_command(const RunConfig& config, const std::filesystem::path& out_dir, std::ostream& out,
                  std::ostream& log);
int evaluate_command(const RunConfig& config, const std::filesystem::path& checkpoint,
                     data::SplitKind which, std::ostream& out, std::ostream& log);
int ablate_command(const RunConfig& config, const std::filesystem::path& combos_path,
                   std::size_t seeds, const std::filesystem::path& out_path, std::ostream& out,
                   std::ostream& log);

/// The small model used by the gradient check: N=8, h=8, |V|=20, L=1.
model::ModelConfig micro_config(std::vector<temporal::EmbeddingKind> kinds = {
                                    temporal::EmbeddingKind::pos, temporal::EmbeddingKind::sin});

/// Finite-difference check of every parameter of a micro model on a fixed
/// two-row masked batch. Weights are redrawn at a larger scale than the
/// training init so that every gradient entry is well above rounding noise.
std::vector<GradCheckResult> micro_gradcheck(std::uint64_t seed,
                                             const model::ModelConfig& config = micro_config());

inline constexpr double kGradcheckThreshold = 1e-3;

int gradcheck_command(std::uint64_t seed, std::ostream& out, std::ostream& log);

}  // namespace seqrec::cli
