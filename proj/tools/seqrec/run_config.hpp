#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seqrec/data.hpp"
#include "seqrec/model.hpp"
#include "seqrec/trainer.hpp"

namespace seqrec::cli {

/// Everything one command needs, parsed from a flat JSON document.
struct RunConfig {
  std::string dataset_path;
  std::string dataset_name;
  data::Schema schema;
  std::size_t min_count = 5;
  data::FilterMode filter = data::FilterMode::single_pass;
  std::size_t max_users = 0;  // 0 keeps every user
  std::uint64_t subsample_seed = 0;
  std::string cache_dir;
  std::string output_dir = "runs";

  model::ModelConfig model;
  std::size_t day_slack = 30;
  train::TrainConfig train;

  std::vector<std::size_t> ks{5, 10};
  std::size_t negatives = 100;
  std::size_t jobs = 1;

  /// The config with every default filled in, keys sorted.
  nlohmann::json normalized() const;
  /// FNV-1a over the normalized config, excluding settings that cannot change
  /// results (jobs). 16 hex digits.
  std::string fingerprint() const;
  /// Same, restricted to the keys that shape the preprocessed dataset.
  std::string data_fingerprint() const;
};

/// Defaults for every recognized key.
nlohmann::json default_config_json();

/// Validates and converts; unknown keys and bad values throw `Error`.
RunConfig config_from_json(const nlohmann::json& doc);
RunConfig parse_config(const std::filesystem::path& path);
nlohmann::json read_config_json(const std::filesystem::path& path);

/// Sets one key from command-line text, typed after the key's default.
void apply_override(nlohmann::json& doc, const std::string& key, const std::string& text);

std::string fnv1a_hex(const std::string& text);

}  // namespace seqrec::cli
