#include "run_config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace seqrec::cli {
namespace {

using nlohmann::json;

const char* const kDataKeys[] = {"dataset_path", "delimiter",    "user_column",
                                 "item_column",  "rating_column", "timestamp_column",
                                 "has_header",   "min_count",    "filter",
                                 "max_users",    "subsample_seed"};

template <typename T>
T get_as(const json& doc, const char* key) {
  try {
    return doc.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(std::string("config key \"") + key + "\" has the wrong type");
  }
}

std::size_t get_count(const json& doc, const char* key) {
  const json& v = doc.at(key);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
    throw Error(std::string("config key \"") + key + "\" must be a nonnegative integer");
  }
  return v.get<std::size_t>();
}

double get_number(const json& doc, const char* key) {
  const json& v = doc.at(key);
  if (!v.is_number()) throw Error(std::string("config key \"") + key + "\" must be a number");
  return v.get<double>();
}

}  // namespace

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

json default_config_json() {
  const RunConfig d;
  const model::ModelConfig& m = d.model;
  const train::TrainConfig& t = d.train;
  json kinds = json::array();
  for (const auto& h : m.heads) kinds.push_back(std::string(temporal::to_string(h.kind)));
  return json{
      {"dataset_path", ""},
      {"dataset_name", ""},
      {"delimiter", d.schema.delimiter},
      {"user_column", d.schema.user_column},
      {"item_column", d.schema.item_column},
      {"rating_column", *d.schema.rating_column},
      {"timestamp_column", d.schema.timestamp_column},
      {"has_header", d.schema.has_header},
      {"min_count", d.min_count},
      {"filter", "single_pass"},
      {"max_users", d.max_users},
      {"subsample_seed", d.subsample_seed},
      {"cache_dir", ""},
      {"output_dir", d.output_dir},
      {"h", m.hidden},
      {"L", m.layers},
      {"N", m.max_len},
      {"head_kinds", kinds},
      {"dropout", m.dropout},
      {"mask_prob", m.mask_prob},
      {"tau", m.tau},
      {"freq", m.freq},
      {"output_bias", m.output_bias},
      {"init_std", m.init_std},
      {"day_slack", d.day_slack},
      {"lr", t.lr},
      {"weight_decay", t.weight_decay},
      {"batch_size", t.batch_size},
      {"patience", t.patience},
      {"max_epochs", t.max_epochs},
      {"seed", t.seed},
      {"samples_per_user", t.samples_per_user},
      {"inference_window", t.inference_window},
      {"ks", d.ks},
      {"negatives", d.negatives},
      {"jobs", d.jobs},
  };
}

RunConfig config_from_json(const json& doc) {
  if (!doc.is_object()) throw Error("config must be a JSON object");
  json full = default_config_json();
  for (const auto& [key, value] : doc.items()) {
    if (!full.contains(key)) throw Error("unknown config key \"" + key + "\"");
    full[key] = value;
  }

  RunConfig c;
  c.dataset_path = get_as<std::string>(full, "dataset_path");
  if (c.dataset_path.empty()) throw Error("config is missing dataset_path");
  c.dataset_name = get_as<std::string>(full, "dataset_name");
  if (c.dataset_name.empty()) c.dataset_name = std::filesystem::path(c.dataset_path).stem().string();

  c.schema.delimiter = get_as<std::string>(full, "delimiter");
  c.schema.user_column = get_count(full, "user_column");
  c.schema.item_column = get_count(full, "item_column");
  if (full["rating_column"].is_null()) {
    c.schema.rating_column.reset();
  } else {
    c.schema.rating_column = get_count(full, "rating_column");
  }
  c.schema.timestamp_column = get_count(full, "timestamp_column");
  c.schema.has_header = get_as<bool>(full, "has_header");
  c.schema.validate();

  c.min_count = get_count(full, "min_count");
  const auto filter = get_as<std::string>(full, "filter");
  if (filter == "single_pass") {
    c.filter = data::FilterMode::single_pass;
  } else if (filter == "k_core") {
    c.filter = data::FilterMode::k_core;
  } else {
    throw Error("unknown filter \"" + filter + "\" (expected single_pass or k_core)");
  }
  c.max_users = get_count(full, "max_users");
  c.subsample_seed = get_as<std::uint64_t>(full, "subsample_seed");
  c.output_dir = get_as<std::string>(full, "output_dir");
  c.cache_dir = get_as<std::string>(full, "cache_dir");
  if (c.cache_dir.empty()) c.cache_dir = (std::filesystem::path(c.output_dir) / "cache").string();

  model::ModelConfig& m = c.model;
  m.hidden = get_count(full, "h");
  m.layers = get_count(full, "L");
  m.max_len = get_count(full, "N");
  if (!full["head_kinds"].is_array() || full["head_kinds"].empty()) {
    throw Error("head_kinds must be a nonempty list");
  }
  m.heads.clear();
  for (const json& k : full["head_kinds"]) {
    if (!k.is_string()) throw Error("head_kinds entries must be strings");
    m.heads.push_back({temporal::parse_kind(k.get<std::string>())});
  }
  if (m.hidden == 0 || m.hidden % m.heads.size() != 0) {
    throw Error("h = " + std::to_string(m.hidden) + " is not divisible by the " +
                std::to_string(m.heads.size()) + " head kinds");
  }
  if (m.layers == 0) throw Error("L must be positive");
  if (m.max_len == 0) throw Error("N must be positive");
  m.dropout = get_number(full, "dropout");
  m.mask_prob = get_number(full, "mask_prob");
  m.tau = get_number(full, "tau");
  m.freq = get_number(full, "freq");
  m.output_bias = get_as<bool>(full, "output_bias");
  m.init_std = get_number(full, "init_std");
  if (!(m.dropout >= 0.0 && m.dropout < 1.0)) throw Error("dropout must lie in [0, 1)");
  if (!(m.mask_prob > 0.0 && m.mask_prob <= 1.0)) throw Error("mask_prob must lie in (0, 1]");
  if (!(m.tau > 0.0)) throw Error("tau must be positive");
  if (!(m.freq > 0.0)) throw Error("freq must be positive");
  c.day_slack = get_count(full, "day_slack");

  train::TrainConfig& t = c.train;
  t.lr = get_number(full, "lr");
  t.weight_decay = get_number(full, "weight_decay");
  t.batch_size = get_count(full, "batch_size");
  t.patience = get_count(full, "patience");
  t.max_epochs = get_count(full, "max_epochs");
  t.seed = get_as<std::uint64_t>(full, "seed");
  t.samples_per_user = get_count(full, "samples_per_user");
  t.inference_window = get_as<bool>(full, "inference_window");
  if (!(t.lr > 0.0)) throw Error("lr must be positive");
  if (t.batch_size == 0) throw Error("batch_size must be positive");
  if (t.max_epochs == 0) throw Error("max_epochs must be positive");

  if (!full["ks"].is_array() || full["ks"].empty()) throw Error("ks must be a nonempty list");
  c.ks.clear();
  for (const json& k : full["ks"]) {
    if (!k.is_number_integer() || k.get<std::int64_t>() <= 0) throw Error("ks entries must be positive integers");
    c.ks.push_back(k.get<std::size_t>());
  }
  c.negatives = get_count(full, "negatives");
  c.jobs = get_count(full, "jobs");
  if (c.jobs == 0) throw Error("jobs must be positive");
  t.eval_negatives = c.negatives;
  t.threads = c.jobs;
  return c;
}

RunConfig parse_config(const std::filesystem::path& path) {
  return config_from_json(read_config_json(path));
}

json read_config_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return doc;
}

json RunConfig::normalized() const {
  json doc = default_config_json();
  doc["dataset_path"] = dataset_path;
  doc["dataset_name"] = dataset_name;
  doc["delimiter"] = schema.delimiter;
  doc["user_column"] = schema.user_column;
  doc["item_column"] = schema.item_column;
  doc["rating_column"] = schema.rating_column ? json(*schema.rating_column) : json(nullptr);
  doc["timestamp_column"] = schema.timestamp_column;
  doc["has_header"] = schema.has_header;
  doc["min_count"] = min_count;
  doc["filter"] = filter == data::FilterMode::k_core ? "k_core" : "single_pass";
  doc["max_users"] = max_users;
  doc["subsample_seed"] = subsample_seed;
  doc["cache_dir"] = cache_dir;
  doc["output_dir"] = output_dir;
  doc["h"] = model.hidden;
  doc["L"] = model.layers;
  doc["N"] = model.max_len;
  json kinds = json::array();
  for (const auto& h : model.heads) kinds.push_back(std::string(temporal::to_string(h.kind)));
  doc["head_kinds"] = kinds;
  doc["dropout"] = model.dropout;
  doc["mask_prob"] = model.mask_prob;
  doc["tau"] = model.tau;
  doc["freq"] = model.freq;
  doc["output_bias"] = model.output_bias;
  doc["init_std"] = model.init_std;
  doc["day_slack"] = day_slack;
  doc["lr"] = train.lr;
  doc["weight_decay"] = train.weight_decay;
  doc["batch_size"] = train.batch_size;
  doc["patience"] = train.patience;
  doc["max_epochs"] = train.max_epochs;
  doc["seed"] = train.seed;
  doc["samples_per_user"] = train.samples_per_user;
  doc["inference_window"] = train.inference_window;
  doc["ks"] = ks;
  doc["negatives"] = negatives;
  doc["jobs"] = jobs;
  return doc;
}

std::string RunConfig::fingerprint() const {
  json doc = normalized();
  doc.erase("jobs");
  return fnv1a_hex(doc.dump());
}

std::string RunConfig::data_fingerprint() const {
  const json doc = normalized();
  json part = json::object();
  for (const char* key : kDataKeys) part[key] = doc.at(key);
  return fnv1a_hex(part.dump());
}

void apply_override(json& doc, const std::string& key, const std::string& text) {
  const json defaults = default_config_json();
  if (!defaults.contains(key)) throw Error("unknown config key \"" + key + "\"");
  const json& like = defaults.at(key);
  try {
    if (key == "rating_column" && (text == "none" || text == "null")) {
      doc[key] = nullptr;
    } else if (like.is_boolean()) {
      if (text != "true" && text != "false") throw Error("expected true or false");
      doc[key] = text == "true";
    } else if (like.is_number_unsigned() || like.is_number_integer()) {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(text, &used);
      if (used != text.size() || text.front() == '-') throw Error("expected an integer");
      doc[key] = v;
    } else if (like.is_number()) {
      std::size_t used = 0;
      const double v = std::stod(text, &used);
      if (used != text.size()) throw Error("expected a number");
      doc[key] = v;
    } else if (like.is_array()) {
      json list = json::array();
      std::string part;
      std::stringstream ss(text);
      while (std::getline(ss, part, key == "head_kinds" ? '+' : ',')) {
        if (key == "head_kinds") {
          list.push_back(part);
        } else {
          list.push_back(std::stoull(part));
        }
      }
      doc[key] = list;
    } else {
      doc[key] = text;
    }
  } catch (const std::logic_error&) {
    throw Error("bad value \"" + text + "\" for --" + key);
  } catch (const Error& e) {
    throw Error("bad value \"" + text + "\" for --" + key + ": " + e.what());
  }
}

}  // namespace seqrec::cli
