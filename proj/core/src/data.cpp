#include "seqrec/data.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace seqrec::data {
namespace {

std::vector<std::string_view> split(std::string_view line, std::string_view delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + delim.size();
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\r' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

[[noreturn]] void malformed(std::size_t line_no, const std::string& why) {
  throw Error("malformed interaction at line " + std::to_string(line_no) + ": " + why);
}

void write_u64(std::ostream& out, std::uint64_t v) {
  if constexpr (std::endian::native != std::endian::little) {
    std::uint64_t swapped = 0;
    for (int i = 0; i < 8; ++i) swapped |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
    v = swapped;
  }
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw Error("truncated sequence cache");
  if constexpr (std::endian::native != std::endian::little) {
    std::uint64_t swapped = 0;
    for (int i = 0; i < 8; ++i) swapped |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
    v = swapped;
  }
  return v;
}

}  // namespace

Schema Schema::movielens() {
  Schema s;
  s.delimiter = "::";
  return s;
}

Schema Schema::csv() { return Schema{}; }

void Schema::validate() const {
  if (delimiter != "," && delimiter != "\t" && delimiter != "::") {
    throw Error("unknown delimiter '" + delimiter + "' (expected \",\", \"\\t\" or \"::\")");
  }
  std::vector<std::size_t> cols{user_column, item_column, timestamp_column};
  if (rating_column) cols.push_back(*rating_column);
  std::sort(cols.begin(), cols.end());
  if (std::adjacent_find(cols.begin(), cols.end()) != cols.end()) {
    throw Error("schema columns must be distinct");
  }
}

std::vector<RawInteraction> parse_interactions(std::istream& in, const Schema& schema) {
  schema.validate();
  std::size_t needed = std::max({schema.user_column, schema.item_column, schema.timestamp_column});
  if (schema.rating_column) needed = std::max(needed, *schema.rating_column);
  ++needed;

  std::vector<RawInteraction> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && schema.has_header) continue;
    std::string_view view = trim(line);
    if (view.empty()) continue;
    const auto fields = split(view, schema.delimiter);
    if (fields.size() < needed) {
      malformed(line_no, "expected at least " + std::to_string(needed) + " fields, got " +
                             std::to_string(fields.size()));
    }
    RawInteraction r;
    r.user = std::string(trim(fields[schema.user_column]));
    r.item = std::string(trim(fields[schema.item_column]));
    if (r.user.empty() || r.item.empty()) malformed(line_no, "empty user or item id");
    const std::string_view ts = trim(fields[schema.timestamp_column]);
    const auto [ptr, ec] = std::from_chars(ts.data(), ts.data() + ts.size(), r.timestamp);
    if (ec != std::errc{} || ptr != ts.data() + ts.size()) {
      malformed(line_no, "timestamp '" + std::string(ts) + "' is not an integer");
    }
    if (r.timestamp < 0) malformed(line_no, "negative timestamp");
    if (schema.rating_column) {
      const std::string rating(trim(fields[*schema.rating_column]));
      char* end = nullptr;
      std::strtod(rating.c_str(), &end);
      if (rating.empty() || end != rating.c_str() + rating.size()) {
        malformed(line_no, "rating '" + rating + "' is not numeric");
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<RawInteraction> ingest(const std::filesystem::path& path, const Schema& schema) {
  schema.validate();
  std::ifstream in(path);
  if (!in) throw Error("cannot open interaction log: " + path.string());
  return parse_interactions(in, schema);
}

std::uint64_t Catalog::total_interactions() const {
  return std::accumulate(popularity.begin(), popularity.end(), std::uint64_t{0});
}

SequenceData build_sequences(const std::vector<RawInteraction>& interactions,
                             std::size_t min_count, FilterMode mode) {
  if (interactions.empty()) throw Error("no interactions to build sequences from");

  std::vector<unsigned char> alive(interactions.size(), 1);
  while (true) {
    bool changed = false;
    std::unordered_map<std::string_view, std::size_t> item_counts;
    for (std::size_t i = 0; i < interactions.size(); ++i) {
      if (alive[i]) ++item_counts[interactions[i].item];
    }
    for (std::size_t i = 0; i < interactions.size(); ++i) {
      if (alive[i] && item_counts[interactions[i].item] < min_count) {
        alive[i] = 0;
        changed = true;
      }
    }
    std::unordered_map<std::string_view, std::size_t> user_counts;
    for (std::size_t i = 0; i < interactions.size(); ++i) {
      if (alive[i]) ++user_counts[interactions[i].user];
    }
    for (std::size_t i = 0; i < interactions.size(); ++i) {
      if (alive[i] && user_counts[interactions[i].user] < min_count) {
        alive[i] = 0;
        changed = true;
      }
    }
    if (mode == FilterMode::single_pass || !changed) break;
  }

  // Group by user in order of first appearance.
  std::unordered_map<std::string_view, std::size_t> user_index;
  std::vector<std::vector<std::size_t>> per_user;
  SequenceData result;
  for (std::size_t i = 0; i < interactions.size(); ++i) {
    if (!alive[i]) continue;
    auto [it, inserted] = user_index.try_emplace(interactions[i].user, per_user.size());
    if (inserted) {
      per_user.emplace_back();
      result.catalog.user_ids.push_back(interactions[i].user);
    }
    per_user[it->second].push_back(i);
  }
  if (per_user.empty()) throw Error("dataset too sparse");

  Catalog& cat = result.catalog;
  cat.item_ids.push_back("");
  cat.popularity.push_back(0);
  std::unordered_map<std::string_view, ItemIndex> item_index;
  cat.t_min = std::numeric_limits<Timestamp>::max();
  cat.t_max = std::numeric_limits<Timestamp>::min();

  result.sequences.reserve(per_user.size());
  for (std::size_t u = 0; u < per_user.size(); ++u) {
    auto& events = per_user[u];
    std::stable_sort(events.begin(), events.end(), [&](std::size_t a, std::size_t b) {
      return interactions[a].timestamp < interactions[b].timestamp;
    });
    UserSequence seq;
    seq.user = u;
    for (std::size_t i : events) {
      const RawInteraction& r = interactions[i];
      auto [it, inserted] = item_index.try_emplace(r.item, cat.item_ids.size());
      if (inserted) {
        cat.item_ids.push_back(r.item);
        cat.popularity.push_back(0);
      }
      ++cat.popularity[it->second];
      seq.items.push_back(it->second);
      seq.timestamps.push_back(r.timestamp);
      cat.t_min = std::min(cat.t_min, r.timestamp);
      cat.t_max = std::max(cat.t_max, r.timestamp);
    }
    result.sequences.push_back(std::move(seq));
  }
  return result;
}

std::vector<RawInteraction> to_interactions(const SequenceData& data) {
  std::vector<RawInteraction> out;
  for (const UserSequence& seq : data.sequences) {
    for (std::size_t i = 0; i < seq.size(); ++i) {
      out.push_back({data.catalog.user_ids[seq.user], data.catalog.item_ids[seq.items[i]],
                     seq.timestamps[i]});
    }
  }
  return out;
}

SequenceData subsample_users(const SequenceData& data, std::size_t count, std::uint64_t seed,
                             std::size_t min_count, FilterMode mode) {
  if (count >= data.sequences.size()) return data;
  std::vector<std::size_t> order(data.sequences.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(count);
  std::sort(order.begin(), order.end());
  SequenceData kept;
  kept.catalog = data.catalog;
  for (std::size_t i : order) kept.sequences.push_back(data.sequences[i]);
  return build_sequences(to_interactions(kept), min_count, mode);
}

UserSequence SplitDataset::history(const UserSplit& u, SplitKind which) const {
  UserSequence h = u.train;
  if (which == SplitKind::test) {
    h.items.push_back(u.val_item);
    h.timestamps.push_back(u.val_time);
  }
  return h;
}

ItemIndex SplitDataset::target(const UserSplit& u, SplitKind which) {
  return which == SplitKind::test ? u.test_item : u.val_item;
}

Timestamp SplitDataset::target_time(const UserSplit& u, SplitKind which) {
  return which == SplitKind::test ? u.test_time : u.val_time;
}

std::vector<ItemIndex> SplitDataset::all_items(const UserSplit& u) {
  std::vector<ItemIndex> items = u.train.items;
  items.push_back(u.val_item);
  items.push_back(u.test_item);
  std::sort(items.begin(), items.end());
  items.erase(std::unique(items.begin(), items.end()), items.end());
  return items;
}

UserSequence SplitDataset::reassemble(const UserSplit& u) const {
  UserSequence seq = history(u, SplitKind::test);
  seq.items.push_back(u.test_item);
  seq.timestamps.push_back(u.test_time);
  return seq;
}

SplitDataset leave_one_out_split(const SequenceData& data) {
  SplitDataset split;
  split.catalog = data.catalog;
  split.users.reserve(data.sequences.size());
  for (const UserSequence& seq : data.sequences) {
    const std::size_t n = seq.size();
    if (n < 3) {
      throw Error("user " + std::to_string(seq.user) + " has " + std::to_string(n) +
                  " interactions; leave-one-out needs at least 3");
    }
    UserSplit u;
    u.user = seq.user;
    u.train.user = seq.user;
    u.train.items.assign(seq.items.begin(), seq.items.end() - 2);
    u.train.timestamps.assign(seq.timestamps.begin(), seq.timestamps.end() - 2);
    u.val_item = seq.items[n - 2];
    u.val_time = seq.timestamps[n - 2];
    u.test_item = seq.items[n - 1];
    u.test_time = seq.timestamps[n - 1];
    split.users.push_back(std::move(u));
  }
  return split;
}

Window window_ending_at(const UserSequence& seq, std::size_t end, std::size_t length) {
  if (length == 0) throw Error("window length must be at least 1");
  if (end == 0 || end > seq.size()) throw Error("window end out of range");
  Window w;
  w.items.assign(length, kPadToken);
  w.timestamps.assign(length, 0);
  const std::size_t take = std::min(length, end);
  const std::size_t start = end - take;
  for (std::size_t i = 0; i < take; ++i) {
    w.items[length - take + i] = seq.items[start + i];
    w.timestamps[length - take + i] = seq.timestamps[start + i];
  }
  return w;
}

Window sample_training_window(const UserSequence& seq, std::size_t length, Rng& rng) {
  if (length == 0) throw Error("window length must be at least 1");
  if (seq.size() == 0) throw Error("cannot sample a window from an empty train region");
  std::uniform_int_distribution<std::size_t> end(1, seq.size());
  return window_ending_at(seq, end(rng), length);
}

std::size_t MaskedRow::masked_count() const {
  return static_cast<std::size_t>(
      std::count_if(labels.begin(), labels.end(), [](std::int64_t l) { return l != kIgnoreLabel; }));
}

MaskedRow apply_cloze_mask(const Window& window, double mask_prob, ItemIndex mask_token, Rng& rng) {
  if (!(mask_prob > 0.0 && mask_prob <= 1.0)) throw Error("mask probability must lie in (0, 1]");
  MaskedRow row{window.items, window.timestamps,
                std::vector<std::int64_t>(window.size(), kIgnoreLabel)};
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::size_t> candidates;
  bool any = false;
  for (std::size_t i = 0; i < window.size(); ++i) {
    if (window.is_pad(i)) continue;
    candidates.push_back(i);
    if (unit(rng) < mask_prob) {
      row.labels[i] = static_cast<std::int64_t>(window.items[i]);
      row.items[i] = mask_token;
      any = true;
    }
  }
  if (!any && !candidates.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    const std::size_t i = candidates[pick(rng)];
    row.labels[i] = static_cast<std::int64_t>(window.items[i]);
    row.items[i] = mask_token;
  }
  return row;
}

Window build_eval_instance(std::span<const ItemIndex> items, std::span<const Timestamp> timestamps,
                           Timestamp t_next, std::size_t length, ItemIndex mask_token) {
  if (items.empty()) throw Error("evaluation history is empty");
  if (items.size() != timestamps.size()) throw Error("history items/timestamps length mismatch");
  if (length == 0) throw Error("window length must be at least 1");
  Window w;
  w.items.assign(length, kPadToken);
  w.timestamps.assign(length, 0);
  const std::size_t take = std::min(length - 1, items.size());
  const std::size_t start = items.size() - take;
  const std::size_t offset = length - 1 - take;
  for (std::size_t i = 0; i < take; ++i) {
    w.items[offset + i] = items[start + i];
    w.timestamps[offset + i] = timestamps[start + i];
  }
  w.items[length - 1] = mask_token;
  w.timestamps[length - 1] = t_next;
  return w;
}

std::optional<MaskedRow> inference_style_row(const UserSequence& train, std::size_t length,
                                             ItemIndex mask_token) {
  const std::size_t n = train.size();
  if (n < 2) return std::nullopt;
  Window w = build_eval_instance(std::span(train.items).first(n - 1),
                                 std::span(train.timestamps).first(n - 1), train.timestamps[n - 1],
                                 length, mask_token);
  MaskedRow row{w.items, w.timestamps, std::vector<std::int64_t>(length, kIgnoreLabel)};
  row.labels[length - 1] = static_cast<std::int64_t>(train.items[n - 1]);
  return row;
}

void MaskedBatch::append(const MaskedRow& row) {
  if (batch == 0) {
    length = row.items.size();
  } else if (row.items.size() != length) {
    throw Error("masked batch rows must share one length");
  }
  items.insert(items.end(), row.items.begin(), row.items.end());
  timestamps.insert(timestamps.end(), row.timestamps.begin(), row.timestamps.end());
  labels.insert(labels.end(), row.labels.begin(), row.labels.end());
  for (ItemIndex v : row.items) pad.push_back(v == kPadToken ? 1 : 0);
  ++batch;
}

MaskedRow MaskedBatch::row(std::size_t b) const {
  const auto first = static_cast<std::ptrdiff_t>(b * length);
  const auto last = first + static_cast<std::ptrdiff_t>(length);
  return MaskedRow{{items.begin() + first, items.begin() + last},
                   {timestamps.begin() + first, timestamps.begin() + last},
                   {labels.begin() + first, labels.begin() + last}};
}

std::size_t MaskedBatch::masked_count() const {
  return static_cast<std::size_t>(
      std::count_if(labels.begin(), labels.end(), [](std::int64_t l) { return l != kIgnoreLabel; }));
}

std::vector<ItemIndex> sample_negatives(std::span<const ItemIndex> user_items,
                                        const Catalog& catalog, std::size_t k, Rng& rng) {
  // Efraimidis-Spirakis: the k largest keys log(u)/w are a weighted sample
  // without replacement.
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::pair<double, ItemIndex>> keyed;
  keyed.reserve(catalog.num_items());
  for (ItemIndex item = 1; item <= catalog.num_items(); ++item) {
    if (std::binary_search(user_items.begin(), user_items.end(), item)) continue;
    const double w = static_cast<double>(catalog.popularity[item]);
    if (w <= 0.0) continue;
    const double u = 1.0 - unit(rng);  // (0, 1]
    keyed.emplace_back(std::log(u) / w, item);
  }
  if (keyed.size() < k) {
    throw Error("only " + std::to_string(keyed.size()) + " eligible negatives, " +
                std::to_string(k) + " requested");
  }
  std::partial_sort(keyed.begin(), keyed.begin() + static_cast<std::ptrdiff_t>(k), keyed.end(),
                    [](const auto& a, const auto& b) {
                      return a.first > b.first || (a.first == b.first && a.second < b.second);
                    });
  std::vector<ItemIndex> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(keyed[i].second);
  return out;
}

void write_cache(const std::filesystem::path& dir, const SequenceData& data) {
  std::filesystem::create_directories(dir);
  const Catalog& cat = data.catalog;
  {
    std::ofstream out(dir / "catalog.txt");
    if (!out) throw Error("cannot write " + (dir / "catalog.txt").string());
    out << "seqrec-catalog\t1\n";
    out << "t_min\t" << cat.t_min << '\n';
    out << "t_max\t" << cat.t_max << '\n';
    out << "items\t" << cat.num_items() << '\n';
    for (std::size_t i = 1; i <= cat.num_items(); ++i) {
      out << "item\t" << i << '\t' << cat.item_ids[i] << '\t' << cat.popularity[i] << '\n';
    }
    out << "users\t" << cat.num_users() << '\n';
    for (std::size_t u = 0; u < cat.num_users(); ++u) {
      out << "user\t" << u << '\t' << cat.user_ids[u] << '\n';
    }
  }
  std::ofstream bin(dir / "sequences.bin", std::ios::binary);
  if (!bin) throw Error("cannot write " + (dir / "sequences.bin").string());
  write_u64(bin, data.sequences.size());
  for (const UserSequence& seq : data.sequences) {
    write_u64(bin, seq.user);
    write_u64(bin, seq.size());
    for (ItemIndex v : seq.items) write_u64(bin, v);
    for (Timestamp t : seq.timestamps) write_u64(bin, static_cast<std::uint64_t>(t));
  }
  if (!bin) throw Error("failed writing sequence cache");
}

SequenceData read_cache(const std::filesystem::path& dir) {
  SequenceData data;
  Catalog& cat = data.catalog;
  std::ifstream in(dir / "catalog.txt");
  if (!in) throw Error("cannot open " + (dir / "catalog.txt").string());
  std::string line;
  auto fields_of = [](const std::string& l) {
    std::vector<std::string> f;
    std::stringstream ss(l);
    std::string part;
    while (std::getline(ss, part, '\t')) f.push_back(part);
    return f;
  };
  if (!std::getline(in, line) || line != "seqrec-catalog\t1") throw Error("not a seqrec catalog");
  cat.item_ids.push_back("");
  cat.popularity.push_back(0);
  while (std::getline(in, line)) {
    const auto f = fields_of(line);
    if (f.empty()) continue;
    if (f[0] == "t_min" && f.size() == 2) {
      cat.t_min = std::stoll(f[1]);
    } else if (f[0] == "t_max" && f.size() == 2) {
      cat.t_max = std::stoll(f[1]);
    } else if (f[0] == "item" && f.size() == 4) {
      if (std::stoull(f[1]) != cat.item_ids.size()) throw Error("catalog items out of order");
      cat.item_ids.push_back(f[2]);
      cat.popularity.push_back(std::stoull(f[3]));
    } else if (f[0] == "user" && f.size() == 3) {
      if (std::stoull(f[1]) != cat.user_ids.size()) throw Error("catalog users out of order");
      cat.user_ids.push_back(f[2]);
    } else if (f[0] != "items" && f[0] != "users") {
      throw Error("unrecognized catalog line: " + line);
    }
  }
  std::ifstream bin(dir / "sequences.bin", std::ios::binary);
  if (!bin) throw Error("cannot open " + (dir / "sequences.bin").string());
  const std::uint64_t users = read_u64(bin);
  data.sequences.resize(users);
  for (UserSequence& seq : data.sequences) {
    seq.user = read_u64(bin);
    const std::uint64_t n = read_u64(bin);
    seq.items.resize(n);
    seq.timestamps.resize(n);
    for (auto& v : seq.items) {
      v = read_u64(bin);
      if (v == 0 || v > cat.num_items()) throw Error("sequence cache item index out of range");
    }
    for (auto& t : seq.timestamps) t = static_cast<Timestamp>(read_u64(bin));
  }
  return data;
}

}  // namespace seqrec::data
