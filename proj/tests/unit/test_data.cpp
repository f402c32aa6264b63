#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "seqrec/data.hpp"
#include "seqrec/metrics.hpp"
#include "test_util.hpp"

using namespace seqrec;
using namespace seqrec::data;

namespace {

std::vector<RawInteraction> parse(const std::string& text, const Schema& schema) {
  std::istringstream in(text);
  return parse_interactions(in, schema);
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("seqrec_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

UserSequence seq_of(std::vector<ItemIndex> items) {
  UserSequence s;
  for (std::size_t i = 0; i < items.size(); ++i) s.timestamps.push_back(100 * (i + 1));
  s.items = std::move(items);
  return s;
}

}  // namespace

TEST(Ingest, CsvLine) {
  const auto r = parse("u1,i9,4.0,100\n", Schema::csv());
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0], (RawInteraction{"u1", "i9", 100}));
}

TEST(Ingest, MovieLensLine) {
  const auto r = parse("1::1193::5::978300760\n", Schema::movielens());
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0], (RawInteraction{"1", "1193", 978300760}));
}

TEST(Ingest, RatingValueIsDiscarded) {
  const auto a = parse("7::42::5::1000\n", Schema::movielens());
  const auto b = parse("7::42::1::1000\n", Schema::movielens());
  EXPECT_EQ(a, b);
}

TEST(Ingest, TabsHeaderAndColumnOrder) {
  Schema s;
  s.delimiter = "\t";
  s.has_header = true;
  s.timestamp_column = 0;
  s.item_column = 1;
  s.user_column = 2;
  s.rating_column.reset();
  const auto r = parse("time\titem\tuser\n55\tb\ta\n", s);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0], (RawInteraction{"a", "b", 55}));
}

TEST(Ingest, MalformedLineReportsLineNumber) {
  try {
    parse("u1,i1,3,10\nu2,i2,3,notatime\n", Schema::csv());
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse("u1,i1,3\n", Schema::csv()), Error);
  EXPECT_THROW(parse("u1,i1,3,-4\n", Schema::csv()), Error);
  EXPECT_THROW(parse("u1,i1,x,4\n", Schema::csv()), Error);
}

TEST(Ingest, UnknownDelimiterIsAnError) {
  Schema s;
  s.delimiter = ";";
  EXPECT_THROW(parse("a;b;1;2\n", s), Error);
}

TEST(Ingest, ReadsFile) {
  const auto dir = temp_dir("ingest");
  std::ofstream(dir / "r.dat") << "1::10::3::5\n2::11::4::6\n";
  EXPECT_EQ(ingest(dir / "r.dat", Schema::movielens()).size(), 2u);
  EXPECT_THROW(ingest(dir / "missing.dat", Schema::movielens()), Error);
}

TEST(BuildSequences, ShortUserRemoved) {
  std::vector<RawInteraction> log;
  for (int i = 0; i < 5; ++i) {
    for (const char* u : {"a", "b", "c", "d", "e"}) log.push_back({u, "i" + std::to_string(i), i});
  }
  for (int i = 0; i < 4; ++i) log.push_back({"short", "i" + std::to_string(i), 10 + i});
  const SequenceData d = build_sequences(log);
  EXPECT_EQ(d.catalog.num_users(), 5u);
  for (const auto& id : d.catalog.user_ids) EXPECT_NE(id, "short");
}

TEST(BuildSequences, KnownCountsSinglePass) {
  // 6 users x 5 common items; item "rare" seen 4 times; user "f" has 5
  // events only because of "rare", so it drops after the item filter.
  std::vector<RawInteraction> log;
  for (const char* u : {"a", "b", "c", "d", "e"}) {
    for (int i = 0; i < 5; ++i) log.push_back({u, "i" + std::to_string(i), 100 + i});
  }
  for (int i = 0; i < 4; ++i) log.push_back({"a", "rare", 200 + i});
  for (int i = 0; i < 4; ++i) log.push_back({"f", "i" + std::to_string(i), 300 + i});
  const SequenceData d = build_sequences(log);
  EXPECT_EQ(d.catalog.num_users(), 5u);
  EXPECT_EQ(d.catalog.num_items(), 5u);
  EXPECT_EQ(d.catalog.total_interactions(), 25u);
  for (std::size_t i = 1; i <= 5; ++i) EXPECT_EQ(d.catalog.popularity[i], 5u);
  EXPECT_EQ(d.catalog.mask_token(), 6u);
  EXPECT_EQ(d.catalog.pad_token(), 0u);
}

TEST(BuildSequences, SortsByTimeWithStableTies) {
  std::vector<RawInteraction> log;
  for (const char* u : {"a", "b", "c", "d", "e"}) {
    log.push_back({u, "x", 50});
    log.push_back({u, "w", 10});
    log.push_back({u, "y", 50});
    log.push_back({u, "z", 20});
    log.push_back({u, "v", 30});
  }
  const SequenceData d = build_sequences(log);
  for (const UserSequence& s : d.sequences) {
    std::vector<std::string> order;
    for (ItemIndex v : s.items) order.push_back(d.catalog.item_ids[v]);
    EXPECT_EQ(order, (std::vector<std::string>{"w", "z", "v", "x", "y"}));
    EXPECT_TRUE(std::is_sorted(s.timestamps.begin(), s.timestamps.end()));
  }
}

TEST(BuildSequences, TooSparseIsAnError) {
  std::vector<RawInteraction> log{{"a", "x", 1}, {"a", "y", 2}};
  try {
    build_sequences(log);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("dataset too sparse"), std::string::npos);
  }
}

TEST(BuildSequences, KCoreIsIdempotent) {
  const auto log = seqrec::testing::random_log(60, 80, 9, 21);
  const SequenceData once = build_sequences(log, 5, FilterMode::k_core);
  const SequenceData twice = build_sequences(to_interactions(once), 5, FilterMode::k_core);
  EXPECT_EQ(once.sequences, twice.sequences);
  EXPECT_EQ(once.catalog.item_ids, twice.catalog.item_ids);
  EXPECT_EQ(once.catalog.popularity, twice.catalog.popularity);
  for (const auto& s : once.sequences) EXPECT_GE(s.size(), 5u);
  for (std::size_t i = 1; i <= once.catalog.num_items(); ++i) {
    EXPECT_GE(once.catalog.popularity[i], 5u);
  }
}

TEST(BuildSequences, SinglePassIdempotentWithoutCascade) {
  const auto log = seqrec::testing::cyclic_log(12, 10, 8);
  const SequenceData once = build_sequences(log);
  const SequenceData twice = build_sequences(to_interactions(once));
  EXPECT_EQ(once.sequences, twice.sequences);
  EXPECT_EQ(once.catalog.item_ids, twice.catalog.item_ids);
}

TEST(BuildSequences, SinglePassCanCascade) {
  // "x" is rare, so user "a" keeps only "p" and is dropped; "p" then has
  // four events left, which only the k-core mode notices.
  std::vector<RawInteraction> log;
  for (int k = 0; k < 4; ++k) log.push_back({"a", "x", k});
  log.push_back({"a", "p", 9});
  for (int u = 0; u < 6; ++u) {
    const std::string user = "b" + std::to_string(u);
    for (int k = 0; k < 5; ++k) log.push_back({user, "q" + std::to_string(k), 20 + k});
    if (u < 4) log.push_back({user, "p", 30});
  }
  const SequenceData once = build_sequences(log);
  const SequenceData core = build_sequences(log, 5, FilterMode::k_core);
  EXPECT_EQ(once.catalog.total_interactions(), 34u);
  EXPECT_EQ(core.catalog.total_interactions(), 30u);
  EXPECT_EQ(once.catalog.num_items(), 6u);
  EXPECT_EQ(core.catalog.num_items(), 5u);
}

TEST(Split, LeaveOneOut) {
  SequenceData d;
  d.catalog.item_ids = {"", "a", "b", "c", "d", "e"};
  d.catalog.popularity = {0, 1, 1, 1, 1, 1};
  d.catalog.user_ids = {"u"};
  d.sequences.push_back(seq_of({1, 2, 3, 4, 5}));
  const SplitDataset s = leave_one_out_split(d);
  ASSERT_EQ(s.users.size(), 1u);
  const UserSplit& u = s.users[0];
  EXPECT_EQ(u.train.items, (std::vector<ItemIndex>{1, 2, 3}));
  EXPECT_EQ(u.val_item, 4u);
  EXPECT_EQ(u.val_time, 400);
  EXPECT_EQ(u.test_item, 5u);
  EXPECT_EQ(u.test_time, 500);
  EXPECT_EQ(s.history(u, SplitKind::validation).items, (std::vector<ItemIndex>{1, 2, 3}));
  EXPECT_EQ(s.history(u, SplitKind::test).items, (std::vector<ItemIndex>{1, 2, 3, 4}));
  EXPECT_EQ(s.reassemble(u), d.sequences[0]);
}

TEST(Split, TooShortIsAnError) {
  SequenceData d;
  d.sequences.push_back(seq_of({1, 2}));
  EXPECT_THROW(leave_one_out_split(d), Error);
}

TEST(Split, RoundTripOnFilteredData) {
  const SequenceData d = build_sequences(seqrec::testing::random_log(40, 30, 12, 5));
  const SplitDataset s = leave_one_out_split(d);
  ASSERT_EQ(s.users.size(), d.sequences.size());
  for (std::size_t i = 0; i < s.users.size(); ++i) {
    EXPECT_EQ(s.reassemble(s.users[i]), d.sequences[i]);
    EXPECT_GE(s.users[i].train.size(), 3u);
    for (ItemIndex v : d.sequences[i].items) EXPECT_NE(v, d.catalog.mask_token());
  }
}

TEST(Window, ShortTrainIsLeftPadded) {
  const UserSequence s = seq_of({7, 8});
  const Window w = window_ending_at(s, 2, 4);
  EXPECT_EQ(w.items, (std::vector<ItemIndex>{0, 0, 7, 8}));
  EXPECT_EQ(w.timestamps, (std::vector<Timestamp>{0, 0, 100, 200}));
  std::set<std::vector<ItemIndex>> seen;
  Rng rng(1);
  for (int i = 0; i < 200; ++i) seen.insert(sample_training_window(s, 4, rng).items);
  const std::set<std::vector<ItemIndex>> expected{{0, 0, 0, 7}, {0, 0, 7, 8}};
  EXPECT_EQ(seen, expected);
}

TEST(Window, EnumeratesContiguousSubarrays) {
  const UserSequence s = seq_of({1, 2, 3, 4});
  std::map<std::vector<ItemIndex>, int> counts;
  Rng rng(2);
  const int draws = 40000;
  for (int i = 0; i < draws; ++i) ++counts[sample_training_window(s, 3, rng).items];
  const std::set<std::vector<ItemIndex>> expected{{0, 0, 1}, {0, 1, 2}, {1, 2, 3}, {2, 3, 4}};
  std::set<std::vector<ItemIndex>> got;
  for (const auto& [w, c] : counts) {
    got.insert(w);
    EXPECT_NEAR(static_cast<double>(c) / draws, 0.25, 0.02);
  }
  EXPECT_EQ(got, expected);
}

TEST(Window, EmptyTrainIsAnError) {
  Rng rng(0);
  EXPECT_THROW(sample_training_window(UserSequence{}, 4, rng), Error);
}

TEST(Cloze, ProbabilityOneMasksEverything) {
  const Window w = window_ending_at(seq_of({3, 4, 5}), 3, 5);
  Rng rng(3);
  const MaskedRow r = apply_cloze_mask(w, 1.0, 99, rng);
  EXPECT_EQ(r.items, (std::vector<ItemIndex>{0, 0, 99, 99, 99}));
  EXPECT_EQ(r.labels, (std::vector<std::int64_t>{-1, -1, 3, 4, 5}));
}

TEST(Cloze, ForcedSingleMask) {
  const Window w = window_ending_at(seq_of({3, 4, 5, 6}), 4, 6);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const MaskedRow r = apply_cloze_mask(w, 1e-12, 99, rng);
    ASSERT_EQ(r.masked_count(), 1u);
    for (std::size_t i = 0; i < r.items.size(); ++i) {
      if (r.items[i] == 99) {
        EXPECT_EQ(r.labels[i], static_cast<std::int64_t>(w.items[i]));
        EXPECT_FALSE(w.is_pad(i));
      } else {
        EXPECT_EQ(r.labels[i], kIgnoreLabel);
      }
    }
  }
}

TEST(Cloze, LabelsIffMaskedAndPadsUntouched) {
  Rng rng(4);
  const UserSequence s = seq_of({1, 2, 3, 4, 5, 6, 7, 8, 9});
  for (int trial = 0; trial < 500; ++trial) {
    const Window w = sample_training_window(s, 6, rng);
    const MaskedRow r = apply_cloze_mask(w, 0.3, 50, rng);
    EXPECT_GE(r.masked_count(), 1u);
    for (std::size_t i = 0; i < r.items.size(); ++i) {
      EXPECT_EQ(r.labels[i] != kIgnoreLabel, r.items[i] == 50);
      if (w.is_pad(i)) {
        EXPECT_EQ(r.items[i], kPadToken);
        EXPECT_EQ(r.labels[i], kIgnoreLabel);
      }
    }
  }
  EXPECT_THROW(apply_cloze_mask(window_ending_at(s, 3, 3), 0.0, 50, rng), Error);
}

TEST(EvalInstance, Examples) {
  const ItemIndex items[] = {11, 12};
  const Timestamp ts[] = {5, 6};
  const Window w = build_eval_instance(items, ts, 9, 4, 99);
  EXPECT_EQ(w.items, (std::vector<ItemIndex>{0, 11, 12, 99}));
  EXPECT_EQ(w.timestamps, (std::vector<Timestamp>{0, 5, 6, 9}));

  const ItemIndex many[] = {1, 2, 3, 4, 5, 6};
  const Timestamp mts[] = {1, 2, 3, 4, 5, 6};
  const Window m = build_eval_instance(many, mts, 7, 4, 99);
  EXPECT_EQ(m.items, (std::vector<ItemIndex>{4, 5, 6, 99}));
  EXPECT_EQ(m.timestamps.back(), 7);
}

TEST(EvalInstance, InferenceStyleRow) {
  const auto row = inference_style_row(seq_of({4, 5, 6}), 5, 99);
  ASSERT_TRUE(row.has_value());
  EXPECT_EQ(row->items, (std::vector<ItemIndex>{0, 0, 4, 5, 99}));
  EXPECT_EQ(row->timestamps.back(), 300);
  EXPECT_EQ(row->labels, (std::vector<std::int64_t>{-1, -1, -1, -1, 6}));
  EXPECT_FALSE(inference_style_row(seq_of({4}), 5, 99).has_value());
}

TEST(Negatives, NeverTouchUserItemsOrDuplicate) {
  const SequenceData d = build_sequences(seqrec::testing::random_log(80, 150, 14, 9));
  const SplitDataset s = leave_one_out_split(d);
  Rng rng(5);
  for (const UserSplit& u : s.users) {
    const auto mine = SplitDataset::all_items(u);
    const std::size_t k = std::min<std::size_t>(20, d.catalog.num_items() - mine.size());
    const auto neg = sample_negatives(mine, d.catalog, k, rng);
    ASSERT_EQ(neg.size(), k);
    std::set<ItemIndex> unique(neg.begin(), neg.end());
    EXPECT_EQ(unique.size(), neg.size());
    for (ItemIndex v : neg) {
      EXPECT_FALSE(std::binary_search(mine.begin(), mine.end(), v));
      EXPECT_GE(v, 1u);
      EXPECT_LE(v, d.catalog.num_items());
    }
  }
}

TEST(Negatives, TooFewEligibleIsAnError) {
  Catalog c;
  c.item_ids = {"", "a", "b", "c"};
  c.popularity = {0, 1, 2, 7};
  const ItemIndex mine[] = {1, 2};
  Rng rng(0);
  EXPECT_THROW(sample_negatives(mine, c, 2, rng), Error);
  EXPECT_EQ(sample_negatives(mine, c, 1, rng), (std::vector<ItemIndex>{3}));
}

TEST(Negatives, PopularityProportionalChiSquare) {
  Catalog c;
  c.item_ids = {"", "a", "b", "c"};
  c.popularity = {0, 1, 2, 7};
  Rng rng(2024);
  const int draws = 100000;
  double counts[3] = {0, 0, 0};
  for (int i = 0; i < draws; ++i) counts[sample_negatives({}, c, 1, rng)[0] - 1] += 1;
  const double expected[3] = {0.1 * draws, 0.2 * draws, 0.7 * draws};
  double chi2 = 0.0;
  for (int i = 0; i < 3; ++i) chi2 += (counts[i] - expected[i]) * (counts[i] - expected[i]) / expected[i];
  // Two degrees of freedom: the upper tail is exp(-x/2).
  EXPECT_GT(std::exp(-chi2 / 2.0), 0.01) << chi2;
}

TEST(Negatives, DefaultCountIsOneHundred) {
  EXPECT_EQ(seqrec::eval::EvalOptions{}.negatives, 100u);
}

TEST(Batch, AppendAndRow) {
  MaskedBatch b;
  b.append({{0, 5, 9}, {0, 1, 2}, {-1, -1, 4}});
  b.append({{9, 6, 7}, {1, 2, 3}, {3, -1, -1}});
  EXPECT_EQ(b.batch, 2u);
  EXPECT_EQ(b.masked_count(), 2u);
  EXPECT_EQ(b.pad, (std::vector<unsigned char>{1, 0, 0, 0, 0, 0}));
  EXPECT_EQ(b.row(1).items, (std::vector<ItemIndex>{9, 6, 7}));
  EXPECT_THROW(b.append({{1}, {1}, {-1}}), Error);
}

TEST(Cache, RoundTrip) {
  const SequenceData d = build_sequences(seqrec::testing::random_log(30, 40, 10, 77));
  const auto dir = temp_dir("cache");
  write_cache(dir, d);
  const SequenceData back = read_cache(dir);
  EXPECT_EQ(back.sequences, d.sequences);
  EXPECT_EQ(back.catalog.item_ids, d.catalog.item_ids);
  EXPECT_EQ(back.catalog.user_ids, d.catalog.user_ids);
  EXPECT_EQ(back.catalog.popularity, d.catalog.popularity);
  EXPECT_EQ(back.catalog.t_min, d.catalog.t_min);
  EXPECT_EQ(back.catalog.t_max, d.catalog.t_max);
  EXPECT_EQ(std::filesystem::file_size(dir / "sequences.bin") % 8, 0u);
}

TEST(Subsample, KeepsRequestedUsersAndRefilters) {
  const SequenceData d = build_sequences(seqrec::testing::random_log(100, 60, 12, 3));
  const SequenceData s = subsample_users(d, 25, 9);
  EXPECT_LE(s.catalog.num_users(), 25u);
  EXPECT_GT(s.catalog.num_users(), 0u);
  EXPECT_EQ(subsample_users(d, 25, 9).sequences, s.sequences);
  for (const auto& seq : s.sequences) EXPECT_GE(seq.size(), 5u);
}
