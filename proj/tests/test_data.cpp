#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "seqrec/data.hpp"

using namespace seqrec;

namespace {

const std::string kFixtures = SEQREC_FIXTURE_DIR;

std::string temp_file(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

InteractionLog toy_log(
    const std::vector<std::tuple<std::string, std::string, std::int64_t>>&
        rows) {
  InteractionLog log;
  for (const auto& [u, i, t] : rows)
    log.records.push_back({u, i, t, log.records.size()});
  return log;
}

}  // namespace

TEST_CASE("parse_ml1m reads the documented line format") {
  const std::string path = temp_file("seqrec_ml1m_line.dat");
  {
    std::ofstream os(path);
    os << "1::1193::5::978300760\n";
  }
  InteractionLog log = parse_ml1m(path);
  REQUIRE(log.records.size() == 1);
  REQUIRE(log.records[0].user == "1");
  REQUIRE(log.records[0].item == "1193");
  REQUIRE(log.records[0].ts == 978300760);
  std::filesystem::remove(path);
}

TEST_CASE("parse_ml1m on an empty file yields an empty log") {
  const std::string path = temp_file("seqrec_ml1m_empty.dat");
  { std::ofstream os(path); }
  InteractionLog log = parse_ml1m(path);
  REQUIRE(log.records.empty());
  REQUIRE(log.skipped == 0);
  std::filesystem::remove(path);
}

TEST_CASE("parse_ml1m flags malformed lines with their number") {
  const std::string path = temp_file("seqrec_ml1m_bad.dat");
  {
    std::ofstream os(path);
    os << "1::2::3::4\nnot a line\n5::6::7::8\n";
  }
  REQUIRE_THROWS_MATCHES(parse_ml1m(path), data_error,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring(":2:")));
  InteractionLog lenient = parse_ml1m(path, /*skip_malformed=*/true);
  REQUIRE(lenient.records.size() == 2);
  REQUIRE(lenient.skipped == 1);
  std::filesystem::remove(path);
}

TEST_CASE("bundled ml1m fixture parses with the expected counts") {
  InteractionLog log = parse_ml1m(kFixtures + "/ml1m_sample.dat");
  REQUIRE(log.records.size() == 50);
  std::set<std::string> users;
  for (const auto& r : log.records) users.insert(r.user);
  REQUIRE(users.size() == 5);
}

TEST_CASE("bundled foursquare fixture parses with the expected counts") {
  InteractionLog log = parse_foursquare_nyc(kFixtures + "/fsq_nyc_sample.tsv");
  REQUIRE(log.records.size() == 50);
  REQUIRE(log.skipped == 0);
  std::set<std::string> users;
  for (const auto& r : log.records) users.insert(r.user);
  REQUIRE(users.size() == 5);
  // timestamps carry the -240 minute offset on top of parsed UTC
  // Tue Apr 03 18:00:09 +0000 2012 = 1333476009 UTC
  REQUIRE(log.records[0].ts == 1333476009 - 240 * 60);
}

TEST_CASE("foursquare rows with wrong arity are skipped with a count") {
  const std::string path = temp_file("seqrec_fsq_bad.tsv");
  {
    std::ofstream os(path);
    os << "u1\tv1\tc\tname\t40.0\t-74.0\t-240\tTue Apr 03 18:00:09 +0000 "
          "2012\n";
    os << "u1\tv1\tc\tname\t40.0\t-74.0\t-240\n";  // 7 columns
    os << "u1\tv2\tc\tname\t40.0\t-74.0\t-240\tnot a time at all ok\n";
  }
  InteractionLog log = parse_foursquare_nyc(path);
  REQUIRE(log.records.size() == 1);
  REQUIRE(log.skipped == 2);
  std::filesystem::remove(path);
}

TEST_CASE("same-user check-ins keep ascending time order") {
  InteractionLog log = toy_log({{"u", "a", 100}, {"u", "b", 50}, {"u", "c", 75}});
  UserSequences seqs = build_sequences(log, 1, 1);
  REQUIRE(seqs.items_by_user.size() == 1);
  const auto& items = seqs.items_by_user[0];
  REQUIRE(items.size() == 3);
  REQUIRE(seqs.vocab.decode(items[0]) == "b");
  REQUIRE(seqs.vocab.decode(items[1]) == "c");
  REQUIRE(seqs.vocab.decode(items[2]) == "a");
}

TEST_CASE("equal timestamps keep file order") {
  InteractionLog log =
      toy_log({{"u", "x", 7}, {"u", "y", 7}, {"u", "z", 7}});
  UserSequences seqs = build_sequences(log, 1, 1);
  const auto& items = seqs.items_by_user[0];
  REQUIRE(seqs.vocab.decode(items[0]) == "x");
  REQUIRE(seqs.vocab.decode(items[1]) == "y");
  REQUIRE(seqs.vocab.decode(items[2]) == "z");
}

TEST_CASE("min=1 applies no filtering") {
  InteractionLog log = toy_log(
      {{"u1", "a", 1}, {"u1", "b", 2}, {"u2", "a", 3}, {"u3", "c", 4}});
  UserSequences seqs = build_sequences(log, 1, 1);
  REQUIRE(seqs.items_by_user.size() == 3);
  REQUIRE(seqs.vocab.size() == 3);
}

TEST_CASE("k-core toy example collapses to empty and errors") {
  // {u1:[a,b,c], u2:[a]}: min_user=2 drops u2 and simultaneously b,c keep
  // their single count, so with min_item=2 everything unravels
  InteractionLog log = toy_log(
      {{"u1", "a", 1}, {"u1", "b", 2}, {"u1", "c", 3}, {"u2", "a", 4}});
  UserSequences only_users = build_sequences(log, 2, 1);
  REQUIRE(only_users.items_by_user.size() == 1);
  REQUIRE(only_users.items_by_user[0].size() == 3);
  REQUIRE_THROWS_AS(build_sequences(log, 2, 2), data_error);
}

TEST_CASE("k-core reaches a fixed point where all counts meet thresholds") {
  InteractionLog log;
  Rng rng(404);
  for (int n = 0; n < 400; ++n) {
    const std::string u = "u" + std::to_string(rng.below(30));
    const std::string i = "i" + std::to_string(rng.below(25));
    log.records.push_back({u, i, n, log.records.size()});
  }
  UserSequences seqs = build_sequences(log, 5, 5);
  std::map<int, std::size_t> item_counts;
  for (const auto& items : seqs.items_by_user) {
    REQUIRE(items.size() >= 5);
    for (int it : items) ++item_counts[it];
  }
  for (const auto& [item, count] : item_counts) REQUIRE(count >= 5);
}

TEST_CASE("ingestion is reproducible and vocabulary round trips") {
  InteractionLog log = toy_log({{"u1", "beta", 2},
                                {"u1", "alpha", 1},
                                {"u2", "alpha", 5},
                                {"u2", "beta", 6},
                                {"u2", "gamma", 7},
                                {"u1", "gamma", 9}});
  UserSequences a = build_sequences(log, 1, 1);
  UserSequences b = build_sequences(log, 1, 1);
  REQUIRE(a.items_by_user == b.items_by_user);
  REQUIRE(a.user_ids == b.user_ids);
  for (int i = 1; i <= a.vocab.size(); ++i)
    REQUIRE(a.vocab.encode(a.vocab.decode(i)) == i);
  REQUIRE_THROWS_AS(a.vocab.decode(0), data_error);
  REQUIRE_THROWS_AS(a.vocab.encode("nope"), data_error);
}

TEST_CASE("dedup_consecutive drops immediate repeats only") {
  InteractionLog log = toy_log(
      {{"u", "a", 1}, {"u", "a", 2}, {"u", "b", 3}, {"u", "a", 4}});
  UserSequences plain = build_sequences(log, 1, 1);
  REQUIRE(plain.items_by_user[0].size() == 4);
  UserSequences dedup = build_sequences(log, 1, 1, /*dedup_consecutive=*/true);
  REQUIRE(dedup.items_by_user[0].size() == 3);
}

TEST_CASE("leave_one_out splits off the last two items") {
  Split s = leave_one_out({10, 20, 30});
  REQUIRE(s.train == std::vector<int>{10});
  REQUIRE(s.valid == 20);
  REQUIRE(s.test == 30);
  Split s2 = leave_one_out({1, 2, 3, 4, 5});
  REQUIRE(s2.train == std::vector<int>{1, 2, 3});
  REQUIRE(s2.valid == 4);
  REQUIRE(s2.test == 5);
  REQUIRE_THROWS_AS(leave_one_out({1, 2}), data_error);
}

TEST_CASE("window pads on the left and keeps the most recent items") {
  REQUIRE(window({7, 8, 9}, 5) == std::vector<int>{0, 0, 7, 8, 9});
  REQUIRE(window({1, 2, 3, 4, 5, 6, 7}, 5) == std::vector<int>{3, 4, 5, 6, 7});
  REQUIRE(window({}, 3) == std::vector<int>{0, 0, 0});
}

TEST_CASE("interaction accounting: train+2 per user sums to the total") {
  InteractionLog log;
  Rng rng(505);
  for (int n = 0; n < 300; ++n) {
    const std::string u = "u" + std::to_string(rng.below(12));
    const std::string i = "i" + std::to_string(rng.below(10));
    log.records.push_back({u, i, n, log.records.size()});
  }
  UserSequences seqs = build_sequences(log, 5, 5);
  std::size_t total = 0, via_splits = 0;
  for (const auto& items : seqs.items_by_user) {
    total += items.size();
    via_splits += leave_one_out(items).train.size() + 2;
  }
  REQUIRE(total == via_splits);
}

TEST_CASE("canonical sequence file round trips") {
  InteractionLog log = toy_log({{"u1", "a", 1},
                                {"u1", "b", 2},
                                {"u1", "c", 3},
                                {"u2", "b", 1},
                                {"u2", "c", 2},
                                {"u2", "a", 3}});
  UserSequences seqs = build_sequences(log, 1, 1);
  const std::string path = temp_file("seqrec_seqs.txt");
  write_sequences(path, seqs);
  UserSequences back = read_sequences(path);
  REQUIRE(back.items_by_user == seqs.items_by_user);
  REQUIRE(back.vocab.size() == seqs.vocab.size());
  std::filesystem::remove(path);
}

TEST_CASE("read_sequences rejects unknown headers and bad indices") {
  const std::string path = temp_file("seqrec_seqs_bad.txt");
  {
    std::ofstream os(path);
    os << "# something else v9\n";
  }
  REQUIRE_THROWS_AS(read_sequences(path), data_error);
  {
    std::ofstream os(path);
    os << "# seqrec sequences v1 users=1 items=2\n0 1 2 3\n";
  }
  REQUIRE_THROWS_AS(read_sequences(path), data_error);
  std::filesystem::remove(path);
}

TEST_CASE("make_dataset keeps only users with at least three interactions") {
  InteractionLog log = toy_log({{"u1", "a", 1},
                                {"u1", "b", 2},
                                {"u1", "c", 3},
                                {"u2", "a", 1},
                                {"u2", "b", 2}});
  UserSequences seqs = build_sequences(log, 1, 1);
  SequenceDataset ds = make_dataset(seqs, "toy");
  REQUIRE(ds.users.size() == 1);
  REQUIRE(ds.num_items == 3);
  REQUIRE(ds.tag == "toy");
}

TEST_CASE("synthetic periodic data is deterministic and in range") {
  SyntheticSpec spec;
  spec.users = 25;
  spec.items = 20;
  spec.seq_len = 15;
  spec.noise = real(0.1);
  spec.seed = 99;
  UserSequences a = make_synthetic_periodic(spec);
  UserSequences b = make_synthetic_periodic(spec);
  REQUIRE(a.items_by_user == b.items_by_user);
  REQUIRE(a.items_by_user.size() == 25);
  for (const auto& items : a.items_by_user) {
    REQUIRE(items.size() == 15);
    for (int it : items) {
      REQUIRE(it >= 1);
      REQUIRE(it <= 20);
    }
  }
  // noiseless sequences walk the shared cycle: successors are consistent
  spec.noise = real(0);
  UserSequences clean = make_synthetic_periodic(spec);
  std::map<int, int> successor;
  for (const auto& items : clean.items_by_user)
    for (std::size_t t = 0; t + 1 < items.size(); ++t) {
      auto [it, fresh] = successor.emplace(items[t], items[t + 1]);
      if (!fresh) REQUIRE(it->second == items[t + 1]);
    }
}
