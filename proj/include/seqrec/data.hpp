#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "seqrec/common.hpp"

namespace seqrec {

struct Interaction {
  std::string user;
  std::string item;
  std::int64_t ts = 0;
  std::size_t file_order = 0;  // tie-break for equal timestamps
};

struct InteractionLog {
  std::vector<Interaction> records;
  std::size_t skipped = 0;  // malformed lines dropped in lenient mode
};

// Bijective external-id <-> dense-index map; index 0 is reserved for
// padding and never assigned.
struct ItemVocabulary {
  std::vector<std::string> index_to_id{""};  // slot 0 unused
  std::unordered_map<std::string, int> id_to_index;
  std::vector<std::size_t> counts{0};

  int size() const { return static_cast<int>(index_to_id.size()) - 1; }

  int add(const std::string& id) {
    auto it = id_to_index.find(id);
    if (it != id_to_index.end()) {
      ++counts[static_cast<std::size_t>(it->second)];
      return it->second;
    }
    const int idx = static_cast<int>(index_to_id.size());
    index_to_id.push_back(id);
    counts.push_back(1);
    id_to_index.emplace(id, idx);
    return idx;
  }

  int encode(const std::string& id) const {
    auto it = id_to_index.find(id);
    if (it == id_to_index.end())
      throw data_error("vocabulary: unknown item id '" + id + "'");
    return it->second;
  }

  const std::string& decode(int index) const {
    if (index < 1 || index > size())
      throw data_error("vocabulary: index " + std::to_string(index) +
                       " outside [1, " + std::to_string(size()) + "]");
    return index_to_id[static_cast<std::size_t>(index)];
  }
};

// Per-user chronological item sequences after filtering and re-indexing.
struct UserSequences {
  std::vector<std::string> user_ids;            // dense index -> external id
  std::vector<std::vector<int>> items_by_user;  // time-ascending dense items
  ItemVocabulary vocab;
};

namespace datadetail {

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline bool parse_int64(const std::string& s, std::int64_t& out) {
  if (s.empty()) return false;
  std::size_t i = s[0] == '-' ? 1 : 0;
  if (i == s.size()) return false;
  std::int64_t v = 0;
  for (; i < s.size(); ++i) {
    if (s[i] < '0' || s[i] > '9') return false;
    v = v * 10 + (s[i] - '0');
  }
  out = s[0] == '-' ? -v : v;
  return true;
}

inline int month_index(const std::string& m) {
  static const char* names[12] = {"Jan", "Feb", "Mar", "Apr", "May", "Jun",
                                  "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"};
  for (int i = 0; i < 12; ++i)
    if (m == names[i]) return i + 1;
  return 0;
}

// Howard Hinnant's days-from-civil; avoids locale/timezone dependence.
inline std::int64_t days_from_civil(std::int64_t y, int m, int d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy =
      static_cast<unsigned>((153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1);
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

// "Tue Apr 03 18:00:09 +0000 2012" -> UTC epoch seconds.
inline bool parse_checkin_time(const std::string& s, std::int64_t& out) {
  std::istringstream is(s);
  std::string dow, mon, day, clock, tz, year;
  if (!(is >> dow >> mon >> day >> clock >> tz >> year)) return false;
  const int m = month_index(mon);
  if (m == 0) return false;
  std::int64_t d = 0, y = 0;
  if (!parse_int64(day, d) || !parse_int64(year, y)) return false;
  if (clock.size() != 8 || clock[2] != ':' || clock[5] != ':') return false;
  std::int64_t hh = 0, mm = 0, ss = 0;
  if (!parse_int64(clock.substr(0, 2), hh) ||
      !parse_int64(clock.substr(3, 2), mm) ||
      !parse_int64(clock.substr(6, 2), ss))
    return false;
  if (tz.size() != 5 || (tz[0] != '+' && tz[0] != '-')) return false;
  std::int64_t tzh = 0, tzm = 0;
  if (!parse_int64(tz.substr(1, 2), tzh) || !parse_int64(tz.substr(3, 2), tzm))
    return false;
  const std::int64_t tz_sec = (tz[0] == '-' ? -1 : 1) * (tzh * 3600 + tzm * 60);
  out = days_from_civil(y, m, static_cast<int>(d)) * 86400 + hh * 3600 +
        mm * 60 + ss - tz_sec;
  return true;
}

}  // namespace datadetail

// MovieLens-1M ratings.dat: lines of UserID::MovieID::Rating::Timestamp.
// Ratings are dropped (implicit-feedback treatment). In strict mode a
// malformed line raises a data_error naming its line number; in lenient
// mode it is skipped and counted.
inline InteractionLog parse_ml1m(const std::string& path,
                                 bool skip_malformed = false) {
  std::ifstream in(path);
  if (!in) throw io_error("parse_ml1m: cannot open " + path);
  InteractionLog log;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    bool ok = false;
    std::int64_t ts = 0;
    std::vector<std::string> f;
    const std::size_t p1 = line.find("::");
    const std::size_t p2 = p1 == std::string::npos ? p1 : line.find("::", p1 + 2);
    const std::size_t p3 = p2 == std::string::npos ? p2 : line.find("::", p2 + 2);
    if (p3 != std::string::npos) {
      f = {line.substr(0, p1), line.substr(p1 + 2, p2 - p1 - 2),
           line.substr(p2 + 2, p3 - p2 - 2), line.substr(p3 + 2)};
      ok = !f[0].empty() && !f[1].empty() && datadetail::parse_int64(f[3], ts);
    }
    if (!ok) {
      if (skip_malformed) {
        ++log.skipped;
        continue;
      }
      throw data_error("parse_ml1m: " + path + ":" + std::to_string(lineno) +
                       ": malformed line");
    }
    log.records.push_back({f[0], f[1], ts, log.records.size()});
  }
  return log;
}

// Foursquare NYC check-ins: 8 tab-separated columns — user, venue,
// category id, category name, latitude, longitude, timezone offset in
// minutes, UTC time string. GPS/category columns are validated for arity
// only. Unparseable rows are skipped and counted.
inline InteractionLog parse_foursquare_nyc(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("parse_foursquare_nyc: cannot open " + path);
  InteractionLog log;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = datadetail::split(line, '\t');
    std::int64_t utc = 0, offset_min = 0;
    const bool ok = f.size() == 8 && !f[0].empty() && !f[1].empty() &&
                    datadetail::parse_int64(f[6], offset_min) &&
                    datadetail::parse_checkin_time(f[7], utc);
    if (!ok) {
      std::cerr << "parse_foursquare_nyc: skipping malformed line " << lineno
                << "\n";
      ++log.skipped;
      continue;
    }
    log.records.push_back({f[0], f[1], utc + offset_min * 60,
                           log.records.size()});
  }
  return log;
}

// Iterative k-core: per round, drop every user with fewer than min_user
// interactions and every item with fewer than min_item, both judged on the
// current counts, until a fixed point. Survivors are indexed densely by
// first appearance and ordered by (timestamp, file order) within each user.
inline UserSequences build_sequences(const InteractionLog& log, int min_user,
                                     int min_item,
                                     bool dedup_consecutive = false) {
  if (min_user < 1 || min_item < 1)
    throw config_error("build_sequences: min_user/min_item must be >= 1");
  std::vector<const Interaction*> live;
  live.reserve(log.records.size());
  for (const auto& r : log.records) live.push_back(&r);

  while (true) {
    std::unordered_map<std::string, std::size_t> ucount, icount;
    for (const auto* r : live) {
      ++ucount[r->user];
      ++icount[r->item];
    }
    std::vector<const Interaction*> kept;
    kept.reserve(live.size());
    for (const auto* r : live) {
      if (ucount[r->user] >= static_cast<std::size_t>(min_user) &&
          icount[r->item] >= static_cast<std::size_t>(min_item))
        kept.push_back(r);
    }
    const bool stable = kept.size() == live.size();
    live.swap(kept);
    if (stable) break;
  }
  if (live.empty())
    throw data_error("build_sequences: no interactions survive filtering");

  UserSequences out;
  std::unordered_map<std::string, int> user_index;
  std::vector<std::vector<const Interaction*>> per_user;
  for (const auto* r : live) {
    auto [it, fresh] = user_index.emplace(
        r->user, static_cast<int>(out.user_ids.size()));
    if (fresh) {
      out.user_ids.push_back(r->user);
      per_user.emplace_back();
    }
    per_user[static_cast<std::size_t>(it->second)].push_back(r);
    out.vocab.add(r->item);
  }
  out.items_by_user.resize(per_user.size());
  for (std::size_t u = 0; u < per_user.size(); ++u) {
    auto& recs = per_user[u];
    std::stable_sort(recs.begin(), recs.end(),
                     [](const Interaction* a, const Interaction* b) {
                       if (a->ts != b->ts) return a->ts < b->ts;
                       return a->file_order < b->file_order;
                     });
    auto& seq = out.items_by_user[u];
    seq.reserve(recs.size());
    for (const auto* r : recs) {
      const int idx = out.vocab.encode(r->item);
      if (dedup_consecutive && !seq.empty() && seq.back() == idx) continue;
      seq.push_back(idx);
    }
  }
  return out;
}

struct Split {
  std::vector<int> train;
  int valid = 0;
  int test = 0;
};

// Last item held out for test, second-to-last for validation.
inline Split leave_one_out(const std::vector<int>& items) {
  if (items.size() < 3)
    throw data_error("leave_one_out: sequence length " +
                     std::to_string(items.size()) + " < 3");
  Split s;
  s.train.assign(items.begin(), items.end() - 2);
  s.valid = items[items.size() - 2];
  s.test = items.back();
  return s;
}

// Most recent L items, left-padded with 0 to exactly L.
inline std::vector<int> window(const std::vector<int>& items, int L) {
  if (L < 1) throw config_error("window: L must be >= 1");
  std::vector<int> out(static_cast<std::size_t>(L), 0);
  const std::size_t take =
      std::min(items.size(), static_cast<std::size_t>(L));
  std::copy(items.end() - static_cast<std::ptrdiff_t>(take), items.end(),
            out.end() - static_cast<std::ptrdiff_t>(take));
  return out;
}

// Training/evaluation view: users with at least 3 interactions, ready for
// leave-one-out splitting.
struct SequenceDataset {
  std::vector<std::vector<int>> users;
  int num_items = 0;
  std::string tag;
};

inline SequenceDataset make_dataset(const UserSequences& seqs,
                                    const std::string& tag) {
  SequenceDataset ds;
  ds.tag = tag;
  ds.num_items = seqs.vocab.size();
  for (const auto& items : seqs.items_by_user)
    if (items.size() >= 3) ds.users.push_back(items);
  if (ds.users.empty())
    throw data_error("make_dataset: no user has >= 3 interactions");
  return ds;
}

// ---------------------------------------------------------------------------
// Canonical preprocessed format, version 1: a header line
//   # seqrec sequences v1 users=<N> items=<M>
// then one user per line: dense user index, space-separated dense item
// indices in chronological order.
// ---------------------------------------------------------------------------

inline void write_sequences(const std::string& path,
                            const UserSequences& seqs) {
  std::ofstream out(path);
  if (!out) throw io_error("write_sequences: cannot open " + path);
  out << "# seqrec sequences v1 users=" << seqs.items_by_user.size()
      << " items=" << seqs.vocab.size() << "\n";
  for (std::size_t u = 0; u < seqs.items_by_user.size(); ++u) {
    out << u;
    for (int it : seqs.items_by_user[u]) out << ' ' << it;
    out << "\n";
  }
  if (!out) throw io_error("write_sequences: write failed for " + path);
}

inline UserSequences read_sequences(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("read_sequences: cannot open " + path);
  std::string header;
  std::getline(in, header);
  std::size_t users = 0, items = 0;
  {
    std::istringstream hs(header);
    std::string hash, name, kind, version, ufield, ifield;
    std::int64_t n = -1, m = -1;
    if (!(hs >> hash >> name >> kind >> version >> ufield >> ifield) ||
        hash != "#" || name != "seqrec" || kind != "sequences" ||
        version != "v1" || ufield.rfind("users=", 0) != 0 ||
        ifield.rfind("items=", 0) != 0 ||
        !datadetail::parse_int64(ufield.substr(6), n) ||
        !datadetail::parse_int64(ifield.substr(6), m) || n < 0 || m < 0)
      throw data_error("read_sequences: " + path +
                       ": unrecognized header '" + header + "'");
    users = static_cast<std::size_t>(n);
    items = static_cast<std::size_t>(m);
  }
  UserSequences seqs;
  seqs.items_by_user.resize(users);
  seqs.user_ids.resize(users);
  for (std::size_t i = 1; i <= items; ++i)
    seqs.vocab.add(std::to_string(i));
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::int64_t u = 0;
    if (!(ls >> u) || u < 0 || static_cast<std::size_t>(u) >= users)
      throw data_error("read_sequences: " + path + ":" +
                       std::to_string(lineno) + ": bad user index");
    seqs.user_ids[static_cast<std::size_t>(u)] = std::to_string(u);
    std::int64_t it = 0;
    while (ls >> it) {
      if (it < 1 || static_cast<std::size_t>(it) > items)
        throw data_error("read_sequences: " + path + ":" +
                         std::to_string(lineno) + ": item index " +
                         std::to_string(it) + " out of range");
      seqs.items_by_user[static_cast<std::size_t>(u)].push_back(
          static_cast<int>(it));
    }
  }
  return seqs;
}

// ---------------------------------------------------------------------------
// Synthetic periodic-pattern data: every user walks a shared global item
// cycle from a private phase, optionally with uniform noise swaps. The
// successor structure is globally consistent, so the sequences are
// learnable, and the per-user periodicity gives the signal a strong
// high-frequency component.
// ---------------------------------------------------------------------------

struct SyntheticSpec {
  int users = 200;
  int items = 100;
  int seq_len = 40;
  real noise = real(0.05);
  std::uint64_t seed = 7;
};

inline UserSequences make_synthetic_periodic(const SyntheticSpec& spec) {
  if (spec.users < 1 || spec.items < 2 || spec.seq_len < 3)
    throw config_error("synthetic: users >= 1, items >= 2, seq_len >= 3");
  if (!(spec.noise >= real(0) && spec.noise < real(1)))
    throw config_error("synthetic: noise must lie in [0, 1)");
  std::vector<int> cycle(static_cast<std::size_t>(spec.items));
  std::iota(cycle.begin(), cycle.end(), 1);
  Rng perm_rng(mix_seed(spec.seed, {0x5045524d}));
  for (std::size_t i = cycle.size(); i > 1; --i)
    std::swap(cycle[i - 1], cycle[perm_rng.below(i)]);

  UserSequences seqs;
  for (std::size_t i = 1; i <= static_cast<std::size_t>(spec.items); ++i)
    seqs.vocab.add(std::to_string(i));
  for (int u = 0; u < spec.users; ++u) {
    Rng rng(mix_seed(spec.seed, {0x55534552, static_cast<std::uint64_t>(u)}));
    const std::size_t phase = rng.below(cycle.size());
    std::vector<int> items(static_cast<std::size_t>(spec.seq_len));
    for (int t = 0; t < spec.seq_len; ++t) {
      int id = cycle[(phase + static_cast<std::size_t>(t)) % cycle.size()];
      if (spec.noise > real(0) &&
          rng.uniform() < static_cast<double>(spec.noise))
        id = static_cast<int>(rng.below(
                 static_cast<std::size_t>(spec.items))) + 1;
      items[static_cast<std::size_t>(t)] = id;
    }
    seqs.items_by_user.push_back(std::move(items));
    seqs.user_ids.push_back("u" + std::to_string(u));
  }
  return seqs;
}

}  // namespace seqrec
