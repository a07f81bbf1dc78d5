#include "botmesh/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace botmesh::analytics {

namespace {

bool in_window(int64_t ts, int64_t start, int64_t len) {
  return ts >= start && ts < start + len;
}

}  // namespace

const char* verdict_tag(Verdict v) {
  switch (v) {
    case Verdict::Sharing: return "SHARING";
    case Verdict::PossibleTakeover: return "POSSIBLE_TAKEOVER";
    case Verdict::Inconclusive: return "INCONCLUSIVE";
  }
  return "?";
}

int64_t bincount(const std::vector<EnrichedObservation>& obs, int64_t win_start_ms,
                 int64_t win_len_ms) {
  std::set<uint32_t> ips;
  for (const auto& eo : obs)
    if (core::is_success(eo.obs.event) && in_window(eo.obs.ts, win_start_ms, win_len_ms))
      ips.insert(eo.obs.ip);
  return int64_t(ips.size());
}

MaxCountResult maxcount_as(const std::vector<EnrichedObservation>& obs, int64_t win_start_ms,
                           int64_t win_len_ms, int64_t snapshot_ms) {
  // distinct IPs per (AS, snapshot); then the per-AS max over snapshots
  std::map<uint32_t, std::map<int64_t, std::set<uint32_t>>> per_as_snap;
  for (const auto& eo : obs) {
    if (!core::is_success(eo.obs.event) || !in_window(eo.obs.ts, win_start_ms, win_len_ms))
      continue;
    int64_t snap = (eo.obs.ts - win_start_ms) / snapshot_ms;
    per_as_snap[eo.asn][snap].insert(eo.obs.ip);
  }
  MaxCountResult res;
  for (const auto& [asn, snaps] : per_as_snap) {
    int64_t best = 0;
    for (const auto& [snap, ips] : snaps) best = std::max(best, int64_t(ips.size()));
    res.per_as[asn] = best;
    res.total += best;
  }
  return res;
}

MetricSeries daily_overlap(const std::vector<EnrichedObservation>& hj,
                           const std::vector<EnrichedObservation>& mz) {
  std::map<int64_t, std::set<uint32_t>> h_by_day, m_by_day;
  for (const auto& eo : hj)
    if (core::is_success(eo.obs.event)) h_by_day[utc_day_start(eo.obs.ts)].insert(eo.obs.ip);
  for (const auto& eo : mz)
    if (core::is_success(eo.obs.event)) m_by_day[utc_day_start(eo.obs.ts)].insert(eo.obs.ip);

  std::set<int64_t> days;
  for (const auto& [d, s] : h_by_day) days.insert(d);
  for (const auto& [d, s] : m_by_day) days.insert(d);

  MetricSeries out;
  for (int64_t day : days) {
    const auto hit = h_by_day.find(day);
    const auto mit = m_by_day.find(day);
    const std::set<uint32_t> empty;
    const auto& h = hit != h_by_day.end() ? hit->second : empty;
    const auto& m = mit != m_by_day.end() ? mit->second : empty;
    std::vector<uint32_t> both;
    std::set_intersection(h.begin(), h.end(), m.begin(), m.end(), std::back_inserter(both));
    size_t uni = h.size() + m.size() - both.size();
    if (uni == 0) continue;
    out.push_back(MetricPoint{day, kMsPerDay, "HJ+MZ", 100.0 * double(both.size()) / double(uni)});
  }
  return out;
}

OverlapVerdict classify_shared_ip(uint32_t ip,
                                  const std::vector<std::pair<int64_t, Family>>& events,
                                  int64_t snapshot_ms, int64_t takeover_window_ms) {
  OverlapVerdict v;
  v.ip = ip;
  v.evidence = events;
  std::vector<std::pair<int64_t, Family>> ev = events;
  std::stable_sort(ev.begin(), ev.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });

  // same-snapshot dual-family activity: two bots behind one address
  std::map<int64_t, uint8_t> snap_families;
  for (const auto& [ts, fam] : ev)
    snap_families[ts / snapshot_ms] |= fam == Family::HJ ? 1 : 2;
  bool simultaneous = false;
  for (const auto& [snap, bits] : snap_families)
    if (bits == 3) simultaneous = true;

  // a -> b -> a: count family runs
  int runs = 0;
  Family prev{};
  for (const auto& [ts, fam] : ev) {
    if (runs == 0 || fam != prev) {
      ++runs;
      prev = fam;
    }
  }

  if (runs >= 3 || simultaneous) {
    v.verdict = Verdict::Sharing;
    return v;
  }
  if (runs == 2) {
    int64_t first_a = ev.front().first;
    Family b = ev.back().second;
    int64_t first_b = 0;
    for (const auto& [ts, fam] : ev)
      if (fam == b) {
        first_b = ts;
        break;
      }
    if (first_b - first_a <= takeover_window_ms) {
      v.verdict = Verdict::PossibleTakeover;
      return v;
    }
  }
  v.verdict = Verdict::Inconclusive;
  return v;
}

std::vector<OverlapVerdict> classify_all_shared(const std::vector<EnrichedObservation>& obs,
                                                int64_t snapshot_ms,
                                                int64_t takeover_window_ms) {
  std::map<uint32_t, std::vector<std::pair<int64_t, Family>>> by_ip;
  std::map<uint32_t, uint8_t> fams;
  for (const auto& eo : obs) {
    if (!core::is_success(eo.obs.event)) continue;
    by_ip[eo.obs.ip].emplace_back(eo.obs.ts, eo.obs.botnet);
    fams[eo.obs.ip] |= eo.obs.botnet == Family::HJ ? 1 : 2;
  }
  std::vector<OverlapVerdict> out;
  for (auto& [ip, events] : by_ip) {
    if (fams[ip] != 3) continue;  // only IPs seen by both botnets
    out.push_back(classify_shared_ip(ip, events, snapshot_ms, takeover_window_ms));
  }
  return out;
}

LifetimeResult lifetimes(const std::vector<EnrichedObservation>& obs, Family family,
                         int64_t snapshot_ms) {
  struct Span {
    int64_t first = 0, last = 0;
  };
  std::map<core::BotKey, Span> spans;
  // collision filter: the same raw ID active at two IPs within one snapshot
  std::map<std::pair<core::BotId, int64_t>, std::set<uint32_t>> id_snap_ips;
  std::set<core::BotId> excluded_ids;

  for (const auto& eo : obs) {
    if (eo.obs.botnet != family || !core::is_success(eo.obs.event) || !eo.obs.bot_id)
      continue;
    core::BotKey key = core::bot_key(eo);
    auto [it, inserted] = spans.emplace(key, Span{eo.obs.ts, eo.obs.ts});
    if (!inserted) {
      it->second.first = std::min(it->second.first, eo.obs.ts);
      it->second.last = std::max(it->second.last, eo.obs.ts);
    }
    auto& ips = id_snap_ips[{*eo.obs.bot_id, eo.obs.ts / snapshot_ms}];
    ips.insert(eo.obs.ip);
    if (ips.size() >= 2) excluded_ids.insert(*eo.obs.bot_id);
  }

  LifetimeResult res;
  std::vector<double> hours;
  for (const auto& [key, span] : spans) {
    if (excluded_ids.count(key.id)) {
      ++res.excluded;
      continue;
    }
    LifetimeEntry e;
    e.key = key;
    e.first_ms = span.first;
    e.last_ms = span.last;
    e.hours = double(span.last - span.first) / double(kMsPerHour);
    hours.push_back(e.hours);
    res.entries.push_back(std::move(e));
  }
  if (!hours.empty()) {
    double sum = 0;
    for (double h : hours) sum += h;
    res.mean_hours = sum / double(hours.size());
    std::sort(hours.begin(), hours.end());
    size_t n = hours.size();
    res.median_hours = n % 2 ? hours[n / 2] : (hours[n / 2 - 1] + hours[n / 2]) / 2.0;
  }
  return res;
}

std::vector<ChurnDay> churn_daily(const std::vector<EnrichedObservation>& obs,
                                  Family family) {
  struct KeySpan {
    int64_t first = 0, last = 0;
    std::set<int64_t> active_days;
  };
  std::map<core::BotKey, KeySpan> keys;
  int64_t dataset_last_day = -1;
  for (const auto& eo : obs) {
    if (eo.obs.botnet != family || !core::is_success(eo.obs.event) || !eo.obs.bot_id)
      continue;
    core::BotKey k = core::bot_key(eo);
    auto [it, inserted] = keys.emplace(k, KeySpan{eo.obs.ts, eo.obs.ts, {}});
    if (!inserted) {
      it->second.first = std::min(it->second.first, eo.obs.ts);
      it->second.last = std::max(it->second.last, eo.obs.ts);
    }
    it->second.active_days.insert(utc_day_start(eo.obs.ts));
    dataset_last_day = std::max(dataset_last_day, utc_day_start(eo.obs.ts));
  }

  std::map<int64_t, ChurnDay> days;
  int64_t dataset_first_day = INT64_MAX;
  for (const auto& [key, span] : keys) {
    int64_t first_day = utc_day_start(span.first);
    int64_t last_day = utc_day_start(span.last);
    dataset_first_day = std::min(dataset_first_day, first_day);
    for (int64_t d : span.active_days) {
      ChurnDay& cd = days[d];
      cd.day_start_ms = d;
      cd.total += 1;
      if (d == first_day) cd.births += 1;
      // stable: first activity at least 24h before the start of this day;
      // carryover: first seen on the previous day but not yet stable
      if (span.first <= d - kMsPerDay) cd.stable += 1;
      else if (d != first_day) cd.carryover += 1;
      if (d == last_day && d < dataset_last_day) cd.deaths += 1;  // censoring guard
    }
  }
  std::vector<ChurnDay> out;
  if (days.empty()) return out;
  for (int64_t d = dataset_first_day; d <= dataset_last_day; d += kMsPerDay) {
    auto it = days.find(d);
    if (it != days.end()) {
      out.push_back(it->second);
    } else {
      ChurnDay empty_day;
      empty_day.day_start_ms = d;
      out.push_back(empty_day);  // a day the botnet went dark still gets a row
    }
  }
  return out;
}

MetricSeries reply_ratio(const std::vector<EnrichedObservation>& obs, int64_t bucket_ms,
                         ReplyMode mode) {
  struct Counts {
    int64_t success = 0, failure = 0;
  };
  // (family, asn, bucket) -> counts; asn UINT32_MAX = per-family aggregate
  std::map<std::tuple<Family, uint32_t, int64_t>, Counts> cells;
  for (const auto& eo : obs) {
    const auto& o = eo.obs;
    bool success;
    if (o.event == core::Event::ReplyConfig)
      success = true;
    else if (o.event == core::Event::ReplyNodes && mode == ReplyMode::AnyReply)
      success = true;
    else if (core::is_failure(o.event))
      success = false;
    else
      continue;  // events outside the mode's attempt definition
    int64_t bucket = o.ts - o.ts % bucket_ms;
    for (uint32_t asn : {eo.asn, uint32_t(UINT32_MAX)}) {
      Counts& c = cells[{o.botnet, asn, bucket}];
      if (success) ++c.success;
      else ++c.failure;
    }
  }
  MetricSeries out;
  for (const auto& [cell, c] : cells) {
    auto [fam, asn, bucket] = cell;
    int64_t attempts = c.success + c.failure;
    if (attempts == 0) continue;
    std::string group = family_tag(fam);
    group += '/';
    group += asn == UINT32_MAX ? "*" : std::to_string(asn);
    out.push_back(
        MetricPoint{bucket, bucket_ms, group, double(c.success) / double(attempts)});
  }
  return out;
}

}  // namespace botmesh::analytics
