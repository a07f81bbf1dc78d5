#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "botmesh/core.hpp"

namespace botmesh::analytics {

using core::EnrichedObservation;

constexpr int64_t kDefaultSnapshotMs = 60'000;           // = tfreq, finest observable grain
constexpr int64_t kTakeoverWindowMs = 6 * kMsPerHour;

struct MetricPoint {
  int64_t bucket_ms = 0;  // bucket start, aligned to width
  int64_t width_ms = 0;
  std::string group;      // botnet / asn / country key
  double value = 0.0;
  bool operator==(const MetricPoint&) const = default;
};
using MetricSeries = std::vector<MetricPoint>;

// Distinct IPs with success events inside [win_start, win_start + win_len).
// The intuitive count; overestimates under IP reassignment.
int64_t bincount(const std::vector<EnrichedObservation>& obs, int64_t win_start_ms,
                 int64_t win_len_ms);

// Sum over ASes of the per-AS maximum of simultaneously active distinct IPs,
// where "simultaneous" means within one snapshot of the given width. Per-AS
// maxima may occur at different snapshots.
struct MaxCountResult {
  int64_t total = 0;
  std::map<uint32_t, int64_t> per_as;
};
MaxCountResult maxcount_as(const std::vector<EnrichedObservation>& obs, int64_t win_start_ms,
                           int64_t win_len_ms, int64_t snapshot_ms = kDefaultSnapshotMs);

// Per UTC day: 100 * |H & M| / |H | M| over success-event IPs. Days with an
// empty union are omitted.
MetricSeries daily_overlap(const std::vector<EnrichedObservation>& hj,
                           const std::vector<EnrichedObservation>& mz);

enum class Verdict : uint8_t { Sharing, PossibleTakeover, Inconclusive };
const char* verdict_tag(Verdict v);

struct OverlapVerdict {
  uint32_t ip = 0;
  Verdict verdict = Verdict::Inconclusive;
  std::vector<std::pair<int64_t, Family>> evidence;  // ordered (ts, family)
};

// Heuristics for one IP seen by both botnets:
//  - a->b->a (or any same-snapshot dual-family activity) = SHARING, two bots
//    behind one address;
//  - first a, then b within six hours, a never again = POSSIBLE_TAKEOVER;
//  - anything else = INCONCLUSIVE.
OverlapVerdict classify_shared_ip(uint32_t ip,
                                  const std::vector<std::pair<int64_t, Family>>& events,
                                  int64_t snapshot_ms = kDefaultSnapshotMs,
                                  int64_t takeover_window_ms = kTakeoverWindowMs);

// All IPs with success events from both families, classified.
std::vector<OverlapVerdict> classify_all_shared(const std::vector<EnrichedObservation>& obs,
                                                int64_t snapshot_ms = kDefaultSnapshotMs,
                                                int64_t takeover_window_ms = kTakeoverWindowMs);

// Duration between first and last success per BotKey. Keys whose ID is active
// at two distinct IPs within one snapshot are collision suspects and excluded.
struct LifetimeEntry {
  core::BotKey key;
  int64_t first_ms = 0;
  int64_t last_ms = 0;
  double hours = 0.0;
};
struct LifetimeResult {
  std::vector<LifetimeEntry> entries;  // sorted by key
  double mean_hours = 0.0;
  double median_hours = 0.0;
  int64_t excluded = 0;
};
LifetimeResult lifetimes(const std::vector<EnrichedObservation>& obs, Family family,
                         int64_t snapshot_ms = kDefaultSnapshotMs);

// Daily birth/death/stable accounting over BotKeys. stable(d) = first seen at
// least 24h before the start of d; carryover(d) = first seen on d-1 (and not
// stable); deaths are suppressed on the final day of the dataset.
struct ChurnDay {
  int64_t day_start_ms = 0;
  int64_t births = 0;
  int64_t deaths = 0;
  int64_t stable = 0;
  int64_t carryover = 0;
  int64_t total = 0;
  bool operator==(const ChurnDay&) const = default;
};
std::vector<ChurnDay> churn_daily(const std::vector<EnrichedObservation>& obs, Family family);

// successes / attempts per (family, AS, bucket), in [0,1]. CONFIG_ONLY counts
// REPLY_CONFIG; ANY_REPLY also counts REPLY_NODES. attempts = successes +
// failures; buckets with zero attempts are omitted. Groups are "<FAM>/<ASN>"
// plus a per-family aggregate "<FAM>/*".
enum class ReplyMode : uint8_t { ConfigOnly, AnyReply };
MetricSeries reply_ratio(const std::vector<EnrichedObservation>& obs, int64_t bucket_ms,
                         ReplyMode mode);

}  // namespace botmesh::analytics
