#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "botmesh/common.hpp"

namespace botmesh::core {

enum class Event : uint8_t {
  ReplyConfig,
  ReplyNodes,
  HandshakeOk,
  Timeout,
  ProtocolError,
};

const char* event_tag(Event e);  // "REPLY_CONFIG" etc.
bool parse_event(const std::string& s, Event* out);
inline bool is_success(Event e) {
  return e == Event::ReplyConfig || e == Event::ReplyNodes || e == Event::HandshakeOk;
}
inline bool is_failure(Event e) { return !is_success(e); }

using BotId = std::array<uint8_t, 20>;

// One crawler-to-bot interaction. The shared record format every producer
// (crawler, simulator scenario, hand-written trace) agrees on.
struct Observation {
  int64_t ts = 0;  // unix ms UTC
  Family botnet = Family::HJ;
  uint32_t ip = 0;
  uint16_t port = 0;
  std::optional<BotId> bot_id;
  Event event = Event::Timeout;
  std::string details;  // opaque JSON text, may be empty

  bool operator==(const Observation&) const = default;
};

bool observation_valid(const Observation& o);

// CSV line per the log grammar (no trailing newline). Requires a valid record.
std::string serialize_observation(const Observation& o);

// Inverse of serialize_observation. Throws Error(MalformedLine).
Observation parse_observation(const std::string& line);

extern const char* const kObservationHeader;  // "ts,botnet,ip,port,bot_id,event,details"

// Log file name for one (family, day, crawler): obs_<fam>_<YYYYMMDD>_<id>.csv
std::string observation_file_name(Family f, int64_t ts_ms, const std::string& crawler_id);

// Streams observations into per-(family, day) CSV files under a directory.
// Lines are written and flushed one at a time so a killed run leaves whole
// lines only.
class ObservationLogWriter {
 public:
  ObservationLogWriter(std::string dir, std::string crawler_id);
  ~ObservationLogWriter();
  ObservationLogWriter(const ObservationLogWriter&) = delete;
  ObservationLogWriter& operator=(const ObservationLogWriter&) = delete;

  void append(const Observation& o);
  void close();
  const std::vector<std::string>& files_written() const { return files_; }

 private:
  struct Impl;
  Impl* impl_;
  std::vector<std::string> files_;
};

// Reads one log file. Strict by default; tolerant mode skips a trailing
// malformed line (truncated tail of a killed crawler) but still rejects
// corruption in the middle.
std::vector<Observation> read_observation_log(const std::string& path, bool tolerant = false);

// ---- AS table ----

struct AsRecord {
  uint32_t prefix = 0;  // network address, host order
  int len = 0;          // prefix length 0..32
  uint32_t asn = 0;
  std::string country;  // ISO-3166 alpha-2
};

class AsTable {
 public:
  // Rejects duplicate (prefix, len) pairs.
  void add(const AsRecord& rec);

  // Longest-prefix match; miss yields (0, "ZZ").
  std::pair<uint32_t, std::string> lookup(uint32_t ip) const;

  size_t size() const { return count_; }

 private:
  // one bucket per prefix length, looked up longest-first
  std::array<std::unordered_map<uint32_t, std::pair<uint32_t, std::string>>, 33> by_len_;
  size_t count_ = 0;
};

// CSV `cidr,asn,country` with header. Throws Error(IoError/MalformedRow).
AsTable load_as_table(const std::string& path);

struct EnrichedObservation {
  Observation obs;
  uint32_t asn = 0;       // 0 if unmatched
  std::string country;    // "ZZ" if unmatched
};

EnrichedObservation enrich(const Observation& o, const AsTable& table);
std::vector<EnrichedObservation> enrich_all(const std::vector<Observation>& obs,
                                            const AsTable& table);

// ---- bot identity ----

// Mozi node IDs collide across devices, so Mozi identity is (id, asn);
// Hajime keys are unique on their own.
struct BotKey {
  Family family = Family::HJ;
  BotId id{};
  uint32_t asn = 0;

  bool operator==(const BotKey& other) const {
    if (family != other.family || id != other.id) return false;
    return family == Family::HJ || asn == other.asn;
  }
  bool operator<(const BotKey& other) const;
  std::string str() const;  // "HJ:<hex>" / "MZ:<hex>/<asn>"
};

BotKey bot_key(const EnrichedObservation& eo);  // requires eo.obs.bot_id

}  // namespace botmesh::core
