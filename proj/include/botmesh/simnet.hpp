#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <queue>
#include <string>
#include <unordered_map>
#include <vector>

#include "botmesh/common.hpp"
#include "botmesh/protocols.hpp"
#include "botmesh/rng.hpp"

namespace botmesh::simnet {

struct ThrottleWindow {
  uint32_t asn = 0;
  int start_hour = 0;  // [start, end) in UTC hours
  int end_hour = 0;
  double added_loss = 0.0;
};

struct AsPool {
  uint32_t asn = 0;
  std::string country;
  uint32_t prefix = 0;
  int prefix_len = 0;
  int device_count = 0;
  int nat_group_size = 1;
  double mix_hj = 0.5;          // HJ share of the single-family-vulnerable devices
  double loss = 0.0;            // base packet-loss probability
  double reassign_mean_s = 0;   // 0 = static addressing
  int benign_count = 0;         // non-bot DHT peers in this pool
};

struct FamilyParams {
  double uptime_mean_s = 0;      // exponential mean; 0 = never reboots
  double reinfect_delay_s = 300; // fixed re-scan delay for the former owner;
                                 // exponential mean for a competing family
  bool persistence = false;      // re-infects itself immediately on wake
};

struct SimConfig {
  uint64_t seed = 1;
  int64_t duration_s = 3600;
  int64_t epoch_unix_s = 1656633600;  // virtual t=0 as real time (2022-07-01)
  double phi = 0.0;                   // fraction of devices vulnerable to both families
  double reboot_downtime_s = 30;
  double hj_skew_frac = 0.0;          // HJ bots with a +/-1 day clock skew
  bool nat_burst = false;             // intra-NAT infection bursts; ships off
  FamilyParams hj{.uptime_mean_s = 0, .reinfect_delay_s = 300, .persistence = false};
  FamilyParams mz{.uptime_mean_s = 0, .reinfect_delay_s = 300, .persistence = true};
  std::string hajime_config_name = "config";
  std::vector<AsPool> pools;
  std::vector<ThrottleWindow> throttles;

  int64_t epoch_ms() const { return epoch_unix_s * 1000; }
  int64_t end_ms() const { return (epoch_unix_s + duration_s) * 1000; }
};

// `key = value` lines plus repeated `pool ...` / `throttle ...` lines with
// inline k=v fields. Throws Error(ConfigInvalid) naming the offending field,
// or Error(IoError).
SimConfig load_sim_config(const std::string& path);
SimConfig parse_sim_config(const std::string& text);
void validate_sim_config(const SimConfig& cfg);

enum class JournalEvent : uint8_t { Infect, Reboot, Wake, Reassign };
const char* journal_event_tag(JournalEvent e);

struct JournalEntry {
  int64_t ts = 0;  // unix ms
  JournalEvent event = JournalEvent::Infect;
  int device = 0;
  std::optional<Family> family;
  std::optional<proto::NodeId> node_id;
  uint32_t ip = 0;
  uint32_t asn = 0;
};

struct GroundTruthBot {
  int device = 0;
  proto::NodeId node_id{};
  uint32_t ip = 0;
  uint32_t asn = 0;
  bool operator==(const GroundTruthBot&) const = default;
};

struct Endpoint {
  uint32_t ip = 0;
  uint16_t port = 0;
  bool operator==(const Endpoint&) const = default;
  bool operator<(const Endpoint& o) const {
    return ip != o.ip ? ip < o.ip : port < o.port;
  }
};

// Deterministic discrete-event world. All clocks are unix milliseconds; the
// world starts at epoch_ms(). Identical (config, seed) reproduce identical
// journals and identical wire behavior.
class SimWorld {
 public:
  explicit SimWorld(const SimConfig& cfg);

  int64_t clock() const { return clock_ms_; }
  int64_t end_ms() const { return cfg_.end_ms(); }
  const SimConfig& config() const { return cfg_; }

  // Processes all world events with timestamp <= t.
  void advance_to(int64_t t_ms);

  // One request/response exchange at the current clock. Applies the
  // destination AS's base loss plus any active throttle window; a lost packet
  // or a down/unknown endpoint is silence, like UDP.
  std::optional<std::vector<uint8_t>> deliver(const Endpoint& to,
                                              const std::vector<uint8_t>& payload);

  // Exact infected population at t (<= clock), replayed from the journal.
  std::vector<GroundTruthBot> ground_truth(int64_t t_ms, Family f) const;

  const std::vector<JournalEntry>& journal() const { return journal_; }
  void write_journal_csv(const std::string& path) const;

  // Stable entry points for a crawler: benign peers when present, else the
  // first up bots in device order.
  std::vector<Endpoint> bootstrap_endpoints(size_t k) const;

  // -- inspection (tests, oracles) --
  int device_count() const { return int(devices_.size()); }
  struct DeviceView {
    int index;
    Family family;       // meaningful only when infected
    bool infected;
    bool up;
    proto::NodeId node_id;
    proto::UtpKey utp_key;  // HJ only
    uint32_t ip;
    uint16_t port;
    uint32_t asn;
    int skew_days;
  };
  DeviceView device_view(int index) const;
  size_t nat_group_count() const { return nat_groups_.size(); }
  int infected_count(Family f) const;
  int uninfected_up_count() const;
  int down_count() const;

 private:
  struct Device {
    int pool = 0;
    int nat_group = 0;
    uint8_t vulnerable = 0;  // bit 0 = HJ, bit 1 = MZ
    bool infected = false;
    bool up = true;
    Family family = Family::HJ;
    Family persistent_family = Family::HJ;  // family to restore on wake
    bool persistent = false;
    proto::NodeId node_id{};
    proto::UtpKey utp_key{};
    int skew_days = 0;
    uint16_t port = 0;
    std::vector<int> peers_hj;       // gossip ring + random picks, per family
    std::vector<int> peers_mz;
    uint64_t infection_no = 0;       // guards stale scheduled events
  };
  struct NatGroup {
    int pool = 0;
    uint32_t public_ip = 0;
    std::vector<int> members;
  };
  struct BenignPeer {
    int index = 0;
    int pool = 0;
    uint32_t ip = 0;
    uint16_t port = 0;
    proto::NodeId node_id{};
    std::vector<int> known_devices;
    std::vector<int> known_benign;
  };
  enum class EvKind : uint8_t { Reboot, Wake, Claim, Reassign };
  struct Ev {
    int64_t t;
    uint64_t seq;
    EvKind kind;
    int subject;       // device or nat group index
    Family family;     // Claim only
    uint64_t guard;    // infection_no the event was scheduled against
    bool operator>(const Ev& o) const { return t != o.t ? t > o.t : seq > o.seq; }
  };

  void build_topology();
  void initial_infections();
  void infect(int device, Family f);
  void process(const Ev& ev);
  void schedule(int64_t t, EvKind kind, int subject, Family fam = Family::HJ,
                uint64_t guard = 0);
  void schedule_claims(int device);
  void journal_add(JournalEvent ev, int device, std::optional<Family> fam,
                   std::optional<proto::NodeId> id);
  double loss_probability(uint32_t asn, double base) const;
  uint32_t alloc_ip(int pool);
  void release_ip(int pool, uint32_t ip);
  std::optional<std::vector<uint8_t>> bot_handle(Device& d, const std::vector<uint8_t>& in);
  std::optional<std::vector<uint8_t>> benign_handle(BenignPeer& b,
                                                    const std::vector<uint8_t>& in);
  std::vector<proto::NodeEntry> materialize_peers(const Device& d, size_t max_n) const;
  proto::Infohash device_daily_infohash(const Device& d) const;

  SimConfig cfg_;
  int64_t clock_ms_ = 0;
  uint64_t seq_ = 0;
  std::vector<Device> devices_;
  std::vector<NatGroup> nat_groups_;
  std::vector<BenignPeer> benign_;
  std::priority_queue<Ev, std::vector<Ev>, std::greater<Ev>> queue_;
  std::vector<JournalEntry> journal_;
  std::unordered_map<uint64_t, int> endpoint_bot_;     // (ip,port) -> device
  std::unordered_map<uint64_t, int> endpoint_benign_;  // (ip,port) -> benign
  std::map<int, std::vector<uint32_t>> used_ips_;      // pool -> allocated
  Rng rng_topology_, rng_uptime_, rng_infect_, rng_reassign_, rng_loss_, rng_reply_, rng_ids_;
};

}  // namespace botmesh::simnet
