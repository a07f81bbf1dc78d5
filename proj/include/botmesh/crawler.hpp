#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include "botmesh/core.hpp"
#include "botmesh/protocols.hpp"
#include "botmesh/rng.hpp"
#include "botmesh/simnet.hpp"

namespace botmesh::crawler {

using simnet::Endpoint;

struct CrawlerConfig {
  Family family = Family::MZ;
  int dfreq_s = 300;
  int tfreq_s = 60;
  int dtimeout_s = 900;
  int ttimeout_s = 900;
  int nretry = 5;
  int day_offset = 0;  // -1 | 0 | +1, Hajime infohash day
  std::string crawler_id = "c0";
  std::vector<Endpoint> bootstrap;  // empty = take the transport's defaults
  std::string hajime_config_name = "config";
};

CrawlerConfig load_crawler_config(const std::string& path);
CrawlerConfig parse_crawler_config(const std::string& text);
void validate_crawler_config(const CrawlerConfig& cfg);

// Doubling backoff starting at two seconds: [2, 4, 8, ...], length nretry.
// Throws Error(InvalidNretry) for nretry < 1.
std::vector<int> retry_schedule(int nretry);

// Attempt offsets in ms derived from the schedule: [0, 2000, 6000, 14000, ...]
// (nretry + 1 sends per probe; the final timeout is declared at the last one).
std::vector<int64_t> attempt_offsets_ms(int nretry);

// One request/response exchange at the current virtual time. nullopt = no
// reply within the attempt's window.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual std::optional<std::vector<uint8_t>> request(const Endpoint& to,
                                                      const std::vector<uint8_t>& payload) = 0;
  virtual std::vector<Endpoint> default_bootstrap() { return {}; }
};

// Binds a crawler to a SimWorld; the harness advances the world before each
// scheduled action, so requests resolve at the current virtual instant.
class SimTransport : public Transport {
 public:
  explicit SimTransport(simnet::SimWorld& world) : world_(world) {}
  std::optional<std::vector<uint8_t>> request(const Endpoint& to,
                                              const std::vector<uint8_t>& payload) override {
    return world_.deliver(to, payload);
  }
  std::vector<Endpoint> default_bootstrap() override { return world_.bootstrap_endpoints(5); }

 private:
  simnet::SimWorld& world_;
};

// Deterministic virtual-time action queue. Ties dispatch in insertion order.
class Scheduler {
 public:
  using Fn = std::function<void(int64_t now_ms)>;

  void at(int64_t t_ms, Fn fn) { queue_.push(Item{t_ms, seq_++, std::move(fn)}); }
  bool empty() const { return queue_.empty(); }
  int64_t next_time() const { return queue_.top().t; }
  int64_t now() const { return now_; }

  void step() {
    Item it = std::move(const_cast<Item&>(queue_.top()));
    queue_.pop();
    now_ = it.t;
    it.fn(it.t);
  }

 private:
  struct Item {
    int64_t t;
    uint64_t seq;
    Fn fn;
    bool operator>(const Item& o) const { return t != o.t ? t > o.t : seq > o.seq; }
  };
  std::priority_queue<Item, std::vector<Item>, std::greater<Item>> queue_;
  uint64_t seq_ = 0;
  int64_t now_ = 0;
};

enum class Loop : uint8_t { Discovery, Tracking };

struct TargetState {
  Endpoint addr;
  Loop loop = Loop::Discovery;
  std::optional<core::BotId> identity;  // verified: utp-key fingerprint (HJ) / node id (MZ)
  int64_t last_success = -1;
  std::optional<int64_t> unresponsive_since;
  int64_t phase_since = 0;  // entered the current loop
  bool probe_in_flight = false;
};

// The dual-loop crawler. Discovery enumerates candidates at dfreq and
// verifies bot identity; verified targets move to the tracking loop and are
// re-probed at tfreq. Unresponsive targets demote after ttimeout and are
// dropped after a further dtimeout.
class Crawler {
 public:
  using ObservationSink = std::function<void(const core::Observation&)>;

  Crawler(const CrawlerConfig& cfg, Transport& transport, Scheduler& sched,
          ObservationSink sink, uint64_t seed, int64_t start_ms, int64_t stop_ms);

  void start();  // schedules the first discovery/tracking ticks

  // -- inspection --
  const std::map<Endpoint, TargetState>& targets() const { return targets_; }
  std::set<core::BotId> tracked_identities() const;
  std::set<Endpoint> tracked_endpoints() const;
  const CrawlerConfig& config() const { return cfg_; }
  int64_t observations_emitted() const { return emitted_; }

 private:
  enum class Purpose : uint8_t {
    Verify,        // MZ find_node / HJ handshake on a candidate or demoted target
    Walk,          // HJ get_peers toward the daily infohash
    GossipFetch,   // MZ get_peers after a config-only reply (unlogged)
    Track,         // periodic probe of a tracking-loop target
  };
  struct Probe {
    Endpoint to;
    Purpose purpose;
    int64_t t0 = 0;
    int attempt = 0;
    std::vector<uint8_t> payload;
  };

  void discovery_tick(int64_t now);
  void tracking_tick(int64_t now);
  void lifecycle_update(int64_t now);
  void launch(Probe p, int64_t now);
  void attempt(Probe p, int64_t now);
  void on_reply(const Probe& p, const std::vector<uint8_t>& reply, int64_t now);
  void on_timeout(const Probe& p, int64_t now);
  void handle_mozi_reply(const Probe& p, const proto::KrpcMessage& m, int64_t now);
  void handle_hajime_walk_reply(const Probe& p, const proto::KrpcMessage& m, int64_t now);
  void handle_hajime_handshake_reply(const Probe& p, const std::vector<uint8_t>& raw,
                                     int64_t now);
  void add_candidate(const Endpoint& e, int64_t now);
  void walk_addr(const Endpoint& e, int64_t now);
  void verify_addr(const Endpoint& e, int64_t now);
  void promote(const Endpoint& e, const core::BotId& identity, int64_t now);
  void record_success(const Endpoint& e, const core::BotId& identity, core::Event ev,
                      std::string details, int64_t now);
  void record_failure(const Endpoint& e, core::Event ev, std::string details, int64_t now);
  bool probe_gate(Purpose purpose, const Endpoint& e);  // per-tick dedup + in-flight
  std::vector<uint8_t> verify_payload();
  std::vector<uint8_t> walk_payload(int64_t now);

  CrawlerConfig cfg_;
  Transport& transport_;
  Scheduler& sched_;
  ObservationSink sink_;
  int64_t start_ms_, stop_ms_;
  std::vector<int64_t> offsets_ms_;
  proto::NodeId self_id_{};
  Rng rng_;

  std::map<Endpoint, TargetState> targets_;
  std::map<Endpoint, int64_t> candidates_;  // address -> first seen
  std::vector<Endpoint> bootstrap_;
  std::set<std::pair<uint8_t, Endpoint>> tick_visited_;  // (purpose, addr) this wave
  std::set<std::pair<uint8_t, Endpoint>> inflight_;      // probes mid-retry
  int64_t emitted_ = 0;
  int64_t last_obs_ts_ = -1;
};

// Drives world + crawlers on the shared virtual clock until stop_ms.
void run_crawlers(simnet::SimWorld& world, Scheduler& sched, int64_t stop_ms);

}  // namespace botmesh::crawler
