#include "botmesh/crawler.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace botmesh::crawler {

std::vector<int> retry_schedule(int nretry) {
  if (nretry < 1) throw Error(Errc::InvalidNretry, std::to_string(nretry));
  std::vector<int> out;
  int d = 2;
  for (int i = 0; i < nretry; ++i, d *= 2) out.push_back(d);
  return out;
}

std::vector<int64_t> attempt_offsets_ms(int nretry) {
  std::vector<int64_t> out{0};
  int64_t acc = 0;
  for (int d : retry_schedule(nretry)) {
    acc += d;
    out.push_back(acc * 1000);
  }
  return out;
}

// ---- config ----

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

}  // namespace

CrawlerConfig parse_crawler_config(const std::string& text) {
  CrawlerConfig cfg;
  std::istringstream is(text);
  std::string raw;
  while (std::getline(is, raw)) {
    auto hash = raw.find('#');
    if (hash != std::string::npos) raw.resize(hash);
    std::string line = trim(raw);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(Errc::ConfigInvalid, "line '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    try {
      if (key == "family") {
        if (!parse_family(val, &cfg.family)) throw Error(Errc::ConfigInvalid, key);
      } else if (key == "dfreq_s") cfg.dfreq_s = std::stoi(val);
      else if (key == "tfreq_s") cfg.tfreq_s = std::stoi(val);
      else if (key == "dtimeout_s") cfg.dtimeout_s = std::stoi(val);
      else if (key == "ttimeout_s") cfg.ttimeout_s = std::stoi(val);
      else if (key == "nretry") cfg.nretry = std::stoi(val);
      else if (key == "day_offset") cfg.day_offset = std::stoi(val);
      else if (key == "crawler_id") cfg.crawler_id = val;
      else if (key == "bootstrap") {
        cfg.bootstrap.clear();
        if (val != "auto" && !val.empty()) {
          std::istringstream bs(val);
          std::string item;
          while (std::getline(bs, item, ',')) {
            item = trim(item);
            auto colon = item.find(':');
            if (colon == std::string::npos) throw Error(Errc::ConfigInvalid, key);
            uint32_t ip;
            if (!parse_ipv4(item.substr(0, colon), &ip))
              throw Error(Errc::ConfigInvalid, key + " '" + item + "'");
            int port = std::stoi(item.substr(colon + 1));
            if (port < 1 || port > 65535) throw Error(Errc::ConfigInvalid, key);
            cfg.bootstrap.push_back(Endpoint{ip, uint16_t(port)});
          }
        }
      } else {
        throw Error(Errc::ConfigInvalid, "unknown key '" + key + "'");
      }
    } catch (const Error&) {
      throw;
    } catch (...) {
      throw Error(Errc::ConfigInvalid, key + " = '" + val + "'");
    }
  }
  validate_crawler_config(cfg);
  return cfg;
}

CrawlerConfig load_crawler_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(Errc::IoError, "cannot open " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  return parse_crawler_config(buf.str());
}

void validate_crawler_config(const CrawlerConfig& cfg) {
  if (cfg.dfreq_s <= 0) throw Error(Errc::ConfigInvalid, "dfreq_s");
  if (cfg.tfreq_s <= 0) throw Error(Errc::ConfigInvalid, "tfreq_s");
  if (cfg.dtimeout_s <= 0) throw Error(Errc::ConfigInvalid, "dtimeout_s");
  if (cfg.ttimeout_s <= 0) throw Error(Errc::ConfigInvalid, "ttimeout_s");
  if (cfg.nretry < 1) throw Error(Errc::InvalidNretry, std::to_string(cfg.nretry));
  if (cfg.day_offset < -1 || cfg.day_offset > 1) throw Error(Errc::ConfigInvalid, "day_offset");
  if (cfg.crawler_id.empty()) throw Error(Errc::ConfigInvalid, "crawler_id");
  if (cfg.hajime_config_name.empty())
    throw Error(Errc::ConfigInvalid, "hajime_config_name");
}

// ---- crawler ----

Crawler::Crawler(const CrawlerConfig& cfg, Transport& transport, Scheduler& sched,
                 ObservationSink sink, uint64_t seed, int64_t start_ms, int64_t stop_ms)
    : cfg_(cfg),
      transport_(transport),
      sched_(sched),
      sink_(std::move(sink)),
      start_ms_(start_ms),
      stop_ms_(stop_ms),
      offsets_ms_(attempt_offsets_ms(cfg.nretry)),
      rng_(Rng::stream(seed, "crawler/" + cfg.crawler_id)) {
  rng_.fill(self_id_.data(), self_id_.size());
  if (cfg_.family == Family::MZ)
    std::fill(self_id_.begin(), self_id_.begin() + 6, proto::kMoziPrefixByte);
}

void Crawler::start() {
  bootstrap_ = cfg_.bootstrap.empty() ? transport_.default_bootstrap() : cfg_.bootstrap;
  sched_.at(start_ms_, [this](int64_t now) { discovery_tick(now); });
  sched_.at(start_ms_, [this](int64_t now) { tracking_tick(now); });
}

std::set<core::BotId> Crawler::tracked_identities() const {
  std::set<core::BotId> out;
  for (const auto& [e, t] : targets_)
    if (t.loop == Loop::Tracking && t.identity) out.insert(*t.identity);
  return out;
}

std::set<Endpoint> Crawler::tracked_endpoints() const {
  std::set<Endpoint> out;
  for (const auto& [e, t] : targets_)
    if (t.loop == Loop::Tracking) out.insert(e);
  return out;
}

std::vector<uint8_t> Crawler::verify_payload() {
  if (cfg_.family == Family::HJ) return proto::encode_handshake_request();
  proto::KrpcMessage q;
  q.kind = proto::MsgKind::FindNode;
  q.transaction_id = {uint8_t(rng_.next_u32()), uint8_t(rng_.next_u32())};
  q.sender_id = self_id_;
  rng_.fill(q.target.data(), q.target.size());
  return proto::encode_krpc(q);
}

std::vector<uint8_t> Crawler::walk_payload(int64_t now) {
  proto::KrpcMessage q;
  q.transaction_id = {uint8_t(rng_.next_u32()), uint8_t(rng_.next_u32())};
  q.sender_id = self_id_;
  if (cfg_.family == Family::HJ) {
    q.kind = proto::MsgKind::GetPeers;
    int64_t day = proto::day_index_of(now / 1000) + cfg_.day_offset;
    q.info_hash = proto::hajime_daily_infohash(cfg_.hajime_config_name, day);
  } else {
    q.kind = proto::MsgKind::GetPeers;
    rng_.fill(q.info_hash.data(), q.info_hash.size());
  }
  return proto::encode_krpc(q);
}

bool Crawler::probe_gate(Purpose purpose, const Endpoint& e) {
  auto key = std::make_pair(uint8_t(purpose), e);
  if (purpose != Purpose::Track) {
    if (tick_visited_.count(key)) return false;
    tick_visited_.insert(key);
  }
  if (inflight_.count(key)) return false;
  inflight_.insert(key);
  return true;
}

void Crawler::verify_addr(const Endpoint& e, int64_t now) {
  auto it = targets_.find(e);
  if (it != targets_.end() && it->second.loop == Loop::Tracking) return;
  if (!probe_gate(Purpose::Verify, e)) return;
  launch(Probe{e, Purpose::Verify, now, 0, verify_payload()}, now);
}

void Crawler::walk_addr(const Endpoint& e, int64_t now) {
  if (!probe_gate(Purpose::Walk, e)) return;
  launch(Probe{e, Purpose::Walk, now, 0, walk_payload(now)}, now);
}

void Crawler::add_candidate(const Endpoint& e, int64_t now) {
  auto it = targets_.find(e);
  if (it != targets_.end() && it->second.loop == Loop::Tracking) return;
  candidates_.emplace(e, now);  // keeps the original first-seen on repeats
  // immediate expansion: new addresses learned mid-wave are explored at once
  if (cfg_.family == Family::HJ) walk_addr(e, now);
  else verify_addr(e, now);
}

void Crawler::discovery_tick(int64_t now) {
  tick_visited_.clear();
  lifecycle_update(now);

  // age out candidates that never produced a verified bot
  for (auto it = candidates_.begin(); it != candidates_.end();) {
    if (now - it->second > int64_t(cfg_.dtimeout_s) * 1000)
      it = candidates_.erase(it);
    else
      ++it;
  }

  std::vector<Endpoint> walk_seeds = bootstrap_;
  std::vector<Endpoint> verify_seeds;
  for (const auto& [e, first_seen] : candidates_) walk_seeds.push_back(e);
  for (const auto& [e, t] : targets_) {
    if (t.loop == Loop::Discovery) verify_seeds.push_back(e);  // demoted: re-verify
    if (cfg_.family == Family::HJ) walk_seeds.push_back(e);    // gossip harvest
  }

  if (cfg_.family == Family::HJ) {
    for (const auto& e : walk_seeds) walk_addr(e, now);
  } else {
    for (const auto& e : walk_seeds) verify_addr(e, now);
  }
  for (const auto& e : verify_seeds) verify_addr(e, now);

  int64_t next = now + int64_t(cfg_.dfreq_s) * 1000;
  if (next < stop_ms_) sched_.at(next, [this](int64_t t) { discovery_tick(t); });
}

void Crawler::tracking_tick(int64_t now) {
  lifecycle_update(now);
  std::vector<Endpoint> due;
  for (const auto& [e, t] : targets_)
    if (t.loop == Loop::Tracking) due.push_back(e);
  for (const auto& e : due) {
    if (!probe_gate(Purpose::Track, e)) continue;
    targets_[e].probe_in_flight = true;
    std::vector<uint8_t> payload =
        cfg_.family == Family::HJ ? proto::encode_handshake_request() : verify_payload();
    launch(Probe{e, Purpose::Track, now, 0, std::move(payload)}, now);
  }
  int64_t next = now + int64_t(cfg_.tfreq_s) * 1000;
  if (next < stop_ms_) sched_.at(next, [this](int64_t t) { tracking_tick(t); });
}

void Crawler::lifecycle_update(int64_t now) {
  std::vector<Endpoint> demote, remove;
  for (auto& [e, t] : targets_) {
    if (t.loop == Loop::Tracking && t.unresponsive_since &&
        now - t.last_success > int64_t(cfg_.ttimeout_s) * 1000)
      demote.push_back(e);
    else if (t.loop == Loop::Discovery && now - t.phase_since > int64_t(cfg_.dtimeout_s) * 1000)
      remove.push_back(e);
  }
  for (const auto& e : demote) {
    TargetState& t = targets_[e];
    t.loop = Loop::Discovery;
    t.phase_since = now;
  }
  for (const auto& e : remove) targets_.erase(e);
}

void Crawler::launch(Probe p, int64_t now) { attempt(std::move(p), now); }

void Crawler::attempt(Probe p, int64_t now) {
  auto reply = transport_.request(p.to, p.payload);
  if (reply) {
    inflight_.erase(std::make_pair(uint8_t(p.purpose), p.to));
    if (auto it = targets_.find(p.to); it != targets_.end())
      it->second.probe_in_flight = false;
    on_reply(p, *reply, now);
    return;
  }
  if (p.attempt >= cfg_.nretry) {
    inflight_.erase(std::make_pair(uint8_t(p.purpose), p.to));
    if (auto it = targets_.find(p.to); it != targets_.end())
      it->second.probe_in_flight = false;
    on_timeout(p, now);
    return;
  }
  p.attempt += 1;
  int64_t next = p.t0 + offsets_ms_[size_t(p.attempt)];
  Probe next_probe = std::move(p);
  sched_.at(next, [this, probe = std::move(next_probe)](int64_t t) mutable {
    attempt(std::move(probe), t);
  });
}

void Crawler::record_success(const Endpoint& e, const core::BotId& identity, core::Event ev,
                             std::string details, int64_t now) {
  core::Observation o;
  o.ts = now;
  o.botnet = cfg_.family;
  o.ip = e.ip;
  o.port = e.port;
  o.bot_id = identity;
  o.event = ev;
  o.details = std::move(details);
  last_obs_ts_ = now;
  ++emitted_;
  if (sink_) sink_(o);
  if (auto it = targets_.find(e); it != targets_.end()) {
    it->second.last_success = now;
    it->second.unresponsive_since.reset();
  }
}

void Crawler::record_failure(const Endpoint& e, core::Event ev, std::string details,
                             int64_t now) {
  core::Observation o;
  o.ts = now;
  o.botnet = cfg_.family;
  o.ip = e.ip;
  o.port = e.port;
  o.event = ev;
  o.details = std::move(details);
  auto it = targets_.find(e);
  if (it != targets_.end()) {
    o.bot_id = it->second.identity;
    if (!it->second.unresponsive_since) it->second.unresponsive_since = now;
  }
  last_obs_ts_ = now;
  ++emitted_;
  if (sink_) sink_(o);
}

void Crawler::promote(const Endpoint& e, const core::BotId& identity, int64_t now) {
  TargetState fresh;
  fresh.addr = e;
  auto [it, inserted] = targets_.emplace(e, fresh);
  TargetState& t = it->second;
  if (inserted || t.loop != Loop::Tracking) {
    t.loop = Loop::Tracking;
    t.phase_since = now;
  }
  t.identity = identity;
  t.last_success = now;
  t.unresponsive_since.reset();
  candidates_.erase(e);
}

void Crawler::on_timeout(const Probe& p, int64_t now) {
  if (p.purpose == Purpose::GossipFetch) return;  // bookkeeping traffic, not an attempt
  record_failure(p.to, core::Event::Timeout, "", now);
}

void Crawler::on_reply(const Probe& p, const std::vector<uint8_t>& reply, int64_t now) {
  if (cfg_.family == Family::HJ &&
      (p.purpose == Purpose::Verify || p.purpose == Purpose::Track)) {
    handle_hajime_handshake_reply(p, reply, now);
    return;
  }
  proto::KrpcMessage m;
  try {
    m = proto::decode_krpc(reply);
  } catch (const Error&) {
    if (p.purpose != Purpose::GossipFetch)
      record_failure(p.to, core::Event::ProtocolError, "{\"err\":\"undecodable\"}", now);
    return;
  }
  if (m.kind == proto::MsgKind::Error) {
    if (p.purpose != Purpose::GossipFetch)
      record_failure(p.to, core::Event::ProtocolError,
                     "{\"err\":\"krpc_error\",\"code\":" + std::to_string(m.error_code) + "}",
                     now);
    return;
  }
  switch (p.purpose) {
    case Purpose::Walk:
      handle_hajime_walk_reply(p, m, now);
      break;
    case Purpose::GossipFetch:
      if (m.kind == proto::MsgKind::ResponseNodes)
        for (const auto& n : m.nodes) add_candidate(Endpoint{n.ip, n.port}, now);
      break;
    case Purpose::Verify:
    case Purpose::Track:
      handle_mozi_reply(p, m, now);
      break;
  }
}

void Crawler::handle_mozi_reply(const Probe& p, const proto::KrpcMessage& m, int64_t now) {
  const bool verified = proto::mozi_is_bot_id(m.sender_id, 6);
  if (m.kind == proto::MsgKind::ResponseNodes) {
    for (const auto& n : m.nodes) add_candidate(Endpoint{n.ip, n.port}, now);
    if (verified) {
      record_success(p.to, m.sender_id, core::Event::ReplyNodes, "", now);
      promote(p.to, m.sender_id, now);
    } else if (p.purpose == Purpose::Track) {
      // a tracked address now answered by a non-bot: the bot is gone
      record_failure(p.to, core::Event::ProtocolError, "{\"err\":\"sender_not_bot\"}", now);
    }
    return;
  }
  if (m.kind == proto::MsgKind::ResponseConfig) {
    if (verified) {
      record_success(p.to, m.sender_id, core::Event::ReplyConfig, "", now);
      promote(p.to, m.sender_id, now);
      // a config reply carries no gossip; fetch the peer table separately
      if (probe_gate(Purpose::GossipFetch, p.to))
        launch(Probe{p.to, Purpose::GossipFetch, now, 0, walk_payload(now)}, now);
    } else {
      record_failure(p.to, core::Event::ProtocolError, "{\"err\":\"config_from_non_bot\"}",
                     now);
    }
    return;
  }
  record_failure(p.to, core::Event::ProtocolError, "{\"err\":\"unexpected_kind\"}", now);
}

void Crawler::handle_hajime_walk_reply(const Probe& p, const proto::KrpcMessage& m,
                                       int64_t now) {
  if (m.kind == proto::MsgKind::ResponseNodes) {
    for (const auto& n : m.nodes) add_candidate(Endpoint{n.ip, n.port}, now);
    return;
  }
  if (m.kind == proto::MsgKind::ResponsePeers) {
    for (const auto& pe : m.peers) {
      Endpoint seeder{pe.ip, pe.port};
      add_candidate(seeder, now);  // seeders are DHT nodes too
      verify_addr(seeder, now);    // and handshake them
    }
    return;
  }
  record_failure(p.to, core::Event::ProtocolError, "{\"err\":\"unexpected_kind\"}", now);
}

void Crawler::handle_hajime_handshake_reply(const Probe& p, const std::vector<uint8_t>& raw,
                                            int64_t now) {
  try {
    proto::HajimeSession s =
        proto::parse_handshake_response(p.to.ip, p.to.port, raw.data(), raw.size());
    core::BotId fp = proto::utp_key_fingerprint(s.utp_key);
    if (p.purpose == Purpose::Verify) {
      record_success(p.to, fp, core::Event::HandshakeOk,
                     "{\"key\":\"" + to_hex(s.utp_key.data(), s.utp_key.size()) + "\"}", now);
    } else {
      record_success(p.to, fp, core::Event::ReplyConfig, "", now);
    }
    promote(p.to, fp, now);
  } catch (const Error&) {
    record_failure(p.to, core::Event::ProtocolError, "{\"err\":\"handshake_malformed\"}",
                   now);
  }
}

void run_crawlers(simnet::SimWorld& world, Scheduler& sched, int64_t stop_ms) {
  while (!sched.empty() && sched.next_time() < stop_ms) {
    int64_t t = sched.next_time();
    world.advance_to(t);
    sched.step();
  }
  world.advance_to(stop_ms);
}

}  // namespace botmesh::crawler
