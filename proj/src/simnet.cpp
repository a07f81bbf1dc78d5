#include "botmesh/simnet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace botmesh::simnet {

namespace {

constexpr uint8_t kVulnHj = 1;
constexpr uint8_t kVulnMz = 2;

uint8_t vuln_bit(Family f) { return f == Family::HJ ? kVulnHj : kVulnMz; }

uint64_t ep_key(uint32_t ip, uint16_t port) { return uint64_t(ip) << 16 | port; }

int64_t to_ms(double seconds) { return int64_t(std::llround(seconds * 1000.0)); }

}  // namespace

const char* journal_event_tag(JournalEvent e) {
  switch (e) {
    case JournalEvent::Infect: return "INFECT";
    case JournalEvent::Reboot: return "REBOOT";
    case JournalEvent::Wake: return "WAKE";
    case JournalEvent::Reassign: return "REASSIGN";
  }
  return "?";
}

// ---- config parsing ----

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v, bool* out) {
  if (v == "true" || v == "1") {
    *out = true;
    return true;
  }
  if (v == "false" || v == "0") {
    *out = false;
    return true;
  }
  return false;
}

[[noreturn]] void bad_field(const std::string& field, const std::string& value) {
  throw Error(Errc::ConfigInvalid, field + " = '" + value + "'");
}

double num_field(const std::string& field, const std::string& value) {
  try {
    size_t pos = 0;
    double d = std::stod(value, &pos);
    if (pos != value.size()) bad_field(field, value);
    return d;
  } catch (const Error&) {
    throw;
  } catch (...) {
    bad_field(field, value);
  }
}

int64_t int_field(const std::string& field, const std::string& value) {
  double d = num_field(field, value);
  if (d != std::floor(d)) bad_field(field, value);
  return int64_t(d);
}

// one `pool asn=... country=...` or `throttle asn=...` line
std::map<std::string, std::string> kv_tokens(const std::string& rest,
                                             const std::string& what) {
  std::map<std::string, std::string> out;
  std::istringstream iss(rest);
  std::string tok;
  while (iss >> tok) {
    auto eq = tok.find('=');
    if (eq == std::string::npos || eq == 0) bad_field(what, tok);
    out[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return out;
}

}  // namespace

SimConfig parse_sim_config(const std::string& text) {
  SimConfig cfg;
  std::istringstream is(text);
  std::string raw;
  while (std::getline(is, raw)) {
    auto hash = raw.find('#');
    if (hash != std::string::npos) raw.resize(hash);
    std::string line = trim(raw);
    if (line.empty()) continue;

    if (line.rfind("pool", 0) == 0 && (line.size() == 4 || line[4] == ' ')) {
      auto kv = kv_tokens(line.substr(4), "pool");
      AsPool p;
      for (auto& [k, v] : kv) {
        if (k == "asn") p.asn = uint32_t(int_field("pool.asn", v));
        else if (k == "country") p.country = v;
        else if (k == "prefix") {
          if (!parse_cidr(v, &p.prefix, &p.prefix_len)) bad_field("pool.prefix", v);
        } else if (k == "devices") p.device_count = int(int_field("pool.devices", v));
        else if (k == "nat") p.nat_group_size = int(int_field("pool.nat", v));
        else if (k == "mix_hj") p.mix_hj = num_field("pool.mix_hj", v);
        else if (k == "loss") p.loss = num_field("pool.loss", v);
        else if (k == "reassign_mean_s") p.reassign_mean_s = num_field("pool.reassign_mean_s", v);
        else if (k == "benign") p.benign_count = int(int_field("pool.benign", v));
        else bad_field("pool." + k, v);
      }
      cfg.pools.push_back(p);
      continue;
    }
    if (line.rfind("throttle", 0) == 0 && (line.size() == 8 || line[8] == ' ')) {
      auto kv = kv_tokens(line.substr(8), "throttle");
      ThrottleWindow w;
      for (auto& [k, v] : kv) {
        if (k == "asn") w.asn = uint32_t(int_field("throttle.asn", v));
        else if (k == "start_hour") w.start_hour = int(int_field("throttle.start_hour", v));
        else if (k == "end_hour") w.end_hour = int(int_field("throttle.end_hour", v));
        else if (k == "added_loss") w.added_loss = num_field("throttle.added_loss", v);
        else bad_field("throttle." + k, v);
      }
      cfg.throttles.push_back(w);
      continue;
    }

    auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(Errc::ConfigInvalid, "line '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key == "seed") cfg.seed = uint64_t(int_field(key, val));
    else if (key == "duration_s") cfg.duration_s = int_field(key, val);
    else if (key == "epoch_unix_s") cfg.epoch_unix_s = int_field(key, val);
    else if (key == "phi") cfg.phi = num_field(key, val);
    else if (key == "reboot_downtime_s") cfg.reboot_downtime_s = num_field(key, val);
    else if (key == "hj_skew_frac") cfg.hj_skew_frac = num_field(key, val);
    else if (key == "nat_burst") { if (!parse_bool(val, &cfg.nat_burst)) bad_field(key, val); }
    else if (key == "hajime_config_name") cfg.hajime_config_name = val;
    else if (key == "hj_uptime_mean_s") cfg.hj.uptime_mean_s = num_field(key, val);
    else if (key == "mz_uptime_mean_s") cfg.mz.uptime_mean_s = num_field(key, val);
    else if (key == "hj_reinfect_s") cfg.hj.reinfect_delay_s = num_field(key, val);
    else if (key == "mz_reinfect_s") cfg.mz.reinfect_delay_s = num_field(key, val);
    else if (key == "hj_persistence") { if (!parse_bool(val, &cfg.hj.persistence)) bad_field(key, val); }
    else if (key == "mz_persistence") { if (!parse_bool(val, &cfg.mz.persistence)) bad_field(key, val); }
    else throw Error(Errc::ConfigInvalid, "unknown key '" + key + "'");
  }
  validate_sim_config(cfg);
  return cfg;
}

SimConfig load_sim_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(Errc::IoError, "cannot open " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  return parse_sim_config(buf.str());
}

void validate_sim_config(const SimConfig& cfg) {
  auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (cfg.duration_s < 0) throw Error(Errc::ConfigInvalid, "duration_s");
  if (cfg.epoch_unix_s <= 0) throw Error(Errc::ConfigInvalid, "epoch_unix_s");
  if (!in01(cfg.phi)) throw Error(Errc::ConfigInvalid, "phi");
  if (cfg.reboot_downtime_s < 0) throw Error(Errc::ConfigInvalid, "reboot_downtime_s");
  if (!in01(cfg.hj_skew_frac)) throw Error(Errc::ConfigInvalid, "hj_skew_frac");
  if (cfg.hajime_config_name.empty()) throw Error(Errc::ConfigInvalid, "hajime_config_name");
  if (cfg.hj.uptime_mean_s < 0) throw Error(Errc::ConfigInvalid, "hj_uptime_mean_s");
  if (cfg.mz.uptime_mean_s < 0) throw Error(Errc::ConfigInvalid, "mz_uptime_mean_s");
  if (cfg.hj.reinfect_delay_s <= 0) throw Error(Errc::ConfigInvalid, "hj_reinfect_s");
  if (cfg.mz.reinfect_delay_s <= 0) throw Error(Errc::ConfigInvalid, "mz_reinfect_s");
  if (cfg.pools.empty()) throw Error(Errc::ConfigInvalid, "pools (none defined)");
  int total = 0;
  for (size_t i = 0; i < cfg.pools.size(); ++i) {
    const AsPool& p = cfg.pools[i];
    const std::string at = "pool[" + std::to_string(i) + "].";
    if (p.asn == 0) throw Error(Errc::ConfigInvalid, at + "asn");
    if (p.country.size() != 2) throw Error(Errc::ConfigInvalid, at + "country");
    if (p.device_count < 0) throw Error(Errc::ConfigInvalid, at + "devices");
    if (p.nat_group_size < 1) throw Error(Errc::ConfigInvalid, at + "nat");
    if (!in01(p.mix_hj)) throw Error(Errc::ConfigInvalid, at + "mix_hj");
    if (!in01(p.loss)) throw Error(Errc::ConfigInvalid, at + "loss");
    if (p.reassign_mean_s < 0) throw Error(Errc::ConfigInvalid, at + "reassign_mean_s");
    if (p.benign_count < 0) throw Error(Errc::ConfigInvalid, at + "benign");
    int groups = (p.device_count + p.nat_group_size - 1) / p.nat_group_size;
    int64_t capacity = (int64_t(1) << (32 - p.prefix_len)) - 2;
    if (capacity < 2 * (int64_t(groups) + p.benign_count) + 2)
      throw Error(Errc::ConfigInvalid, at + "prefix (too small for devices)");
    total += p.device_count + p.benign_count;
  }
  if (total == 0) throw Error(Errc::ConfigInvalid, "pools (no devices)");
  for (size_t i = 0; i < cfg.throttles.size(); ++i) {
    const ThrottleWindow& w = cfg.throttles[i];
    const std::string at = "throttle[" + std::to_string(i) + "].";
    if (w.start_hour < 0 || w.start_hour > 23) throw Error(Errc::ConfigInvalid, at + "start_hour");
    if (w.end_hour < 1 || w.end_hour > 24) throw Error(Errc::ConfigInvalid, at + "end_hour");
    if (w.start_hour >= w.end_hour) throw Error(Errc::ConfigInvalid, at + "start_hour >= end_hour");
    if (!in01(w.added_loss)) throw Error(Errc::ConfigInvalid, at + "added_loss");
  }
}

// ---- world ----

SimWorld::SimWorld(const SimConfig& cfg)
    : cfg_(cfg),
      clock_ms_(cfg.epoch_ms()),
      rng_topology_(Rng::stream(cfg.seed, "topology")),
      rng_uptime_(Rng::stream(cfg.seed, "uptime")),
      rng_infect_(Rng::stream(cfg.seed, "infect")),
      rng_reassign_(Rng::stream(cfg.seed, "reassign")),
      rng_loss_(Rng::stream(cfg.seed, "loss")),
      rng_reply_(Rng::stream(cfg.seed, "mozi_reply")),
      rng_ids_(Rng::stream(cfg.seed, "ids")) {
  validate_sim_config(cfg_);
  build_topology();
  initial_infections();
}

uint32_t SimWorld::alloc_ip(int pool) {
  const AsPool& p = cfg_.pools[pool];
  uint32_t span = uint32_t((uint64_t(1) << (32 - p.prefix_len)) - 2);
  auto& used = used_ips_[pool];
  for (int tries = 0; tries < 4096; ++tries) {
    uint32_t ip = p.prefix + 1 + uint32_t(rng_topology_.uniform(span));
    if (std::find(used.begin(), used.end(), ip) == used.end()) {
      used.push_back(ip);
      return ip;
    }
  }
  throw Error(Errc::ConfigInvalid, "pool prefix exhausted");
}

void SimWorld::release_ip(int pool, uint32_t ip) {
  auto& used = used_ips_[pool];
  used.erase(std::remove(used.begin(), used.end(), ip), used.end());
}

void SimWorld::build_topology() {
  for (size_t pi = 0; pi < cfg_.pools.size(); ++pi) {
    const AsPool& p = cfg_.pools[pi];
    int base = int(devices_.size());
    // vulnerability layout: the phi-shared block first, then HJ-only, then
    // MZ-only; NAT groups are contiguous so most stay family-homogeneous
    int n_both = int(std::llround(p.device_count * cfg_.phi));
    int n_hj = int(std::llround((p.device_count - n_both) * p.mix_hj));
    for (int i = 0; i < p.device_count; ++i) {
      Device d;
      d.pool = int(pi);
      if (i < n_both) d.vulnerable = kVulnHj | kVulnMz;
      else if (i < n_both + n_hj) d.vulnerable = kVulnHj;
      else d.vulnerable = kVulnMz;
      d.port = uint16_t(20000 + i % 40000);
      d.skew_days = 0;
      if ((d.vulnerable & kVulnHj) && cfg_.hj_skew_frac > 0 &&
          rng_topology_.chance(cfg_.hj_skew_frac))
        d.skew_days = rng_topology_.chance(0.5) ? 1 : -1;
      devices_.push_back(d);
    }
    // NAT groups over contiguous device runs
    for (int g = 0; g * p.nat_group_size < p.device_count; ++g) {
      NatGroup grp;
      grp.pool = int(pi);
      grp.public_ip = alloc_ip(int(pi));
      for (int i = g * p.nat_group_size; i < (g + 1) * p.nat_group_size && i < p.device_count;
           ++i) {
        grp.members.push_back(base + i);
        devices_[base + i].nat_group = int(nat_groups_.size());
      }
      nat_groups_.push_back(grp);
      if (p.reassign_mean_s > 0)
        schedule(clock_ms_ + to_ms(rng_reassign_.exponential(p.reassign_mean_s)),
                 EvKind::Reassign, int(nat_groups_.size()) - 1);
    }
    for (int b = 0; b < p.benign_count; ++b) {
      BenignPeer bp;
      bp.index = int(benign_.size());
      bp.pool = int(pi);
      bp.ip = alloc_ip(int(pi));
      bp.port = uint16_t(10000 + b % 9000);
      rng_topology_.fill(bp.node_id.data(), bp.node_id.size());
      benign_.push_back(bp);
    }
  }

  // endpoint index
  for (size_t i = 0; i < devices_.size(); ++i)
    endpoint_bot_[ep_key(nat_groups_[devices_[i].nat_group].public_ip, devices_[i].port)] =
        int(i);
  for (size_t i = 0; i < benign_.size(); ++i)
    endpoint_benign_[ep_key(benign_[i].ip, benign_[i].port)] = int(i);

  // gossip: per-family ring over the vulnerable set plus random picks, so a
  // full walk of the swarm is possible from any entry point
  auto wire_family = [this](Family f) {
    std::vector<int> members;
    for (size_t i = 0; i < devices_.size(); ++i)
      if (devices_[i].vulnerable & vuln_bit(f)) members.push_back(int(i));
    if (members.empty()) return;
    for (size_t k = 0; k < members.size(); ++k) {
      Device& d = devices_[members[k]];
      std::vector<int> peers;
      for (size_t r = 1; r <= 3 && r < members.size(); ++r)
        peers.push_back(members[(k + r) % members.size()]);
      for (int extra = 0; extra < 5 && members.size() > 4; ++extra) {
        int pick = members[rng_topology_.uniform(members.size())];
        if (pick != members[k]) peers.push_back(pick);
      }
      if (f == Family::HJ) d.peers_hj = peers;
      else d.peers_mz = peers;
    }
  };
  wire_family(Family::HJ);
  wire_family(Family::MZ);

  // benign peers know a spread of everything
  for (auto& bp : benign_) {
    for (int n = 0; n < 8 && !devices_.empty(); ++n)
      bp.known_devices.push_back(int(rng_topology_.uniform(devices_.size())));
    for (int n = 0; n < 3 && benign_.size() > 1; ++n)
      bp.known_benign.push_back(int(rng_topology_.uniform(benign_.size())));
  }
}

void SimWorld::initial_infections() {
  for (size_t i = 0; i < devices_.size(); ++i) {
    Device& d = devices_[i];
    Family f;
    if (d.vulnerable == (kVulnHj | kVulnMz))
      f = rng_infect_.chance(0.5) ? Family::HJ : Family::MZ;
    else
      f = (d.vulnerable & kVulnHj) ? Family::HJ : Family::MZ;
    infect(int(i), f);
  }
}

void SimWorld::infect(int device, Family f) {
  Device& d = devices_[device];
  d.infected = true;
  d.up = true;
  d.family = f;
  d.persistent_family = f;
  d.persistent = (f == Family::HJ ? cfg_.hj : cfg_.mz).persistence;
  ++d.infection_no;
  if (f == Family::MZ) {
    proto::MoziIdParams p;
    p.time = clock_ms_ / 1000;
    p.pid = uint32_t(rng_ids_.uniform(32768)) + 2;
    p.ppid = uint32_t(rng_ids_.uniform(1024)) + 1;
    p.prefix_len = 6;
    d.node_id = proto::mozi_generate_id(p);
  } else {
    rng_ids_.fill(d.node_id.data(), d.node_id.size());
    rng_ids_.fill(d.utp_key.data(), d.utp_key.size());
  }
  journal_add(JournalEvent::Infect, device, f, d.node_id);

  double uptime = (f == Family::HJ ? cfg_.hj : cfg_.mz).uptime_mean_s;
  if (uptime > 0)
    schedule(clock_ms_ + to_ms(rng_uptime_.exponential(uptime)), EvKind::Reboot, device,
             f, d.infection_no);

  if (cfg_.nat_burst) {
    for (int m : nat_groups_[d.nat_group].members) {
      Device& other = devices_[m];
      if (m != device && other.up && !other.infected && (other.vulnerable & vuln_bit(f))) {
        double mean = (f == Family::HJ ? cfg_.hj : cfg_.mz).reinfect_delay_s / 10.0;
        schedule(clock_ms_ + to_ms(rng_infect_.exponential(mean)), EvKind::Claim, m, f,
                 other.infection_no);
      }
    }
  }
}

void SimWorld::schedule(int64_t t, EvKind kind, int subject, Family fam, uint64_t guard) {
  queue_.push(Ev{t, seq_++, kind, subject, fam, guard});
}

void SimWorld::schedule_claims(int device) {
  Device& d = devices_[device];
  for (Family f : {Family::HJ, Family::MZ}) {
    if (!(d.vulnerable & vuln_bit(f))) continue;
    double cfg_delay = (f == Family::HJ ? cfg_.hj : cfg_.mz).reinfect_delay_s;
    // the former owner re-scans its lost device after the configured delay;
    // a competing family's scanner reaches it at an exponential time
    double delay = f == d.persistent_family ? cfg_delay : rng_infect_.exponential(cfg_delay);
    schedule(clock_ms_ + to_ms(delay), EvKind::Claim, device, f, d.infection_no);
  }
}

void SimWorld::process(const Ev& ev) {
  switch (ev.kind) {
    case EvKind::Reboot: {
      Device& d = devices_[ev.subject];
      if (!d.infected || !d.up || d.infection_no != ev.guard) break;  // stale
      journal_add(JournalEvent::Reboot, ev.subject, d.family, d.node_id);
      d.up = false;
      d.infected = false;
      schedule(clock_ms_ + to_ms(cfg_.reboot_downtime_s), EvKind::Wake, ev.subject);
      break;
    }
    case EvKind::Wake: {
      Device& d = devices_[ev.subject];
      d.up = true;
      journal_add(JournalEvent::Wake, ev.subject, std::nullopt, std::nullopt);
      if (d.persistent) {
        // autostart folder survived the reboot: same family, fresh ID
        infect(ev.subject, d.persistent_family);
      } else {
        schedule_claims(ev.subject);
      }
      break;
    }
    case EvKind::Claim: {
      Device& d = devices_[ev.subject];
      if (!d.up || d.infected || d.infection_no != ev.guard) break;
      if (!(d.vulnerable & vuln_bit(ev.family))) break;
      infect(ev.subject, ev.family);
      break;
    }
    case EvKind::Reassign: {
      NatGroup& g = nat_groups_[ev.subject];
      for (int m : g.members) endpoint_bot_.erase(ep_key(g.public_ip, devices_[m].port));
      release_ip(g.pool, g.public_ip);
      g.public_ip = alloc_ip(g.pool);
      for (int m : g.members) {
        endpoint_bot_[ep_key(g.public_ip, devices_[m].port)] = m;
        journal_add(JournalEvent::Reassign, m,
                    devices_[m].infected ? std::optional<Family>(devices_[m].family)
                                         : std::nullopt,
                    devices_[m].infected ? std::optional<proto::NodeId>(devices_[m].node_id)
                                         : std::nullopt);
      }
      double mean = cfg_.pools[g.pool].reassign_mean_s;
      schedule(clock_ms_ + to_ms(rng_reassign_.exponential(mean)), EvKind::Reassign,
               ev.subject);
      break;
    }
  }
}

void SimWorld::advance_to(int64_t t_ms) {
  while (!queue_.empty() && queue_.top().t <= t_ms) {
    Ev ev = queue_.top();
    queue_.pop();
    clock_ms_ = ev.t;
    process(ev);
  }
  if (t_ms > clock_ms_) clock_ms_ = t_ms;
}

void SimWorld::journal_add(JournalEvent ev, int device, std::optional<Family> fam,
                           std::optional<proto::NodeId> id) {
  const Device& d = devices_[device];
  journal_.push_back(JournalEntry{clock_ms_, ev, device, fam, id,
                                  nat_groups_[d.nat_group].public_ip,
                                  cfg_.pools[d.pool].asn});
}

double SimWorld::loss_probability(uint32_t asn, double base) const {
  double p = base;
  int hour = utc_hour(clock_ms_);
  for (const auto& w : cfg_.throttles)
    if (w.asn == asn && hour >= w.start_hour && hour < w.end_hour) p += w.added_loss;
  return std::min(1.0, p);
}

proto::Infohash SimWorld::device_daily_infohash(const Device& d) const {
  int64_t day = proto::day_index_of(clock_ms_ / 1000) + d.skew_days;
  return proto::hajime_daily_infohash(cfg_.hajime_config_name, day);
}

std::vector<proto::NodeEntry> SimWorld::materialize_peers(const Device& d,
                                                          size_t max_n) const {
  // live gossip: address/ID as currently known for peers still flying this
  // family's flag (down peers stay listed, flipped devices drop out)
  std::vector<proto::NodeEntry> out;
  const auto& peer_list = d.family == Family::HJ ? d.peers_hj : d.peers_mz;
  for (int pi : peer_list) {
    const Device& p = devices_[pi];
    if (p.family != d.family) continue;
    proto::NodeEntry e;
    e.id = p.node_id;
    e.ip = nat_groups_[p.nat_group].public_ip;
    e.port = p.port;
    out.push_back(e);
    if (out.size() >= max_n) break;
  }
  return out;
}

std::optional<std::vector<uint8_t>> SimWorld::bot_handle(Device& d,
                                                         const std::vector<uint8_t>& in) {
  if (proto::is_handshake_request(in.data(), in.size())) {
    if (d.family != Family::HJ) return std::nullopt;  // not listening for uTP
    int64_t day = proto::day_index_of(clock_ms_ / 1000) + d.skew_days;
    return proto::encode_handshake_response(d.utp_key, day);
  }
  proto::KrpcMessage req;
  try {
    req = proto::decode_krpc(in);
  } catch (const Error&) {
    return std::nullopt;  // garbage is dropped
  }

  proto::KrpcMessage resp;
  resp.transaction_id = req.transaction_id;
  resp.sender_id = d.node_id;

  if (d.family == Family::MZ) {
    if (req.kind == proto::MsgKind::FindNode) {
      proto::MoziBotState st;
      st.id = d.node_id;
      st.peers = materialize_peers(d, 16);
      std::string cfg_blob = "MZCONFIG:v1,day=" + std::to_string(
                                 proto::day_index_of(clock_ms_ / 1000));
      st.config.assign(cfg_blob.begin(), cfg_blob.end());
      return proto::encode_krpc(proto::mozi_respond_find_node(st, req, rng_reply_));
    }
    resp.kind = proto::MsgKind::ResponseNodes;
    if (req.kind == proto::MsgKind::GetPeers)
      resp.nodes = proto::closest_nodes(materialize_peers(d, 16), req.info_hash, 8);
    return proto::encode_krpc(resp);
  }

  // Hajime bot: ordinary DHT node that also seeds the daily config
  if (req.kind == proto::MsgKind::GetPeers) {
    if (req.info_hash == device_daily_infohash(d)) {
      // seeders of this infohash: itself plus peers on the same local day
      resp.kind = proto::MsgKind::ResponsePeers;
      resp.peers.push_back(
          proto::PeerEntry{nat_groups_[d.nat_group].public_ip, d.port});
      for (int pi : d.peers_hj) {
        const Device& p = devices_[pi];
        if (p.family != Family::HJ || p.skew_days != d.skew_days) continue;
        resp.peers.push_back(proto::PeerEntry{nat_groups_[p.nat_group].public_ip, p.port});
        if (resp.peers.size() >= 8) break;
      }
      return proto::encode_krpc(resp);
    }
    resp.kind = proto::MsgKind::ResponseNodes;
    resp.nodes = proto::closest_nodes(materialize_peers(d, 16), req.info_hash, 8);
    return proto::encode_krpc(resp);
  }
  resp.kind = proto::MsgKind::ResponseNodes;
  if (req.kind == proto::MsgKind::FindNode)
    resp.nodes = proto::closest_nodes(materialize_peers(d, 16), req.target, 8);
  return proto::encode_krpc(resp);
}

std::optional<std::vector<uint8_t>> SimWorld::benign_handle(BenignPeer& b,
                                                            const std::vector<uint8_t>& in) {
  proto::KrpcMessage resp;
  resp.sender_id = b.node_id;

  proto::KrpcMessage req;
  try {
    req = proto::decode_krpc(in);
  } catch (const Error&) {
    // a real client answers unknown traffic with a KRPC error, which is what
    // trips the crawler's handshake verification
    resp.kind = proto::MsgKind::Error;
    resp.error_code = 204;
    resp.error_message = "Method Unknown";
    return proto::encode_krpc(resp);
  }
  resp.transaction_id = req.transaction_id;
  if (req.kind == proto::MsgKind::GetPeers && b.index % 3 == 0) {
    // the occasional broken client with bogus announce storage: returns
    // itself as a peer for whatever infohash it is asked about
    resp.kind = proto::MsgKind::ResponsePeers;
    resp.peers.push_back(proto::PeerEntry{b.ip, b.port});
    return proto::encode_krpc(resp);
  }
  resp.kind = proto::MsgKind::ResponseNodes;
  std::vector<proto::NodeEntry> known;
  for (int di : b.known_devices) {
    const Device& d = devices_[di];
    known.push_back(proto::NodeEntry{d.node_id, nat_groups_[d.nat_group].public_ip, d.port});
  }
  for (int bi : b.known_benign)
    known.push_back(proto::NodeEntry{benign_[bi].node_id, benign_[bi].ip, benign_[bi].port});
  proto::NodeId ref = req.kind == proto::MsgKind::FindNode || req.kind == proto::MsgKind::Ping
                          ? req.target
                          : req.info_hash;
  resp.nodes = proto::closest_nodes(known, ref, 8);
  return proto::encode_krpc(resp);
}

std::optional<std::vector<uint8_t>> SimWorld::deliver(const Endpoint& to,
                                                      const std::vector<uint8_t>& payload) {
  auto bot_it = endpoint_bot_.find(ep_key(to.ip, to.port));
  if (bot_it != endpoint_bot_.end()) {
    Device& d = devices_[bot_it->second];
    const AsPool& pool = cfg_.pools[d.pool];
    if (rng_loss_.chance(loss_probability(pool.asn, pool.loss))) return std::nullopt;
    if (!d.up || !d.infected) return std::nullopt;
    return bot_handle(d, payload);
  }
  auto ben_it = endpoint_benign_.find(ep_key(to.ip, to.port));
  if (ben_it != endpoint_benign_.end()) {
    BenignPeer& b = benign_[ben_it->second];
    const AsPool& pool = cfg_.pools[b.pool];
    if (rng_loss_.chance(loss_probability(pool.asn, pool.loss))) return std::nullopt;
    return benign_handle(b, payload);
  }
  return std::nullopt;
}

std::vector<GroundTruthBot> SimWorld::ground_truth(int64_t t_ms, Family f) const {
  struct St {
    Family family;
    proto::NodeId id;
    uint32_t ip;
    uint32_t asn;
  };
  std::map<int, St> state;
  for (const auto& e : journal_) {
    if (e.ts > t_ms) break;
    switch (e.event) {
      case JournalEvent::Infect:
        state[e.device] = St{*e.family, *e.node_id, e.ip, e.asn};
        break;
      case JournalEvent::Reboot:
        state.erase(e.device);
        break;
      case JournalEvent::Wake:
        break;
      case JournalEvent::Reassign: {
        auto it = state.find(e.device);
        if (it != state.end()) it->second.ip = e.ip;
        break;
      }
    }
  }
  std::vector<GroundTruthBot> out;
  for (const auto& [dev, st] : state)
    if (st.family == f) out.push_back(GroundTruthBot{dev, st.id, st.ip, st.asn});
  return out;
}

void SimWorld::write_journal_csv(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw Error(Errc::IoError, "cannot open " + path);
  os << "ts,event,device,family,node_id,ip,asn\n";
  for (const auto& e : journal_) {
    os << e.ts << ',' << journal_event_tag(e.event) << ',' << e.device << ','
       << (e.family ? family_tag(*e.family) : "") << ','
       << (e.node_id ? to_hex(e.node_id->data(), e.node_id->size()) : "") << ','
       << ipv4_to_string(e.ip) << ',' << e.asn << '\n';
  }
  if (!os) throw Error(Errc::IoError, "write failed: " + path);
}

std::vector<Endpoint> SimWorld::bootstrap_endpoints(size_t k) const {
  std::vector<Endpoint> out;
  size_t benign_cap = devices_.empty() ? k : (k > 2 ? k - 2 : 1);
  for (const auto& b : benign_) {
    if (out.size() >= benign_cap || out.size() >= k) break;
    out.push_back(Endpoint{b.ip, b.port});
  }
  // fill with up bots, family-balanced, so both swarms are reachable
  size_t per_family = (k - out.size() + 1) / 2;
  size_t n_hj = 0, n_mz = 0;
  for (const auto& d : devices_) {
    if (out.size() >= k) return out;
    if (!d.up || !d.infected) continue;
    size_t& n = d.family == Family::HJ ? n_hj : n_mz;
    if (n >= per_family) continue;
    ++n;
    out.push_back(Endpoint{nat_groups_[d.nat_group].public_ip, d.port});
  }
  return out;
}

SimWorld::DeviceView SimWorld::device_view(int index) const {
  const Device& d = devices_[index];
  return DeviceView{index,        d.family, d.infected, d.up,
                    d.node_id,    d.utp_key, nat_groups_[d.nat_group].public_ip,
                    d.port,       cfg_.pools[d.pool].asn, d.skew_days};
}

int SimWorld::infected_count(Family f) const {
  int n = 0;
  for (const auto& d : devices_)
    if (d.up && d.infected && d.family == f) ++n;
  return n;
}

int SimWorld::uninfected_up_count() const {
  int n = 0;
  for (const auto& d : devices_)
    if (d.up && !d.infected) ++n;
  return n;
}

int SimWorld::down_count() const {
  int n = 0;
  for (const auto& d : devices_)
    if (!d.up) ++n;
  return n;
}

}  // namespace botmesh::simnet
