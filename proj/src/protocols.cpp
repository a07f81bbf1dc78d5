#include "botmesh/protocols.hpp"

#include <algorithm>
#include <cstring>

#include "botmesh/sha1.hpp"

namespace botmesh::proto {

// ---- Mozi identifiers ----

NodeId mozi_generate_id(const MoziIdParams& p) {
  if (p.prefix_len != 6 && p.prefix_len != 8)
    throw Error(Errc::InvalidPrefixLen, std::to_string(p.prefix_len));
  NodeId id;
  std::fill(id.begin(), id.begin() + p.prefix_len, kMoziPrefixByte);
  uint32_t x = uint32_t(uint64_t(p.time) ^ uint64_t(p.ppid ^ p.pid)) & 0x7FFFFFFFu;
  for (int i = p.prefix_len; i < 20; ++i) {
    x = uint32_t((uint64_t(x) * 1103515245u + 12345u) & 0x7FFFFFFFu);
    id[i] = uint8_t(x >> 16);
  }
  return id;
}

bool mozi_is_bot_id(const NodeId& id, int prefix_len) {
  if (prefix_len < 1 || prefix_len > 20) return false;
  for (int i = 0; i < prefix_len; ++i)
    if (id[i] != kMoziPrefixByte) return false;
  return true;
}

// ---- Hajime identifiers ----

Infohash hajime_daily_infohash(const std::string& config_name, int64_t day_index) {
  std::string input = config_name + "-" + std::to_string(day_index);
  return Sha1::hash(reinterpret_cast<const uint8_t*>(input.data()), input.size());
}

// ---- bencode ----

namespace {

void benc_str(std::vector<uint8_t>& out, const uint8_t* data, size_t n) {
  std::string len = std::to_string(n);
  out.insert(out.end(), len.begin(), len.end());
  out.push_back(':');
  out.insert(out.end(), data, data + n);
}

void benc_str(std::vector<uint8_t>& out, std::string_view s) {
  benc_str(out, reinterpret_cast<const uint8_t*>(s.data()), s.size());
}

void benc_int(std::vector<uint8_t>& out, int64_t v) {
  out.push_back('i');
  std::string s = std::to_string(v);
  out.insert(out.end(), s.begin(), s.end());
  out.push_back('e');
}

struct Reader {
  const uint8_t* p;
  const uint8_t* end;

  uint8_t peek() const {
    if (p >= end) throw Error(Errc::DecodeError, "truncated");
    return *p;
  }
  uint8_t take() {
    uint8_t c = peek();
    ++p;
    return c;
  }
  void expect(uint8_t c) {
    if (take() != c) throw Error(Errc::DecodeError, "unexpected byte");
  }
  int64_t read_int_until(uint8_t term) {
    bool neg = false;
    if (peek() == '-') {
      neg = true;
      ++p;
    }
    if (peek() < '0' || peek() > '9') throw Error(Errc::DecodeError, "bad integer");
    int64_t v = 0;
    int digits = 0;
    while (peek() != term) {
      uint8_t c = take();
      if (c < '0' || c > '9') throw Error(Errc::DecodeError, "bad integer");
      v = v * 10 + (c - '0');
      if (++digits > 18) throw Error(Errc::DecodeError, "integer overflow");
    }
    expect(term);
    return neg ? -v : v;
  }
  std::string read_string() {
    int64_t len = read_int_until(':');
    if (len < 0 || end - p < len) throw Error(Errc::DecodeError, "bad string length");
    std::string s(reinterpret_cast<const char*>(p), size_t(len));
    p += len;
    return s;
  }
  int64_t read_i() {
    expect('i');
    return read_int_until('e');
  }
};

NodeId to_node_id(const std::string& s) {
  if (s.size() != 20) throw Error(Errc::DecodeError, "id must be 20 bytes");
  NodeId id;
  std::memcpy(id.data(), s.data(), 20);
  return id;
}

std::string pack_nodes(const std::vector<NodeEntry>& nodes) {
  std::string out;
  out.reserve(nodes.size() * 26);
  for (const auto& n : nodes) {
    out.append(reinterpret_cast<const char*>(n.id.data()), 20);
    for (int s = 24; s >= 0; s -= 8) out.push_back(char(uint8_t(n.ip >> s)));
    out.push_back(char(uint8_t(n.port >> 8)));
    out.push_back(char(uint8_t(n.port & 0xFF)));
  }
  return out;
}

std::vector<NodeEntry> unpack_nodes(const std::string& s) {
  if (s.size() % 26 != 0) throw Error(Errc::DecodeError, "nodes blob not 26-byte aligned");
  std::vector<NodeEntry> out;
  out.reserve(s.size() / 26);
  for (size_t i = 0; i < s.size(); i += 26) {
    NodeEntry n;
    std::memcpy(n.id.data(), s.data() + i, 20);
    n.ip = uint32_t(uint8_t(s[i + 20])) << 24 | uint32_t(uint8_t(s[i + 21])) << 16 |
           uint32_t(uint8_t(s[i + 22])) << 8 | uint32_t(uint8_t(s[i + 23]));
    n.port = uint16_t(uint8_t(s[i + 24])) << 8 | uint16_t(uint8_t(s[i + 25]));
    out.push_back(n);
  }
  return out;
}

std::string pack_peer(const PeerEntry& pe) {
  std::string out;
  for (int s = 24; s >= 0; s -= 8) out.push_back(char(uint8_t(pe.ip >> s)));
  out.push_back(char(uint8_t(pe.port >> 8)));
  out.push_back(char(uint8_t(pe.port & 0xFF)));
  return out;
}

PeerEntry unpack_peer(const std::string& s) {
  if (s.size() != 6) throw Error(Errc::DecodeError, "peer entry not 6 bytes");
  PeerEntry pe;
  pe.ip = uint32_t(uint8_t(s[0])) << 24 | uint32_t(uint8_t(s[1])) << 16 |
          uint32_t(uint8_t(s[2])) << 8 | uint32_t(uint8_t(s[3]));
  pe.port = uint16_t(uint8_t(s[4])) << 8 | uint16_t(uint8_t(s[5]));
  return pe;
}

const char* query_name(MsgKind k) {
  switch (k) {
    case MsgKind::Ping: return "ping";
    case MsgKind::FindNode: return "find_node";
    case MsgKind::GetPeers: return "get_peers";
    case MsgKind::AnnouncePeer: return "announce_peer";
    default: return nullptr;
  }
}

}  // namespace

std::vector<uint8_t> encode_krpc(const KrpcMessage& m) {
  std::vector<uint8_t> out;
  out.push_back('d');
  switch (m.kind) {
    case MsgKind::Ping:
    case MsgKind::FindNode:
    case MsgKind::GetPeers:
    case MsgKind::AnnouncePeer: {
      benc_str(out, "a");
      out.push_back('d');
      benc_str(out, "id");
      benc_str(out, m.sender_id.data(), 20);
      if (m.kind == MsgKind::GetPeers || m.kind == MsgKind::AnnouncePeer) {
        benc_str(out, "info_hash");
        benc_str(out, m.info_hash.data(), 20);
      }
      if (m.kind == MsgKind::AnnouncePeer) {
        benc_str(out, "port");
        benc_int(out, m.announce_port);
      }
      if (m.kind == MsgKind::FindNode) {
        benc_str(out, "target");
        benc_str(out, m.target.data(), 20);
      }
      out.push_back('e');
      benc_str(out, "q");
      benc_str(out, query_name(m.kind));
      break;
    }
    case MsgKind::ResponseNodes:
    case MsgKind::ResponsePeers:
    case MsgKind::ResponseConfig: {
      benc_str(out, "r");
      out.push_back('d');
      if (m.kind == MsgKind::ResponseConfig) {
        benc_str(out, "config");
        benc_str(out, m.config.data(), m.config.size());
      }
      benc_str(out, "id");
      benc_str(out, m.sender_id.data(), 20);
      if (m.kind == MsgKind::ResponseNodes) {
        benc_str(out, "nodes");
        benc_str(out, pack_nodes(m.nodes));
      }
      if (m.kind == MsgKind::ResponsePeers) {
        benc_str(out, "values");
        out.push_back('l');
        for (const auto& pe : m.peers) benc_str(out, pack_peer(pe));
        out.push_back('e');
      }
      out.push_back('e');
      break;
    }
    case MsgKind::Error: {
      benc_str(out, "e");
      out.push_back('l');
      benc_int(out, m.error_code);
      benc_str(out, m.error_message);
      out.push_back('e');
      break;
    }
  }
  benc_str(out, "t");
  benc_str(out, m.transaction_id.data(), 2);
  benc_str(out, "y");
  switch (m.kind) {
    case MsgKind::Error: benc_str(out, "e"); break;
    case MsgKind::ResponseNodes:
    case MsgKind::ResponsePeers:
    case MsgKind::ResponseConfig: benc_str(out, "r"); break;
    default: benc_str(out, "q"); break;
  }
  out.push_back('e');
  return out;
}

KrpcMessage decode_krpc(const uint8_t* data, size_t n) {
  Reader r{data, data + n};
  r.expect('d');

  KrpcMessage m;
  bool have_y = false, have_t = false;
  std::string y, q;
  // a/r payload fields
  bool have_id = false, have_target = false, have_ih = false, have_nodes = false,
       have_values = false, have_config = false, have_port = false, have_err = false;

  while (r.peek() != 'e') {
    std::string key = r.read_string();
    if (key == "a" || key == "r") {
      r.expect('d');
      while (r.peek() != 'e') {
        std::string k2 = r.read_string();
        if (k2 == "id") {
          m.sender_id = to_node_id(r.read_string());
          have_id = true;
        } else if (k2 == "target") {
          m.target = to_node_id(r.read_string());
          have_target = true;
        } else if (k2 == "info_hash") {
          m.info_hash = to_node_id(r.read_string());
          have_ih = true;
        } else if (k2 == "nodes") {
          m.nodes = unpack_nodes(r.read_string());
          have_nodes = true;
        } else if (k2 == "values") {
          r.expect('l');
          while (r.peek() != 'e') m.peers.push_back(unpack_peer(r.read_string()));
          r.expect('e');
          have_values = true;
        } else if (k2 == "config") {
          std::string cfg = r.read_string();
          m.config.assign(cfg.begin(), cfg.end());
          have_config = true;
        } else if (k2 == "port") {
          int64_t p = r.read_i();
          if (p < 0 || p > 65535) throw Error(Errc::DecodeError, "bad port");
          m.announce_port = uint16_t(p);
          have_port = true;
        } else {
          throw Error(Errc::DecodeError, "unknown payload key " + k2);
        }
      }
      r.expect('e');
    } else if (key == "e") {
      r.expect('l');
      m.error_code = int(r.read_i());
      m.error_message = r.read_string();
      r.expect('e');
      have_err = true;
    } else if (key == "q") {
      q = r.read_string();
    } else if (key == "t") {
      std::string t = r.read_string();
      if (t.size() != 2) throw Error(Errc::DecodeError, "transaction id must be 2 bytes");
      m.transaction_id = {uint8_t(t[0]), uint8_t(t[1])};
      have_t = true;
    } else if (key == "y") {
      y = r.read_string();
      have_y = true;
    } else {
      throw Error(Errc::DecodeError, "unknown top-level key " + key);
    }
  }
  r.expect('e');
  if (r.p != r.end) throw Error(Errc::DecodeError, "trailing bytes");
  if (!have_t || !have_y) throw Error(Errc::DecodeError, "missing t/y");

  if (y == "q") {
    if (!have_id) throw Error(Errc::DecodeError, "query without sender id");
    if (q == "ping" && !have_target && !have_ih) {
      m.kind = MsgKind::Ping;
    } else if (q == "find_node" && have_target) {
      m.kind = MsgKind::FindNode;
    } else if (q == "get_peers" && have_ih && !have_port) {
      m.kind = MsgKind::GetPeers;
    } else if (q == "announce_peer" && have_ih && have_port) {
      m.kind = MsgKind::AnnouncePeer;
    } else {
      throw Error(Errc::DecodeError, "malformed query " + q);
    }
  } else if (y == "r") {
    if (!have_id) throw Error(Errc::DecodeError, "response without sender id");
    if (have_config && !have_nodes && !have_values) {
      m.kind = MsgKind::ResponseConfig;
    } else if (have_values && !have_config) {
      m.kind = MsgKind::ResponsePeers;
    } else if (!have_values && !have_config) {
      m.kind = MsgKind::ResponseNodes;  // possibly with an empty node list
    } else {
      throw Error(Errc::DecodeError, "ambiguous response payload");
    }
  } else if (y == "e") {
    if (!have_err) throw Error(Errc::DecodeError, "error without e list");
    m.kind = MsgKind::Error;
  } else {
    throw Error(Errc::DecodeError, "unknown message type " + y);
  }
  return m;
}

std::vector<NodeEntry> closest_nodes(const std::vector<NodeEntry>& candidates,
                                     const NodeId& target, size_t k) {
  std::vector<NodeEntry> out = candidates;
  auto dist_less = [&target](const NodeEntry& a, const NodeEntry& b) {
    for (int i = 0; i < 20; ++i) {
      uint8_t da = a.id[i] ^ target[i], db = b.id[i] ^ target[i];
      if (da != db) return da < db;
    }
    return false;
  };
  std::sort(out.begin(), out.end(), dist_less);
  if (out.size() > k) out.resize(k);
  return out;
}

KrpcMessage mozi_respond_find_node(const MoziBotState& state, const KrpcMessage& req,
                                   Rng& rng, int prefix_len) {
  KrpcMessage resp;
  resp.transaction_id = req.transaction_id;
  resp.sender_id = state.id;
  if (mozi_is_bot_id(req.sender_id, prefix_len) && rng.uniform(3) == 0) {
    resp.kind = MsgKind::ResponseConfig;
    resp.config = state.config;
    return resp;
  }
  resp.kind = MsgKind::ResponseNodes;
  resp.nodes = closest_nodes(state.peers, req.target, 8);
  return resp;
}

// ---- Hajime handshake framing ----

static const uint8_t kHandshakeMagic[4] = {'H', 'J', 'H', 'S'};

std::vector<uint8_t> encode_handshake_request() {
  return {kHandshakeMagic[0], kHandshakeMagic[1], kHandshakeMagic[2], kHandshakeMagic[3],
          0x01};
}

std::vector<uint8_t> encode_handshake_response(const UtpKey& key, int64_t config_day) {
  std::vector<uint8_t> out;
  out.reserve(45);
  out.insert(out.end(), kHandshakeMagic, kHandshakeMagic + 4);
  out.push_back(0x02);
  out.insert(out.end(), key.begin(), key.end());
  for (int s = 56; s >= 0; s -= 8) out.push_back(uint8_t(uint64_t(config_day) >> s));
  return out;
}

bool is_handshake_request(const uint8_t* data, size_t n) {
  return n == 5 && std::memcmp(data, kHandshakeMagic, 4) == 0 && data[4] == 0x01;
}

HajimeSession parse_handshake_response(uint32_t ip, uint16_t port, const uint8_t* data,
                                       size_t n) {
  if (n != 45 || std::memcmp(data, kHandshakeMagic, 4) != 0 || data[4] != 0x02)
    throw Error(Errc::HandshakeMalformed, "not a handshake response");
  HajimeSession s;
  s.ip = ip;
  s.port = port;
  std::memcpy(s.utp_key.data(), data + 5, 32);
  int64_t day = 0;
  for (int i = 0; i < 8; ++i) day = day << 8 | data[37 + i];
  s.config_day = day;
  return s;
}

std::array<uint8_t, 20> utp_key_fingerprint(const UtpKey& key) {
  std::array<uint8_t, 20> fp;
  std::copy(key.begin(), key.begin() + 20, fp.begin());
  return fp;
}

}  // namespace botmesh::proto
