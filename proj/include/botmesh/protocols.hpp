#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "botmesh/common.hpp"
#include "botmesh/rng.hpp"

namespace botmesh::proto {

using NodeId = std::array<uint8_t, 20>;
using Infohash = std::array<uint8_t, 20>;

constexpr uint8_t kMoziPrefixByte = 0x38;

// ---- Mozi identifiers ----

struct MoziIdParams {
  int64_t time = 0;  // unix seconds
  uint32_t pid = 0;
  uint32_t ppid = 0;
  int prefix_len = 6;  // 6 or 8
};

// Prefix bytes are 0x38; the tail comes from an LCG
// (x <- (x*1103515245 + 12345) mod 2^31, emit byte x>>16) seeded with
// time ^ (ppid ^ pid). Identical params reproduce identical IDs, which is
// exactly how real-world ID collisions arise.
NodeId mozi_generate_id(const MoziIdParams& p);

bool mozi_is_bot_id(const NodeId& id, int prefix_len);

// ---- Hajime identifiers ----

// SHA-1 over config_name || '-' || ASCII-decimal(day_index). Rotates daily.
Infohash hajime_daily_infohash(const std::string& config_name, int64_t day_index);

inline int64_t day_index_of(int64_t unix_seconds) { return unix_seconds / 86400; }

// ---- KRPC wire messages ----

enum class MsgKind : uint8_t {
  Ping,
  FindNode,
  GetPeers,
  AnnouncePeer,
  ResponseNodes,
  ResponsePeers,
  ResponseConfig,
  Error,
};

struct NodeEntry {
  NodeId id{};
  uint32_t ip = 0;
  uint16_t port = 0;
  bool operator==(const NodeEntry&) const = default;
};

struct PeerEntry {
  uint32_t ip = 0;
  uint16_t port = 0;
  bool operator==(const PeerEntry&) const = default;
};

// Only the fields relevant to `kind` are meaningful; encode/decode leave the
// rest default-initialized so whole-struct equality works for round-trips.
struct KrpcMessage {
  MsgKind kind = MsgKind::Ping;
  std::array<uint8_t, 2> transaction_id{};
  NodeId sender_id{};                 // all kinds except Error
  NodeId target{};                    // FindNode
  Infohash info_hash{};               // GetPeers, AnnouncePeer
  uint16_t announce_port = 0;         // AnnouncePeer
  std::vector<NodeEntry> nodes;       // ResponseNodes
  std::vector<PeerEntry> peers;       // ResponsePeers
  std::vector<uint8_t> config;        // ResponseConfig
  int error_code = 0;                 // Error
  std::string error_message;          // Error

  bool operator==(const KrpcMessage&) const = default;
};

std::vector<uint8_t> encode_krpc(const KrpcMessage& m);

// Throws Error(DecodeError) on anything that is not a well-formed message.
KrpcMessage decode_krpc(const uint8_t* data, size_t n);
inline KrpcMessage decode_krpc(const std::vector<uint8_t>& b) {
  return decode_krpc(b.data(), b.size());
}

// XOR-metric helper: the k entries of `candidates` closest to `target`.
std::vector<NodeEntry> closest_nodes(const std::vector<NodeEntry>& candidates,
                                     const NodeId& target, size_t k);

// ---- Mozi find_node deviation ----

struct MoziBotState {
  NodeId id{};
  std::vector<NodeEntry> peers;       // the bot's peer table
  std::vector<uint8_t> config;        // current config blob
};

// Response to a find_node request. Senders carrying the Mozi prefix get a
// config reply with probability exactly 1/3; everyone else (and the other
// 2/3) gets up to 8 closest known peers. Transaction id is echoed.
KrpcMessage mozi_respond_find_node(const MoziBotState& state, const KrpcMessage& req,
                                   Rng& rng, int prefix_len = 6);

// ---- Hajime handshake ----
//
// The uTP-layer config session is abstracted to one request/response frame
// that carries the bot's 32-byte public key. Identity semantics are all
// downstream analytics needs.

using UtpKey = std::array<uint8_t, 32>;

struct HajimeSession {
  uint32_t ip = 0;
  uint16_t port = 0;
  UtpKey utp_key{};
  int64_t config_day = 0;
};

std::vector<uint8_t> encode_handshake_request();
std::vector<uint8_t> encode_handshake_response(const UtpKey& key, int64_t config_day);
bool is_handshake_request(const uint8_t* data, size_t n);

// Parses a handshake reply. Throws Error(HandshakeMalformed) when the peer
// answered with something that is not a handshake response — the benign-peer
// filter the key exchange exists for.
HajimeSession parse_handshake_response(uint32_t ip, uint16_t port, const uint8_t* data,
                                       size_t n);

// 20-byte log/analytics identity of a 32-byte key (leading bytes).
std::array<uint8_t, 20> utp_key_fingerprint(const UtpKey& key);

}  // namespace botmesh::proto
