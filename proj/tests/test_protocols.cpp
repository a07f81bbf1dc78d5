#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "botmesh/protocols.hpp"
#include "botmesh/rng.hpp"
#include "botmesh/sha1.hpp"

using namespace botmesh;
using namespace botmesh::proto;

namespace {

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(bool(is));
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(is), {});
}

std::string testdata(const std::string& rel) {
  return std::string(BOTMESH_TESTDATA_DIR) + "/" + rel;
}

NodeId id_filled(uint8_t b) {
  NodeId id;
  id.fill(b);
  return id;
}

std::string hex(const uint8_t* p, size_t n) { return to_hex(p, n); }

KrpcMessage random_message(Rng& rng) {
  KrpcMessage m;
  switch (rng.uniform(8)) {
    case 0: m.kind = MsgKind::Ping; break;
    case 1: m.kind = MsgKind::FindNode; break;
    case 2: m.kind = MsgKind::GetPeers; break;
    case 3: m.kind = MsgKind::AnnouncePeer; break;
    case 4: m.kind = MsgKind::ResponseNodes; break;
    case 5: m.kind = MsgKind::ResponsePeers; break;
    case 6: m.kind = MsgKind::ResponseConfig; break;
    default: m.kind = MsgKind::Error; break;
  }
  rng.fill(m.transaction_id.data(), 2);
  if (m.kind != MsgKind::Error) rng.fill(m.sender_id.data(), 20);
  switch (m.kind) {
    case MsgKind::FindNode: rng.fill(m.target.data(), 20); break;
    case MsgKind::GetPeers: rng.fill(m.info_hash.data(), 20); break;
    case MsgKind::AnnouncePeer:
      rng.fill(m.info_hash.data(), 20);
      m.announce_port = uint16_t(1 + rng.uniform(65535));
      break;
    case MsgKind::ResponseNodes: {
      size_t n = rng.uniform(9);
      for (size_t i = 0; i < n; ++i) {
        NodeEntry e;
        rng.fill(e.id.data(), 20);
        e.ip = rng.next_u32();
        e.port = uint16_t(1 + rng.uniform(65535));
        m.nodes.push_back(e);
      }
      break;
    }
    case MsgKind::ResponsePeers: {
      size_t n = rng.uniform(9);
      for (size_t i = 0; i < n; ++i)
        m.peers.push_back(PeerEntry{rng.next_u32(), uint16_t(1 + rng.uniform(65535))});
      break;
    }
    case MsgKind::ResponseConfig: {
      size_t n = rng.uniform(64);
      m.config.resize(n);
      rng.fill(m.config.data(), n);
      break;
    }
    case MsgKind::Error:
      m.error_code = int(200 + rng.uniform(5));
      m.error_message = "Generic Error";
      break;
    default: break;
  }
  return m;
}

}  // namespace

// ---- SHA-1 against standard vectors ----

TEST_CASE("sha1 reference vectors") {
  auto h = [](const std::string& s) {
    auto d = Sha1::hash(reinterpret_cast<const uint8_t*>(s.data()), s.size());
    return to_hex(d.data(), d.size());
  };
  CHECK(h("") == "da39a3ee5e6b4b0d3255bfef95601890afd80709");
  CHECK(h("abc") == "a9993e364706816aba3e25717850c26c9cd0d89d");
  CHECK(h(std::string(55, 'a')) == "c1c8bbdc22796e28c0e15163d20899b65621d65a");
  CHECK(h(std::string(56, 'a')) == "c2db330f6083854c99d4b5bfb6e8f29f201be699");
  CHECK(h(std::string(64, 'a')) == "0098ba824b5c16427bd7a1122a5a442a25ec644d");
  CHECK(h(std::string(1000, 'a')) == "291e9a6c66994949b57ba5e650361e98fc36b1ba");
}

// ---- Mozi ID generation ----

TEST_CASE("mozi id: golden tail for seed 42") {
  // params chosen so time ^ (ppid ^ pid) == 42
  MoziIdParams p{42, 0, 0, 6};
  NodeId id = mozi_generate_id(p);
  CHECK(hex(id.data(), 6) == "383838383838");
  CHECK(hex(id.data() + 6, 14) == "8989a57520456d8461815412eed4");

  p.prefix_len = 8;
  NodeId id8 = mozi_generate_id(p);
  CHECK(hex(id8.data(), 8) == "3838383838383838");
  CHECK(hex(id8.data() + 8, 12) == "8989a57520456d8461815412");
}

TEST_CASE("mozi id: seed mixes time, pid and ppid") {
  MoziIdParams p{1000, 7, 3, 6};  // 1000 ^ (3 ^ 7) = 1004
  CHECK(hex(mozi_generate_id(p).data(), 20) ==
        "383838383838bb9124df3148ce440d1dfe6d5e3a");
}

TEST_CASE("mozi id: identical params collide, that is the point") {
  MoziIdParams p{1234567, 99, 1, 6};
  CHECK(mozi_generate_id(p) == mozi_generate_id(p));
  MoziIdParams q = p;
  q.pid = 100;
  CHECK(mozi_generate_id(p) != mozi_generate_id(q));
}

TEST_CASE("mozi id: invalid prefix length") {
  CHECK_THROWS_AS(mozi_generate_id(MoziIdParams{1, 1, 1, 7}), Error);
  CHECK_THROWS_AS(mozi_generate_id(MoziIdParams{1, 1, 1, 0}), Error);
}

TEST_CASE("mozi_is_bot_id") {
  CHECK(mozi_is_bot_id(mozi_generate_id(MoziIdParams{5, 5, 5, 6}), 6));
  CHECK(mozi_is_bot_id(mozi_generate_id(MoziIdParams{5, 5, 5, 8}), 8));
  NodeId zero{};
  CHECK_FALSE(mozi_is_bot_id(zero, 6));
  NodeId five = id_filled(0x38);
  five[5] = 0x00;  // only 5 leading prefix bytes
  CHECK_FALSE(mozi_is_bot_id(five, 6));
}

TEST_CASE("mozi id: tail bytes are uniform under random seeds") {
  // chi-square over 256 bins; 0.99 quantile of chi2(255) is 310.457
  Rng rng(99);
  std::vector<int64_t> counts(256, 0);
  int64_t total = 0;
  while (total < 100'000) {
    MoziIdParams p{int64_t(rng.uniform(1u << 31)), uint32_t(rng.uniform(32768)),
                   uint32_t(rng.uniform(1024)), 6};
    NodeId id = mozi_generate_id(p);
    for (int i = 6; i < 20; ++i) {
      ++counts[id[i]];
      ++total;
    }
  }
  double expected = double(total) / 256.0;
  double chi2 = 0;
  for (int64_t c : counts) {
    double d = double(c) - expected;
    chi2 += d * d / expected;
  }
  CHECK(chi2 < 310.457);
}

// ---- Hajime infohash ----

TEST_CASE("hajime daily infohash: golden values") {
  auto h = [](const std::string& n, int64_t d) {
    auto ih = hajime_daily_infohash(n, d);
    return to_hex(ih.data(), ih.size());
  };
  CHECK(h("config", 19000) == "1a4b7ad399f0fbe22b6364b2aa2afcad00123855");
  CHECK(h("config", 19001) == "5925876c182bd148c51aaf02ae0af7fa08b5eb54");
  CHECK(h("peer-exchange", 19200) == "ceed8ee18d6a75aad7220a7b944580786fcc201a");
}

TEST_CASE("hajime daily infohash: rotation actually rotates") {
  for (int64_t d = 19000; d < 19100; ++d) {
    CHECK(hajime_daily_infohash("config", d) == hajime_daily_infohash("config", d));
    CHECK(hajime_daily_infohash("config", d) != hajime_daily_infohash("config", d + 1));
    CHECK(hajime_daily_infohash("config", d) != hajime_daily_infohash("config", d - 1));
  }
}

// ---- Mozi find_node deviation ----

TEST_CASE("mozi find_node: one third of bot-prefixed requests get a config") {
  MoziBotState bot;
  bot.id = mozi_generate_id(MoziIdParams{1, 2, 3, 6});
  bot.config = {'c', 'f', 'g'};
  for (int i = 0; i < 4; ++i) {
    NodeEntry e;
    e.id = id_filled(uint8_t(i));
    e.ip = 0x0A000001 + i;
    e.port = 1000 + i;
    bot.peers.push_back(e);
  }
  KrpcMessage req;
  req.kind = MsgKind::FindNode;
  req.sender_id = id_filled(0x38);  // Mozi-prefixed crawler
  req.transaction_id = {0x12, 0x34};

  Rng rng(4242);
  int configs = 0;
  for (int i = 0; i < 30'000; ++i) {
    KrpcMessage resp = mozi_respond_find_node(bot, req, rng);
    CHECK(resp.transaction_id == req.transaction_id);
    if (resp.kind == MsgKind::ResponseConfig) {
      ++configs;
      CHECK(resp.config == bot.config);
    } else {
      CHECK(resp.kind == MsgKind::ResponseNodes);
      CHECK(resp.nodes.size() == 4);
    }
  }
  CHECK(configs >= 9500);
  CHECK(configs <= 10500);
}

TEST_CASE("mozi find_node: non-prefixed senders never get a config") {
  MoziBotState bot;
  bot.id = mozi_generate_id(MoziIdParams{1, 2, 3, 6});
  bot.config = {'c'};
  KrpcMessage req;
  req.kind = MsgKind::FindNode;
  req.sender_id = id_filled(0xAB);
  Rng rng(1);
  for (int i = 0; i < 2000; ++i)
    CHECK(mozi_respond_find_node(bot, req, rng).kind == MsgKind::ResponseNodes);
}

TEST_CASE("mozi find_node: empty peer table yields an empty node list") {
  MoziBotState bot;
  bot.id = mozi_generate_id(MoziIdParams{9, 9, 9, 6});
  KrpcMessage req;
  req.kind = MsgKind::FindNode;
  req.sender_id = id_filled(0x38);
  Rng rng(3);
  bool saw_nodes = false;
  for (int i = 0; i < 50 && !saw_nodes; ++i) {
    auto resp = mozi_respond_find_node(bot, req, rng);
    if (resp.kind == MsgKind::ResponseNodes) {
      saw_nodes = true;
      CHECK(resp.nodes.empty());
    }
  }
  CHECK(saw_nodes);
}

// ---- KRPC codec ----

TEST_CASE("krpc: golden bencode vectors") {
  NodeId id_a = id_filled(0xAA);
  NodeId id_b;
  for (int i = 0; i < 20; ++i) id_b[i] = uint8_t(i);
  NodeId target;
  for (int i = 0; i < 6; ++i) target[i] = 0x38;
  for (int i = 6; i < 20; ++i) target[i] = uint8_t(i - 6);
  Infohash ih = hajime_daily_infohash("config", 19000);
  std::array<uint8_t, 2> tid{0x00, 0x2A};

  auto roundtrip = [&](const KrpcMessage& m, const std::string& file) {
    auto golden = read_file(testdata("krpc/" + file));
    CHECK(encode_krpc(m) == golden);
    CHECK(decode_krpc(golden) == m);
  };

  KrpcMessage ping;
  ping.kind = MsgKind::Ping;
  ping.transaction_id = tid;
  ping.sender_id = id_a;
  roundtrip(ping, "ping.bin");

  KrpcMessage fn = ping;
  fn.kind = MsgKind::FindNode;
  fn.target = target;
  roundtrip(fn, "find_node.bin");

  KrpcMessage gp = ping;
  gp.kind = MsgKind::GetPeers;
  gp.info_hash = ih;
  roundtrip(gp, "get_peers.bin");

  KrpcMessage ap = gp;
  ap.kind = MsgKind::AnnouncePeer;
  ap.announce_port = 6881;
  roundtrip(ap, "announce_peer.bin");

  KrpcMessage rn;
  rn.kind = MsgKind::ResponseNodes;
  rn.transaction_id = tid;
  rn.sender_id = id_b;
  rn.nodes.push_back(NodeEntry{id_b, 0x0A000001, 6881});
  rn.nodes.push_back(NodeEntry{id_a, 0xC0000207, 41934});
  roundtrip(rn, "response_nodes.bin");

  KrpcMessage rp;
  rp.kind = MsgKind::ResponsePeers;
  rp.transaction_id = tid;
  rp.sender_id = id_b;
  rp.peers.push_back(PeerEntry{0x0A000001, 6881});
  rp.peers.push_back(PeerEntry{0xC0000207, 41934});
  roundtrip(rp, "response_peers.bin");

  KrpcMessage rc;
  rc.kind = MsgKind::ResponseConfig;
  rc.transaction_id = tid;
  rc.sender_id = id_b;
  const std::string cfg = "MZCONFIG:v1,signed";
  rc.config.assign(cfg.begin(), cfg.end());
  roundtrip(rc, "response_config.bin");

  KrpcMessage err;
  err.kind = MsgKind::Error;
  err.transaction_id = tid;
  err.error_code = 201;
  err.error_message = "Generic Error";
  roundtrip(err, "error.bin");
}

TEST_CASE("krpc: decode(encode(m)) == m on generated messages") {
  Rng rng(777);
  for (int i = 0; i < 20'000; ++i) {
    KrpcMessage m = random_message(rng);
    CHECK(decode_krpc(encode_krpc(m)) == m);
  }
}

TEST_CASE("krpc: compact node entries are 26 bytes") {
  KrpcMessage m;
  m.kind = MsgKind::ResponseNodes;
  m.sender_id = id_filled(1);
  for (int i = 0; i < 8; ++i) m.nodes.push_back(NodeEntry{id_filled(uint8_t(i)), 99, 99});
  auto bytes = encode_krpc(m);
  std::string s(bytes.begin(), bytes.end());
  CHECK(s.find("nodes208:") != std::string::npos);  // 8 * 26
}

TEST_CASE("krpc: malformed input") {
  KrpcMessage m;
  m.kind = MsgKind::Ping;
  m.sender_id = id_filled(3);
  auto good = encode_krpc(m);
  for (size_t cut = 0; cut < good.size(); ++cut) {
    std::vector<uint8_t> truncated(good.begin(), good.begin() + cut);
    CHECK_THROWS_AS(decode_krpc(truncated), Error);
  }
  auto trailing = good;
  trailing.push_back('x');
  CHECK_THROWS_AS(decode_krpc(trailing), Error);
  std::string junk = "not bencode at all";
  CHECK_THROWS_AS(decode_krpc(reinterpret_cast<const uint8_t*>(junk.data()), junk.size()),
                  Error);
  std::string short_id = "d1:ad2:id3:abce1:q4:ping1:t2:aa1:y1:qe";
  CHECK_THROWS_AS(
      decode_krpc(reinterpret_cast<const uint8_t*>(short_id.data()), short_id.size()), Error);
}

TEST_CASE("closest_nodes matches a brute-force sort") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<NodeEntry> cands;
    size_t n = rng.uniform(30);
    for (size_t i = 0; i < n; ++i) {
      NodeEntry e;
      rng.fill(e.id.data(), 20);
      e.ip = rng.next_u32();
      e.port = uint16_t(1 + rng.uniform(65535));
      cands.push_back(e);
    }
    NodeId target;
    rng.fill(target.data(), 20);
    auto got = closest_nodes(cands, target, 8);

    auto xor_key = [&](const NodeEntry& e) {
      std::array<uint8_t, 20> k;
      for (int i = 0; i < 20; ++i) k[i] = e.id[i] ^ target[i];
      return k;
    };
    std::vector<NodeEntry> want = cands;
    std::sort(want.begin(), want.end(),
              [&](const NodeEntry& a, const NodeEntry& b) { return xor_key(a) < xor_key(b); });
    if (want.size() > 8) want.resize(8);
    REQUIRE(got.size() == want.size());
    for (size_t i = 0; i < got.size(); ++i) CHECK(xor_key(got[i]) == xor_key(want[i]));
  }
}

// ---- handshake framing ----

TEST_CASE("handshake: round trip carries key and day") {
  UtpKey key;
  for (int i = 0; i < 32; ++i) key[i] = uint8_t(i * 3);
  auto resp = encode_handshake_response(key, 19123);
  HajimeSession s = parse_handshake_response(0x0A000001, 4711, resp.data(), resp.size());
  CHECK(s.utp_key == key);
  CHECK(s.config_day == 19123);
  CHECK(s.ip == 0x0A000001);
  CHECK(s.port == 4711);
  CHECK(utp_key_fingerprint(key) == std::array<uint8_t, 20>{0,  3,  6,  9,  12, 15, 18,
                                                            21, 24, 27, 30, 33, 36, 39,
                                                            42, 45, 48, 51, 54, 57});
}

TEST_CASE("handshake: anything else is HANDSHAKE_MALFORMED") {
  auto check_malformed = [](const std::vector<uint8_t>& bytes) {
    try {
      parse_handshake_response(1, 1, bytes.data(), bytes.size());
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::HandshakeMalformed);
    }
  };
  check_malformed({});
  check_malformed({'H', 'J', 'H', 'S', 0x01});  // a request is not a response
  UtpKey key{};
  auto resp = encode_handshake_response(key, 1);
  resp.pop_back();
  check_malformed(resp);
  resp = encode_handshake_response(key, 1);
  resp[0] = 'X';
  check_malformed(resp);
  // a KRPC error from a benign peer
  KrpcMessage err;
  err.kind = MsgKind::Error;
  err.error_code = 204;
  err.error_message = "Method Unknown";
  check_malformed(encode_krpc(err));
}

TEST_CASE("handshake request recognizer") {
  auto req = encode_handshake_request();
  CHECK(is_handshake_request(req.data(), req.size()));
  req[4] = 0x02;
  CHECK_FALSE(is_handshake_request(req.data(), req.size()));
  CHECK_FALSE(is_handshake_request(req.data(), 4));
}
