#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "botmesh/analytics.hpp"
#include "botmesh/crawler.hpp"

using namespace botmesh;
using namespace botmesh::crawler;

namespace {

simnet::SimConfig world_config(const std::string& text) {
  return simnet::parse_sim_config(text);
}

CrawlerConfig cc(Family f, const std::string& id) {
  CrawlerConfig c;
  c.family = f;
  c.crawler_id = id;
  return c;
}

struct Harness {
  simnet::SimWorld world;
  SimTransport transport;
  Scheduler sched;
  std::vector<core::Observation> obs;

  explicit Harness(const simnet::SimConfig& cfg) : world(cfg), transport(world) {}

  Crawler make(const CrawlerConfig& c, int64_t stop_ms) {
    return Crawler(
        c, transport, sched, [this](const core::Observation& o) { obs.push_back(o); }, 42,
        world.config().epoch_ms(), stop_ms);
  }
  void run(int64_t stop_ms) { run_crawlers(world, sched, stop_ms); }
};

// Transport with a scripted availability window: the single endpoint answers
// (as a Mozi bot) only when the current virtual second is in `up_seconds`.
struct ScriptedTransport : Transport {
  Scheduler& sched;
  int64_t start_ms;
  std::set<int64_t> up_seconds;
  proto::NodeId bot_id;

  ScriptedTransport(Scheduler& s, int64_t start) : sched(s), start_ms(start) {
    bot_id.fill(0x38);
  }

  std::optional<std::vector<uint8_t>> request(const Endpoint&,
                                              const std::vector<uint8_t>& payload) override {
    int64_t sec = (sched.now() - start_ms) / 1000;
    if (!up_seconds.count(sec)) return std::nullopt;
    auto req = proto::decode_krpc(payload);
    proto::KrpcMessage resp;
    resp.kind = proto::MsgKind::ResponseNodes;
    resp.transaction_id = req.transaction_id;
    resp.sender_id = bot_id;
    return proto::encode_krpc(resp);
  }
};

}  // namespace

TEST_CASE("retry schedule: doubling from two seconds") {
  CHECK(retry_schedule(5) == std::vector<int>{2, 4, 8, 16, 32});
  int total = 0;
  for (int d : retry_schedule(5)) total += d;
  CHECK(total == 62);
  CHECK(retry_schedule(1) == std::vector<int>{2});
  CHECK(retry_schedule(3) == std::vector<int>{2, 4, 8});
  CHECK_THROWS_AS(retry_schedule(0), Error);
  CHECK_THROWS_AS(retry_schedule(-2), Error);
  try {
    retry_schedule(0);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::InvalidNretry);
  }
  CHECK(attempt_offsets_ms(5) ==
        std::vector<int64_t>{0, 2000, 6000, 14000, 30000, 62000});
}

TEST_CASE("crawler config: parse, defaults and validation") {
  CrawlerConfig c = parse_crawler_config(
      "family = MZ\ncrawler_id = mz1\nbootstrap = auto\n");
  CHECK(c.dfreq_s == 300);
  CHECK(c.tfreq_s == 60);
  CHECK(c.dtimeout_s == 900);
  CHECK(c.ttimeout_s == 900);
  CHECK(c.nretry == 5);
  CHECK(c.day_offset == 0);
  CHECK(c.bootstrap.empty());

  c = parse_crawler_config(
      "family = HJ\ncrawler_id = h\nday_offset = -1\nbootstrap = 10.0.0.1:6881, "
      "192.0.2.5:41934\nnretry = 3\n");
  CHECK(c.day_offset == -1);
  REQUIRE(c.bootstrap.size() == 2);
  CHECK(c.bootstrap[1].port == 41934);

  CHECK_THROWS_AS(parse_crawler_config("family = MZ\ncrawler_id = x\nday_offset = 2\n"),
                  Error);
  CHECK_THROWS_AS(parse_crawler_config("family = MZ\ncrawler_id = x\nnretry = 0\n"), Error);
  CHECK_THROWS_AS(parse_crawler_config("family = QQ\ncrawler_id = x\n"), Error);
  CHECK_THROWS_AS(parse_crawler_config("family = MZ\ncrawler_id = \n"), Error);
}

TEST_CASE("discovery: static lossless Mozi world fully tracked within one period") {
  auto cfg = world_config(
      "seed = 2\nduration_s = 600\n"
      "pool asn=1 country=AA prefix=10.0.0.0/16 devices=50 mix_hj=0\n");
  Harness h(cfg);
  Crawler c = h.make(cc(Family::MZ, "mz0"), cfg.end_ms());
  c.start();
  h.run(cfg.epoch_ms() + 300'000);

  auto gt = h.world.ground_truth(h.world.clock(), Family::MZ);
  REQUIRE(gt.size() == 50);
  std::set<core::BotId> want;
  for (const auto& b : gt) want.insert(b.node_id);
  CHECK(c.tracked_identities() == want);
  // promotion requires verified identity
  for (const auto& [e, t] : c.targets())
    if (t.loop == Loop::Tracking) CHECK(t.identity.has_value());
}

TEST_CASE("discovery: static lossless Hajime world fully tracked within one period") {
  auto cfg = world_config(
      "seed = 2\nduration_s = 600\n"
      "pool asn=1 country=AA prefix=10.0.0.0/16 devices=50 mix_hj=1\n");
  Harness h(cfg);
  Crawler c = h.make(cc(Family::HJ, "hj0"), cfg.end_ms());
  c.start();
  h.run(cfg.epoch_ms() + 300'000);

  std::set<core::BotId> want;
  for (int i = 0; i < h.world.device_count(); ++i)
    want.insert(proto::utp_key_fingerprint(h.world.device_view(i).utp_key));
  CHECK(c.tracked_identities() == want);
}

TEST_CASE("discovery: benign seeder fails the handshake and is never promoted") {
  auto cfg = world_config(
      "seed = 4\nduration_s = 600\n"
      "pool asn=1 country=AA prefix=10.0.0.0/16 devices=10 mix_hj=1 benign=3\n");
  Harness h(cfg);
  Crawler c = h.make(cc(Family::HJ, "hj0"), cfg.end_ms());
  c.start();
  h.run(cfg.epoch_ms() + 300'000);

  // benign endpoints are the bootstrap entries that are not device endpoints
  std::set<Endpoint> device_eps;
  for (int i = 0; i < h.world.device_count(); ++i) {
    auto v = h.world.device_view(i);
    device_eps.insert(Endpoint{v.ip, v.port});
  }
  std::vector<Endpoint> benign;
  for (const auto& e : h.world.bootstrap_endpoints(10))
    if (!device_eps.count(e)) benign.push_back(e);
  REQUIRE(!benign.empty());

  auto tracked = c.tracked_endpoints();
  CHECK(tracked.size() == 10);
  for (const auto& b : benign) CHECK_FALSE(tracked.count(b));
  // their handshake failures are recorded as PROTOCOL_ERROR
  bool benign_error = false;
  for (const auto& o : h.obs)
    if (o.event == core::Event::ProtocolError && o.ip == benign[0].ip) benign_error = true;
  CHECK(benign_error);
}

TEST_CASE("discovery: nothing responsive yields only TIMEOUT observations") {
  auto cfg = world_config(
      "seed = 5\nduration_s = 400\n"
      "pool asn=1 country=AA prefix=10.0.0.0/16 devices=1 mix_hj=0\n");
  Harness h(cfg);
  CrawlerConfig conf = cc(Family::MZ, "mz0");
  conf.bootstrap = {Endpoint{0xC0000201, 1000}, Endpoint{0xC0000202, 1000}};  // nobody home
  Crawler c = h.make(conf, cfg.end_ms());
  c.start();
  h.run(cfg.end_ms());
  CHECK(c.tracked_identities().empty());
  CHECK(h.obs.size() >= 2);
  for (const auto& o : h.obs) CHECK(o.event == core::Event::Timeout);
  // full retry schedule: failure lands 62s after the tick that launched it
  CHECK(h.obs[0].ts == cfg.epoch_ms() + 62'000);
}

TEST_CASE("tracking: lossless world emits one success per target per tfreq") {
  auto cfg = world_config(
      "seed = 6\nduration_s = 600\n"
      "pool asn=1 country=AA prefix=10.0.0.0/16 devices=1 mix_hj=0\n");
  Harness h(cfg);
  Crawler c = h.make(cc(Family::MZ, "mz0"), cfg.end_ms());
  c.start();
  h.run(cfg.end_ms());
  // tracking ticks at 0..540 plus the discovery verification
  int successes = 0;
  for (const auto& o : h.obs) successes += core::is_success(o.event);
  CHECK(successes == 11);
  for (size_t i = 1; i < h.obs.size(); ++i) CHECK(h.obs[i].ts >= h.obs[i - 1].ts);
}

TEST_CASE("tracking: per-probe failure rate under loss matches the retry arithmetic") {
  // p_loss = 0.5, nretry = 5: a probe fails only if all 6 sends are lost
  auto cfg = world_config(
      "seed = 7\nduration_s = 7200\n"
      "pool asn=1 country=AA prefix=10.0.0.0/16 devices=6 mix_hj=0 loss=0.5\n");
  Harness h(cfg);
  CrawlerConfig conf = cc(Family::MZ, "mz0");
  conf.tfreq_s = 30;
  conf.ttimeout_s = 7200;  // keep demotions out of this measurement
  conf.dtimeout_s = 7200;
  Crawler c = h.make(conf, cfg.end_ms());
  c.start();
  h.run(cfg.end_ms());

  int64_t fails = 0, attempts = 0;
  for (const auto& o : h.obs) {
    if (o.event == core::Event::Timeout) ++fails;
    ++attempts;
  }
  REQUIRE(attempts > 1000);
  double p = 1.0 / 64.0;
  double sigma = std::sqrt(double(attempts) * p * (1 - p));
  CHECK(double(fails) > double(attempts) * p - 5 * sigma);
  CHECK(double(fails) < double(attempts) * p + 5 * sigma);
}

TEST_CASE("tracking: a downed bot times out after the full retry schedule") {
  auto cfg = world_config(
      "seed = 8\nduration_s = 7200\nreboot_downtime_s = 86400\nmz_uptime_mean_s = 900\n"
      "pool asn=1 country=AA prefix=10.0.0.0/16 devices=1 mix_hj=0\n");
  Harness h(cfg);
  Crawler c = h.make(cc(Family::MZ, "mz0"), cfg.end_ms());
  c.start();
  h.run(cfg.end_ms());

  int64_t reboot_ts = -1;
  for (const auto& e : h.world.journal())
    if (e.event == simnet::JournalEvent::Reboot) {
      reboot_ts = e.ts;
      break;
    }
  REQUIRE(reboot_ts > 0);
  // first tracking tick after the reboot launches the probe that times out
  int64_t tick = cfg.epoch_ms();
  while (tick <= reboot_ts) tick += 60'000;
  int64_t first_timeout = -1;
  for (const auto& o : h.obs)
    if (o.event == core::Event::Timeout) {
      first_timeout = o.ts;
      break;
    }
  REQUIRE(first_timeout > 0);
  CHECK(first_timeout == tick + 62'000);
}

TEST_CASE("lifecycle: demotion after ttimeout, removal after dtimeout, 899s boundary") {
  Scheduler sched;
  ScriptedTransport transport(sched, 0);
  CrawlerConfig conf = cc(Family::MZ, "mz0");
  conf.tfreq_s = 1;
  conf.dfreq_s = 1;
  conf.nretry = 1;
  conf.bootstrap = {Endpoint{0x0A000001, 1000}};
  // up at t=0 (verify+track), silent afterwards except one answer at 899
  transport.up_seconds = {0, 899};

  std::vector<core::Observation> obs;
  Crawler c(conf, transport, sched, [&](const core::Observation& o) { obs.push_back(o); },
            1, 0, 4'000'000);
  c.start();

  auto target_loop = [&]() -> std::optional<Loop> {
    auto it = c.targets().find(Endpoint{0x0A000001, 1000});
    if (it == c.targets().end()) return std::nullopt;
    return it->second.loop;
  };

  // drive through the 899s answer: still tracking (899 <= 900, no transition)
  while (!sched.empty() && sched.next_time() <= 899'000) sched.step();
  REQUIRE(target_loop().has_value());
  CHECK(*target_loop() == Loop::Tracking);

  // silent after 899: demotion exactly when now - 899s > 900s
  while (!sched.empty() && sched.next_time() <= 1'799'000) sched.step();
  CHECK(*target_loop() == Loop::Tracking);
  while (!sched.empty() && sched.next_time() <= 1'800'000) sched.step();
  REQUIRE(target_loop().has_value());
  CHECK(*target_loop() == Loop::Discovery);

  // another dtimeout of silence in discovery: removed entirely
  while (!sched.empty() && sched.next_time() <= 2'700'000) sched.step();
  CHECK(target_loop().has_value());
  while (!sched.empty() && sched.next_time() <= 2'701'500) sched.step();
  CHECK_FALSE(target_loop().has_value());
}

TEST_CASE("two crawlers on one world: merged identity sets equal ground truth") {
  auto cfg = world_config(
      "seed = 10\nduration_s = 600\n"
      "pool asn=1 country=AA prefix=10.0.0.0/16 devices=40 mix_hj=0.5\n");
  Harness h(cfg);
  Crawler mz = h.make(cc(Family::MZ, "mzA"), cfg.end_ms());
  Crawler hj = h.make(cc(Family::HJ, "hjA"), cfg.end_ms());
  mz.start();
  hj.start();
  h.run(cfg.end_ms());

  std::set<core::BotId> want_mz;
  for (const auto& b : h.world.ground_truth(h.world.clock(), Family::MZ))
    want_mz.insert(b.node_id);
  CHECK(mz.tracked_identities() == want_mz);
  CHECK(hj.tracked_identities().size() == 20);
  for (const auto& o : h.obs) CHECK((o.botnet == Family::MZ || o.botnet == Family::HJ));
}

TEST_CASE("hajime day_offset targets the matching clock-skew cohort") {
  auto cfg = world_config(
      "seed = 12\nduration_s = 600\nhj_skew_frac = 1.0\n"
      "pool asn=1 country=AA prefix=10.0.0.0/16 devices=40 mix_hj=1\n");
  Harness h(cfg);
  int ahead = 0, behind = 0;
  for (int i = 0; i < h.world.device_count(); ++i) {
    if (h.world.device_view(i).skew_days == 1) ++ahead;
    if (h.world.device_view(i).skew_days == -1) ++behind;
  }
  REQUIRE(ahead + behind == 40);  // skew_frac 1: every bot is skewed
  REQUIRE(ahead > 0);
  REQUIRE(behind > 0);

  CrawlerConfig plus = cc(Family::HJ, "hjP");
  plus.day_offset = 1;
  CrawlerConfig minus = cc(Family::HJ, "hjM");
  minus.day_offset = -1;
  CrawlerConfig zero = cc(Family::HJ, "hjZ");
  Crawler cp = h.make(plus, cfg.end_ms());
  Crawler cm = h.make(minus, cfg.end_ms());
  Crawler cz = h.make(zero, cfg.end_ms());
  cp.start();
  cm.start();
  cz.start();
  h.run(cfg.end_ms());

  CHECK(int(cp.tracked_identities().size()) == ahead);
  CHECK(int(cm.tracked_identities().size()) == behind);
  CHECK(cz.tracked_identities().empty());  // nobody runs on today's hash
}

TEST_CASE("benign-heavy bootstrap still bridges both crawlers to their swarms") {
  auto cfg = world_config(
      "seed = 19\nduration_s = 900\n"
      "pool asn=1 country=AA prefix=10.0.0.0/16 devices=40 mix_hj=0.5 benign=6\n"
      "pool asn=2 country=BB prefix=172.16.0.0/16 devices=20 mix_hj=0.5\n");
  Harness h(cfg);
  Crawler mz = h.make(cc(Family::MZ, "mz0"), cfg.end_ms());
  Crawler hj = h.make(cc(Family::HJ, "hj0"), cfg.end_ms());
  mz.start();
  hj.start();
  h.run(cfg.end_ms());
  CHECK(mz.tracked_identities().size() == 30);
  CHECK(hj.tracked_identities().size() == 30);
}

TEST_CASE("observation timestamps from one crawler never decrease") {
  auto cfg = world_config(
      "seed = 14\nduration_s = 1800\nmz_uptime_mean_s = 600\nreboot_downtime_s = 60\n"
      "pool asn=1 country=AA prefix=10.0.0.0/16 devices=20 mix_hj=0 loss=0.3\n");
  Harness h(cfg);
  Crawler c = h.make(cc(Family::MZ, "mz0"), cfg.end_ms());
  c.start();
  h.run(cfg.end_ms());
  REQUIRE(h.obs.size() > 50);
  for (size_t i = 1; i < h.obs.size(); ++i) CHECK(h.obs[i].ts >= h.obs[i - 1].ts);
}

TEST_CASE("lossless static crawl: journal-derived maxcount equals the measured one") {
  auto cfg = world_config(
      "seed = 18\nduration_s = 1200\n"
      "pool asn=1 country=AA prefix=10.0.0.0/16 devices=30 nat=3 mix_hj=0\n"
      "pool asn=2 country=BB prefix=172.16.0.0/16 devices=20 nat=1 mix_hj=0\n");
  Harness h(cfg);
  Crawler c = h.make(cc(Family::MZ, "mz0"), cfg.end_ms());
  c.start();
  h.run(cfg.end_ms());

  core::AsTable table;
  for (const auto& p : cfg.pools)
    table.add(core::AsRecord{p.prefix, p.prefix_len, p.asn, p.country});
  auto enriched = core::enrich_all(h.obs, table);

  // window starts after the first discovery period so tracking covers all
  int64_t win_start = cfg.epoch_ms() + 300'000;
  int64_t win_len = 600'000;
  auto measured = analytics::maxcount_as(enriched, win_start, win_len, 60'000);

  // journal-derived: per AS, distinct IPs of up infected bots at a snapshot
  std::map<uint32_t, std::set<uint32_t>> per_as;
  for (const auto& b : h.world.ground_truth(win_start, Family::MZ))
    per_as[b.asn].insert(b.ip);
  int64_t truth_total = 0;
  for (const auto& [asn, ips] : per_as) {
    truth_total += int64_t(ips.size());
    CHECK(measured.per_as.at(asn) == int64_t(ips.size()));
  }
  CHECK(measured.total == truth_total);
}

TEST_CASE("crawl stopped at t=0 produces an empty log") {
  auto cfg = world_config(
      "seed = 15\nduration_s = 0\n"
      "pool asn=1 country=AA prefix=10.0.0.0/16 devices=5 mix_hj=0\n");
  Harness h(cfg);
  Crawler c = h.make(cc(Family::MZ, "mz0"), cfg.end_ms());
  c.start();
  h.run(cfg.end_ms());
  CHECK(h.obs.empty());
  CHECK(c.observations_emitted() == 0);
}

TEST_CASE("mozi reboot mid-crawl: tracking picks up the fresh identity") {
  auto cfg = world_config(
      "seed = 16\nduration_s = 3600\nmz_uptime_mean_s = 600\nreboot_downtime_s = 30\n"
      "pool asn=1 country=AA prefix=10.0.0.0/16 devices=1 mix_hj=0\n");
  Harness h(cfg);
  Crawler c = h.make(cc(Family::MZ, "mz0"), cfg.end_ms());
  c.start();
  h.run(cfg.end_ms());

  std::set<core::BotId> ids_seen;
  for (const auto& o : h.obs)
    if (o.bot_id && core::is_success(o.event)) ids_seen.insert(*o.bot_id);
  std::set<core::BotId> ids_truth;
  for (const auto& e : h.world.journal())
    if (e.event == simnet::JournalEvent::Infect) ids_truth.insert(*e.node_id);
  REQUIRE(ids_truth.size() > 1);  // it did reboot
  for (const auto& id : ids_seen) CHECK(ids_truth.count(id));
  CHECK(ids_seen.size() > 1);
}
