#include "botmesh/pipeline.hpp"

#include <fnmatch.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "botmesh/crawler.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace botmesh::pipeline {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::IoError, "cannot create " + dir);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error(Errc::IoError, "cannot open " + path);
  return os;
}

std::vector<std::string> expand_glob(const std::string& pattern) {
  std::vector<std::string> out;
  if (pattern.find_first_of("*?[") == std::string::npos) {
    if (fs::exists(pattern)) out.push_back(pattern);
    return out;
  }
  fs::path p(pattern);
  fs::path dir = p.parent_path().empty() ? fs::path(".") : p.parent_path();
  std::string name_pat = p.filename().string();
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string name = entry.path().filename().string();
    if (fnmatch(name_pat.c_str(), name.c_str(), 0) == 0)
      out.push_back(entry.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (char c : s) {
    h ^= uint8_t(c);
    h *= 1099511628211ULL;
  }
  return h;
}

void write_metric_csv(const std::string& path, const analytics::MetricSeries& series) {
  auto os = open_out(path);
  os << "bucket_ts,group,value\n";
  for (const auto& p : series)
    os << p.bucket_ms << ',' << p.group << ',' << fmt_double(p.value) << '\n';
}

struct MetricRow {
  int64_t bucket = 0;
  std::string group;
  double value = 0;
};

std::vector<MetricRow> read_metric_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(Errc::EmptyInput, "missing " + path);
  std::vector<MetricRow> out;
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (first) {
      first = false;
      continue;
    }
    if (line.empty()) continue;
    auto c1 = line.find(',');
    auto c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) continue;
    MetricRow r;
    r.bucket = std::stoll(line.substr(0, c1));
    r.group = line.substr(c1 + 1, c2 - c1 - 1);
    r.value = std::stod(line.substr(c2 + 1));
    out.push_back(std::move(r));
  }
  return out;
}

// minimal static line chart; enough to eyeball a dip or a trend
void write_svg(const std::string& path, const std::string& title,
               const std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>>&
                   series) {
  const double W = 640, H = 320, ML = 60, MR = 15, MT = 30, MB = 35;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool any = false;
  for (const auto& [name, pts] : series)
    for (const auto& [x, y] : pts) {
      if (!any) {
        xmin = xmax = x;
        ymin = ymax = y;
        any = true;
      }
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  auto sx = [&](double x) { return ML + (x - xmin) / (xmax - xmin) * (W - ML - MR); };
  auto sy = [&](double y) { return H - MB - (y - ymin) / (ymax - ymin) * (H - MT - MB); };

  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  auto os = open_out(path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  os << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"18\" text-anchor=\"middle\" font-family=\"sans-serif\""
     << " font-size=\"13\">" << title << "</text>\n";
  os << "<line x1=\"" << ML << "\" y1=\"" << H - MB << "\" x2=\"" << W - MR << "\" y2=\""
     << H - MB << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << ML << "\" y1=\"" << MT << "\" x2=\"" << ML << "\" y2=\"" << H - MB
     << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << ML - 6 << "\" y=\"" << H - MB << "\" text-anchor=\"end\""
     << " font-family=\"sans-serif\" font-size=\"10\">" << fmt_double(ymin) << "</text>\n";
  os << "<text x=\"" << ML - 6 << "\" y=\"" << MT + 4 << "\" text-anchor=\"end\""
     << " font-family=\"sans-serif\" font-size=\"10\">" << fmt_double(ymax) << "</text>\n";
  int ci = 0;
  double ly = MT + 8;
  for (const auto& [name, pts] : series) {
    const char* color = colors[ci++ % 4];
    if (!pts.empty()) {
      os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (const auto& [x, y] : pts) os << fmt_double(sx(x)) << ',' << fmt_double(sy(y)) << ' ';
      os << "\"/>\n";
    }
    os << "<text x=\"" << W - MR - 5 << "\" y=\"" << ly << "\" text-anchor=\"end\""
       << " font-family=\"sans-serif\" font-size=\"11\" fill=\"" << color << "\">" << name
       << "</text>\n";
    ly += 14;
  }
  os << "</svg>\n";
}

void write_two_col(const std::string& path,
                   const std::vector<std::pair<double, double>>& pts) {
  auto os = open_out(path);
  for (const auto& [x, y] : pts) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.0f %s\n", x, fmt_double(y).c_str());
    os << buf;
  }
}

}  // namespace

uint64_t effective_seed(std::optional<uint64_t> override_seed, uint64_t config_seed) {
  if (const char* env = std::getenv("BOTMESH_SEED")) {
    char* end = nullptr;
    uint64_t v = std::strtoull(env, &end, 10);
    if (end && *end == '\0') return v;
    throw Error(Errc::ConfigInvalid, "BOTMESH_SEED");
  }
  if (override_seed) return *override_seed;
  return config_seed;
}

// one run per output directory, so logs never interleave across runs
static void claim_out_dir(const std::string& out_dir) {
  ensure_dir(out_dir);
  if (fs::exists(out_dir + "/manifest.json"))
    throw Error(Errc::IoError, "output directory already holds a run: " + out_dir);
}

void write_manifest(const RunManifest& m, const std::string& path) {
  json j;
  j["run_id"] = m.run_id;
  j["sim_config"] = m.sim_config;
  j["crawler_configs"] = m.crawler_configs;
  j["out_dir"] = m.out_dir;
  j["seed"] = m.seed;
  j["created_ts"] = m.created_ms;
  auto os = open_out(path);
  os << j.dump(2) << "\n";
}

void write_as_table_csv(const simnet::SimConfig& cfg, const std::string& path) {
  auto os = open_out(path);
  os << "cidr,asn,country\n";
  for (const auto& p : cfg.pools)
    os << ipv4_to_string(p.prefix) << '/' << p.prefix_len << ',' << p.asn << ',' << p.country
       << '\n';
}

static RunManifest make_manifest(const std::string& sim_path,
                                 const std::vector<std::string>& crawler_paths,
                                 const std::string& out_dir, uint64_t seed,
                                 int64_t created_ms) {
  std::string blob = sim_path + "|" + out_dir;
  for (const auto& c : crawler_paths) blob += "|" + c;
  char idbuf[40];
  std::snprintf(idbuf, sizeof idbuf, "run-%llu-%08llx", (unsigned long long)seed,
                (unsigned long long)(fnv1a(blob) & 0xFFFFFFFFULL));
  return RunManifest{idbuf, sim_path, crawler_paths, out_dir, seed, created_ms};
}

void run_sim(const std::string& sim_config_path, std::optional<uint64_t> seed,
             const std::string& out_dir) {
  simnet::SimConfig cfg = simnet::load_sim_config(sim_config_path);
  cfg.seed = effective_seed(seed, cfg.seed);
  claim_out_dir(out_dir);
  simnet::SimWorld world(cfg);
  world.advance_to(cfg.end_ms());
  world.write_journal_csv(out_dir + "/journal.csv");
  write_as_table_csv(cfg, out_dir + "/as_table.csv");
  write_manifest(make_manifest(sim_config_path, {}, out_dir, cfg.seed, cfg.epoch_ms()),
                 out_dir + "/manifest.json");
}

CrawlResult run_crawl(const std::string& sim_config_path,
                      const std::vector<std::string>& crawler_config_paths,
                      int64_t duration_s, std::optional<uint64_t> seed,
                      const std::string& out_dir, bool realtime) {
  simnet::SimConfig cfg = simnet::load_sim_config(sim_config_path);
  cfg.seed = effective_seed(seed, cfg.seed);
  if (duration_s > 0) cfg.duration_s = duration_s;
  if (crawler_config_paths.empty()) throw Error(Errc::ConfigInvalid, "no crawler configs");
  claim_out_dir(out_dir);

  simnet::SimWorld world(cfg);
  crawler::SimTransport transport(world);
  crawler::Scheduler sched;

  std::vector<std::unique_ptr<core::ObservationLogWriter>> writers;
  std::vector<std::unique_ptr<crawler::Crawler>> crawlers;
  std::set<std::string> ids;
  for (const auto& path : crawler_config_paths) {
    crawler::CrawlerConfig ccfg = crawler::load_crawler_config(path);
    ccfg.hajime_config_name = cfg.hajime_config_name;
    if (!ids.insert(ccfg.crawler_id).second)
      throw Error(Errc::ConfigInvalid, "duplicate crawler_id " + ccfg.crawler_id);
    auto writer = std::make_unique<core::ObservationLogWriter>(out_dir, ccfg.crawler_id);
    auto* wp = writer.get();
    auto c = std::make_unique<crawler::Crawler>(
        ccfg, transport, sched, [wp](const core::Observation& o) { wp->append(o); },
        cfg.seed, cfg.epoch_ms(), cfg.end_ms());
    c->start();
    writers.push_back(std::move(writer));
    crawlers.push_back(std::move(c));
  }

  bool transport_down = false;
  try {
    if (realtime) {
      int64_t prev = cfg.epoch_ms();
      while (!sched.empty() && sched.next_time() < cfg.end_ms()) {
        int64_t t = sched.next_time();
        if (t > prev)
          std::this_thread::sleep_for(std::chrono::milliseconds(t - prev));
        prev = t;
        world.advance_to(t);
        sched.step();
      }
      world.advance_to(cfg.end_ms());
    } else {
      crawler::run_crawlers(world, sched, cfg.end_ms());
    }
  } catch (const Error& e) {
    if (e.code() != Errc::TransportDown) throw;
    transport_down = true;  // keep whatever was logged before the transport died
  }

  CrawlResult result;
  world.write_journal_csv(out_dir + "/journal.csv");
  result.journal_file = out_dir + "/journal.csv";
  write_as_table_csv(cfg, out_dir + "/as_table.csv");
  for (auto& w : writers) {
    w->close();
    for (const auto& f : w->files_written()) result.observation_files.push_back(f);
  }
  write_manifest(
      make_manifest(sim_config_path, crawler_config_paths, out_dir, cfg.seed, cfg.epoch_ms()),
      out_dir + "/manifest.json");
  if (transport_down) throw Error(Errc::TransportDown, "crawl ended early, partial logs kept");
  return result;
}

void run_analyze(const std::vector<std::string>& log_globs, const std::string& as_table_path,
                 const std::string& out_dir, const AnalyzeOptions& opts) {
  std::vector<std::string> files;
  for (const auto& g : log_globs)
    for (auto& f : expand_glob(g)) files.push_back(f);
  std::sort(files.begin(), files.end());
  files.erase(std::unique(files.begin(), files.end()), files.end());
  if (files.empty()) throw Error(Errc::EmptyInput, "no observation logs matched");

  core::AsTable table = core::load_as_table(as_table_path);
  std::vector<core::Observation> all;
  for (const auto& f : files) {
    auto obs = core::read_observation_log(f, /*tolerant=*/true);
    all.insert(all.end(), obs.begin(), obs.end());
  }
  std::sort(all.begin(), all.end(), [](const core::Observation& a, const core::Observation& b) {
    if (a.ts != b.ts) return a.ts < b.ts;
    if (a.botnet != b.botnet) return a.botnet < b.botnet;
    if (a.ip != b.ip) return a.ip < b.ip;
    return a.port < b.port;
  });
  std::vector<core::EnrichedObservation> enriched = core::enrich_all(all, table);

  std::vector<core::EnrichedObservation> hj, mz;
  int64_t min_ts = INT64_MAX, max_ts = INT64_MIN;
  for (auto& eo : enriched) {
    (eo.obs.botnet == Family::HJ ? hj : mz).push_back(eo);
    min_ts = std::min(min_ts, eo.obs.ts);
    max_ts = std::max(max_ts, eo.obs.ts);
  }
  ensure_dir(out_dir);
  const int64_t snapshot_ms = opts.snapshot_s * 1000;
  const int64_t bucket_ms = opts.bucket_s * 1000;

  // size metrics per UTC day, per family
  analytics::MetricSeries bin_series, max_series;
  json size_summary;
  if (!enriched.empty()) {
    for (int64_t day = utc_day_start(min_ts); day <= utc_day_start(max_ts);
         day += kMsPerDay) {
      for (const auto* fam_obs : {&hj, &mz}) {
        Family fam = fam_obs == &hj ? Family::HJ : Family::MZ;
        if (fam_obs->empty()) continue;
        int64_t bc = analytics::bincount(*fam_obs, day, kMsPerDay);
        auto mc = analytics::maxcount_as(*fam_obs, day, kMsPerDay, snapshot_ms);
        if (bc == 0 && mc.total == 0) continue;
        bin_series.push_back({day, kMsPerDay, family_tag(fam), double(bc)});
        max_series.push_back({day, kMsPerDay, family_tag(fam), double(mc.total)});
      }
    }
  }
  write_metric_csv(out_dir + "/bincount.csv", bin_series);
  write_metric_csv(out_dir + "/maxcount.csv", max_series);

  auto overlap = analytics::daily_overlap(hj, mz);
  write_metric_csv(out_dir + "/overlap.csv", overlap);

  auto verdicts = analytics::classify_all_shared(enriched, snapshot_ms);
  {
    auto os = open_out(out_dir + "/verdicts.csv");
    os << "ip,verdict,first_ts,last_ts,observations\n";
    for (const auto& v : verdicts) {
      int64_t first = v.evidence.empty() ? 0 : v.evidence.front().first;
      int64_t last = v.evidence.empty() ? 0 : v.evidence.back().first;
      os << ipv4_to_string(v.ip) << ',' << analytics::verdict_tag(v.verdict) << ',' << first
         << ',' << last << ',' << v.evidence.size() << '\n';
    }
  }

  json summary;
  {
    auto os = open_out(out_dir + "/lifetimes.csv");
    os << "botnet,bot_key,first_ts,last_ts,hours\n";
    for (Family fam : {Family::HJ, Family::MZ}) {
      const auto& fam_obs = fam == Family::HJ ? hj : mz;
      auto lt = analytics::lifetimes(fam_obs, fam, snapshot_ms);
      for (const auto& e : lt.entries)
        os << family_tag(fam) << ',' << e.key.str() << ',' << e.first_ms << ',' << e.last_ms
           << ',' << fmt_double(e.hours) << '\n';
      summary[family_tag(fam)]["lifetime_mean_hours"] = lt.mean_hours;
      summary[family_tag(fam)]["lifetime_median_hours"] = lt.median_hours;
      summary[family_tag(fam)]["lifetime_excluded_ids"] = lt.excluded;
      summary[family_tag(fam)]["bots"] = lt.entries.size();
    }
  }
  {
    auto os = open_out(out_dir + "/churn.csv");
    os << "day,botnet,births,deaths,stable,carryover,total\n";
    for (Family fam : {Family::HJ, Family::MZ}) {
      const auto& fam_obs = fam == Family::HJ ? hj : mz;
      auto churn = analytics::churn_daily(fam_obs, fam);
      double births = 0, deaths = 0, totals = 0;
      for (const auto& d : churn) {
        os << d.day_start_ms << ',' << family_tag(fam) << ',' << d.births << ',' << d.deaths
           << ',' << d.stable << ',' << d.carryover << ',' << d.total << '\n';
        births += double(d.births);
        deaths += double(d.deaths);
        totals += double(d.total);
      }
      size_t n = churn.empty() ? 1 : churn.size();
      summary[family_tag(fam)]["avg_daily_births"] = births / double(n);
      summary[family_tag(fam)]["avg_daily_deaths"] = deaths / double(n);
      summary[family_tag(fam)]["avg_daily_total"] = totals / double(n);
    }
  }
  auto ratio = analytics::reply_ratio(enriched, bucket_ms, opts.mode);
  write_metric_csv(out_dir + "/reply_ratio.csv", ratio);

  for (Family fam : {Family::HJ, Family::MZ}) {
    const auto& fam_obs = fam == Family::HJ ? hj : mz;
    std::set<uint32_t> ips;
    std::set<std::string> keys;
    for (const auto& eo : fam_obs) {
      if (!core::is_success(eo.obs.event)) continue;
      ips.insert(eo.obs.ip);
      if (eo.obs.bot_id) keys.insert(core::bot_key(eo).str());
    }
    summary[family_tag(fam)]["distinct_ips"] = ips.size();
    summary[family_tag(fam)]["distinct_keys"] = keys.size();
    double bc_sum = 0, mc_sum = 0;
    int days = 0;
    for (const auto& p : bin_series)
      if (p.group == family_tag(fam)) {
        bc_sum += p.value;
        ++days;
      }
    for (const auto& p : max_series)
      if (p.group == family_tag(fam)) mc_sum += p.value;
    summary[family_tag(fam)]["avg_daily_bincount"] = days ? bc_sum / days : 0.0;
    summary[family_tag(fam)]["avg_daily_maxcount_as"] = days ? mc_sum / days : 0.0;
  }
  double overlap_sum = 0;
  for (const auto& p : overlap) overlap_sum += p.value;
  summary["overlap_mean_pct"] = overlap.empty() ? 0.0 : overlap_sum / double(overlap.size());
  int64_t sharing = 0, takeover = 0, inconclusive = 0;
  for (const auto& v : verdicts) {
    if (v.verdict == analytics::Verdict::Sharing) ++sharing;
    else if (v.verdict == analytics::Verdict::PossibleTakeover) ++takeover;
    else ++inconclusive;
  }
  summary["verdicts"]["sharing"] = sharing;
  summary["verdicts"]["possible_takeover"] = takeover;
  summary["verdicts"]["inconclusive"] = inconclusive;
  summary["observations"] = all.size();
  {
    auto os = open_out(out_dir + "/summary.json");
    os << summary.dump(2) << "\n";
  }
}

void run_report(const std::string& analysis_dir, const std::string& out_dir) {
  ensure_dir(out_dir);
  auto bins = read_metric_csv(analysis_dir + "/bincount.csv");
  auto maxes = read_metric_csv(analysis_dir + "/maxcount.csv");
  auto ratios = read_metric_csv(analysis_dir + "/reply_ratio.csv");

  std::ifstream churn_is(analysis_dir + "/churn.csv");
  if (!churn_is) throw Error(Errc::EmptyInput, "missing " + analysis_dir + "/churn.csv");
  struct ChurnRow {
    int64_t day;
    std::string fam;
    double births, deaths;
  };
  std::vector<ChurnRow> churn;
  {
    std::string line;
    bool first = true;
    while (std::getline(churn_is, line)) {
      if (first) {
        first = false;
        continue;
      }
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string tok;
      std::vector<std::string> cols;
      while (std::getline(ls, tok, ',')) cols.push_back(tok);
      if (cols.size() != 7) continue;
      churn.push_back(ChurnRow{std::stoll(cols[0]), cols[1], std::stod(cols[2]),
                               std::stod(cols[3])});
    }
  }

  for (const char* fam : {"HJ", "MZ"}) {
    std::vector<std::pair<double, double>> bc, mc, births, deaths, rr;
    for (const auto& r : bins)
      if (r.group == fam) bc.emplace_back(double(r.bucket), r.value);
    for (const auto& r : maxes)
      if (r.group == fam) mc.emplace_back(double(r.bucket), r.value);
    for (const auto& r : churn)
      if (r.fam == fam) {
        births.emplace_back(double(r.day), r.births);
        deaths.emplace_back(double(r.day), r.deaths);
      }
    std::string agg = std::string(fam) + "/*";
    for (const auto& r : ratios)
      if (r.group == agg) rr.emplace_back(double(r.bucket), r.value);

    std::string f(fam);
    write_two_col(out_dir + "/botnet_size_bincount_" + f + ".dat", bc);
    write_two_col(out_dir + "/botnet_size_maxcount_" + f + ".dat", mc);
    write_svg(out_dir + "/botnet_size_" + f + ".svg", "Daily size (" + f + ")",
              {{"BinCount", bc}, {"MaxCount_AS", mc}});
    write_two_col(out_dir + "/size_change_births_" + f + ".dat", births);
    write_two_col(out_dir + "/size_change_deaths_" + f + ".dat", deaths);
    write_svg(out_dir + "/size_change_" + f + ".svg", "Births and deaths (" + f + ")",
              {{"births", births}, {"deaths", deaths}});
    write_two_col(out_dir + "/fail_rate_" + f + ".dat", rr);
    write_svg(out_dir + "/fail_rate_" + f + ".svg", "Reply ratio (" + f + ")",
              {{"reply ratio", rr}});
  }
}

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::ConfigInvalid:
    case Errc::InvalidNretry:
    case Errc::InvalidPrefixLen:
    case Errc::MalformedRow:
    case Errc::MalformedLine:
    case Errc::DecodeError:
      return 2;
    case Errc::IoError:
      return 3;
    case Errc::EmptyInput:
      return 4;
    default:
      return 1;
  }
}

}  // namespace botmesh::pipeline
