#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "botmesh/pipeline.hpp"

using namespace botmesh;

int main(int argc, char** argv) {
  CLI::App app{"botmesh: desk-scale P2P botnet measurement (simulate, crawl, analyze)"};
  app.require_subcommand(1);

  // sim
  auto* sim = app.add_subcommand("sim", "run a simulated world and write its journal");
  std::string sim_config, sim_out;
  std::optional<uint64_t> sim_seed;
  sim->add_option("--config", sim_config, "sim config file")->required();
  sim->add_option("--seed", sim_seed, "seed override");
  sim->add_option("--out", sim_out, "output directory")->required();

  // crawl
  auto* crawl = app.add_subcommand("crawl", "run crawlers against a simulated world");
  std::string crawl_sim, crawl_out;
  std::vector<std::string> crawl_crawlers;
  int64_t crawl_duration = 0;
  std::optional<uint64_t> crawl_seed;
  bool realtime = false;
  crawl->add_option("--sim", crawl_sim, "sim config file")->required();
  crawl->add_option("--crawler", crawl_crawlers, "crawler config file (repeatable)")
      ->required();
  crawl->add_option("--duration", crawl_duration, "override duration (seconds)");
  crawl->add_option("--seed", crawl_seed, "seed override");
  crawl->add_option("--out", crawl_out, "output directory")->required();
  crawl->add_flag("--realtime", realtime, "map virtual time to wall time");

  // analyze
  auto* analyze = app.add_subcommand("analyze", "compute all metrics over observation logs");
  std::vector<std::string> logs;
  std::string as_table, analyze_out, mode = "config_only";
  int64_t bucket = 3600, snapshot = 60;
  analyze->add_option("--logs", logs, "observation log path or glob (repeatable)")
      ->required();
  analyze->add_option("--as-table", as_table, "AS table CSV")->required();
  analyze->add_option("--out", analyze_out, "output directory")->required();
  analyze->add_option("--bucket", bucket, "reply-ratio bucket seconds (default 3600)");
  analyze->add_option("--snapshot", snapshot, "snapshot width seconds (default 60)");
  analyze->add_option("--mode", mode, "reply-ratio mode: config_only | any_reply");

  // report
  auto* report = app.add_subcommand("report", "emit plot data and SVG charts");
  std::string analysis_dir, report_out;
  report->add_option("--analysis", analysis_dir, "analyze output directory")->required();
  report->add_option("--out", report_out, "report output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) {
      pipeline::run_sim(sim_config, sim_seed, sim_out);
    } else if (*crawl) {
      pipeline::run_crawl(crawl_sim, crawl_crawlers, crawl_duration, crawl_seed, crawl_out,
                          realtime);
    } else if (*analyze) {
      pipeline::AnalyzeOptions opts;
      opts.bucket_s = bucket;
      opts.snapshot_s = snapshot;
      if (mode == "config_only") opts.mode = analytics::ReplyMode::ConfigOnly;
      else if (mode == "any_reply") opts.mode = analytics::ReplyMode::AnyReply;
      else throw Error(Errc::ConfigInvalid, "mode '" + mode + "'");
      pipeline::run_analyze(logs, as_table, analyze_out, opts);
    } else if (*report) {
      pipeline::run_report(analysis_dir, report_out);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "ERROR:%s:%s\n", errc_name(e.code()), e.what());
    return pipeline::exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "ERROR:INTERNAL:%s\n", e.what());
    return 1;
  }
  return 0;
}
