#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "botmesh/analytics.hpp"
#include "botmesh/simnet.hpp"

namespace botmesh::pipeline {

struct RunManifest {
  std::string run_id;
  std::string sim_config;
  std::vector<std::string> crawler_configs;
  std::string out_dir;
  uint64_t seed = 0;
  int64_t created_ms = 0;  // virtual epoch of the run, keeps output trees reproducible
};

void write_manifest(const RunManifest& m, const std::string& path);

// BOTMESH_SEED env > explicit override > config file value.
uint64_t effective_seed(std::optional<uint64_t> override_seed, uint64_t config_seed);

// Derives an AS table CSV from the world's pools so analyze can enrich logs
// produced against that world.
void write_as_table_csv(const simnet::SimConfig& cfg, const std::string& path);

// sim: run the world alone, write journal.csv + as_table.csv + manifest.json.
void run_sim(const std::string& sim_config_path, std::optional<uint64_t> seed,
             const std::string& out_dir);

// crawl: one world, all configured crawlers on the shared virtual clock.
// duration_s == 0 keeps the sim config's duration. Writes per-crawler
// observation CSVs plus journal/as_table/manifest.
struct CrawlResult {
  std::vector<std::string> observation_files;
  std::string journal_file;
};
CrawlResult run_crawl(const std::string& sim_config_path,
                      const std::vector<std::string>& crawler_config_paths,
                      int64_t duration_s, std::optional<uint64_t> seed,
                      const std::string& out_dir, bool realtime = false);

struct AnalyzeOptions {
  int64_t bucket_s = 3600;
  int64_t snapshot_s = 60;
  analytics::ReplyMode mode = analytics::ReplyMode::ConfigOnly;
};

// analyze: every metric over the merged logs; writes bincount.csv,
// maxcount.csv, overlap.csv, verdicts.csv, lifetimes.csv, churn.csv,
// reply_ratio.csv and summary.json. Throws Error(EmptyInput) when the glob
// matches nothing.
void run_analyze(const std::vector<std::string>& log_globs, const std::string& as_table_path,
                 const std::string& out_dir, const AnalyzeOptions& opts = {});

// report: two-column data series plus minimal SVG line charts for the size,
// churn and reply-ratio figures.
void run_report(const std::string& analysis_dir, const std::string& out_dir);

// Shared by the CLI and tests: maps Error codes to process exit codes
// (0 ok, 2 config, 3 io, 4 empty input) and prints `ERROR:<CODE>:<msg>`.
int exit_code_for(Errc code);

}  // namespace botmesh::pipeline
