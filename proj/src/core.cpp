#include "botmesh/core.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>

namespace botmesh::core {

const char* const kObservationHeader = "ts,botnet,ip,port,bot_id,event,details";

const char* event_tag(Event e) {
  switch (e) {
    case Event::ReplyConfig: return "REPLY_CONFIG";
    case Event::ReplyNodes: return "REPLY_NODES";
    case Event::HandshakeOk: return "HANDSHAKE_OK";
    case Event::Timeout: return "TIMEOUT";
    case Event::ProtocolError: return "PROTOCOL_ERROR";
  }
  return "?";
}

bool parse_event(const std::string& s, Event* out) {
  static const std::map<std::string, Event> table = {
      {"REPLY_CONFIG", Event::ReplyConfig},   {"REPLY_NODES", Event::ReplyNodes},
      {"HANDSHAKE_OK", Event::HandshakeOk},   {"TIMEOUT", Event::Timeout},
      {"PROTOCOL_ERROR", Event::ProtocolError}};
  auto it = table.find(s);
  if (it == table.end()) return false;
  *out = it->second;
  return true;
}

bool observation_valid(const Observation& o) {
  return o.ts > 0 && o.port >= 1;
}

// RFC 4180: quote fields containing comma, quote or newline; double quotes.
static void append_csv_field(std::string& out, const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) {
    out += field;
    return;
  }
  out += '"';
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
}

std::string serialize_observation(const Observation& o) {
  std::string out;
  out.reserve(64 + o.details.size());
  out += std::to_string(o.ts);
  out += ',';
  out += family_tag(o.botnet);
  out += ',';
  out += ipv4_to_string(o.ip);
  out += ',';
  out += std::to_string(o.port);
  out += ',';
  if (o.bot_id) out += to_hex(o.bot_id->data(), o.bot_id->size());
  out += ',';
  out += event_tag(o.event);
  out += ',';
  append_csv_field(out, o.details);
  return out;
}

// Splits one CSV record with RFC 4180 quoting. Returns false on unbalanced
// quotes or quoted-field garbage.
static bool split_csv(const std::string& line, std::vector<std::string>& fields) {
  fields.clear();
  std::string cur;
  bool in_quotes = false;
  size_t i = 0;
  bool field_was_quoted = false;
  while (i < line.size()) {
    char c = line[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          i += 2;
        } else {
          in_quotes = false;
          ++i;
        }
      } else {
        cur += c;
        ++i;
      }
    } else if (c == '"' && cur.empty() && !field_was_quoted) {
      in_quotes = true;
      field_was_quoted = true;
      ++i;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
      field_was_quoted = false;
      ++i;
    } else {
      if (field_was_quoted) return false;  // text after closing quote
      cur += c;
      ++i;
    }
  }
  if (in_quotes) return false;
  fields.push_back(cur);
  return true;
}

static bool parse_i64(const std::string& s, int64_t* out) {
  if (s.empty()) return false;
  int64_t v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') return false;
    v = v * 10 + (c - '0');
  }
  *out = v;
  return true;
}

Observation parse_observation(const std::string& line) {
  std::vector<std::string> f;
  if (!split_csv(line, f)) throw Error(Errc::MalformedLine, "bad quoting: " + line);
  if (f.size() != 7)
    throw Error(Errc::MalformedLine,
                "expected 7 columns, got " + std::to_string(f.size()));
  Observation o;
  if (!parse_i64(f[0], &o.ts) || o.ts <= 0)
    throw Error(Errc::MalformedLine, "bad ts: " + f[0]);
  if (!parse_family(f[1], &o.botnet)) throw Error(Errc::MalformedLine, "bad botnet: " + f[1]);
  if (!parse_ipv4(f[2], &o.ip)) throw Error(Errc::MalformedLine, "bad ip: " + f[2]);
  int64_t port;
  if (!parse_i64(f[3], &port) || port < 1 || port > 65535)
    throw Error(Errc::MalformedLine, "bad port: " + f[3]);
  o.port = uint16_t(port);
  if (!f[4].empty()) {
    BotId id;
    if (!from_hex(f[4], id.data(), id.size()))
      throw Error(Errc::MalformedLine, "bad bot_id: " + f[4]);
    o.bot_id = id;
  }
  if (!parse_event(f[5], &o.event)) throw Error(Errc::MalformedLine, "bad event: " + f[5]);
  o.details = f[6];
  return o;
}

std::string observation_file_name(Family f, int64_t ts_ms, const std::string& crawler_id) {
  return "obs_" + std::string(family_tag(f)) + "_" + format_yyyymmdd(ts_ms) + "_" +
         crawler_id + ".csv";
}

// ---- log writer ----

struct ObservationLogWriter::Impl {
  std::string dir;
  std::string crawler_id;
  std::map<std::string, std::ofstream> open_files;
};

ObservationLogWriter::ObservationLogWriter(std::string dir, std::string crawler_id)
    : impl_(new Impl{std::move(dir), std::move(crawler_id), {}}) {}

ObservationLogWriter::~ObservationLogWriter() {
  close();
  delete impl_;
}

void ObservationLogWriter::append(const Observation& o) {
  std::string name = observation_file_name(o.botnet, o.ts, impl_->crawler_id);
  auto it = impl_->open_files.find(name);
  if (it == impl_->open_files.end()) {
    std::string path = impl_->dir + "/" + name;
    std::ofstream os(path, std::ios::out | std::ios::app);
    if (!os) throw Error(Errc::IoError, "cannot open " + path);
    if (os.tellp() == 0) os << kObservationHeader << "\n";
    it = impl_->open_files.emplace(name, std::move(os)).first;
    files_.push_back(path);
  }
  // Whole line in one write, flushed, so a killed run never leaves a torn line.
  std::string line = serialize_observation(o);
  line += '\n';
  it->second.write(line.data(), std::streamsize(line.size()));
  it->second.flush();
}

void ObservationLogWriter::close() {
  impl_->open_files.clear();
}

std::vector<Observation> read_observation_log(const std::string& path, bool tolerant) {
  std::ifstream is(path);
  if (!is) throw Error(Errc::IoError, "cannot open " + path);
  std::vector<Observation> out;
  std::string line;
  size_t lineno = 0;
  bool header_seen = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!header_seen) {
      header_seen = true;
      if (line == kObservationHeader) continue;
      // headerless logs are accepted; fall through and parse the first line
    }
    if (line.empty()) continue;
    try {
      out.push_back(parse_observation(line));
    } catch (const Error& e) {
      if (tolerant && is.peek() == EOF) break;  // truncated tail of a killed run
      throw Error(Errc::MalformedLine,
                  path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// ---- AS table ----

void AsTable::add(const AsRecord& rec) {
  if (rec.len < 0 || rec.len > 32) throw Error(Errc::MalformedRow, "prefix length");
  uint32_t mask = rec.len == 0 ? 0 : ~uint32_t(0) << (32 - rec.len);
  uint32_t key = rec.prefix & mask;
  auto& bucket = by_len_[rec.len];
  if (bucket.count(key))
    throw Error(Errc::MalformedRow, "duplicate prefix " + ipv4_to_string(key) + "/" +
                                        std::to_string(rec.len));
  bucket.emplace(key, std::make_pair(rec.asn, rec.country));
  ++count_;
}

std::pair<uint32_t, std::string> AsTable::lookup(uint32_t ip) const {
  for (int len = 32; len >= 0; --len) {
    const auto& bucket = by_len_[len];
    if (bucket.empty()) continue;
    uint32_t mask = len == 0 ? 0 : ~uint32_t(0) << (32 - len);
    auto it = bucket.find(ip & mask);
    if (it != bucket.end()) return it->second;
  }
  return {0, "ZZ"};
}

AsTable load_as_table(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(Errc::IoError, "cannot open " + path);
  AsTable table;
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1 && line == "cidr,asn,country") continue;
    std::vector<std::string> f;
    if (!split_csv(line, f) || f.size() != 3)
      throw Error(Errc::MalformedRow, path + ": row " + std::to_string(lineno));
    AsRecord rec;
    if (!parse_cidr(f[0], &rec.prefix, &rec.len))
      throw Error(Errc::MalformedRow,
                  path + ": row " + std::to_string(lineno) + ": bad cidr " + f[0]);
    int64_t asn;
    if (!parse_i64(f[1], &asn) || asn < 0)
      throw Error(Errc::MalformedRow,
                  path + ": row " + std::to_string(lineno) + ": bad asn " + f[1]);
    rec.asn = uint32_t(asn);
    if (f[2].size() != 2)
      throw Error(Errc::MalformedRow,
                  path + ": row " + std::to_string(lineno) + ": bad country " + f[2]);
    rec.country = f[2];
    try {
      table.add(rec);
    } catch (const Error&) {
      throw Error(Errc::MalformedRow, path + ": row " + std::to_string(lineno) +
                                          ": duplicate prefix " + f[0]);
    }
  }
  return table;
}

EnrichedObservation enrich(const Observation& o, const AsTable& table) {
  auto [asn, country] = table.lookup(o.ip);
  return EnrichedObservation{o, asn, std::move(country)};
}

std::vector<EnrichedObservation> enrich_all(const std::vector<Observation>& obs,
                                            const AsTable& table) {
  std::vector<EnrichedObservation> out;
  out.reserve(obs.size());
  for (const auto& o : obs) out.push_back(enrich(o, table));
  return out;
}

// ---- BotKey ----

bool BotKey::operator<(const BotKey& other) const {
  if (family != other.family) return family < other.family;
  if (id != other.id) return id < other.id;
  if (family == Family::HJ) return false;  // HJ identity ignores asn
  return asn < other.asn;
}

std::string BotKey::str() const {
  std::string s = family_tag(family);
  s += ':';
  s += to_hex(id.data(), id.size());
  if (family == Family::MZ) {
    s += '/';
    s += std::to_string(asn);
  }
  return s;
}

BotKey bot_key(const EnrichedObservation& eo) {
  BotKey k;
  k.family = eo.obs.botnet;
  k.id = *eo.obs.bot_id;
  k.asn = k.family == Family::MZ ? eo.asn : 0;
  return k;
}

}  // namespace botmesh::core
