#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace botmesh {

enum class Errc {
  MalformedLine,
  MalformedRow,
  IoError,
  InvalidPrefixLen,
  InvalidNretry,
  ConfigInvalid,
  DecodeError,
  HandshakeTimeout,
  HandshakeMalformed,
  TransportDown,
  EmptyInput,
};

const char* errc_name(Errc c);

// Carries a machine-readable code; the CLI maps codes to exit status.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

enum class Family : uint8_t { HJ, MZ };

const char* family_tag(Family f);                 // "HJ" / "MZ"
bool parse_family(const std::string& s, Family* out);

// ---- time ----
// All timestamps are unix milliseconds UTC. One day = 86'400'000 ms.
constexpr int64_t kMsPerSec = 1000;
constexpr int64_t kMsPerHour = 3'600'000;
constexpr int64_t kMsPerDay = 86'400'000;

inline int64_t utc_day_start(int64_t ts_ms) {
  // ts_ms is always >= 0 in this codebase (epochs are modern).
  return ts_ms - (ts_ms % kMsPerDay);
}
inline int utc_hour(int64_t ts_ms) { return int((ts_ms / kMsPerHour) % 24); }

std::string format_yyyymmdd(int64_t ts_ms);       // "20220701"

// ---- IPv4 ----
// Host-order uint32 internally, dotted quad in all file formats.
std::string ipv4_to_string(uint32_t ip);
bool parse_ipv4(const std::string& s, uint32_t* out);
bool parse_cidr(const std::string& s, uint32_t* prefix, int* len);

// ---- hex ----
std::string to_hex(const uint8_t* data, size_t n);
bool from_hex(const std::string& hex, uint8_t* out, size_t n);  // exactly 2n chars

}  // namespace botmesh
