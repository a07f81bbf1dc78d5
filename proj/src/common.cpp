#include "botmesh/common.hpp"

#include <cstdio>
#include <ctime>

namespace botmesh {

const char* errc_name(Errc c) {
  switch (c) {
    case Errc::MalformedLine: return "MALFORMED_LINE";
    case Errc::MalformedRow: return "MALFORMED_ROW";
    case Errc::IoError: return "IO_ERROR";
    case Errc::InvalidPrefixLen: return "INVALID_PREFIX_LEN";
    case Errc::InvalidNretry: return "INVALID_NRETRY";
    case Errc::ConfigInvalid: return "CONFIG_INVALID";
    case Errc::DecodeError: return "DECODE_ERROR";
    case Errc::HandshakeTimeout: return "HANDSHAKE_TIMEOUT";
    case Errc::HandshakeMalformed: return "HANDSHAKE_MALFORMED";
    case Errc::TransportDown: return "TRANSPORT_DOWN";
    case Errc::EmptyInput: return "EMPTY_INPUT";
  }
  return "UNKNOWN";
}

const char* family_tag(Family f) { return f == Family::HJ ? "HJ" : "MZ"; }

bool parse_family(const std::string& s, Family* out) {
  if (s == "HJ") {
    *out = Family::HJ;
    return true;
  }
  if (s == "MZ") {
    *out = Family::MZ;
    return true;
  }
  return false;
}

std::string format_yyyymmdd(int64_t ts_ms) {
  time_t secs = time_t(ts_ms / 1000);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d%02d%02d", tm.tm_year + 1900, tm.tm_mon + 1,
                tm.tm_mday);
  return buf;
}

std::string ipv4_to_string(uint32_t ip) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%u.%u.%u.%u", (ip >> 24) & 0xFF, (ip >> 16) & 0xFF,
                (ip >> 8) & 0xFF, ip & 0xFF);
  return buf;
}

bool parse_ipv4(const std::string& s, uint32_t* out) {
  uint32_t ip = 0;
  int octet = 0, noct = 0, ndigits = 0;
  for (size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == '.') {
      if (ndigits == 0 || noct == 4) return false;
      ip = (ip << 8) | uint32_t(octet);
      ++noct;
      octet = 0;
      ndigits = 0;
    } else if (s[i] >= '0' && s[i] <= '9') {
      octet = octet * 10 + (s[i] - '0');
      if (octet > 255 || ++ndigits > 3) return false;
    } else {
      return false;
    }
  }
  if (noct != 4) return false;
  *out = ip;
  return true;
}

bool parse_cidr(const std::string& s, uint32_t* prefix, int* len) {
  auto slash = s.find('/');
  if (slash == std::string::npos) return false;
  uint32_t base;
  if (!parse_ipv4(s.substr(0, slash), &base)) return false;
  const std::string lenstr = s.substr(slash + 1);
  if (lenstr.empty() || lenstr.size() > 2) return false;
  int l = 0;
  for (char c : lenstr) {
    if (c < '0' || c > '9') return false;
    l = l * 10 + (c - '0');
  }
  if (l > 32) return false;
  uint32_t mask = l == 0 ? 0 : ~uint32_t(0) << (32 - l);
  if ((base & ~mask) != 0) return false;  // host bits set
  *prefix = base;
  *len = l;
  return true;
}

static const char* kHexDigits = "0123456789abcdef";

std::string to_hex(const uint8_t* data, size_t n) {
  std::string out(n * 2, '0');
  for (size_t i = 0; i < n; ++i) {
    out[2 * i] = kHexDigits[data[i] >> 4];
    out[2 * i + 1] = kHexDigits[data[i] & 0xF];
  }
  return out;
}

static int hex_val(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

bool from_hex(const std::string& hex, uint8_t* out, size_t n) {
  if (hex.size() != 2 * n) return false;
  for (size_t i = 0; i < n; ++i) {
    int hi = hex_val(hex[2 * i]), lo = hex_val(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) return false;
    out[i] = uint8_t(hi << 4 | lo);
  }
  return true;
}

}  // namespace botmesh
