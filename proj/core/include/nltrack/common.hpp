#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace nltrack {

// Contract check for caller-supplied arguments. Message should name the
// offending values so failures are diagnosable from logs alone.
inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// FNV-1a, used wherever a stable cross-run hash is needed (OOV token
// bucketing, replay-cache keys, synth textures). Not for security.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t seed = 1469598103934665603ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s,
                           std::uint64_t seed = 1469598103934665603ull) {
  return fnv1a(s.data(), s.size(), seed);
}

// Uniform double in [0,1) from a hash; deterministic across platforms.
inline double hash01(std::uint64_t h) {
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

inline double hash01(std::uint64_t seed, std::uint64_t key) {
  const std::uint64_t buf[2] = {seed, key};
  return hash01(fnv1a(buf, sizeof(buf)));
}

enum class LogLevel { kQuiet = 0, kInfo = 1, kDebug = 2 };

// Level comes from NLTRACK_LOG ("info", "debug"); unset means warnings only.
LogLevel log_level();
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

}  // namespace nltrack
