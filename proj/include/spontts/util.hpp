#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace spontts {

// Errors are split into two families so the CLI can map them to distinct
// exit codes: bad inputs vs. failures at run time.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct RuntimeFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --- deterministic RNG helpers -------------------------------------------
// std::uniform_* distributions are implementation-defined; every draw that
// participates in a reproducibility contract goes through these instead.

inline double rng_uniform(std::mt19937_64& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline std::uint64_t rng_index(std::mt19937_64& g, std::uint64_t n) {
  return n == 0 ? 0 : g() % n;
}

// Box-Muller, one value per call (the pair's second half is discarded to
// keep the stream position independent of call parity).
inline double rng_normal(std::mt19937_64& g) {
  double u1 = rng_uniform(g);
  double u2 = rng_uniform(g);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

// --- content hashing -------------------------------------------------------

inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64(s.data(), s.size(), h);
}

std::string to_hex(std::uint64_t v);

// Hash of a file's bytes; throws RuntimeFailure if unreadable.
std::uint64_t hash_file(const std::filesystem::path& p);

// --- small file helpers ----------------------------------------------------

std::string read_text_file(const std::filesystem::path& p);
void write_text_file(const std::filesystem::path& p, const std::string& body);

// Atomic replace: write to a temp sibling, then rename.
void write_file_atomic(const std::filesystem::path& p, const std::string& body);

// --- WAV (16-bit PCM mono) -------------------------------------------------

struct Waveform {
  std::vector<double> samples;  // in [-1, 1]
  int sample_rate = 0;
};

void write_wav(const std::filesystem::path& p, const Waveform& w);
Waveform read_wav(const std::filesystem::path& p);

}  // namespace spontts
