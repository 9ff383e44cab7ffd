#include "spontts/util.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

namespace spontts {

namespace fs = std::filesystem;

std::string to_hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

std::uint64_t hash_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot open file for hashing: " + p.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
  }
  return h;
}

std::string read_text_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot open file: " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const fs::path& p, const std::string& body) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write file: " + p.string());
  out << body;
}

void write_file_atomic(const fs::path& p, const std::string& body) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  fs::path tmp = p;
  tmp += ".tmp";
  write_text_file(tmp, body);
  fs::rename(tmp, p);
}

namespace {

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
}
std::uint32_t get_u32(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (std::uint32_t(p[3]) << 24);
}
std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace

void write_wav(const fs::path& p, const Waveform& w) {
  const std::uint32_t n = static_cast<std::uint32_t>(w.samples.size());
  std::string out;
  out.reserve(44 + 2 * n);
  out += "RIFF";
  put_u32(out, 36 + 2 * n);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate * 2));
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, 2 * n);
  for (double s : w.samples) {
    double v = std::clamp(s, -1.0, 1.0) * 32767.0;
    auto q = static_cast<std::int16_t>(std::lrint(v));
    put_u16(out, static_cast<std::uint16_t>(q));
  }
  write_file_atomic(p, out);
}

Waveform read_wav(const fs::path& p) {
  std::string raw = read_text_file(p);
  const auto* b = reinterpret_cast<const unsigned char*>(raw.data());
  if (raw.size() < 44 || raw.compare(0, 4, "RIFF") != 0 || raw.compare(8, 4, "WAVE") != 0)
    throw ValidationError("not a RIFF/WAVE file: " + p.string());
  // walk chunks
  std::size_t off = 12;
  int sr = 0, channels = 0, bits = 0;
  Waveform w;
  while (off + 8 <= raw.size()) {
    std::string id = raw.substr(off, 4);
    std::uint32_t sz = get_u32(b + off + 4);
    std::size_t body = off + 8;
    if (body + sz > raw.size()) throw ValidationError("truncated WAV chunk: " + p.string());
    if (id == "fmt ") {
      if (sz < 16) throw ValidationError("bad fmt chunk: " + p.string());
      if (get_u16(b + body) != 1) throw ValidationError("only PCM WAV supported: " + p.string());
      channels = get_u16(b + body + 2);
      sr = static_cast<int>(get_u32(b + body + 4));
      bits = get_u16(b + body + 14);
    } else if (id == "data") {
      if (channels != 1 || bits != 16)
        throw ValidationError("only 16-bit mono WAV supported: " + p.string());
      std::size_t n = sz / 2;
      w.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        auto v = static_cast<std::int16_t>(get_u16(b + body + 2 * i));
        w.samples[i] = v / 32767.0;
      }
    }
    off = body + sz + (sz & 1);
  }
  if (sr == 0 || w.samples.empty())
    throw ValidationError("WAV missing fmt/data: " + p.string());
  w.sample_rate = sr;
  return w;
}

}  // namespace spontts
