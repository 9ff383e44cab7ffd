#include "spontts/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "spontts/fft.hpp"

namespace spontts::features {

namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.14159265358979323846;

std::vector<double> hann_window(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / n);  // periodic Hann
  return w;
}

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// Triangular mel filterbank, HTK mel scale, peak 1, 0..sr/2.
Eigen::MatrixXd mel_filterbank() {
  const int bins = kWin / 2 + 1;
  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(kMelBins, bins);
  const double mel_max = hz_to_mel(kSampleRate / 2.0);
  std::vector<double> pts(kMelBins + 2);
  for (int i = 0; i < kMelBins + 2; ++i)
    pts[i] = mel_to_hz(mel_max * i / (kMelBins + 1));
  for (int m = 0; m < kMelBins; ++m) {
    double lo = pts[m], mid = pts[m + 1], hi = pts[m + 2];
    for (int b = 0; b < bins; ++b) {
      double f = static_cast<double>(b) * kSampleRate / kWin;
      if (f > lo && f < mid)
        fb(m, b) = (f - lo) / (mid - lo);
      else if (f >= mid && f < hi)
        fb(m, b) = (hi - f) / (hi - mid);
    }
  }
  return fb;
}

const Eigen::MatrixXd& filterbank() {
  static const Eigen::MatrixXd fb = mel_filterbank();
  return fb;
}

// Sample with reflection at both edges (librosa-style centered framing).
double sample_reflect(const std::vector<double>& x, long i) {
  const long n = static_cast<long>(x.size());
  if (n == 1) return x[0];
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return x[static_cast<std::size_t>(i)];
}

}  // namespace

long mel_frame_count(std::size_t len) {
  return 1 + static_cast<long>(len) / kHop;
}

Waveform resample(const Waveform& w, int target_rate) {
  if (w.sample_rate == target_rate) return w;
  const std::size_t n = w.samples.size();
  const std::size_t m = static_cast<std::size_t>(std::llround(
      static_cast<double>(n) * target_rate / w.sample_rate));
  if (n == 0 || m == 0) throw ValidationError("resample: empty signal");
  std::vector<fft::cplx> spec(w.samples.begin(), w.samples.end());
  fft::fft(spec);
  std::vector<fft::cplx> out(m, fft::cplx(0, 0));
  const std::size_t keep = std::min(n, m);
  const std::size_t half = keep / 2;
  for (std::size_t k = 0; k <= half && k < m; ++k) out[k] = spec[k % n];
  for (std::size_t k = 1; k < keep - half; ++k) out[m - k] = spec[n - k];
  if (keep % 2 == 0 && half < m && half < n) {
    // the shared Nyquist bin must stay real to keep the output real
    out[half] = fft::cplx(spec[half].real(), 0.0);
    if (m > n) {
      out[half] *= 0.5;
      out[m - half] = out[half];
    }
  }
  fft::ifft(out);
  Waveform r;
  r.sample_rate = target_rate;
  r.samples.resize(m);
  const double scale = static_cast<double>(m) / static_cast<double>(n);
  for (std::size_t i = 0; i < m; ++i) r.samples[i] = out[i].real() * scale;
  return r;
}

MelSpectrogram extract_mel(const Waveform& input) {
  if (input.samples.empty()) throw ValidationError("extract_mel: empty waveform");
  if (input.sample_rate <= 0) throw ValidationError("extract_mel: bad sample rate");
  for (double s : input.samples)
    if (!std::isfinite(s)) throw ValidationError("extract_mel: non-finite sample");
  const Waveform w =
      input.sample_rate == kSampleRate ? input : resample(input, kSampleRate);

  static const std::vector<double> win = hann_window(kWin);
  const long T = mel_frame_count(w.samples.size());
  MelSpectrogram mel;
  mel.frames.resize(T, kMelBins);
  std::vector<double> frame(kWin);
  const Eigen::MatrixXd& fb = filterbank();
  for (long t = 0; t < T; ++t) {
    const long center = t * kHop;
    for (int i = 0; i < kWin; ++i)
      frame[i] = sample_reflect(w.samples, center - kWin / 2 + i) * win[i];
    auto spec = fft::rfft(frame);
    Eigen::VectorXd mag(kWin / 2 + 1);
    for (int b = 0; b <= kWin / 2; ++b) mag(b) = std::abs(spec[b]);
    Eigen::VectorXd m = fb * mag;
    for (int b = 0; b < kMelBins; ++b)
      mel.frames(t, b) = std::log(std::max(m(b), kLogFloor));
  }
  return mel;
}

CharSpans char_spans_from_durations(const DurationSeq& durations,
                                    const std::vector<int>& grouping) {
  const long total_phones =
      std::accumulate(grouping.begin(), grouping.end(), 0L);
  if (total_phones != static_cast<long>(durations.size()))
    throw ValidationError("grouping sum does not match duration count");
  CharSpans spans;
  long frame = 0;
  std::size_t p = 0;
  for (int g : grouping) {
    long start = frame;
    for (int j = 0; j < g; ++j) {
      if (durations[p] < 0) throw ValidationError("negative duration");
      frame += durations[p++];
    }
    spans.emplace_back(start, frame);
  }
  return spans;
}

CharSpans rescale_spans(const CharSpans& spans, int stride_total, long out_len) {
  CharSpans out;
  for (auto [s, e] : spans) {
    long ns = std::clamp(s / stride_total, 0L, out_len);
    long ne = std::clamp((e + stride_total - 1) / stride_total, 0L, out_len);
    if (ne < ns) ne = ns;
    out.emplace_back(ns, ne);
  }
  return out;
}

ProsodyTracks extract_prosody(const Waveform& w, const DurationSeq& durations) {
  const long T = mel_frame_count(w.samples.size());
  const long total = std::accumulate(durations.begin(), durations.end(), 0L);
  if (total != T)
    throw ValidationError("durations sum " + std::to_string(total) +
                          " does not match frame count " + std::to_string(T));

  static const std::vector<double> win = hann_window(kWin);
  const int lag_min = kSampleRate / 600;
  const int lag_max = kSampleRate / 50;
  std::vector<double> frame_pitch(T), frame_energy(T);
  std::vector<double> frame(kWin);
  for (long t = 0; t < T; ++t) {
    const long start = t * kHop;
    for (int i = 0; i < kWin; ++i) {
      std::size_t idx = static_cast<std::size_t>(start + i);
      double s = idx < w.samples.size() ? w.samples[idx] : 0.0;
      frame[i] = s * win[i];
    }
    double r0 = 0.0;
    for (double v : frame) r0 += v * v;
    frame_energy[t] = std::sqrt(r0 / kWin);
    // normalized autocorrelation peak in the 50-600 Hz lag band
    double best = 0.0;
    int best_lag = 0;
    if (r0 > 1e-12) {
      for (int lag = lag_min; lag <= lag_max; ++lag) {
        double r = 0.0;
        for (int i = 0; i + lag < kWin; ++i) r += frame[i] * frame[i + lag];
        if (r / r0 > best) {
          best = r / r0;
          best_lag = lag;
        }
      }
    }
    if (best > 0.3 && best_lag > lag_min && best_lag < lag_max) {
      auto ac = [&](int lag) {
        double r = 0.0;
        for (int i = 0; i + lag < kWin; ++i) r += frame[i] * frame[i + lag];
        return r;
      };
      double rm = ac(best_lag - 1), rc = ac(best_lag), rp = ac(best_lag + 1);
      double denom = rm - 2.0 * rc + rp;
      double shift = std::abs(denom) > 1e-12 ? 0.5 * (rm - rp) / denom : 0.0;
      frame_pitch[t] = kSampleRate / (best_lag + shift);
    } else {
      frame_pitch[t] = 0.0;
    }
  }

  ProsodyTracks out;
  long f = 0;
  for (int d : durations) {
    double psum = 0.0, esum = 0.0;
    int voiced = 0;
    for (int j = 0; j < d; ++j) {
      if (frame_pitch[f + j] > 0.0) {
        psum += frame_pitch[f + j];
        ++voiced;
      }
      esum += frame_energy[f + j];
    }
    out.pitch.push_back(voiced > 0 ? psum / voiced : 0.0);
    out.energy.push_back(d > 0 ? esum / d : 0.0);
    f += d;
  }
  return out;
}

// --- cache files -----------------------------------------------------------

namespace {
constexpr std::uint32_t kMelMagic = 0x4c454d53;  // "SMEL"
constexpr std::uint32_t kMelVersion = 1;

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
std::uint32_t get_u32(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (std::uint32_t(p[3]) << 24);
}
void put_f32(std::string& s, float f) {
  std::uint32_t v;
  static_assert(sizeof v == sizeof f);
  std::memcpy(&v, &f, 4);
  put_u32(s, v);
}
float get_f32(const unsigned char* p) {
  std::uint32_t v = get_u32(p);
  float f;
  std::memcpy(&f, &v, 4);
  return f;
}
}  // namespace

void write_mel_cache(const fs::path& p, const MelSpectrogram& mel) {
  std::string out;
  put_u32(out, kMelMagic);
  put_u32(out, kMelVersion);
  put_u32(out, static_cast<std::uint32_t>(mel.frames.rows()));
  put_u32(out, static_cast<std::uint32_t>(mel.frames.cols()));
  put_u32(out, static_cast<std::uint32_t>(mel.hop));
  put_u32(out, static_cast<std::uint32_t>(mel.win));
  put_u32(out, static_cast<std::uint32_t>(mel.sample_rate));
  for (long t = 0; t < mel.frames.rows(); ++t)
    for (long b = 0; b < mel.frames.cols(); ++b)
      put_f32(out, static_cast<float>(mel.frames(t, b)));
  write_file_atomic(p, out);
}

MelSpectrogram read_mel_cache(const fs::path& p) {
  std::string raw = read_text_file(p);
  if (raw.size() < 28) throw ValidationError("mel cache truncated: " + p.string());
  const auto* b = reinterpret_cast<const unsigned char*>(raw.data());
  if (get_u32(b) != kMelMagic || get_u32(b + 4) != kMelVersion)
    throw ValidationError("mel cache bad magic/version: " + p.string());
  long T = get_u32(b + 8), B = get_u32(b + 12);
  MelSpectrogram mel;
  mel.hop = static_cast<int>(get_u32(b + 16));
  mel.win = static_cast<int>(get_u32(b + 20));
  mel.sample_rate = static_cast<int>(get_u32(b + 24));
  if (raw.size() != 28 + 4 * static_cast<std::size_t>(T) * B)
    throw ValidationError("mel cache size mismatch: " + p.string());
  mel.frames.resize(T, B);
  const unsigned char* q = b + 28;
  for (long t = 0; t < T; ++t)
    for (long c = 0; c < B; ++c, q += 4) mel.frames(t, c) = get_f32(q);
  return mel;
}

void write_durations(const fs::path& p, const DurationSeq& d) {
  std::ostringstream ss;
  for (std::size_t i = 0; i < d.size(); ++i) ss << d[i] << "\n";
  write_file_atomic(p, ss.str());
}

DurationSeq read_durations(const fs::path& p) {
  std::istringstream ss(read_text_file(p));
  DurationSeq d;
  std::string line;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    d.push_back(std::stoi(line));
  }
  return d;
}

void write_prosody(const fs::path& p, const ProsodyTracks& t) {
  std::ostringstream ss;
  ss.precision(17);
  for (std::size_t i = 0; i < t.pitch.size(); ++i)
    ss << t.pitch[i] << " " << t.energy[i] << "\n";
  write_file_atomic(p, ss.str());
}

ProsodyTracks read_prosody(const fs::path& p) {
  std::istringstream ss(read_text_file(p));
  ProsodyTracks t;
  double pitch, energy;
  while (ss >> pitch >> energy) {
    t.pitch.push_back(pitch);
    t.energy.push_back(energy);
  }
  return t;
}

Waveform griffin_lim(const MelSpectrogram& mel, int iterations) {
  const int bins = kWin / 2 + 1;
  const long T = mel.frames.rows();
  static const std::vector<double> win = hann_window(kWin);
  // approximate mel inversion via damped pseudo-inverse
  static const Eigen::MatrixXd pinv = [] {
    const Eigen::MatrixXd& fb = filterbank();
    Eigen::MatrixXd gram = fb * fb.transpose();
    gram.diagonal().array() += 1e-8;
    return Eigen::MatrixXd(fb.transpose() * gram.inverse());
  }();
  Eigen::MatrixXd mag(T, bins);
  for (long t = 0; t < T; ++t) {
    Eigen::VectorXd m = mel.frames.row(t).transpose().array().exp();
    mag.row(t) = (pinv * m).cwiseMax(0.0).transpose();
  }

  const std::size_t len = static_cast<std::size_t>((T - 1) * kHop + 1);
  std::vector<std::vector<double>> phase(T, std::vector<double>(bins, 0.0));
  std::vector<double> signal(len, 0.0);
  for (int it = 0; it < iterations; ++it) {
    // inverse STFT by overlap-add
    std::fill(signal.begin(), signal.end(), 0.0);
    std::vector<double> wsum(len, 0.0);
    for (long t = 0; t < T; ++t) {
      std::vector<fft::cplx> spec(kWin);
      for (int b = 0; b < bins; ++b)
        spec[b] = std::polar(mag(t, b), phase[t][b]);
      for (int b = 1; b < kWin / 2; ++b) spec[kWin - b] = std::conj(spec[b]);
      fft::ifft(spec);
      const long center = t * kHop;
      for (int i = 0; i < kWin; ++i) {
        long idx = center - kWin / 2 + i;
        if (idx < 0 || idx >= static_cast<long>(len)) continue;
        signal[idx] += spec[i].real() * win[i];
        wsum[idx] += win[i] * win[i];
      }
    }
    for (std::size_t i = 0; i < len; ++i)
      if (wsum[i] > 1e-9) signal[i] /= wsum[i];
    if (it == iterations - 1) break;
    // re-estimate phase
    std::vector<double> frame(kWin);
    for (long t = 0; t < T; ++t) {
      const long center = t * kHop;
      for (int i = 0; i < kWin; ++i)
        frame[i] = sample_reflect(signal, center - kWin / 2 + i) * win[i];
      auto spec = fft::rfft(frame);
      for (int b = 0; b < bins; ++b) phase[t][b] = std::arg(spec[b]);
    }
  }
  Waveform out;
  out.sample_rate = mel.sample_rate;
  double peak = 1e-9;
  for (double s : signal) peak = std::max(peak, std::abs(s));
  out.samples.resize(len);
  for (std::size_t i = 0; i < len; ++i) out.samples[i] = signal[i] / peak * 0.95;
  return out;
}

}  // namespace spontts::features
