#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "spontts/util.hpp"

namespace spontts::features {

constexpr int kSampleRate = 22050;
constexpr int kMelBins = 80;
constexpr int kHop = 256;
constexpr int kWin = 1024;
constexpr double kLogFloor = 1e-5;  // magnitude floor before log

struct MelSpectrogram {
  Eigen::MatrixXd frames;  // T x 80, log-mel magnitude
  int sample_rate = kSampleRate;
  int hop = kHop;
  int win = kWin;
};

using DurationSeq = std::vector<int>;                   // frames per phoneme
using CharSpans = std::vector<std::pair<long, long>>;   // [start, end) frames

struct ProsodyTracks {
  std::vector<double> pitch;   // Hz per phoneme, 0 = unvoiced
  std::vector<double> energy;  // RMS per phoneme
};

// Centered framing with reflection padding; frame count is
// 1 + floor(len / hop). Input at other sample rates is resampled first.
MelSpectrogram extract_mel(const Waveform& w);

// Number of frames extract_mel produces for a signal of `len` samples at
// 22.05 kHz.
long mel_frame_count(std::size_t len);

// Fourier-domain resampling (band-limited, zero-phase).
Waveform resample(const Waveform& w, int target_rate);

// Prefix-sum character spans over the frame axis.
CharSpans char_spans_from_durations(const DurationSeq& durations,
                                    const std::vector<int>& grouping);

// Rescales frame-level spans to a downsampled time axis: floor for starts,
// ceil for ends, clipped to [0, out_len). Spans may overlap after rescaling.
CharSpans rescale_spans(const CharSpans& spans, int stride_total, long out_len);

// Frame-level pitch (normalized autocorrelation, 50-600 Hz) and RMS energy
// of the Hann-windowed frame, averaged per phoneme. Pitch averages voiced
// frames only. Prosody frames are left-aligned ([m*hop, m*hop+win), zero
// padded) so trailing silence never changes earlier phonemes.
ProsodyTracks extract_prosody(const Waveform& w, const DurationSeq& durations);

// --- cache files -----------------------------------------------------------

void write_mel_cache(const std::filesystem::path& p, const MelSpectrogram& mel);
MelSpectrogram read_mel_cache(const std::filesystem::path& p);

void write_durations(const std::filesystem::path& p, const DurationSeq& d);
DurationSeq read_durations(const std::filesystem::path& p);

void write_prosody(const std::filesystem::path& p, const ProsodyTracks& t);
ProsodyTracks read_prosody(const std::filesystem::path& p);

// Classical iterative phase reconstruction; audible smoke tests only.
Waveform griffin_lim(const MelSpectrogram& mel, int iterations = 32);

}  // namespace spontts::features
