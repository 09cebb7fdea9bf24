#pragma once

#include <vector>

#include "alm/audio/audio.hpp"
#include "alm/core/array.hpp"

namespace alm::audio {

inline constexpr int kMelChannels = 128;
inline constexpr int kWindowSamples = 400;  // 25 ms at 16 kHz
inline constexpr int kHopSamples = 160;     // 10 ms at 16 kHz
inline constexpr int kFftSize = 400;
inline constexpr double kLogFloor = 1e-10;
inline constexpr double kDynamicRange = 8.0;

/// Slaney-scale triangular filters, area-normalized (peak height 2 / width_hz).
struct MelFilterbank {
  int n_mels = 0;
  int n_fft = 0;
  int sample_rate = 0;
  core::ArrayD weights;             // [n_mels x (1 + n_fft/2)]
  std::vector<double> edges_hz;     // n_mels + 2 filter edges; centers are edges_hz[m + 1]

  double center_hz(int mel) const { return edges_hz[static_cast<std::size_t>(mel) + 1]; }
};

double hz_to_mel_slaney(double hz);
double mel_to_hz_slaney(double mel);

MelFilterbank build_filterbank(int n_mels = kMelChannels, int n_fft = kFftSize, int sample_rate = kModelSampleRate);

/// Normalized log-mel features, 128 rows x T frames.
struct MelSpectrogram {
  core::ArrayF values;  // [n_mels x n_frames], row-major
  static constexpr double frame_hop_s = 0.010;
  static constexpr double frame_window_s = 0.025;

  std::size_t n_mels() const { return values.shape.empty() ? 0 : values.shape[0]; }
  std::size_t n_frames() const { return values.shape.size() < 2 ? 0 : values.shape[1]; }
};

/// Frames produced for `num_samples` under center padding: 1 + floor(n / hop).
inline std::size_t mel_frame_count(std::size_t num_samples) { return 1 + num_samples / kHopSamples; }

/// Periodic Hann window, reflect-padded centered STFT, power spectrum, mel
/// projection, log10 with floor, clamp to (max - 8), then (x + 4) / 4.
/// Requires a 16 kHz clip.
MelSpectrogram log_mel(const AudioClip& clip);

}  // namespace alm::audio
