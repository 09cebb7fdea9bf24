#include "alm/audio/mel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "alm/core/errors.hpp"

namespace alm::audio {
namespace {

constexpr double kLinearHzPerMel = 200.0 / 3.0;
constexpr double kLogRegionHz = 1000.0;
constexpr double kLogRegionMel = kLogRegionHz / kLinearHzPerMel;  // 15
const double kLogStep = std::log(6.4) / 27.0;

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Windowed DFT basis for the real half-spectrum, plus the mel projection.
struct StftPlan {
  MatF cos_basis;  // [n_fft x bins]
  MatF sin_basis;  // [n_fft x bins]
  MatF mel_t;      // [bins x n_mels]

  StftPlan() {
    const int bins = kFftSize / 2 + 1;
    cos_basis.resize(kFftSize, bins);
    sin_basis.resize(kFftSize, bins);
    for (int n = 0; n < kFftSize; ++n) {
      const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / kWindowSamples);
      for (int k = 0; k < bins; ++k) {
        const double phase = 2.0 * std::numbers::pi * static_cast<double>((static_cast<long>(k) * n) % kFftSize) / kFftSize;
        cos_basis(n, k) = static_cast<float>(w * std::cos(phase));
        sin_basis(n, k) = static_cast<float>(-w * std::sin(phase));
      }
    }
    const MelFilterbank fb = build_filterbank();
    mel_t.resize(bins, kMelChannels);
    for (int m = 0; m < kMelChannels; ++m)
      for (int k = 0; k < bins; ++k) mel_t(k, m) = static_cast<float>(fb.weights.at(static_cast<std::size_t>(m), static_cast<std::size_t>(k)));
  }
};

const StftPlan& plan() {
  static const StftPlan instance;
  return instance;
}

// numpy-style "reflect" index (edge sample not repeated).
std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  if (m >= static_cast<std::ptrdiff_t>(n)) m = period - m;
  return static_cast<std::size_t>(m);
}

}  // namespace

double hz_to_mel_slaney(double hz) {
  if (hz < kLogRegionHz) return hz / kLinearHzPerMel;
  return kLogRegionMel + std::log(hz / kLogRegionHz) / kLogStep;
}

double mel_to_hz_slaney(double mel) {
  if (mel < kLogRegionMel) return mel * kLinearHzPerMel;
  return kLogRegionHz * std::exp((mel - kLogRegionMel) * kLogStep);
}

MelFilterbank build_filterbank(int n_mels, int n_fft, int sample_rate) {
  if (n_mels < 1) throw InvalidConfig("n_mels must be >= 1, got " + std::to_string(n_mels));
  if (n_fft <= 0 || n_fft % 2 != 0) throw InvalidConfig("n_fft must be positive and even, got " + std::to_string(n_fft));
  if (sample_rate <= 0) throw InvalidConfig("sample_rate must be positive, got " + std::to_string(sample_rate));
  if (n_mels > n_fft / 2) {
    throw InvalidConfig("n_mels " + std::to_string(n_mels) + " exceeds n_fft/2 = " + std::to_string(n_fft / 2));
  }
  const auto bins = static_cast<std::size_t>(n_fft / 2 + 1);
  const auto mels = static_cast<std::size_t>(n_mels);

  MelFilterbank fb;
  fb.n_mels = n_mels;
  fb.n_fft = n_fft;
  fb.sample_rate = sample_rate;
  const double mel_lo = hz_to_mel_slaney(0.0);
  const double mel_hi = hz_to_mel_slaney(sample_rate / 2.0);
  fb.edges_hz.resize(mels + 2);
  for (std::size_t i = 0; i < mels + 2; ++i) {
    fb.edges_hz[i] = mel_to_hz_slaney(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / static_cast<double>(mels + 1));
  }
  fb.weights = core::ArrayD(core::Shape{mels, bins});
  for (std::size_t m = 0; m < mels; ++m) {
    const double left = fb.edges_hz[m], center = fb.edges_hz[m + 1], right = fb.edges_hz[m + 2];
    const double norm = 2.0 / (right - left);
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / n_fft;
      const double rising = (f - left) / (center - left);
      const double falling = (right - f) / (right - center);
      fb.weights.at(m, k) = std::max(0.0, std::min(rising, falling)) * norm;
    }
  }
  return fb;
}

MelSpectrogram log_mel(const AudioClip& clip) {
  validate(clip);
  if (clip.sample_rate != kModelSampleRate) {
    throw InvalidAudio("log_mel expects " + std::to_string(kModelSampleRate) + " Hz audio, got " +
                       std::to_string(clip.sample_rate) + " Hz");
  }
  const StftPlan& p = plan();
  const std::size_t n = clip.samples.size();
  const std::size_t frames = mel_frame_count(n);
  const auto pad = static_cast<std::ptrdiff_t>(kFftSize / 2);

  MatF windows(static_cast<Eigen::Index>(frames), kFftSize);
  for (std::size_t t = 0; t < frames; ++t) {
    for (int i = 0; i < kFftSize; ++i) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * kHopSamples) + i - pad;
      windows(static_cast<Eigen::Index>(t), i) = clip.samples[reflect_index(src, n)];
    }
  }
  const MatF re = windows * p.cos_basis;
  const MatF im = windows * p.sin_basis;
  const MatF power = re.array().square() + im.array().square();
  const MatF mel = power * p.mel_t;  // [frames x n_mels]

  MelSpectrogram out;
  out.values = core::ArrayF(core::Shape{static_cast<std::size_t>(kMelChannels), frames});
  float max_log = -std::numeric_limits<float>::infinity();
  for (std::size_t t = 0; t < frames; ++t) {
    for (int m = 0; m < kMelChannels; ++m) {
      const double e = std::max(static_cast<double>(mel(static_cast<Eigen::Index>(t), m)), kLogFloor);
      const auto v = static_cast<float>(std::log10(e));
      out.values.at(static_cast<std::size_t>(m), t) = v;
      max_log = std::max(max_log, v);
    }
  }
  const float floor_value = max_log - static_cast<float>(kDynamicRange);
  for (float& v : out.values.data) v = (std::max(v, floor_value) + 4.0f) / 4.0f;
  return out;
}

}  // namespace alm::audio
