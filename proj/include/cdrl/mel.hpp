#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "cdrl/synth.hpp"

namespace cdrl {

struct MelParams {
  double window_seconds = 0.025;
  double hop_seconds = 0.010;
  int n_mels = 40;
  double fmin = 0.0;
  double fmax = 8000.0;
  bool log_power = true;
  double power_floor = 1e-10;
};

struct MelSpectrogram {
  int t = 0, f = 0;
  std::vector<double> values;  // row-major T x F
  double hop_seconds = 0.0, window_seconds = 0.0;
  bool log_power = false;

  double at(int ti, int fi) const {
    return values[static_cast<std::size_t>(ti) * f + fi];
  }
  const double* row(int ti) const { return values.data() + static_cast<std::size_t>(ti) * f; }
};

namespace melimpl {

inline void fft_radix2(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const auto u = a[i + j];
        const auto v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular filterbank over FFT bins, HTK-style mel scale.
inline std::vector<std::vector<double>> mel_filters(int n_mels, int n_fft,
                                                    int sample_rate, double fmin,
                                                    double fmax) {
  const int n_bins = n_fft / 2 + 1;
  const double mel_lo = hz_to_mel(fmin), mel_hi = hz_to_mel(fmax);
  std::vector<double> centers(static_cast<std::size_t>(n_mels) + 2);
  for (int m = 0; m < n_mels + 2; ++m)
    centers[static_cast<std::size_t>(m)] =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * m / (n_mels + 1));
  std::vector<std::vector<double>> filters(
      static_cast<std::size_t>(n_mels),
      std::vector<double>(static_cast<std::size_t>(n_bins), 0.0));
  for (int m = 0; m < n_mels; ++m) {
    const double lo = centers[static_cast<std::size_t>(m)];
    const double mid = centers[static_cast<std::size_t>(m) + 1];
    const double hi = centers[static_cast<std::size_t>(m) + 2];
    for (int b = 0; b < n_bins; ++b) {
      const double hz = static_cast<double>(b) * sample_rate / n_fft;
      double w = 0.0;
      if (hz > lo && hz < mid) w = (hz - lo) / (mid - lo);
      else if (hz >= mid && hz < hi) w = (hi - hz) / (hi - mid);
      filters[static_cast<std::size_t>(m)][static_cast<std::size_t>(b)] = w;
    }
  }
  return filters;
}

// Center frequency of mel bin m under the same construction; tests use it to
// place probe tones.
inline double mel_bin_center_hz(int m, int n_mels, double fmin, double fmax) {
  const double mel_lo = hz_to_mel(fmin), mel_hi = hz_to_mel(fmax);
  return mel_to_hz(mel_lo + (mel_hi - mel_lo) * (m + 1) / (n_mels + 1));
}

}  // namespace melimpl

inline MelSpectrogram mel_spectrogram(const synth::Waveform& w,
                                      const MelParams& p = MelParams{}) {
  const int win = static_cast<int>(std::llround(p.window_seconds * w.sample_rate));
  const int hop = static_cast<int>(std::llround(p.hop_seconds * w.sample_rate));
  if (win <= 0 || hop <= 0) throw std::invalid_argument("mel: bad window/hop");
  const int n = static_cast<int>(w.samples.size());
  if (n < win) throw std::invalid_argument("mel: waveform shorter than window");

  int n_fft = 1;
  while (n_fft < win) n_fft <<= 1;
  const int n_bins = n_fft / 2 + 1;
  const auto filters =
      melimpl::mel_filters(p.n_mels, n_fft, w.sample_rate, p.fmin, p.fmax);

  std::vector<double> hann(static_cast<std::size_t>(win));
  for (int i = 0; i < win; ++i)
    hann[static_cast<std::size_t>(i)] =
        0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / win);

  MelSpectrogram out;
  out.t = 1 + (n - win) / hop;
  out.f = p.n_mels;
  out.hop_seconds = p.hop_seconds;
  out.window_seconds = p.window_seconds;
  out.log_power = p.log_power;
  out.values.assign(static_cast<std::size_t>(out.t) * out.f, 0.0);

  std::vector<std::complex<double>> buf(static_cast<std::size_t>(n_fft));
  std::vector<double> power(static_cast<std::size_t>(n_bins));
  for (int ti = 0; ti < out.t; ++ti) {
    const int start = ti * hop;
    for (int i = 0; i < n_fft; ++i)
      buf[static_cast<std::size_t>(i)] =
          i < win ? w.samples[static_cast<std::size_t>(start + i)] *
                        hann[static_cast<std::size_t>(i)]
                  : 0.0;
    melimpl::fft_radix2(buf);
    for (int b = 0; b < n_bins; ++b)
      power[static_cast<std::size_t>(b)] = std::norm(buf[static_cast<std::size_t>(b)]);
    for (int m = 0; m < p.n_mels; ++m) {
      double acc = 0.0;
      const auto& filt = filters[static_cast<std::size_t>(m)];
      for (int b = 0; b < n_bins; ++b) acc += filt[static_cast<std::size_t>(b)] * power[static_cast<std::size_t>(b)];
      out.values[static_cast<std::size_t>(ti) * p.n_mels + m] =
          p.log_power ? std::log(std::max(acc, p.power_floor)) : acc;
    }
  }
  return out;
}

}  // namespace cdrl
