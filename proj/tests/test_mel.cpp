#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "cdrl/mel.hpp"

using namespace cdrl;
using synth::Waveform;

namespace {

Waveform sinusoid(double hz, double seconds, int sr = 16000) {
  Waveform w;
  w.sample_rate = sr;
  const int n = static_cast<int>(seconds * sr);
  for (int i = 0; i < n; ++i)
    w.samples.push_back(0.5 * std::sin(2.0 * std::numbers::pi * hz * i / sr));
  return w;
}

}  // namespace

TEST_CASE("frame count formula T = 1 + floor((len - window)/hop)", "[mel]") {
  MelParams p;
  Waveform w;
  w.sample_rate = 16000;
  w.samples.assign(400, 0.0);  // exactly one window
  REQUIRE(mel_spectrogram(w, p).t == 1);

  w.samples.assign(400 + 160 * 7 + 3, 0.0);
  REQUIRE(mel_spectrogram(w, p).t == 8);

  w.samples.assign(399, 0.0);
  REQUIRE_THROWS_AS(mel_spectrogram(w, p), std::invalid_argument);
}

TEST_CASE("silence gives an all-zero power spectrogram before the log floor",
          "[mel]") {
  MelParams p;
  p.log_power = false;
  Waveform w;
  w.sample_rate = 16000;
  w.samples.assign(4000, 0.0);
  const MelSpectrogram m = mel_spectrogram(w, p);
  for (double v : m.values) REQUIRE(v == 0.0);

  p.log_power = true;
  const MelSpectrogram lg = mel_spectrogram(w, p);
  for (double v : lg.values)
    REQUIRE_THAT(v, Catch::Matchers::WithinAbs(std::log(1e-10), 1e-12));
}

TEST_CASE("pure sinusoid at a mel bin centre concentrates in that bin", "[mel]") {
  MelParams p;
  // expected bin computed analytically from the filterbank response to a tone:
  // the triangle whose centre sits at the tone frequency carries the peak
  for (int target : {5, 17, 30}) {
    const double hz = melimpl::mel_bin_center_hz(target, p.n_mels, p.fmin, p.fmax);
    const Waveform w = sinusoid(hz, 0.3);
    MelParams pw = p;
    pw.log_power = false;
    const MelSpectrogram m = mel_spectrogram(w, pw);
    // interior frame, away from onset
    const int ti = m.t / 2;
    int argmax = 0;
    for (int f = 1; f < m.f; ++f)
      if (m.at(ti, f) > m.at(ti, argmax)) argmax = f;
    REQUIRE(argmax == target);
  }
}

TEST_CASE("shifting input by one hop shifts columns by one", "[mel]") {
  MelParams p;
  Waveform w = sinusoid(440.0, 0.3);
  // modulate so neighbouring frames differ
  for (std::size_t i = 0; i < w.samples.size(); ++i)
    w.samples[i] *= 1.0 + 0.5 * std::sin(2.0 * std::numbers::pi * 7.0 * i / 16000.0);
  Waveform shifted;
  shifted.sample_rate = w.sample_rate;
  shifted.samples.assign(w.samples.begin() + 160, w.samples.end());

  const MelSpectrogram a = mel_spectrogram(w, p);
  const MelSpectrogram b = mel_spectrogram(shifted, p);
  REQUIRE(b.t == a.t - 1);
  for (int t = 0; t < b.t; ++t)
    for (int f = 0; f < b.f; ++f)
      REQUIRE_THAT(b.at(t, f), Catch::Matchers::WithinAbs(a.at(t + 1, f), 1e-6));
}

TEST_CASE("mel output is deterministic", "[mel]") {
  const Waveform w = sinusoid(523.0, 0.25);
  const MelSpectrogram a = mel_spectrogram(w);
  const MelSpectrogram b = mel_spectrogram(w);
  REQUIRE(a.values == b.values);
}
