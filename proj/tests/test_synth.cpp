#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "cdrl/synth.hpp"

using namespace cdrl;
using namespace cdrl::synth;

namespace {

// Dark-pixel count down the mouth centre column; tracks the opening height.
double mouth_opening_ink(const ImageFrame& img) {
  double ink = 0.0;
  const int x = static_cast<int>(kFaceCx);
  for (int y = kMouthCrop.y0; y < kMouthCrop.y0 + kMouthCrop.h; ++y) {
    const double lum = (img.at(y, x, 0) + img.at(y, x, 1) + img.at(y, x, 2)) / 3.0;
    ink += 1.0 - lum;
  }
  return ink;
}

}  // namespace

TEST_CASE("render_frame is deterministic", "[synth]") {
  const ImageFrame a = render_frame(0, Emotion::neutral, 0, 0);
  const ImageFrame b = render_frame(0, Emotion::neutral, 0, 0);
  REQUIRE(a.pixels == b.pixels);
}

TEST_CASE("render_frame pixel range and shape", "[synth]") {
  const ImageFrame img = render_frame(5, Emotion::surprised, 2, 3);
  REQUIRE(img.h == 64);
  REQUIRE(img.w == 64);
  REQUIRE(img.c == 3);
  for (float v : img.pixels) {
    REQUIRE(v >= 0.0f);
    REQUIRE(v <= 1.0f);
  }
}

TEST_CASE("mouth geometry depends on phoneme only", "[synth]") {
  // same phoneme, different emotions: identical mouth-opening parameter
  REQUIRE(phoneme_params(0).mouth_open == phoneme_params(0).mouth_open);
  const ImageFrame happy = render_frame(0, Emotion::happy, 0, 0);
  const ImageFrame sad = render_frame(0, Emotion::sad, 0, 0);
  // brow parameter differs across the two emotions
  REQUIRE(emotion_params(Emotion::happy).brow_raise !=
          emotion_params(Emotion::sad).brow_raise);
  // the rendered mouth-opening ink is close despite emotion changes
  // (differences come only from tint/corner overlap, not the opening)
  const double ratio = mouth_opening_ink(happy) / mouth_opening_ink(sad);
  REQUIRE(ratio > 0.7);
  REQUIRE(ratio < 1.4);
}

TEST_CASE("mouth-opening ink follows the per-phoneme table ordering", "[synth]") {
  // phonemes 3 vs 5: table says 5 opens wider; rendered ink agrees
  const double open3 = phoneme_params(3).mouth_open;
  const double open5 = phoneme_params(5).mouth_open;
  REQUIRE(open5 > open3);
  const ImageFrame f3 = render_frame(3, Emotion::neutral, 0, 0);
  const ImageFrame f5 = render_frame(5, Emotion::neutral, 0, 0);
  REQUIRE(mouth_opening_ink(f5) > mouth_opening_ink(f3));

  // monotone across the whole table
  double prev = -1.0;
  for (int p = 0; p < kPhonemeCount; ++p) {
    const double ink = mouth_opening_ink(render_frame(p, Emotion::neutral, 1, 0));
    REQUIRE(ink > prev);
    prev = ink;
  }
}

TEST_CASE("render_frame rejects out-of-range factors", "[synth]") {
  REQUIRE_THROWS_AS(render_frame(-1, Emotion::neutral, 0, 0), std::invalid_argument);
  REQUIRE_THROWS_AS(render_frame(kPhonemeCount, Emotion::neutral, 0, 0),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(render_frame(0, Emotion::neutral, kIdentityCount, 0),
                    std::invalid_argument);
}

TEST_CASE("synth_audio determinism and duration scaling", "[synth]") {
  const Waveform a = synth_audio({2}, Emotion::neutral, 1.0);
  const Waveform b = synth_audio({2}, Emotion::neutral, 1.0);
  REQUIRE(a.samples == b.samples);

  const Waveform fast = synth_audio({2}, Emotion::neutral, 2.0);
  REQUIRE(fast.samples.size() == 2 * a.samples.size());
}

TEST_CASE("synth_audio concatenation is exact", "[synth]") {
  const Waveform one = synth_audio({1}, Emotion::happy, 1.0);
  const Waveform two = synth_audio({1, 1}, Emotion::happy, 1.0);
  REQUIRE(two.samples.size() == 2 * one.samples.size());
  for (std::size_t i = 0; i < one.samples.size(); ++i) {
    REQUIRE(two.samples[i] == one.samples[i]);
    REQUIRE(two.samples[one.samples.size() + i] == one.samples[i]);
  }
}

TEST_CASE("synth_audio preconditions", "[synth]") {
  REQUIRE_THROWS_AS(synth_audio({}, Emotion::neutral, 1.0), std::invalid_argument);
  REQUIRE_THROWS_AS(synth_audio({0}, Emotion::neutral, 0.4), std::invalid_argument);
  REQUIRE_THROWS_AS(synth_audio({0}, Emotion::neutral, 2.1), std::invalid_argument);
}

TEST_CASE("emotion alters audio only through the amplitude envelope", "[synth]") {
  const Waveform neutral = synth_audio({4}, Emotion::neutral, 1.0);
  const Waveform sad = synth_audio({4}, Emotion::sad, 1.0);
  REQUIRE(neutral.samples.size() == sad.samples.size());
  // pointwise ratio stays within the +-10% gain times AM depth band
  for (std::size_t i = 0; i < neutral.samples.size(); ++i) {
    if (std::abs(neutral.samples[i]) < 1e-6) continue;
    const double ratio = sad.samples[i] / neutral.samples[i];
    REQUIRE(ratio > 0.7);
    REQUIRE(ratio < 1.1);
  }
}

TEST_CASE("generate_clip frame count follows round(duration*fps)", "[synth]") {
  FactorSpec spec;
  spec.content_id = 0;
  spec.phonemes = {0};
  spec.emotion = Emotion::neutral;
  spec.identity = 0;
  spec.fps = 10;
  const MediaClip clip = generate_clip(spec, 1.0, /*base_seconds=*/1.0);
  REQUIRE(clip.frames.size() == 10);
  REQUIRE_THAT(clip.audio.duration(), Catch::Matchers::WithinAbs(1.0, 1e-3));
}

TEST_CASE("generate_clip is deterministic", "[synth]") {
  FactorSpec spec;
  spec.phonemes = {1, 4, 2};
  spec.emotion = Emotion::fear;
  spec.identity = 1;
  spec.fps = 10;
  const MediaClip a = generate_clip(spec, 1.1);
  const MediaClip b = generate_clip(spec, 1.1);
  REQUIRE(a.frames.size() == b.frames.size());
  for (std::size_t i = 0; i < a.frames.size(); ++i)
    REQUIRE(a.frames[i].pixels == b.frames[i].pixels);
  REQUIRE(a.audio.samples == b.audio.samples);
}

TEST_CASE("same content rendered under two emotions keeps mouth parameters",
          "[synth]") {
  FactorSpec spec;
  spec.phonemes = {3, 7, 0, 9};
  spec.identity = 2;
  spec.fps = 10;
  spec.emotion = Emotion::angry;
  const MediaClip a = generate_clip(spec, 1.0);
  spec.emotion = Emotion::happy;
  const MediaClip b = generate_clip(spec, 1.0);
  REQUIRE(a.frames.size() == b.frames.size());
  for (std::size_t k = 0; k < a.frames.size(); ++k) {
    const double t = (static_cast<double>(k) + 0.5) / spec.fps;
    const int pa = active_phoneme(a.factors, 1.0, t);
    const int pb = active_phoneme(b.factors, 1.0, t);
    REQUIRE(pa == pb);
    REQUIRE(phoneme_params(pa).mouth_open == phoneme_params(pb).mouth_open);
  }
}

TEST_CASE("default utterances have distinct phoneme multisets", "[synth]") {
  const auto utts = default_utterances(20, 1);
  REQUIRE(utts.size() == 20);
  std::set<std::multiset<int>> seen;
  for (const auto& u : utts) {
    REQUIRE(u.size() >= 4);
    REQUIRE(u.size() <= 8);
    seen.insert(std::multiset<int>(u.begin(), u.end()));
  }
  REQUIRE(seen.size() == 20);
}

TEST_CASE("audio_window pads at edges and matches interior samples", "[synth]") {
  const Waveform w = synth_audio({0, 1, 2, 3}, Emotion::neutral, 1.0);
  const auto win = audio_window(w, 0.5, 0.2);
  REQUIRE(win.size() == 3200);
  const int start = 8000 - 1600;
  for (std::size_t i = 0; i < win.size(); ++i)
    REQUIRE(win[i] == w.samples[static_cast<std::size_t>(start) + i]);
  // centred at t=0 the left half is zero padding
  const auto edge = audio_window(w, 0.0, 0.2);
  for (std::size_t i = 0; i < 1600; ++i) REQUIRE(edge[i] == 0.0);
}
