#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <set>
#include <stdexcept>
#include <vector>

#include "cdrl/emotion.hpp"
#include "cdrl/rng.hpp"

// Procedural talking-avatar generator. Three independent factors drive the
// pixels: phoneme -> mouth geometry, emotion -> brows / mouth corners / global
// tint, identity -> face outline and skin. Audio is a per-phoneme sinusoid
// bundle; emotion touches audio only through the amplitude envelope.
namespace cdrl::synth {

inline constexpr int kImageH = 64;
inline constexpr int kImageW = 64;
inline constexpr int kImageC = 3;
inline constexpr int kPhonemeCount = 12;
inline constexpr int kIdentityCount = 4;
inline constexpr int kDefaultFps = 10;
inline constexpr int kSampleRate = 16000;
inline constexpr double kPhonemeBaseSeconds = 0.25;

struct PhonemeParams {
  double mouth_open;   // half-height scale of the inner mouth ellipse
  double mouth_width;  // half-width scale
  double f1, f2, f3;   // sinusoid bundle
};

struct EmotionParams {
  double brow_slope;    // outward tilt of the brows
  double brow_raise;    // pixels above the resting line
  double corner_curl;   // -1 (down) .. +1 (up)
  std::array<double, 3> tint;
  double audio_gain;    // within +-10%
  double audio_am_depth;
};

struct IdentityParams {
  double face_rx, face_ry;
  std::array<double, 3> skin;
};

inline const PhonemeParams& phoneme_params(int p) {
  static const std::array<PhonemeParams, kPhonemeCount> table = {{
      {0.15, 0.90, 220.0, 900.0, 2200.0},
      {0.22, 0.55, 275.0, 985.0, 2270.0},
      {0.29, 0.75, 330.0, 1070.0, 2340.0},
      {0.36, 0.60, 385.0, 1155.0, 2410.0},
      {0.43, 0.85, 440.0, 1240.0, 2480.0},
      {0.50, 0.65, 495.0, 1325.0, 2550.0},
      {0.57, 0.95, 550.0, 1410.0, 2620.0},
      {0.64, 0.58, 605.0, 1495.0, 2690.0},
      {0.71, 0.80, 660.0, 1580.0, 2760.0},
      {0.78, 0.70, 715.0, 1665.0, 2830.0},
      {0.85, 0.88, 770.0, 1750.0, 2900.0},
      {0.92, 0.62, 825.0, 1835.0, 2970.0},
  }};
  if (p < 0 || p >= kPhonemeCount)
    throw std::invalid_argument("phoneme out of range: " + std::to_string(p));
  return table[static_cast<std::size_t>(p)];
}

inline const EmotionParams& emotion_params(Emotion e) {
  static const std::array<EmotionParams, kEmotionCount> table = {{
      // slope  raise  curl   tint                    gain   am
      {0.00, 0.0, 0.00, {1.00, 1.00, 1.00}, 1.00, 0.00},   // neutral
      {0.55, -1.0, -0.60, {1.10, 0.94, 0.92}, 1.08, 0.08}, // angry
      {0.30, -0.5, -0.80, {0.93, 1.08, 0.94}, 0.96, 0.05}, // disgusted
      {-0.45, 1.5, -0.30, {0.94, 0.96, 1.10}, 0.94, 0.09}, // fear
      {-0.15, 0.8, 1.00, {1.08, 1.05, 0.93}, 1.06, 0.06},  // happy
      {-0.55, -1.5, -1.00, {0.90, 0.95, 1.07}, 0.90, 0.10},// sad
      {-0.05, 2.5, 0.60, {1.06, 0.99, 1.06}, 1.10, 0.07},  // surprised
  }};
  return table[static_cast<std::size_t>(e)];
}

inline const IdentityParams& identity_params(int id) {
  static const std::array<IdentityParams, kIdentityCount> table = {{
      {24.0, 27.0, {0.86, 0.72, 0.60}},
      {26.0, 26.0, {0.80, 0.68, 0.58}},
      {23.0, 29.0, {0.88, 0.76, 0.66}},
      {25.0, 28.0, {0.83, 0.70, 0.55}},
  }};
  if (id < 0 || id >= kIdentityCount)
    throw std::invalid_argument("identity out of range: " + std::to_string(id));
  return table[static_cast<std::size_t>(id)];
}

// Canvas geometry shared by the renderer, the clarity scorer and the mouth
// regressor.
inline constexpr double kFaceCx = 32.0, kFaceCy = 34.0;
inline constexpr double kEyeDx = 11.0, kEyeY = 26.0, kEyeR = 2.6;
inline constexpr double kBrowY = 19.0, kBrowHalf = 6.0;
inline constexpr double kMouthCy = 48.0;

struct Rect {
  int y0, x0, h, w;
};

inline constexpr Rect kMouthCrop{38, 18, 21, 28};
inline constexpr Rect kLeftBrowBox{12, 13, 12, 17};
inline constexpr Rect kRightBrowBox{12, 34, 12, 17};

// 4x4 token grid over 64x64; tokens covering the mouth crop.
inline const std::vector<int>& mouth_token_indices() {
  static const std::vector<int> idx = {9, 10, 13, 14};
  return idx;
}

struct ImageFrame {
  int h = kImageH, w = kImageW, c = kImageC;
  std::vector<float> pixels;  // row-major H x W x C, values in [0,1]

  float at(int y, int x, int ch) const {
    return pixels[(static_cast<std::size_t>(y) * w + x) * c + ch];
  }
  float& at(int y, int x, int ch) {
    return pixels[(static_cast<std::size_t>(y) * w + x) * c + ch];
  }
};

struct Waveform {
  std::vector<double> samples;
  int sample_rate = kSampleRate;
  double duration() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

struct FactorSpec {
  int content_id = 0;
  std::vector<int> phonemes;
  Emotion emotion = Emotion::neutral;
  int identity = 0;
  int fps = kDefaultFps;
  std::uint64_t seed = 0;

  void validate() const {
    if (phonemes.empty()) throw std::invalid_argument("spec: empty phonemes");
    for (int p : phonemes) (void)phoneme_params(p);
    (void)identity_params(identity);
    if (fps <= 0) throw std::invalid_argument("spec: fps must be positive");
  }
};

struct MediaClip {
  std::vector<ImageFrame> frames;
  Waveform audio;
  FactorSpec factors;
  double tempo = 1.0;
};

namespace detail {

inline void blend(ImageFrame& img, int y, int x, double cov, double r, double g,
                  double b) {
  if (cov <= 0.0) return;
  cov = std::min(cov, 1.0);
  img.at(y, x, 0) = static_cast<float>(img.at(y, x, 0) * (1.0 - cov) + r * cov);
  img.at(y, x, 1) = static_cast<float>(img.at(y, x, 1) * (1.0 - cov) + g * cov);
  img.at(y, x, 2) = static_cast<float>(img.at(y, x, 2) * (1.0 - cov) + b * cov);
}

inline void fill_ellipse(ImageFrame& img, double cx, double cy, double rx,
                         double ry, double r, double g, double b) {
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - ry - 1)));
  const int y1 = std::min(kImageH - 1, static_cast<int>(std::ceil(cy + ry + 1)));
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - rx - 1)));
  const int x1 = std::min(kImageW - 1, static_cast<int>(std::ceil(cx + rx + 1)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double fx = (x - cx) / rx, fy = (y - cy) / ry;
      const double f = fx * fx + fy * fy;
      blend(img, y, x, (1.0 - f) * 0.5 * std::min(rx, ry) + 0.5, r, g, b);
    }
}

inline void stroke_segment(ImageFrame& img, double ax, double ay, double bx,
                           double by, double width, double r, double g,
                           double b) {
  const int y0 = std::max(0, static_cast<int>(std::floor(std::min(ay, by) - width - 1)));
  const int y1 = std::min(kImageH - 1, static_cast<int>(std::ceil(std::max(ay, by) + width + 1)));
  const int x0 = std::max(0, static_cast<int>(std::floor(std::min(ax, bx) - width - 1)));
  const int x1 = std::min(kImageW - 1, static_cast<int>(std::ceil(std::max(ax, bx) + width + 1)));
  const double vx = bx - ax, vy = by - ay;
  const double len2 = vx * vx + vy * vy;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      double t = len2 > 0.0 ? ((x - ax) * vx + (y - ay) * vy) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      const double dx = x - (ax + t * vx), dy = y - (ay + t * vy);
      const double dist = std::sqrt(dx * dx + dy * dy);
      blend(img, y, x, width + 0.5 - dist, r, g, b);
    }
}

}  // namespace detail

// Pixels are a pure function of (phoneme, emotion, identity); t is the frame
// index within the clip and does not move any geometry.
inline ImageFrame render_frame(int phoneme, Emotion emotion, int identity,
                               int t) {
  (void)t;
  const PhonemeParams& ph = phoneme_params(phoneme);
  const EmotionParams& em = emotion_params(emotion);
  const IdentityParams& idp = identity_params(identity);

  ImageFrame img;
  img.pixels.assign(static_cast<std::size_t>(kImageH) * kImageW * kImageC, 0.0f);
  for (int y = 0; y < kImageH; ++y)
    for (int x = 0; x < kImageW; ++x) {
      img.at(y, x, 0) = 0.93f;
      img.at(y, x, 1) = 0.93f;
      img.at(y, x, 2) = 0.95f;
    }

  detail::fill_ellipse(img, kFaceCx, kFaceCy, idp.face_rx, idp.face_ry,
                       idp.skin[0], idp.skin[1], idp.skin[2]);

  for (int side = -1; side <= 1; side += 2) {
    const double ex = kFaceCx + side * kEyeDx;
    detail::fill_ellipse(img, ex, kEyeY, kEyeR, kEyeR, 0.12, 0.10, 0.10);
    // brow: outer end tilts by brow_slope, whole brow shifts by brow_raise
    const double by = kBrowY - em.brow_raise;
    const double inner_y = by + em.brow_slope * kBrowHalf * 0.5;
    const double outer_y = by - em.brow_slope * kBrowHalf * 0.5;
    detail::stroke_segment(img, ex - side * kBrowHalf, inner_y,
                           ex + side * kBrowHalf, outer_y, 1.4, 0.25, 0.15, 0.10);
  }

  const double wx = 4.0 + 8.0 * ph.mouth_width;
  const double hy = 1.0 + 8.0 * ph.mouth_open;
  // corner marks first so a wide-open mouth naturally occludes them
  for (int side = -1; side <= 1; side += 2) {
    const double cxm = kFaceCx + side * (wx - 1.0);
    const double cym = kMouthCy - 3.0 * em.corner_curl;
    detail::fill_ellipse(img, cxm, cym, 2.2, 2.2, 0.62, 0.18, 0.22);
  }
  detail::fill_ellipse(img, kFaceCx, kMouthCy, wx + 1.2, hy + 1.2, 0.55, 0.20, 0.20);
  detail::fill_ellipse(img, kFaceCx, kMouthCy, wx, hy, 0.08, 0.05, 0.05);

  for (int y = 0; y < kImageH; ++y)
    for (int x = 0; x < kImageW; ++x)
      for (int ch = 0; ch < kImageC; ++ch)
        img.at(y, x, ch) = static_cast<float>(
            std::clamp(img.at(y, x, ch) * em.tint[static_cast<std::size_t>(ch)], 0.0, 1.0));
  return img;
}

// Each phoneme is a fixed sinusoid bundle of base duration scaled by tempo
// (tempo is a duration multiplier). The emotion envelope (gain + slow AM)
// restarts at each phoneme so concatenation is exact sample-wise.
inline Waveform synth_audio(const std::vector<int>& phonemes, Emotion emotion,
                            double tempo,
                            double base_seconds = kPhonemeBaseSeconds) {
  if (phonemes.empty()) throw std::invalid_argument("synth_audio: empty phonemes");
  if (tempo < 0.5 || tempo > 2.0)
    throw std::invalid_argument("synth_audio: tempo outside [0.5, 2.0]");
  const EmotionParams& em = emotion_params(emotion);
  Waveform w;
  w.sample_rate = kSampleRate;
  const double ramp = 0.005;
  for (int p : phonemes) {
    const PhonemeParams& ph = phoneme_params(p);
    const int n = static_cast<int>(std::llround(base_seconds * tempo * kSampleRate));
    const double dur = static_cast<double>(n) / kSampleRate;
    for (int i = 0; i < n; ++i) {
      const double tl = static_cast<double>(i) / kSampleRate;
      double env = 1.0;
      if (tl < ramp) env = 0.5 - 0.5 * std::cos(std::numbers::pi * tl / ramp);
      const double tail = dur - tl;
      if (tail < ramp) env *= 0.5 - 0.5 * std::cos(std::numbers::pi * tail / ramp);
      const double am = 1.0 + em.audio_am_depth *
                                  std::sin(2.0 * std::numbers::pi * 3.0 * tl);
      const double s = std::sin(2.0 * std::numbers::pi * ph.f1 * tl) +
                       0.6 * std::sin(2.0 * std::numbers::pi * ph.f2 * tl) +
                       0.35 * std::sin(2.0 * std::numbers::pi * ph.f3 * tl);
      w.samples.push_back(0.2 * em.audio_gain * am * env * s);
    }
  }
  return w;
}

inline int active_phoneme(const FactorSpec& spec, double tempo, double t,
                          double base_seconds = kPhonemeBaseSeconds) {
  const double per = base_seconds * tempo;
  int idx = static_cast<int>(t / per);
  idx = std::clamp(idx, 0, static_cast<int>(spec.phonemes.size()) - 1);
  return spec.phonemes[static_cast<std::size_t>(idx)];
}

inline MediaClip generate_clip(const FactorSpec& spec, double tempo,
                               double base_seconds = kPhonemeBaseSeconds) {
  spec.validate();
  MediaClip clip;
  clip.factors = spec;
  clip.tempo = tempo;
  clip.audio = synth_audio(spec.phonemes, spec.emotion, tempo, base_seconds);
  const double duration =
      base_seconds * tempo * static_cast<double>(spec.phonemes.size());
  const int n_frames = static_cast<int>(std::llround(duration * spec.fps));
  for (int k = 0; k < n_frames; ++k) {
    const double t = (k + 0.5) / spec.fps;
    clip.frames.push_back(render_frame(active_phoneme(spec, tempo, t, base_seconds),
                                       spec.emotion, spec.identity, k));
  }
  return clip;
}

// Deterministic utterance inventory with pairwise-distinct phoneme multisets,
// so clip-level pooled features can tell contents apart.
inline std::vector<std::vector<int>> default_utterances(int count,
                                                        std::uint64_t seed) {
  std::vector<std::vector<int>> out;
  std::vector<std::multiset<int>> seen;
  out.reserve(static_cast<std::size_t>(count));
  for (int c = 0; c < count; ++c) {
    Rng rng(splitmix64(seed ^ (0x5eedULL + static_cast<std::uint64_t>(c) * 977)));
    const int len = 4 + c % 5;
    for (int attempt = 0;; ++attempt) {
      std::vector<int> ph;
      for (int i = 0; i < len; ++i) ph.push_back(rng.uniform_int(0, kPhonemeCount - 1));
      std::multiset<int> ms(ph.begin(), ph.end());
      if (std::find(seen.begin(), seen.end(), ms) == seen.end()) {
        seen.push_back(std::move(ms));
        out.push_back(std::move(ph));
        break;
      }
      if (attempt > 1000)
        throw std::runtime_error("default_utterances: cannot make distinct sets");
    }
  }
  return out;
}

// 200 ms audio window centered on a frame timestamp, zero-padded at clip edges.
inline std::vector<double> audio_window(const Waveform& w, double center_t,
                                        double span_seconds = 0.2) {
  const int n = static_cast<int>(std::llround(span_seconds * w.sample_rate));
  std::vector<double> out(static_cast<std::size_t>(n), 0.0);
  const int start = static_cast<int>(std::llround(center_t * w.sample_rate)) - n / 2;
  for (int i = 0; i < n; ++i) {
    const int j = start + i;
    if (j >= 0 && j < static_cast<int>(w.samples.size()))
      out[static_cast<std::size_t>(i)] = w.samples[static_cast<std::size_t>(j)];
  }
  return out;
}

}  // namespace cdrl::synth
