#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cdrl/corpus.hpp"
#include "cdrl/mel.hpp"

namespace cdrl {

// Row-major T_a x T_b local-cost matrix.
struct CostMatrix {
  int rows = 0, cols = 0;
  std::vector<double> values;

  CostMatrix() = default;
  CostMatrix(int r, int c) : rows(r), cols(c), values(static_cast<std::size_t>(r) * c, 0.0) {}
  double at(int i, int j) const { return values[static_cast<std::size_t>(i) * cols + j]; }
  double& at(int i, int j) { return values[static_cast<std::size_t>(i) * cols + j]; }
};

struct WarpPath {
  std::vector<std::pair<int, int>> steps;  // (i, j), from (0,0) to (Ta-1, Tb-1)
  double total_cost = 0.0;
};

namespace detail {

inline void check_cost(const CostMatrix& c) {
  if (c.rows <= 0 || c.cols <= 0) throw std::invalid_argument("dtw: empty cost matrix");
  for (double v : c.values)
    if (!(v >= 0.0) || !std::isfinite(v))
      throw std::invalid_argument("dtw: costs must be finite and non-negative");
}

}  // namespace detail

// Classic DTW over steps {(1,0),(0,1),(1,1)}. Backtracking prefers the
// diagonal, then (1,0), then (0,1) on ties.
inline WarpPath dtw(const CostMatrix& cost) {
  detail::check_cost(cost);
  const int ta = cost.rows, tb = cost.cols;
  std::vector<double> acc(static_cast<std::size_t>(ta) * tb);
  auto a = [&](int i, int j) -> double& { return acc[static_cast<std::size_t>(i) * tb + j]; };
  a(0, 0) = cost.at(0, 0);
  for (int i = 1; i < ta; ++i) a(i, 0) = a(i - 1, 0) + cost.at(i, 0);
  for (int j = 1; j < tb; ++j) a(0, j) = a(0, j - 1) + cost.at(0, j);
  for (int i = 1; i < ta; ++i)
    for (int j = 1; j < tb; ++j)
      a(i, j) = cost.at(i, j) + std::min({a(i - 1, j - 1), a(i - 1, j), a(i, j - 1)});

  WarpPath path;
  path.total_cost = a(ta - 1, tb - 1);
  int i = ta - 1, j = tb - 1;
  path.steps.emplace_back(i, j);
  while (i > 0 || j > 0) {
    if (i == 0) --j;
    else if (j == 0) --i;
    else {
      const double diag = a(i - 1, j - 1), up = a(i - 1, j), left = a(i, j - 1);
      const double best = std::min({diag, up, left});
      if (diag == best) { --i; --j; }
      else if (up == best) --i;
      else --j;
    }
    path.steps.emplace_back(i, j);
  }
  std::reverse(path.steps.begin(), path.steps.end());
  return path;
}

// Exhaustive enumeration oracle, limited to 8x8.
inline WarpPath brute_force_dtw(const CostMatrix& cost) {
  detail::check_cost(cost);
  if (cost.rows > 8 || cost.cols > 8)
    throw std::invalid_argument("brute_force_dtw: matrix larger than 8x8");
  WarpPath best;
  best.total_cost = std::numeric_limits<double>::infinity();
  std::vector<std::pair<int, int>> current{{0, 0}};
  const auto walk = [&](auto&& self, int i, int j, double acc) -> void {
    if (i == cost.rows - 1 && j == cost.cols - 1) {
      if (acc < best.total_cost) {
        best.total_cost = acc;
        best.steps = current;
      }
      return;
    }
    const auto try_step = [&](int ni, int nj) {
      if (ni >= cost.rows || nj >= cost.cols) return;
      current.emplace_back(ni, nj);
      self(self, ni, nj, acc + cost.at(ni, nj));
      current.pop_back();
    };
    try_step(i + 1, j + 1);
    try_step(i + 1, j);
    try_step(i, j + 1);
  };
  walk(walk, 0, 0, cost.at(0, 0));
  return best;
}

struct AlignedPair {
  std::string clip_a, clip_b;
  std::vector<std::pair<int, int>> frame_pairs;  // video frame indices
  double dtw_cost = 0.0;
};

inline CostMatrix mel_euclidean_cost(const MelSpectrogram& a, const MelSpectrogram& b) {
  if (a.f != b.f) throw std::invalid_argument("mel cost: feature dim mismatch");
  CostMatrix c(a.t, b.t);
  for (int i = 0; i < a.t; ++i)
    for (int j = 0; j < b.t; ++j) {
      double s = 0.0;
      const double* ra = a.row(i);
      const double* rb = b.row(j);
      for (int k = 0; k < a.f; ++k) {
        const double d = ra[k] - rb[k];
        s += d * d;
      }
      c.at(i, j) = std::sqrt(s);
    }
  return c;
}

// DTW on log-mel frames, then map each mel index to the video frame at
// t = i * hop and keep the first hit per a-frame. Pairing a clip with itself
// is allowed as a self-alignment diagnostic; distinct clips must share
// content and differ in emotion.
inline AlignedPair build_aligned_pairs(const Corpus& corpus, int clip_a, int clip_b,
                                       const MelParams& mel_params = MelParams{}) {
  const ClipRecord& ca = corpus.clip(clip_a);
  const ClipRecord& cb = corpus.clip(clip_b);
  if (ca.factors.content_id != cb.factors.content_id)
    throw std::invalid_argument("build_aligned_pairs: content mismatch between " +
                                ca.id + " and " + cb.id);
  if (clip_a != clip_b && ca.factors.emotion == cb.factors.emotion)
    throw std::invalid_argument("build_aligned_pairs: clips share emotion");

  const MelSpectrogram ma = mel_spectrogram(corpus.load_audio(clip_a), mel_params);
  const MelSpectrogram mb = mel_spectrogram(corpus.load_audio(clip_b), mel_params);
  const WarpPath path = dtw(mel_euclidean_cost(ma, mb));

  AlignedPair out;
  out.clip_a = ca.id;
  out.clip_b = cb.id;
  out.dtw_cost = path.total_cost;
  const auto to_frame = [&](int mel_idx, const ClipRecord& rec) {
    const double t = mel_idx * mel_params.hop_seconds;
    const int f = static_cast<int>(std::llround(t * rec.factors.fps));
    return std::clamp(f, 0, rec.n_frames - 1);
  };
  int last_a = -1;
  for (const auto& [i, j] : path.steps) {
    const int fa = to_frame(i, ca);
    const int fb = to_frame(j, cb);
    if (fa != last_a) {
      out.frame_pairs.emplace_back(fa, fb);
      last_a = fa;
    }
  }
  return out;
}

// All same-(identity, content) clip pairs with distinct emotions, each
// unordered pair once (emotion index of a below b).
inline std::vector<AlignedPair> align_corpus(const Corpus& corpus,
                                             const MelParams& mel_params = MelParams{},
                                             int jobs = 1) {
  std::vector<std::pair<int, int>> tasks;
  const auto& clips = corpus.clips();
  for (int a = 0; a < static_cast<int>(clips.size()); ++a)
    for (int b = a + 1; b < static_cast<int>(clips.size()); ++b) {
      const auto& fa = clips[static_cast<std::size_t>(a)].factors;
      const auto& fb = clips[static_cast<std::size_t>(b)].factors;
      if (fa.identity == fb.identity && fa.content_id == fb.content_id &&
          fa.emotion != fb.emotion)
        tasks.emplace_back(a, b);
    }
  std::vector<AlignedPair> out(tasks.size());
  parallel_for(static_cast<int>(tasks.size()), jobs, [&](int i) {
    out[static_cast<std::size_t>(i)] = build_aligned_pairs(
        corpus, tasks[static_cast<std::size_t>(i)].first,
        tasks[static_cast<std::size_t>(i)].second, mel_params);
  });
  return out;
}

// Pairs file: one `clip_a clip_b frame_a frame_b` line per pair.
inline void write_pairs_file(const std::vector<AlignedPair>& pairs,
                             const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw io_error("cannot write pairs file: " + path.string());
  for (const AlignedPair& p : pairs)
    for (const auto& [fa, fb] : p.frame_pairs)
      f << p.clip_a << " " << p.clip_b << " " << fa << " " << fb << "\n";
}

inline void write_pairs_summary(const std::vector<AlignedPair>& pairs,
                                const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw io_error("cannot write pairs summary: " + path.string());
  f << "clip_a,clip_b,total_cost,n_pairs\n";
  f.precision(17);
  for (const AlignedPair& p : pairs)
    f << p.clip_a << "," << p.clip_b << "," << p.dtw_cost << ","
      << p.frame_pairs.size() << "\n";
}

inline std::vector<AlignedPair> read_pairs_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw missing_file_error(path.string());
  std::vector<AlignedPair> out;
  std::string a, b;
  int fa = 0, fb = 0;
  while (f >> a >> b >> fa >> fb) {
    if (out.empty() || out.back().clip_a != a || out.back().clip_b != b) {
      AlignedPair p;
      p.clip_a = a;
      p.clip_b = b;
      out.push_back(std::move(p));
    }
    out.back().frame_pairs.emplace_back(fa, fb);
  }
  return out;
}

}  // namespace cdrl
