#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "cdrl/error.hpp"
#include "cdrl/io.hpp"
#include "cdrl/rng.hpp"
#include "cdrl/synth.hpp"
#include "cdrl/threading.hpp"

namespace cdrl {

struct ClipRecord {
  std::string id;
  synth::FactorSpec factors;
  double tempo = 1.0;
  std::string frames_rel, audio_rel;
  std::uint64_t frames_checksum = 0, audio_checksum = 0;
  int n_frames = 0;
};

struct CorpusParams {
  int utterances = 20;
  int identities = 4;
  int fps = synth::kDefaultFps;
  std::uint64_t seed = 1;
  double tempo_lo = 0.8;
  double tempo_hi = 1.25;
  double base_seconds = synth::kPhonemeBaseSeconds;
};

namespace detail {

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

inline std::uint64_t parse_hex64(const std::string& s) {
  return std::stoull(s, nullptr, 16);
}

inline std::string clip_id(int identity, int content, Emotion e) {
  std::ostringstream os;
  os << "id" << identity << "_u" << (content < 10 ? "0" : "") << content << "_"
     << to_string(e);
  return os.str();
}

}  // namespace detail

inline void write_manifest(const std::vector<ClipRecord>& clips,
                           const std::filesystem::path& path,
                           const CorpusParams& params) {
  nlohmann::json j;
  j["format"] = "cdrl-corpus";
  j["version"] = 1;
  j["image"] = {{"h", synth::kImageH}, {"w", synth::kImageW}, {"c", synth::kImageC}};
  j["params"] = {{"utterances", params.utterances}, {"identities", params.identities},
                 {"fps", params.fps},               {"seed", params.seed},
                 {"tempo_lo", params.tempo_lo},     {"tempo_hi", params.tempo_hi},
                 {"base_seconds", params.base_seconds}};
  j["clips"] = nlohmann::json::array();
  for (const ClipRecord& c : clips) {
    nlohmann::json jc;
    jc["id"] = c.id;
    jc["content"] = c.factors.content_id;
    jc["phonemes"] = c.factors.phonemes;
    jc["emotion"] = to_string(c.factors.emotion);
    jc["identity"] = c.factors.identity;
    jc["fps"] = c.factors.fps;
    jc["seed"] = c.factors.seed;
    jc["tempo"] = c.tempo;
    jc["frames"] = c.frames_rel;
    jc["frames_fnv"] = detail::hex64(c.frames_checksum);
    jc["audio"] = c.audio_rel;
    jc["audio_fnv"] = detail::hex64(c.audio_checksum);
    jc["n_frames"] = c.n_frames;
    j["clips"].push_back(std::move(jc));
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw io_error("cannot write manifest: " + path.string());
  f << j.dump(2) << "\n";
}

class Corpus {
 public:
  static Corpus load(const std::filesystem::path& manifest_path, bool verify = true) {
    std::ifstream f(manifest_path);
    if (!f) throw missing_file_error(manifest_path.string());
    nlohmann::json j;
    try {
      f >> j;
    } catch (const nlohmann::json::exception& e) {
      throw manifest_error("malformed manifest " + manifest_path.string() + ": " + e.what());
    }
    Corpus corpus;
    corpus.root_ = manifest_path.parent_path();
    try {
      if (j.at("format") != "cdrl-corpus") throw manifest_error("not a corpus manifest");
      const auto& jp = j.at("params");
      corpus.params_.utterances = jp.at("utterances");
      corpus.params_.identities = jp.at("identities");
      corpus.params_.fps = jp.at("fps");
      corpus.params_.seed = jp.at("seed");
      corpus.params_.tempo_lo = jp.at("tempo_lo");
      corpus.params_.tempo_hi = jp.at("tempo_hi");
      corpus.params_.base_seconds = jp.at("base_seconds");
      for (const auto& jc : j.at("clips")) {
        ClipRecord c;
        c.id = jc.at("id");
        c.factors.content_id = jc.at("content");
        c.factors.phonemes = jc.at("phonemes").get<std::vector<int>>();
        c.factors.emotion = emotion_from_string(jc.at("emotion"));
        c.factors.identity = jc.at("identity");
        c.factors.fps = jc.at("fps");
        c.factors.seed = jc.at("seed");
        c.tempo = jc.at("tempo");
        c.frames_rel = jc.at("frames");
        c.audio_rel = jc.at("audio");
        c.frames_checksum = detail::parse_hex64(jc.at("frames_fnv"));
        c.audio_checksum = detail::parse_hex64(jc.at("audio_fnv"));
        c.n_frames = jc.at("n_frames");
        corpus.clips_.push_back(std::move(c));
      }
    } catch (const nlohmann::json::exception& e) {
      throw manifest_error("malformed manifest " + manifest_path.string() + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw manifest_error("malformed manifest " + manifest_path.string() + ": " + e.what());
    }
    corpus.build_index();
    if (verify) corpus.verify_checksums();
    return corpus;
  }

  const std::vector<ClipRecord>& clips() const { return clips_; }
  const ClipRecord& clip(int i) const { return clips_[static_cast<std::size_t>(i)]; }
  const CorpusParams& params() const { return params_; }
  const std::filesystem::path& root() const { return root_; }

  int index_of(const std::string& id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) throw std::invalid_argument("unknown clip id: " + id);
    return it->second;
  }

  // -1 when the cell is absent
  int find(int identity, int content, Emotion e) const {
    auto it = by_cell_.find(std::make_tuple(identity, content, index_of_emotion(e)));
    return it == by_cell_.end() ? -1 : it->second;
  }

  std::vector<synth::ImageFrame> load_frames(int i) const {
    const ClipRecord& c = clip(i);
    return io::read_frames_blob(root_ / c.frames_rel);
  }

  synth::Waveform load_audio(int i) const {
    const ClipRecord& c = clip(i);
    return io::read_audio_blob(root_ / c.audio_rel);
  }

  // Shared per-clip frame cache for random-access training loops.
  std::shared_ptr<const std::vector<synth::ImageFrame>> frames_cached(int i) const {
    std::lock_guard<std::mutex> lock(cache_mu_);
    auto it = frame_cache_.find(i);
    if (it != frame_cache_.end()) return it->second;
    auto loaded = std::make_shared<const std::vector<synth::ImageFrame>>(load_frames(i));
    frame_cache_.emplace(i, loaded);
    return loaded;
  }

  std::shared_ptr<const synth::Waveform> audio_cached(int i) const {
    std::lock_guard<std::mutex> lock(cache_mu_);
    auto it = audio_cache_.find(i);
    if (it != audio_cache_.end()) return it->second;
    auto loaded = std::make_shared<const synth::Waveform>(load_audio(i));
    audio_cache_.emplace(i, loaded);
    return loaded;
  }

  void verify_checksums() const {
    for (const ClipRecord& c : clips_) {
      const auto fp = root_ / c.frames_rel;
      const auto ap = root_ / c.audio_rel;
      if (!std::filesystem::exists(fp)) throw missing_file_error(fp.string());
      if (!std::filesystem::exists(ap)) throw missing_file_error(ap.string());
      if (io::fnv1a64_file(fp) != c.frames_checksum) throw checksum_error(fp.string());
      if (io::fnv1a64_file(ap) != c.audio_checksum) throw checksum_error(ap.string());
    }
  }

  friend Corpus build_corpus(const CorpusParams&, const std::filesystem::path&, int);

 private:
  void build_index() {
    for (std::size_t i = 0; i < clips_.size(); ++i) {
      by_id_[clips_[i].id] = static_cast<int>(i);
      by_cell_[std::make_tuple(clips_[i].factors.identity, clips_[i].factors.content_id,
                               index_of_emotion(clips_[i].factors.emotion))] =
          static_cast<int>(i);
    }
  }

  static int index_of_emotion(Emotion e) { return static_cast<int>(e); }

  std::filesystem::path root_;
  CorpusParams params_;
  std::vector<ClipRecord> clips_;
  std::map<std::string, int> by_id_;
  std::map<std::tuple<int, int, int>, int> by_cell_;
  mutable std::mutex cache_mu_;
  mutable std::map<int, std::shared_ptr<const std::vector<synth::ImageFrame>>> frame_cache_;
  mutable std::map<int, std::shared_ptr<const synth::Waveform>> audio_cache_;
};

// Generates the full (identity x content x emotion) grid into out_dir and
// writes manifest.json. Per-clip seeds keep parallel generation deterministic.
inline Corpus build_corpus(const CorpusParams& params,
                           const std::filesystem::path& out_dir, int jobs = 1) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const auto utterances =
      synth::default_utterances(params.utterances, params.seed);
  const int total = params.identities * params.utterances * kEmotionCount;
  std::vector<ClipRecord> records(static_cast<std::size_t>(total));
  Rng base(params.seed);

  std::vector<std::uint64_t> clip_seeds;
  clip_seeds.reserve(static_cast<std::size_t>(total));
  for (int i = 0; i < total; ++i)
    clip_seeds.push_back(splitmix64(params.seed ^ (0xc0ffeeULL + static_cast<std::uint64_t>(i))));

  parallel_for(total, jobs, [&](int i) {
    const int identity = i / (params.utterances * kEmotionCount);
    const int rem = i % (params.utterances * kEmotionCount);
    const int content = rem / kEmotionCount;
    const Emotion emotion = static_cast<Emotion>(rem % kEmotionCount);

    synth::FactorSpec spec;
    spec.content_id = content;
    spec.phonemes = utterances[static_cast<std::size_t>(content)];
    spec.emotion = emotion;
    spec.identity = identity;
    spec.fps = params.fps;
    spec.seed = clip_seeds[static_cast<std::size_t>(i)];

    Rng rng(spec.seed);
    const double tempo = rng.uniform(params.tempo_lo, params.tempo_hi);
    synth::MediaClip clip = synth::generate_clip(spec, tempo, params.base_seconds);

    ClipRecord rec;
    rec.id = detail::clip_id(identity, content, emotion);
    rec.factors = spec;
    rec.tempo = tempo;
    rec.n_frames = static_cast<int>(clip.frames.size());
    rec.frames_rel = rec.id + "/frames.bin";
    rec.audio_rel = rec.id + "/audio.bin";
    fs::create_directories(out_dir / rec.id);
    io::write_frames_blob(out_dir / rec.frames_rel, clip.frames);
    io::write_audio_blob(out_dir / rec.audio_rel, clip.audio);
    rec.frames_checksum = io::fnv1a64_file(out_dir / rec.frames_rel);
    rec.audio_checksum = io::fnv1a64_file(out_dir / rec.audio_rel);
    records[static_cast<std::size_t>(i)] = std::move(rec);
  });

  write_manifest(records, out_dir / "manifest.json", params);
  return Corpus::load(out_dir / "manifest.json", /*verify=*/false);
}

// Deterministic hash split; salt distinguishes independent splits.
inline bool clip_held_out(const std::string& clip_id, double fraction,
                          std::uint64_t salt = 0) {
  const std::uint64_t h = io::fnv1a64(
      reinterpret_cast<const unsigned char*>(clip_id.data()), clip_id.size(),
      0xcbf29ce484222325ULL ^ splitmix64(salt));
  return static_cast<double>(h % 100000) < fraction * 100000.0;
}

}  // namespace cdrl
