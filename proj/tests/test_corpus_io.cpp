#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "cdrl/corpus.hpp"
#include "cdrl/io.hpp"
#include "cdrl/synth.hpp"

using namespace cdrl;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("frame blob round trip preserves header and pixels", "[io]") {
  const fs::path dir = fresh_dir("cdrl_io_frames");
  std::vector<synth::ImageFrame> frames;
  for (int p = 0; p < 3; ++p)
    frames.push_back(synth::render_frame(p, Emotion::angry, 1, p));
  io::write_frames_blob(dir / "frames.bin", frames);
  const auto loaded = io::read_frames_blob(dir / "frames.bin");
  REQUIRE(loaded.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    REQUIRE(loaded[i].h == 64);
    REQUIRE(loaded[i].w == 64);
    REQUIRE(loaded[i].c == 3);
    REQUIRE(loaded[i].pixels == frames[i].pixels);
  }
  fs::remove_all(dir);
}

TEST_CASE("audio blob round trip preserves rate and float32 samples", "[io]") {
  const fs::path dir = fresh_dir("cdrl_io_audio");
  const synth::Waveform w = synth::synth_audio({3, 4}, Emotion::sad, 1.2);
  io::write_audio_blob(dir / "audio.bin", w);
  const synth::Waveform r = io::read_audio_blob(dir / "audio.bin");
  REQUIRE(r.sample_rate == w.sample_rate);
  REQUIRE(r.samples.size() == w.samples.size());
  for (std::size_t i = 0; i < w.samples.size(); ++i)
    REQUIRE(r.samples[i] == static_cast<double>(static_cast<float>(w.samples[i])));
  fs::remove_all(dir);
}

TEST_CASE("empty clip list still produces a valid manifest", "[io][corpus]") {
  const fs::path dir = fresh_dir("cdrl_io_empty");
  write_manifest({}, dir / "manifest.json", CorpusParams{});
  const Corpus corpus = Corpus::load(dir / "manifest.json");
  REQUIRE(corpus.clips().empty());
  fs::remove_all(dir);
}

TEST_CASE("corpus round trip reproduces factors and checksums", "[io][corpus]") {
  const fs::path dir = fresh_dir("cdrl_io_corpus");
  CorpusParams params;
  params.utterances = 3;
  params.identities = 1;
  params.seed = 5;
  const Corpus built = build_corpus(params, dir);
  const Corpus loaded = Corpus::load(dir / "manifest.json");
  REQUIRE(loaded.clips().size() == built.clips().size());
  REQUIRE(loaded.clips().size() == 21);
  for (std::size_t i = 0; i < built.clips().size(); ++i) {
    const ClipRecord& a = built.clips()[i];
    const ClipRecord& b = loaded.clips()[i];
    REQUIRE(a.id == b.id);
    REQUIRE(a.factors.content_id == b.factors.content_id);
    REQUIRE(a.factors.phonemes == b.factors.phonemes);
    REQUIRE(a.factors.emotion == b.factors.emotion);
    REQUIRE(a.factors.identity == b.factors.identity);
    REQUIRE(a.factors.fps == b.factors.fps);
    REQUIRE(a.factors.seed == b.factors.seed);
    REQUIRE(a.tempo == b.tempo);
    REQUIRE(a.frames_checksum == b.frames_checksum);
    REQUIRE(a.audio_checksum == b.audio_checksum);
  }
  // frames decode identically to a fresh render
  const auto frames = loaded.load_frames(0);
  REQUIRE(frames.size() == static_cast<std::size_t>(loaded.clip(0).n_frames));
  fs::remove_all(dir);
}

TEST_CASE("corrupted frame blob raises a checksum error naming the file",
          "[io][corpus]") {
  const fs::path dir = fresh_dir("cdrl_io_corrupt");
  CorpusParams params;
  params.utterances = 1;
  params.identities = 1;
  params.seed = 9;
  build_corpus(params, dir);
  // flip one byte in the first clip's pixel file
  const Corpus peek = Corpus::load(dir / "manifest.json");
  const fs::path victim = dir / peek.clips()[0].frames_rel;
  {
    std::fstream f(victim, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(64);
    char c;
    f.seekg(64);
    f.get(c);
    f.seekp(64);
    f.put(static_cast<char>(c ^ 0x5a));
  }
  try {
    Corpus::load(dir / "manifest.json");
    FAIL("expected checksum_error");
  } catch (const checksum_error& e) {
    REQUIRE(std::string(e.what()).find(victim.filename().string()) !=
            std::string::npos);
    REQUIRE(e.path == victim.string());
  }
  fs::remove_all(dir);
}

TEST_CASE("missing blob raises missing_file_error", "[io][corpus]") {
  const fs::path dir = fresh_dir("cdrl_io_missing");
  CorpusParams params;
  params.utterances = 1;
  params.identities = 1;
  params.seed = 13;
  build_corpus(params, dir);
  const Corpus peek = Corpus::load(dir / "manifest.json");
  fs::remove(dir / peek.clips()[0].audio_rel);
  REQUIRE_THROWS_AS(Corpus::load(dir / "manifest.json"), missing_file_error);
  fs::remove_all(dir);
}

TEST_CASE("malformed manifest raises manifest_error", "[io][corpus]") {
  const fs::path dir = fresh_dir("cdrl_io_malformed");
  {
    std::ofstream f(dir / "manifest.json");
    f << "{ not json";
  }
  REQUIRE_THROWS_AS(Corpus::load(dir / "manifest.json"), manifest_error);
  {
    std::ofstream f(dir / "manifest.json");
    f << R"({"format":"cdrl-corpus","version":1,"clips":[{"id":"x"}]})";
  }
  REQUIRE_THROWS_AS(Corpus::load(dir / "manifest.json"), manifest_error);
  fs::remove_all(dir);
}

TEST_CASE("corpus covers every content x emotion cell", "[corpus]") {
  const fs::path dir = fresh_dir("cdrl_io_balance");
  CorpusParams params;
  params.utterances = 2;
  params.identities = 2;
  params.seed = 17;
  const Corpus corpus = build_corpus(params, dir);
  for (int id = 0; id < params.identities; ++id)
    for (int u = 0; u < params.utterances; ++u)
      for (int e = 0; e < kEmotionCount; ++e)
        REQUIRE(corpus.find(id, u, static_cast<Emotion>(e)) >= 0);
  fs::remove_all(dir);
}

TEST_CASE("corpus generation is deterministic and parallel-safe", "[corpus]") {
  const fs::path d1 = fresh_dir("cdrl_io_det1");
  const fs::path d2 = fresh_dir("cdrl_io_det2");
  CorpusParams params;
  params.utterances = 2;
  params.identities = 1;
  params.seed = 23;
  build_corpus(params, d1, /*jobs=*/1);
  build_corpus(params, d2, /*jobs=*/3);
  const Corpus a = Corpus::load(d1 / "manifest.json");
  const Corpus b = Corpus::load(d2 / "manifest.json");
  REQUIRE(a.clips().size() == b.clips().size());
  for (std::size_t i = 0; i < a.clips().size(); ++i) {
    REQUIRE(a.clips()[i].id == b.clips()[i].id);
    REQUIRE(a.clips()[i].frames_checksum == b.clips()[i].frames_checksum);
    REQUIRE(a.clips()[i].audio_checksum == b.clips()[i].audio_checksum);
    REQUIRE(a.clips()[i].tempo == b.clips()[i].tempo);
  }
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("checkpoint container round-trips named tensors", "[io]") {
  const fs::path dir = fresh_dir("cdrl_io_ckpt");
  Rng rng(31);
  io::NamedTensors ckpt;
  ckpt.items.emplace_back("att/wq", Tensor::randn({4, 4}, rng));
  ckpt.items.emplace_back("m/weight", Tensor::randn({8, 3}, rng));
  ckpt.items.emplace_back("prior/happy", Tensor::randn({16}, rng));
  ckpt.save(dir / "model.ckpt");
  const io::NamedTensors loaded = io::NamedTensors::load(dir / "model.ckpt");
  REQUIRE(loaded.items.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    REQUIRE(loaded.items[i].first == ckpt.items[i].first);
    REQUIRE(loaded.items[i].second.shape() == ckpt.items[i].second.shape());
    for (std::size_t j = 0; j < loaded.items[i].second.numel(); ++j)
      REQUIRE(loaded.items[i].second[j] ==
              static_cast<double>(static_cast<float>(ckpt.items[i].second[j])));
  }
  REQUIRE(loaded.find("m/weight") != nullptr);
  REQUIRE(loaded.find("nope") == nullptr);
  fs::remove_all(dir);
}
