#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "cdrl/error.hpp"
#include "cdrl/synth.hpp"
#include "cdrl/tensor.hpp"

// Binary interchange. All integers and floats are little-endian; frame blobs
// carry an `H W C N` u32 header followed by row-major float32 frames, audio
// blobs a u32 sample rate followed by float32 samples.
namespace cdrl::io {

inline std::uint64_t fnv1a64(const unsigned char* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw missing_file_error(p.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  std::vector<unsigned char> buf(1 << 16);
  while (f) {
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    h = fnv1a64(buf.data(), static_cast<std::size_t>(f.gcount()), h);
  }
  return h;
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

class Reader {
 public:
  Reader(const std::filesystem::path& p) : path_(p.string()), f_(p, std::ios::binary) {
    if (!f_) throw missing_file_error(path_);
  }
  std::uint32_t u32() {
    unsigned char b[4];
    read(b, 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
  float f32() { return std::bit_cast<float>(u32()); }
  void read(void* dst, std::size_t n) {
    f_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(f_.gcount()) != n)
      throw io_error("truncated file: " + path_);
  }
  void f32_block(float* dst, std::size_t count) {
    read(dst, count * 4);
    if constexpr (std::endian::native != std::endian::little) {
      for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t u = std::bit_cast<std::uint32_t>(dst[i]);
        u = ((u & 0xff) << 24) | ((u & 0xff00) << 8) | ((u >> 8) & 0xff00) | (u >> 24);
        dst[i] = std::bit_cast<float>(u);
      }
    }
  }
  bool at_end() {
    f_.peek();
    return f_.eof();
  }

 private:
  std::string path_;
  std::ifstream f_;
};

inline void write_file(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw io_error("cannot write: " + p.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw io_error("write failed: " + p.string());
}

}  // namespace detail

inline void write_frames_blob(const std::filesystem::path& p,
                              const std::vector<synth::ImageFrame>& frames) {
  std::string out;
  const int h = frames.empty() ? synth::kImageH : frames[0].h;
  const int w = frames.empty() ? synth::kImageW : frames[0].w;
  const int c = frames.empty() ? synth::kImageC : frames[0].c;
  detail::put_u32(out, static_cast<std::uint32_t>(h));
  detail::put_u32(out, static_cast<std::uint32_t>(w));
  detail::put_u32(out, static_cast<std::uint32_t>(c));
  detail::put_u32(out, static_cast<std::uint32_t>(frames.size()));
  for (const auto& fr : frames)
    for (float v : fr.pixels) detail::put_f32(out, v);
  detail::write_file(p, out);
}

inline std::vector<synth::ImageFrame> read_frames_blob(const std::filesystem::path& p) {
  detail::Reader r(p);
  const int h = static_cast<int>(r.u32());
  const int w = static_cast<int>(r.u32());
  const int c = static_cast<int>(r.u32());
  const int n = static_cast<int>(r.u32());
  std::vector<synth::ImageFrame> frames;
  frames.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    synth::ImageFrame fr;
    fr.h = h;
    fr.w = w;
    fr.c = c;
    fr.pixels.resize(static_cast<std::size_t>(h) * w * c);
    r.f32_block(fr.pixels.data(), fr.pixels.size());
    frames.push_back(std::move(fr));
  }
  return frames;
}

inline void write_audio_blob(const std::filesystem::path& p, const synth::Waveform& w) {
  std::string out;
  detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  for (double s : w.samples) detail::put_f32(out, static_cast<float>(s));
  detail::write_file(p, out);
}

inline synth::Waveform read_audio_blob(const std::filesystem::path& p) {
  detail::Reader r(p);
  synth::Waveform w;
  w.sample_rate = static_cast<int>(r.u32());
  std::vector<float> buf;
  while (!r.at_end()) buf.push_back(r.f32());
  w.samples.assign(buf.begin(), buf.end());
  return w;
}

// Named-tensor checkpoint container: u32 count, then per tensor a name,
// dtype tag (0 = f32), rank, dims and a float32 payload.
struct NamedTensors {
  std::vector<std::pair<std::string, Tensor>> items;

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : items)
      if (n == name) return &t;
    return nullptr;
  }

  void save(const std::filesystem::path& p) const {
    std::string out = "CDRLCKPT";
    detail::put_u32(out, 1);
    detail::put_u32(out, static_cast<std::uint32_t>(items.size()));
    for (const auto& [name, t] : items) {
      detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
      out += name;
      detail::put_u32(out, 0);
      detail::put_u32(out, static_cast<std::uint32_t>(t.ndim()));
      for (int d : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
      for (std::size_t i = 0; i < t.numel(); ++i)
        detail::put_f32(out, static_cast<float>(t[i]));
    }
    detail::write_file(p, out);
  }

  static NamedTensors load(const std::filesystem::path& p) {
    detail::Reader r(p);
    char magic[8];
    r.read(magic, 8);
    if (std::memcmp(magic, "CDRLCKPT", 8) != 0)
      throw io_error("not a checkpoint file: " + p.string());
    if (r.u32() != 1) throw io_error("unsupported checkpoint version: " + p.string());
    const std::uint32_t count = r.u32();
    NamedTensors out;
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::uint32_t name_len = r.u32();
      std::string name(name_len, '\0');
      r.read(name.data(), name_len);
      if (r.u32() != 0) throw io_error("unsupported dtype in: " + p.string());
      const std::uint32_t rank = r.u32();
      std::vector<int> shape;
      for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<int>(r.u32()));
      Tensor t(shape);
      std::vector<float> buf(t.numel());
      r.f32_block(buf.data(), buf.size());
      for (std::size_t j = 0; j < t.numel(); ++j) t[j] = buf[j];
      out.items.emplace_back(std::move(name), std::move(t));
    }
    return out;
  }
};

}  // namespace cdrl::io
