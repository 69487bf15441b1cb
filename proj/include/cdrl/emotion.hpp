#pragma once

#include <array>
#include <stdexcept>
#include <string>

namespace cdrl {

enum class Emotion {
  neutral = 0,
  angry,
  disgusted,
  fear,
  happy,
  sad,
  surprised,
};

inline constexpr int kEmotionCount = 7;

inline constexpr std::array<const char*, kEmotionCount> kEmotionNames = {
    "neutral", "angry", "disgusted", "fear", "happy", "sad", "surprised"};

inline const char* to_string(Emotion e) {
  return kEmotionNames[static_cast<std::size_t>(e)];
}

inline Emotion emotion_from_index(int i) {
  if (i < 0 || i >= kEmotionCount)
    throw std::invalid_argument("emotion index out of range: " + std::to_string(i));
  return static_cast<Emotion>(i);
}

inline Emotion emotion_from_string(const std::string& s) {
  for (int i = 0; i < kEmotionCount; ++i)
    if (s == kEmotionNames[static_cast<std::size_t>(i)]) return static_cast<Emotion>(i);
  throw std::invalid_argument("unknown emotion: " + s);
}

inline int index_of(Emotion e) { return static_cast<int>(e); }

}  // namespace cdrl
