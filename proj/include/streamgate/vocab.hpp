#pragma once

#include <optional>
#include <string_view>

// Token id space shared by the embedding table and the LM head: a closed text
// vocabulary of 64 symbols followed by the structural markers.

namespace streamgate::vocab {

inline constexpr int kTextSize = 64;

// Reserved text symbols.
inline constexpr int kInstrAlert = 0;
inline constexpr int kInstrNarrate = 1;
inline constexpr int kQueryWhich = 2;
inline constexpr int kQueryFirst = 3;
inline constexpr int kClassNameBase = 4;  // 4..11 name the event classes
inline constexpr int kMaxClasses = 8;
inline constexpr int kCaptionBase = 12;   // 12..63 free caption symbols

enum class Marker : int {
  vision_bos = kTextSize,
  vision_eos,
  audio_bos,
  audio_eos,
  query_bos,
  query_eos,
  im_end,       // terminal marker of a response
  endoftext,    // continuation marker: response unfinished within budget
};

inline constexpr int kMarkerCount = 8;
inline constexpr int kTotalSize = kTextSize + kMarkerCount;

constexpr int id(Marker m) { return static_cast<int>(m); }
constexpr bool is_text(int tok) { return tok >= 0 && tok < kTextSize; }
constexpr bool is_marker(int tok) { return tok >= kTextSize && tok < kTotalSize; }

std::string_view marker_name(Marker m);
std::optional<Marker> marker_from_name(std::string_view name);

}  // namespace streamgate::vocab
