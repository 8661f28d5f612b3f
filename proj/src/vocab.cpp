#include "streamgate/vocab.hpp"

#include <array>
#include <utility>

namespace streamgate::vocab {
namespace {

constexpr std::array<std::pair<Marker, std::string_view>, kMarkerCount> kNames{{
    {Marker::vision_bos, "vision_bos"},
    {Marker::vision_eos, "vision_eos"},
    {Marker::audio_bos, "audio_bos"},
    {Marker::audio_eos, "audio_eos"},
    {Marker::query_bos, "query_bos"},
    {Marker::query_eos, "query_eos"},
    {Marker::im_end, "im_end"},
    {Marker::endoftext, "endoftext"},
}};

}  // namespace

std::string_view marker_name(Marker m) {
  for (const auto& [mk, name] : kNames)
    if (mk == m) return name;
  return "unknown";
}

std::optional<Marker> marker_from_name(std::string_view name) {
  for (const auto& [mk, n] : kNames)
    if (n == name) return mk;
  return std::nullopt;
}

}  // namespace streamgate::vocab
