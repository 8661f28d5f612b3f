#include "streamgate/tmrope.hpp"

#include <algorithm>
#include <cmath>

#include "streamgate/errors.hpp"

namespace streamgate {

std::int64_t PositionTriple::max_component() const { return std::max({t, h, w}); }

PositionAssignment assign_positions(const MultimodalUnit& unit, std::int64_t base) {
  using vocab::Marker;
  if (base < 0) throw DataError("assign_positions: negative base");
  const std::size_t expect = static_cast<std::size_t>(4 + unit.n_video + unit.n_audio);
  const auto& tk = unit.tokens;
  auto is_marker = [&](std::size_t i, Marker m) { return tk[i].modality == Modality::marker && tk[i].id == vocab::id(m); };
  if (unit.n_video <= 0 || unit.n_audio <= 0 || tk.size() != expect || unit.grid_w <= 0 ||
      unit.grid_h * unit.grid_w != unit.n_video || !is_marker(0, Marker::vision_bos) ||
      !is_marker(1, Marker::audio_bos) || !is_marker(expect - 2, Marker::audio_eos) ||
      !is_marker(expect - 1, Marker::vision_eos))
    throw DataError("assign_positions: malformed unit layout");

  PositionAssignment out;
  out.base_in = base;
  out.positions.resize(tk.size());
  out.positions[0] = {base, 0, 0};
  out.positions[1] = {base, 0, 0};
  std::int64_t max_t = base;
  for (int v = 0; v < unit.n_video; ++v) {
    const Token& tok = tk[static_cast<std::size_t>(2 + v)];
    if (tok.modality != Modality::video) throw DataError("assign_positions: expected a video token");
    out.positions[static_cast<std::size_t>(2 + v)] = {base + 1, tok.offset / unit.grid_w, tok.offset % unit.grid_w};
    max_t = std::max(max_t, base + 1);
  }
  for (int a = 0; a < unit.n_audio; ++a) {
    const std::size_t i = static_cast<std::size_t>(2 + unit.n_video + a);
    if (tk[i].modality != Modality::audio) throw DataError("assign_positions: expected an audio token");
    out.positions[i] = {base + 1 + a, 0, 0};
    max_t = std::max(max_t, base + 1 + a);
  }
  out.positions[expect - 2] = {max_t + 1, 0, 0};
  out.positions[expect - 1] = {max_t + 1, 0, 0};
  out.base_out = base;
  for (const PositionTriple& p : out.positions) out.base_out = std::max(out.base_out, p.max_component());
  return out;
}

RopePartition RopePartition::proportional(int head_dim) {
  const int pairs = head_dim / 2;
  const int quarter = pairs / 4;
  return {pairs - 2 * quarter, quarter, quarter};
}

std::vector<double> rotary_angles(const PositionTriple& pos, int head_dim, const RopePartition& partition,
                                  double theta_base) {
  if (head_dim <= 0 || head_dim % 2 != 0) throw ConfigError("rotary_angles: head_dim must be even");
  if (partition.n_t < 0 || partition.n_h < 0 || partition.n_w < 0 || partition.pairs() != head_dim / 2)
    throw ConfigError("rotary_angles: partition must sum to head_dim/2");
  std::vector<double> out(static_cast<std::size_t>(head_dim / 2));
  std::size_t slot = 0;
  auto fill = [&](int count, std::int64_t component) {
    for (int j = 0; j < count; ++j)
      out[slot++] = static_cast<double>(component) * std::pow(theta_base, -2.0 * j / static_cast<double>(head_dim));
  };
  fill(partition.n_t, pos.t);
  fill(partition.n_h, pos.h);
  fill(partition.n_w, pos.w);
  return out;
}

void rotary_tables(std::span<const PositionTriple> positions, int head_dim, const RopePartition& partition,
                   double theta_base, Tensor& cos_out, Tensor& sin_out) {
  const std::size_t half = static_cast<std::size_t>(head_dim / 2);
  cos_out = Tensor(positions.size(), half);
  sin_out = Tensor(positions.size(), half);
  for (std::size_t r = 0; r < positions.size(); ++r) {
    const std::vector<double> ang = rotary_angles(positions[r], head_dim, partition, theta_base);
    for (std::size_t j = 0; j < half; ++j) {
      cos_out(r, j) = std::cos(ang[j]);
      sin_out(r, j) = std::sin(ang[j]);
    }
  }
}

PositionAssignment PositionCursor::place_unit(const MultimodalUnit& unit) {
  PositionAssignment pa = assign_positions(unit, next_unit_base());
  max_ = pa.base_out;
  return pa;
}

std::vector<PositionTriple> PositionCursor::place_text(std::size_t count) {
  std::vector<PositionTriple> out;
  out.reserve(count);
  std::int64_t next = max_ ? *max_ + 1 : 0;
  for (std::size_t i = 0; i < count; ++i) out.push_back({next++, 0, 0});
  if (count > 0) max_ = next - 1;
  return out;
}

}  // namespace streamgate
