#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "streamgate/tensor.hpp"
#include "streamgate/unit_builder.hpp"

// Chunked time-aligned 3D rotary positions.
//
// Within a unit: both bos markers sit at the base id, the fused video grid
// shares temporal id base+1 with (h, w) from its grid cell, audio tick k gets
// base+1+k, and the two eos markers take one past the largest temporal id.
// The next unit's base is the largest component assigned so far, so the
// global timeline only ever extends.

namespace streamgate {

struct PositionTriple {
  std::int64_t t = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;

  std::int64_t max_component() const;
  friend bool operator==(const PositionTriple&, const PositionTriple&) = default;
};

struct PositionAssignment {
  std::vector<PositionTriple> positions;  // one per unit token
  std::int64_t base_in = 0;
  std::int64_t base_out = 0;
};

// Throws DataError if the unit does not follow the marker layout.
PositionAssignment assign_positions(const MultimodalUnit& unit, std::int64_t base);

// Channel-pair counts routed to the temporal, height and width components.
struct RopePartition {
  int n_t = 0;
  int n_h = 0;
  int n_w = 0;

  int pairs() const { return n_t + n_h + n_w; }
  // Split of head_dim/2 pairs in proportion 2:1:1.
  static RopePartition proportional(int head_dim);
  friend bool operator==(const RopePartition&, const RopePartition&) = default;
};

std::vector<double> rotary_angles(const PositionTriple& pos, int head_dim, const RopePartition& partition,
                                  double theta_base);

// cos/sin tables (n × head_dim/2) for a run of positions.
void rotary_tables(std::span<const PositionTriple> positions, int head_dim, const RopePartition& partition,
                   double theta_base, Tensor& cos_out, Tensor& sin_out);

// Running position state of one stream session.
class PositionCursor {
 public:
  std::optional<std::int64_t> max() const { return max_; }
  std::int64_t next_unit_base() const { return max_.value_or(0); }

  PositionAssignment place_unit(const MultimodalUnit& unit);
  // Text-like tokens (instruction, query, response, continuation markers)
  // advance the temporal id by one each; h = w = 0.
  std::vector<PositionTriple> place_text(std::size_t count);

 private:
  std::optional<std::int64_t> max_;
};

}  // namespace streamgate
