#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "streamgate/backbone.hpp"
#include "streamgate/stream_sim.hpp"
#include "streamgate/tensor.hpp"

namespace streamgate::testing {

inline ModelConfig tiny_config() {
  ModelConfig c;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.k_layers = 2;
  c.d_ff = 12;
  c.speak_hidden = 6;
  c.d_video = 3;
  c.d_audio = 3;
  return c;
}

inline FeatureDims tiny_dims() {
  FeatureDims d;
  d.d_video = 3;
  d.d_audio = 3;
  return d;
}

inline Tensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(r, c);
  for (double& v : t.flat()) v = n(rng);
  return t;
}

inline std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

}  // namespace streamgate::testing

#include "streamgate/unit_builder.hpp"

namespace streamgate::testing {

// Streaming layout of a sample without response supervision.
inline PackedSequence pack(const StreamSample& s) {
  PositionCursor cursor;
  const auto segs = build_stream_sequence(s);
  return pack_sequence(segs, cursor, false);
}

inline StreamSample tiny_alert(int duration, std::uint64_t seed) {
  return generate_alert_stream(duration, 1, tiny_dims(), seed);
}

}  // namespace streamgate::testing
