#pragma once

#include <span>
#include <vector>

#include "streamgate/stream_sim.hpp"
#include "streamgate/tensor.hpp"
#include "streamgate/vocab.hpp"

namespace streamgate {

enum class Modality { marker, video, audio, text, query };

struct Token {
  Modality modality = Modality::marker;
  int id = -1;                  // vocabulary id for marker/text/query tokens
  std::vector<double> feature;  // video or audio feature
  int offset = 0;               // video: grid cell (h·W + w); audio: 40 ms tick; text: index in segment
};

// One second of stream: vision_bos audio_bos [video] [audio] audio_eos vision_eos.
struct MultimodalUnit {
  int unit_index = 0;
  int grid_h = 0;
  int grid_w = 0;
  int n_video = 0;
  int n_audio = 0;
  std::vector<Token> tokens;

  std::size_t size() const { return tokens.size(); }
};

// Fuses 1–2 frame grids (cells × d_video, element-wise mean) and wraps them
// with 1–25 audio vectors in the unit layout. Throws DataError on empty
// modalities, more than 2 frames / 25 audio vectors, or shape mismatches.
MultimodalUnit build_unit(int second_index, std::span<const Tensor> frames, const Tensor& audio, int grid_w);
MultimodalUnit build_unit(const StreamSample& sample, int second);

enum class SegmentKind { instruction, unit, query, response };

struct SequenceSegment {
  SegmentKind kind = SegmentKind::unit;
  std::vector<Token> tokens;
  int timestamp = -1;  // second the segment belongs to; -1 for the instruction
  int grid_w = 0;      // unit segments only
};

// Recovers the unit view of a unit segment. Throws DataError for other kinds.
MultimodalUnit as_unit(const SequenceSegment& segment);

std::vector<Token> make_text_tokens(std::span<const int> ids);
// query_bos, query-tagged symbols, query_eos.
std::vector<Token> make_query_tokens(std::span<const int> ids);
// Response symbols followed by the terminal im_end marker.
std::vector<Token> make_response_tokens(std::span<const int> ids);
Token make_marker(vocab::Marker m);

// Streaming layout of a sample: instruction (proactive tasks), units in time
// order, with queries/responses inserted after the unit they belong to.
std::vector<SequenceSegment> build_stream_sequence(const StreamSample& sample);

}  // namespace streamgate
