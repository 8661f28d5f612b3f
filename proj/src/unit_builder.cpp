#include "streamgate/unit_builder.hpp"

#include <string>

#include "streamgate/errors.hpp"

namespace streamgate {

Token make_marker(vocab::Marker m) { return Token{Modality::marker, vocab::id(m), {}, 0}; }

MultimodalUnit build_unit(int second_index, std::span<const Tensor> frames, const Tensor& audio, int grid_w) {
  if (frames.empty() || audio.rows() == 0) throw DataError("build_unit: empty modality");
  if (frames.size() > static_cast<std::size_t>(kFramesPerSecond))
    throw DataError("build_unit: at most 2 frames per unit");
  if (audio.rows() > static_cast<std::size_t>(kAudioPerSecond))
    throw DataError("build_unit: at most 25 audio vectors per unit");
  const Tensor& first = frames.front();
  if (grid_w <= 0 || first.rows() == 0 || first.rows() % static_cast<std::size_t>(grid_w) != 0)
    throw DataError("build_unit: frame grid does not match grid width");
  for (const Tensor& f : frames)
    if (!f.same_shape(first)) throw DataError("build_unit: frames have mismatched grid shapes");

  MultimodalUnit u;
  u.unit_index = second_index;
  u.grid_w = grid_w;
  u.grid_h = static_cast<int>(first.rows()) / grid_w;
  u.n_video = static_cast<int>(first.rows());
  u.n_audio = static_cast<int>(audio.rows());
  u.tokens.reserve(static_cast<std::size_t>(4 + u.n_video + u.n_audio));
  u.tokens.push_back(make_marker(vocab::Marker::vision_bos));
  u.tokens.push_back(make_marker(vocab::Marker::audio_bos));
  const double inv = 1.0 / static_cast<double>(frames.size());
  for (std::size_t cell = 0; cell < first.rows(); ++cell) {
    Token t{Modality::video, -1, std::vector<double>(first.cols(), 0.0), static_cast<int>(cell)};
    for (const Tensor& f : frames)
      for (std::size_t c = 0; c < f.cols(); ++c) t.feature[c] += f(cell, c);
    for (double& v : t.feature) v *= inv;
    u.tokens.push_back(std::move(t));
  }
  for (std::size_t k = 0; k < audio.rows(); ++k) {
    auto row = audio.row(k);
    u.tokens.push_back(Token{Modality::audio, -1, std::vector<double>(row.begin(), row.end()), static_cast<int>(k)});
  }
  u.tokens.push_back(make_marker(vocab::Marker::audio_eos));
  u.tokens.push_back(make_marker(vocab::Marker::vision_eos));
  return u;
}

MultimodalUnit build_unit(const StreamSample& sample, int second) {
  if (second < 0 || second >= sample.duration_s) throw DataError("build_unit: second out of range");
  const SecondFeatures& sec = sample.seconds[static_cast<std::size_t>(second)];
  return build_unit(second, sec.frames, sec.audio, sample.dims.grid_w);
}

std::vector<Token> make_text_tokens(std::span<const int> ids) {
  std::vector<Token> out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!vocab::is_text(ids[i])) throw DataError("text token out of the closed vocabulary");
    out.push_back(Token{Modality::text, ids[i], {}, static_cast<int>(i)});
  }
  return out;
}

std::vector<Token> make_query_tokens(std::span<const int> ids) {
  std::vector<Token> out;
  out.push_back(make_marker(vocab::Marker::query_bos));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!vocab::is_text(ids[i])) throw DataError("query token out of the closed vocabulary");
    out.push_back(Token{Modality::query, ids[i], {}, static_cast<int>(i)});
  }
  out.push_back(make_marker(vocab::Marker::query_eos));
  return out;
}

std::vector<Token> make_response_tokens(std::span<const int> ids) {
  std::vector<Token> out = make_text_tokens(ids);
  out.push_back(make_marker(vocab::Marker::im_end));
  return out;
}

MultimodalUnit as_unit(const SequenceSegment& segment) {
  if (segment.kind != SegmentKind::unit || segment.grid_w <= 0) throw DataError("as_unit: not a unit segment");
  MultimodalUnit u;
  u.unit_index = segment.timestamp;
  u.grid_w = segment.grid_w;
  u.tokens = segment.tokens;
  for (const Token& t : segment.tokens) {
    if (t.modality == Modality::video) ++u.n_video;
    if (t.modality == Modality::audio) ++u.n_audio;
  }
  u.grid_h = u.n_video / segment.grid_w;
  return u;
}

std::vector<SequenceSegment> build_stream_sequence(const StreamSample& sample) {
  const TaskAnnotations& a = sample.annotations;
  std::vector<SequenceSegment> out;
  if (sample.task != TaskKind::reactive_qa && !a.instruction_tokens.empty())
    out.push_back({SegmentKind::instruction, make_text_tokens(a.instruction_tokens), -1});
  if (sample.task == TaskKind::reactive_qa) {
    if (!a.query_time_s) throw DataError("qa sample without query time");
    if (*a.query_time_s < 0 || *a.query_time_s >= sample.duration_s)
      throw DataError("query time " + std::to_string(*a.query_time_s) + " beyond stream duration");
  }
  std::size_t next_boundary = 0;
  for (int t = 0; t < sample.duration_s; ++t) {
    out.push_back({SegmentKind::unit, build_unit(sample, t).tokens, t, sample.dims.grid_w});
    switch (sample.task) {
      case TaskKind::reactive_qa:
        if (t == *a.query_time_s) {
          out.push_back({SegmentKind::query, make_query_tokens(a.query_tokens), t});
          out.push_back({SegmentKind::response, make_response_tokens(a.answer_tokens), t});
        }
        break;
      case TaskKind::alert:
        for (const SecondWindow& w : a.event_windows)
          if (w.contains(t)) {
            out.push_back({SegmentKind::response, make_response_tokens(a.response_tokens), t});
            break;
          }
        break;
      case TaskKind::narration:
        if (next_boundary < a.segment_boundaries.size() && a.segment_boundaries[next_boundary] == t) {
          ++next_boundary;
          const std::size_t seg = next_boundary;  // regime that starts at t
          const std::vector<int> caption =
              seg < a.segment_captions.size() ? a.segment_captions[seg] : std::vector<int>{};
          out.push_back({SegmentKind::response, make_response_tokens(caption), t});
        }
        break;
    }
  }
  return out;
}

}  // namespace streamgate
