#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "streamgate/autodiff.hpp"
#include "streamgate/speak_head.hpp"
#include "streamgate/tmrope.hpp"
#include "streamgate/unit_builder.hpp"
#include "streamgate/vocab.hpp"

// Tiny pre-norm causal transformer over unit streams: RMSNorm, multi-head
// attention with chunked 3D rotary phases, GELU feed-forward. Exposes every
// layer's hidden states, keeps a persistent key/value cache for incremental
// encoding and records onto a Tape for training.

namespace streamgate {

struct ModelConfig {
  int d_model = 64;
  int n_layers = 4;
  int n_heads = 4;
  int k_layers = 4;  // speak head reads the last K layers
  int d_ff = 128;
  int speak_hidden = 64;
  int d_video = 8;
  int d_audio = 8;
  int vocab_size = vocab::kTotalSize;
  double theta_base = 10000.0;
  RopePartition partition{};  // all-zero means RopePartition::proportional(head_dim)

  int head_dim() const { return n_heads > 0 ? d_model / n_heads : 0; }
  RopePartition rope_partition() const;
  // Throws ConfigError naming the violated constraint.
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerParams {
  Parameter attn_norm, wq, wk, wv, wo;
  Parameter ffn_norm, w1, b1, w2, b2;
};

enum class ParamGroup { embeddings, projections, layers, lm_head, speak_head };

struct ModelParams {
  ModelConfig config;
  Parameter token_embedding;  // vocab × d_model
  Parameter query_tag;        // 1 × d_model, added to spoken-query symbols
  Parameter video_proj, video_bias;
  Parameter audio_proj, audio_bias;
  std::vector<LayerParams> layers;
  Parameter final_norm;
  Parameter lm_head;  // d_model × vocab
  SpeakHeadParams speak;

  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::vector<Parameter*> group(ParamGroup g);
  void zero_grad();
  std::size_t parameter_count() const;
};

class KVCache {
 public:
  KVCache() = default;
  KVCache(int n_layers, int d_model);

  std::size_t length() const { return positions_.size(); }
  int n_layers() const { return static_cast<int>(keys_.size()); }
  const Tensor& keys(int layer) const { return keys_.at(static_cast<std::size_t>(layer)); }
  const Tensor& values(int layer) const { return values_.at(static_cast<std::size_t>(layer)); }
  const std::vector<PositionTriple>& positions() const { return positions_; }
  std::optional<std::int64_t> max_temporal() const;

  // Append-only growth: one call per layer for a token run, then the run's
  // positions once all layers are extended.
  void append(int layer, const Tensor& k, const Tensor& v);
  void append_positions(std::span<const PositionTriple> positions);

  void write(std::ostream& os) const;
  static KVCache read(std::istream& is);

  friend bool operator==(const KVCache&, const KVCache&) = default;

 private:
  std::vector<Tensor> keys_;
  std::vector<Tensor> values_;
  std::vector<PositionTriple> positions_;
};

// Flattened token run with its positions and the rows the heads read from.
struct PackedSequence {
  std::vector<Token> tokens;
  std::vector<PositionTriple> positions;
  std::vector<std::size_t> unit_eos_rows;  // one per unit segment, in order
  std::vector<int> unit_seconds;
  std::vector<std::size_t> lm_rows;        // row whose next-token logits predict lm_targets[i]
  std::vector<int> lm_targets;
};

// Places every segment on the cursor's timeline. Response segments are
// supervised (lm_rows/lm_targets) when `supervise_responses` is set.
PackedSequence pack_sequence(std::span<const SequenceSegment> segments, PositionCursor& cursor,
                             bool supervise_responses);

struct Encoded {
  std::vector<Var> layers;  // output of every transformer block, n × d_model
};

// Differentiable encoding. Parameters are bound as trainable leaves when the
// tape records and `params` is mutable. With a cache, attention also covers
// the cached prefix and the new keys/values are appended.
Encoded encode(Tape& tape, ModelParams& params, std::span<const Token> tokens,
               std::span<const PositionTriple> positions, KVCache* cache = nullptr);
Encoded encode(Tape& tape, const ModelParams& params, std::span<const Token> tokens,
               std::span<const PositionTriple> positions, KVCache* cache = nullptr);

// Final norm and LM head over the chosen rows of the last layer.
Var lm_logits(Tape& tape, ModelParams& params, Var last_hidden, std::span<const std::size_t> rows);
Var lm_logits(Tape& tape, const ModelParams& params, Var last_hidden, std::span<const std::size_t> rows);

// Speak-head logits at the chosen rows from the last K layers.
Var speak_logits_at(Tape& tape, ModelParams& params, const Encoded& enc, std::span<const std::size_t> rows);
Var speak_logits_at(Tape& tape, const ModelParams& params, const Encoded& enc, std::span<const std::size_t> rows);

// Inference-side (non-recording) entry points.
Tensor embed_unit(const MultimodalUnit& unit, const ModelParams& params);

struct StepOutput {
  std::vector<Tensor> layers;  // per-layer hiddens for the new tokens
  Tensor logits;               // n × vocab
};

// Encodes only the new tokens against the cache and extends it. Throws
// DataError if the new positions move the timeline backwards.
StepOutput forward_step(const ModelParams& params, std::span<const Token> tokens,
                        std::span<const PositionTriple> positions, KVCache& cache);
StepOutput forward_full(const ModelParams& params, std::span<const Token> tokens,
                        std::span<const PositionTriple> positions);

// Speak probability from the last-K layer rows of a step output.
double speak_prob_at(const ModelParams& params, const StepOutput& out, std::size_t row);

}  // namespace streamgate
