#include "streamgate/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "streamgate/binary_io.hpp"
#include "streamgate/errors.hpp"

namespace streamgate {
namespace {

constexpr char kCacheMagic[9] = "SGKVCACH";
constexpr std::uint32_t kCacheVersion = 1;

Parameter gaussian(std::string name, std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, stddev);
  Tensor t(rows, cols);
  for (double& v : t.flat()) v = nd(rng);
  return Parameter(std::move(name), std::move(t));
}

Parameter constant(std::string name, std::size_t rows, std::size_t cols, double v) {
  return Parameter(std::move(name), Tensor(rows, cols, v));
}

// Binds parameters either as trainable leaves or as read-only aliases.
struct Binder {
  Tape& tape;
  bool trainable;
  Var operator()(const Parameter& p) const {
    return trainable ? tape.param(const_cast<Parameter&>(p)) : tape.alias(p.value);
  }
};

Var embed_impl(Tape& tape, const ModelParams& P, bool trainable, std::span<const Token> tokens) {
  const ModelConfig& cfg = P.config;
  const std::size_t n = tokens.size();
  if (n == 0) throw DataError("embed: empty token run");
  const Binder bind{tape, trainable && tape.recording()};
  const auto d = static_cast<std::size_t>(cfg.d_model);

  // Embedding: markers/text via the table, query symbols add the query tag,
  // video/audio features through their projections.
  std::vector<int> plain_ids, query_ids;
  std::vector<std::size_t> plain_rows, query_rows, video_rows, audio_rows;
  std::vector<double> vbuf, abuf;
  for (std::size_t i = 0; i < n; ++i) {
    const Token& t = tokens[i];
    switch (t.modality) {
      case Modality::marker:
        if (!vocab::is_marker(t.id)) throw DataError("encode: unknown marker symbol");
        plain_ids.push_back(t.id);
        plain_rows.push_back(i);
        break;
      case Modality::text:
        if (!vocab::is_text(t.id)) throw DataError("encode: text symbol out of vocabulary");
        plain_ids.push_back(t.id);
        plain_rows.push_back(i);
        break;
      case Modality::query:
        if (!vocab::is_text(t.id)) throw DataError("encode: query symbol out of vocabulary");
        query_ids.push_back(t.id);
        query_rows.push_back(i);
        break;
      case Modality::video:
        if (t.feature.size() != static_cast<std::size_t>(cfg.d_video)) throw DataError("encode: video feature width mismatch");
        vbuf.insert(vbuf.end(), t.feature.begin(), t.feature.end());
        video_rows.push_back(i);
        break;
      case Modality::audio:
        if (t.feature.size() != static_cast<std::size_t>(cfg.d_audio)) throw DataError("encode: audio feature width mismatch");
        abuf.insert(abuf.end(), t.feature.begin(), t.feature.end());
        audio_rows.push_back(i);
        break;
    }
  }
  std::vector<ad::RowPlacement> pieces;
  if (!plain_ids.empty()) pieces.push_back({ad::gather_rows(bind(P.token_embedding), plain_ids), plain_rows});
  if (!query_ids.empty())
    pieces.push_back({ad::add_row(ad::gather_rows(bind(P.token_embedding), query_ids), bind(P.query_tag)), query_rows});
  if (!video_rows.empty()) {
    Var f = tape.constant(Tensor(video_rows.size(), static_cast<std::size_t>(cfg.d_video), std::move(vbuf)));
    pieces.push_back({ad::add_row(ad::matmul(f, bind(P.video_proj)), bind(P.video_bias)), video_rows});
  }
  if (!audio_rows.empty()) {
    Var f = tape.constant(Tensor(audio_rows.size(), static_cast<std::size_t>(cfg.d_audio), std::move(abuf)));
    pieces.push_back({ad::add_row(ad::matmul(f, bind(P.audio_proj)), bind(P.audio_bias)), audio_rows});
  }
  return ad::scatter_rows(n, d, pieces);
}

Encoded encode_impl(Tape& tape, const ModelParams& P, bool trainable, std::span<const Token> tokens,
                    std::span<const PositionTriple> positions, KVCache* cache) {
  const ModelConfig& cfg = P.config;
  const std::size_t n = tokens.size();
  if (n == 0) throw DataError("encode: empty token run");
  if (positions.size() != n) throw DataError("encode: one position per token required");
  if (cache != nullptr) {
    if (cache->n_layers() != cfg.n_layers) throw DataError("encode: cache layer count does not match the model");
    if (auto mx = cache->max_temporal()) {
      for (const PositionTriple& p : positions)
        if (p.t < *mx) throw DataError("encode: position regression against the cache");
    }
  }
  const Binder bind{tape, trainable && tape.recording()};
  Var x = embed_impl(tape, P, trainable, tokens);

  Tensor cos, sin;
  rotary_tables(positions, cfg.head_dim(), cfg.rope_partition(), cfg.theta_base, cos, sin);
  const auto heads = static_cast<std::size_t>(cfg.n_heads);

  Encoded enc;
  for (std::size_t l = 0; l < P.layers.size(); ++l) {
    const LayerParams& L = P.layers[l];
    Var h = ad::rmsnorm(x, bind(L.attn_norm));
    Var q = ad::rope(ad::matmul(h, bind(L.wq)), cos, sin, heads);
    Var k = ad::rope(ad::matmul(h, bind(L.wk)), cos, sin, heads);
    Var v = ad::matmul(h, bind(L.wv));
    const Tensor* pk = cache != nullptr ? &cache->keys(static_cast<int>(l)) : nullptr;
    const Tensor* pv = cache != nullptr ? &cache->values(static_cast<int>(l)) : nullptr;
    Var a = ad::causal_attention(q, k, v, heads, pk, pv);
    x = ad::add(x, ad::matmul(a, bind(L.wo)));
    Var h2 = ad::rmsnorm(x, bind(L.ffn_norm));
    Var m = ad::gelu(ad::add_row(ad::matmul(h2, bind(L.w1)), bind(L.b1)));
    x = ad::add(x, ad::add_row(ad::matmul(m, bind(L.w2)), bind(L.b2)));
    enc.layers.push_back(x);
    if (cache != nullptr) cache->append(static_cast<int>(l), k.value(), v.value());
  }
  if (cache != nullptr) cache->append_positions(positions);
  return enc;
}

Var lm_logits_impl(Tape& tape, const ModelParams& P, bool trainable, Var last, std::span<const std::size_t> rows) {
  const Binder bind{tape, trainable && tape.recording()};
  Var sel = ad::select_rows(last, rows);
  return ad::matmul(ad::rmsnorm(sel, bind(P.final_norm)), bind(P.lm_head));
}

Var speak_impl(Tape& tape, const ModelParams& P, bool trainable, const Encoded& enc, std::span<const std::size_t> rows) {
  const auto k = static_cast<std::size_t>(P.config.k_layers);
  if (enc.layers.size() < k) throw ConfigError("speak head reads more layers than the model has");
  std::vector<Var> states;
  for (std::size_t i = enc.layers.size() - k; i < enc.layers.size(); ++i)
    states.push_back(ad::select_rows(enc.layers[i], rows));
  return speak_logits(tape, states, P.speak, trainable && tape.recording());
}

}  // namespace

RopePartition ModelConfig::rope_partition() const {
  if (partition.pairs() == 0) return RopePartition::proportional(head_dim());
  return partition;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (d_model <= 0 || n_layers <= 0 || n_heads <= 0) fail("d_model, n_layers and n_heads must be positive");
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (head_dim() % 2 != 0) fail("head_dim = d_model / n_heads must be even");
  if (k_layers < 1 || k_layers > n_layers) fail("k_layers must satisfy 1 <= K <= n_layers");
  if (d_ff <= 0 || speak_hidden <= 0) fail("d_ff and speak_hidden must be positive");
  if (d_video <= 0 || d_audio <= 0) fail("feature widths must be positive");
  if (vocab_size != vocab::kTotalSize) fail("vocab_size must equal the closed vocabulary plus markers");
  if (theta_base <= 1.0) fail("theta_base must exceed 1");
  const RopePartition rp = rope_partition();
  if (rp.n_t < 0 || rp.n_h < 0 || rp.n_w < 0 || rp.pairs() != head_dim() / 2)
    fail("rope partition must sum to head_dim / 2");
}

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto ff = static_cast<std::size_t>(config.d_ff);
  const auto sh = static_cast<std::size_t>(config.speak_hidden);
  const auto vsz = static_cast<std::size_t>(config.vocab_size);
  const double inv_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double resid = inv_d / std::sqrt(2.0 * config.n_layers);

  ModelParams p;
  p.config = config;
  p.token_embedding = gaussian("token_embedding", vsz, d, 1.0, rng);
  p.query_tag = gaussian("query_tag", 1, d, 1.0, rng);
  p.video_proj = gaussian("video_proj", static_cast<std::size_t>(config.d_video), d,
                          1.0 / std::sqrt(static_cast<double>(config.d_video)), rng);
  p.video_bias = constant("video_bias", 1, d, 0.0);
  p.audio_proj = gaussian("audio_proj", static_cast<std::size_t>(config.d_audio), d,
                          1.0 / std::sqrt(static_cast<double>(config.d_audio)), rng);
  p.audio_bias = constant("audio_bias", 1, d, 0.0);
  for (int l = 0; l < config.n_layers; ++l) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    LayerParams L;
    L.attn_norm = constant(pre + "attn_norm", 1, d, 1.0);
    L.wq = gaussian(pre + "wq", d, d, inv_d, rng);
    L.wk = gaussian(pre + "wk", d, d, inv_d, rng);
    L.wv = gaussian(pre + "wv", d, d, inv_d, rng);
    L.wo = gaussian(pre + "wo", d, d, resid, rng);
    L.ffn_norm = constant(pre + "ffn_norm", 1, d, 1.0);
    L.w1 = gaussian(pre + "w1", d, ff, inv_d, rng);
    L.b1 = constant(pre + "b1", 1, ff, 0.0);
    L.w2 = gaussian(pre + "w2", ff, d, 1.0 / std::sqrt(static_cast<double>(ff)) / std::sqrt(2.0 * config.n_layers), rng);
    L.b2 = constant(pre + "b2", 1, d, 0.0);
    p.layers.push_back(std::move(L));
  }
  p.final_norm = constant("final_norm", 1, d, 1.0);
  p.lm_head = gaussian("lm_head", d, vsz, inv_d, rng);
  p.speak.alpha = constant("speak.alpha", 1, static_cast<std::size_t>(config.k_layers), 0.0);
  p.speak.w1 = gaussian("speak.w1", d, sh, inv_d, rng);
  p.speak.b1 = constant("speak.b1", 1, sh, 0.0);
  p.speak.w2 = gaussian("speak.w2", sh, 1, 0.1 / std::sqrt(static_cast<double>(sh)), rng);
  p.speak.b2 = constant("speak.b2", 1, 1, 0.0);
  return p;
}

std::vector<Parameter*> ModelParams::group(ParamGroup g) {
  switch (g) {
    case ParamGroup::embeddings: return {&token_embedding, &query_tag};
    case ParamGroup::projections: return {&video_proj, &video_bias, &audio_proj, &audio_bias};
    case ParamGroup::layers: {
      std::vector<Parameter*> out;
      for (LayerParams& L : layers)
        for (Parameter* q : {&L.attn_norm, &L.wq, &L.wk, &L.wv, &L.wo, &L.ffn_norm, &L.w1, &L.b1, &L.w2, &L.b2})
          out.push_back(q);
      out.push_back(&final_norm);
      return out;
    }
    case ParamGroup::lm_head: return {&lm_head};
    case ParamGroup::speak_head: return {&speak.alpha, &speak.w1, &speak.b1, &speak.w2, &speak.b2};
  }
  return {};
}

std::vector<Parameter*> ModelParams::all() {
  std::vector<Parameter*> out;
  for (ParamGroup g : {ParamGroup::embeddings, ParamGroup::projections, ParamGroup::layers, ParamGroup::lm_head,
                       ParamGroup::speak_head}) {
    auto part = group(g);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

std::vector<const Parameter*> ModelParams::all() const {
  auto v = const_cast<ModelParams*>(this)->all();
  return {v.begin(), v.end()};
}

void ModelParams::zero_grad() {
  for (Parameter* p : all()) p->zero_grad();
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : all()) n += p->value.size();
  return n;
}

KVCache::KVCache(int n_layers, int d_model) {
  for (int l = 0; l < n_layers; ++l) {
    keys_.emplace_back(0, static_cast<std::size_t>(d_model));
    values_.emplace_back(0, static_cast<std::size_t>(d_model));
  }
}

void KVCache::append(int layer, const Tensor& k, const Tensor& v) {
  if (!k.same_shape(v)) throw DataError("KVCache::append: key/value shape mismatch");
  keys_.at(static_cast<std::size_t>(layer)).append_rows(k);
  values_.at(static_cast<std::size_t>(layer)).append_rows(v);
}

void KVCache::append_positions(std::span<const PositionTriple> positions) {
  positions_.insert(positions_.end(), positions.begin(), positions.end());
  for (const Tensor& k : keys_)
    if (k.rows() != positions_.size()) throw DataError("KVCache: layer lengths diverged from the position log");
}

std::optional<std::int64_t> KVCache::max_temporal() const {
  if (positions_.empty()) return std::nullopt;
  std::int64_t m = positions_.front().t;
  for (const PositionTriple& p : positions_) m = std::max(m, p.t);
  return m;
}

void KVCache::write(std::ostream& os) const {
  binio::put_magic(os, kCacheMagic);
  binio::put<std::uint32_t>(os, kCacheVersion);
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(keys_.size()));
  binio::put<std::uint64_t>(os, keys_.empty() ? 0 : keys_.front().cols());
  binio::put<std::uint64_t>(os, positions_.size());
  for (const PositionTriple& p : positions_) {
    binio::put<std::int64_t>(os, p.t);
    binio::put<std::int64_t>(os, p.h);
    binio::put<std::int64_t>(os, p.w);
  }
  for (std::size_t l = 0; l < keys_.size(); ++l) {
    binio::put_doubles(os, keys_[l]);
    binio::put_doubles(os, values_[l]);
  }
}

KVCache KVCache::read(std::istream& is) {
  binio::expect_magic(is, kCacheMagic, "KV cache");
  if (binio::get<std::uint32_t>(is) != kCacheVersion) throw DataError("unsupported KV cache version");
  const auto layers = binio::get<std::uint32_t>(is);
  const auto d = binio::get<std::uint64_t>(is);
  const auto len = binio::get<std::uint64_t>(is);
  if (layers > 1024 || d > (1u << 16) || len > (1u << 24)) throw DataError("KV cache header out of range");
  KVCache c(static_cast<int>(layers), static_cast<int>(d));
  c.positions_.resize(len);
  for (PositionTriple& p : c.positions_) {
    p.t = binio::get<std::int64_t>(is);
    p.h = binio::get<std::int64_t>(is);
    p.w = binio::get<std::int64_t>(is);
  }
  for (std::uint32_t l = 0; l < layers; ++l) {
    c.keys_[l] = Tensor(len, d);
    c.values_[l] = Tensor(len, d);
    binio::get_doubles(is, c.keys_[l]);
    binio::get_doubles(is, c.values_[l]);
  }
  return c;
}

PackedSequence pack_sequence(std::span<const SequenceSegment> segments, PositionCursor& cursor,
                             bool supervise_responses) {
  PackedSequence out;
  for (const SequenceSegment& seg : segments) {
    const std::size_t first = out.tokens.size();
    if (seg.kind == SegmentKind::unit) {
      const PositionAssignment pa = cursor.place_unit(as_unit(seg));
      out.positions.insert(out.positions.end(), pa.positions.begin(), pa.positions.end());
      out.tokens.insert(out.tokens.end(), seg.tokens.begin(), seg.tokens.end());
      out.unit_eos_rows.push_back(out.tokens.size() - 1);
      out.unit_seconds.push_back(seg.timestamp);
      continue;
    }
    const auto pos = cursor.place_text(seg.tokens.size());
    out.positions.insert(out.positions.end(), pos.begin(), pos.end());
    out.tokens.insert(out.tokens.end(), seg.tokens.begin(), seg.tokens.end());
    if (seg.kind == SegmentKind::response && supervise_responses) {
      if (first == 0) throw DataError("pack_sequence: a response cannot open the sequence");
      for (std::size_t i = 0; i < seg.tokens.size(); ++i) {
        out.lm_rows.push_back(first + i - 1);
        out.lm_targets.push_back(seg.tokens[i].id);
      }
    }
  }
  return out;
}

Encoded encode(Tape& tape, ModelParams& params, std::span<const Token> tokens,
               std::span<const PositionTriple> positions, KVCache* cache) {
  return encode_impl(tape, params, true, tokens, positions, cache);
}

Encoded encode(Tape& tape, const ModelParams& params, std::span<const Token> tokens,
               std::span<const PositionTriple> positions, KVCache* cache) {
  return encode_impl(tape, params, false, tokens, positions, cache);
}

Var lm_logits(Tape& tape, ModelParams& params, Var last, std::span<const std::size_t> rows) {
  return lm_logits_impl(tape, params, true, last, rows);
}
Var lm_logits(Tape& tape, const ModelParams& params, Var last, std::span<const std::size_t> rows) {
  return lm_logits_impl(tape, params, false, last, rows);
}

Var speak_logits_at(Tape& tape, ModelParams& params, const Encoded& enc, std::span<const std::size_t> rows) {
  return speak_impl(tape, params, true, enc, rows);
}
Var speak_logits_at(Tape& tape, const ModelParams& params, const Encoded& enc, std::span<const std::size_t> rows) {
  return speak_impl(tape, params, false, enc, rows);
}

Tensor embed_unit(const MultimodalUnit& unit, const ModelParams& params) {
  Tape tape(false);
  return embed_impl(tape, params, false, unit.tokens).value();
}

StepOutput forward_step(const ModelParams& params, std::span<const Token> tokens,
                        std::span<const PositionTriple> positions, KVCache& cache) {
  Tape tape(false);
  const Encoded enc = encode(tape, params, tokens, positions, &cache);
  std::vector<std::size_t> rows(tokens.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  StepOutput out;
  for (const Var& v : enc.layers) out.layers.push_back(v.value());
  out.logits = lm_logits(tape, params, enc.layers.back(), rows).value();
  return out;
}

StepOutput forward_full(const ModelParams& params, std::span<const Token> tokens,
                        std::span<const PositionTriple> positions) {
  Tape tape(false);
  const Encoded enc = encode(tape, params, tokens, positions, nullptr);
  std::vector<std::size_t> rows(tokens.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  StepOutput out;
  for (const Var& v : enc.layers) out.layers.push_back(v.value());
  out.logits = lm_logits(tape, params, enc.layers.back(), rows).value();
  return out;
}

double speak_prob_at(const ModelParams& params, const StepOutput& out, std::size_t row) {
  const auto k = static_cast<std::size_t>(params.config.k_layers);
  if (out.layers.size() < k) throw ConfigError("speak head reads more layers than the step produced");
  std::vector<std::vector<double>> states;
  for (std::size_t i = out.layers.size() - k; i < out.layers.size(); ++i) {
    auto r = out.layers[i].row(row);
    states.emplace_back(r.begin(), r.end());
  }
  const Tensor& a = params.speak.alpha.value;
  const std::vector<double> agg = aggregate_layers(states, a.row(0));
  return speak_prob(agg, params.speak);
}

}  // namespace streamgate
