#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "../helpers.hpp"
#include "streamgate/backbone.hpp"
#include "streamgate/checkpoint.hpp"
#include "streamgate/errors.hpp"
#include "streamgate/speak_head.hpp"
#include "streamgate/trainer.hpp"

using namespace streamgate;

namespace {

// Splits a packed run into chunks at unit boundaries and feeds them through a cache.
std::vector<StepOutput> run_chunks(const ModelParams& p, const PackedSequence& seq, std::size_t chunk,
                                   KVCache& cache) {
  std::vector<StepOutput> outs;
  for (std::size_t at = 0; at < seq.tokens.size(); at += chunk) {
    const std::size_t n = std::min(chunk, seq.tokens.size() - at);
    outs.push_back(forward_step(p, std::span(seq.tokens).subspan(at, n), std::span(seq.positions).subspan(at, n),
                                cache));
  }
  return outs;
}

}  // namespace

TEST_CASE("config validation names the violated constraint") {
  ModelConfig c = testing::tiny_config();
  CHECK_NOTHROW(c.validate());
  auto expect = [](ModelConfig bad, const std::string& needle) {
    try {
      bad.validate();
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };
  ModelConfig k = c;
  k.k_layers = 3;
  expect(k, "k_layers");
  ModelConfig h = c;
  h.n_heads = 3;
  expect(h, "divisible");
  ModelConfig odd = c;
  odd.d_model = 6;
  odd.n_heads = 2;
  expect(odd, "even");
  ModelConfig part = c;
  part.partition = {1, 1, 1};
  expect(part, "partition");
}

TEST_CASE("embeddings have the expected shape and projection rows") {
  const ModelParams p = ModelParams::init(testing::tiny_config(), 1);
  std::mt19937_64 rng(2);
  std::vector<Tensor> frames{Tensor(4, 3), Tensor(4, 3)};
  const MultimodalUnit u = build_unit(0, frames, Tensor(25, 3), 2);
  const Tensor e = embed_unit(u, p);
  CHECK(e.rows() == 33);
  CHECK(e.cols() == 8);
  for (std::size_t c = 0; c < 8; ++c) {
    CHECK(e(2, c) == p.video_bias.value(0, c));
    CHECK(e(6, c) == p.audio_bias.value(0, c));
  }
  MultimodalUnit bad = u;
  bad.tokens[0].id = 999;
  CHECK_THROWS_AS(embed_unit(bad, p), DataError);
  bad = u;
  bad.tokens[3].feature.push_back(0.0);
  CHECK_THROWS_AS(embed_unit(bad, p), DataError);
}

TEST_CASE("incremental encoding matches the full pass") {
  ModelConfig cfg = testing::tiny_config();
  cfg.d_model = 16;
  cfg.n_heads = 2;
  const ModelParams p = ModelParams::init(cfg, 3);
  const PackedSequence seq = testing::pack(testing::tiny_alert(5, 4));
  const StepOutput full = forward_full(p, seq.tokens, seq.positions);
  for (std::size_t chunk : {std::size_t{1}, std::size_t{7}, std::size_t{33}, std::size_t{64}}) {
    CAPTURE(chunk);
    KVCache cache(cfg.n_layers, cfg.d_model);
    const auto outs = run_chunks(p, seq, chunk, cache);
    CHECK(cache.length() == seq.tokens.size());
    std::size_t row = 0;
    double worst = 0.0;
    for (const StepOutput& o : outs)
      for (std::size_t r = 0; r < o.logits.rows(); ++r, ++row) {
        for (std::size_t c = 0; c < o.logits.cols(); ++c)
          worst = std::max(worst, std::abs(o.logits(r, c) - full.logits(row, c)));
        for (std::size_t l = 0; l < o.layers.size(); ++l)
          for (std::size_t c = 0; c < o.layers[l].cols(); ++c)
            worst = std::max(worst, std::abs(o.layers[l](r, c) - full.layers[l](row, c)));
      }
    CHECK(worst <= 1e-10);
  }
}

TEST_CASE("perturbing a later unit leaves earlier hiddens bit-identical") {
  const ModelParams p = ModelParams::init(testing::tiny_config(), 5);
  StreamSample s = testing::tiny_alert(4, 6);
  const PackedSequence a = testing::pack(s);
  for (Tensor& f : s.seconds[2].frames) f(0, 0) += 5.0;
  const PackedSequence b = testing::pack(s);
  const StepOutput fa = forward_full(p, a.tokens, a.positions), fb = forward_full(p, b.tokens, b.positions);
  const std::size_t first = a.unit_eos_rows[1] + 1;  // first token of unit 2
  for (std::size_t r = 0; r < first; ++r)
    for (std::size_t c = 0; c < fa.logits.cols(); ++c) REQUIRE(fa.logits(r, c) == fb.logits(r, c));
  bool changed = false;
  for (std::size_t c = 0; c < fa.logits.cols(); ++c) changed |= fa.logits(a.unit_eos_rows[2], c) != fb.logits(a.unit_eos_rows[2], c);
  CHECK(changed);
}

TEST_CASE("cache rejects position regression and resumes from serialized state") {
  const ModelConfig cfg = testing::tiny_config();
  const ModelParams p = ModelParams::init(cfg, 7);
  const PackedSequence seq = testing::pack(testing::tiny_alert(4, 8));
  const std::size_t half = seq.unit_eos_rows[1] + 1;
  KVCache cache(cfg.n_layers, cfg.d_model);
  forward_step(p, std::span(seq.tokens).first(half), std::span(seq.positions).first(half), cache);

  std::stringstream ss;
  cache.write(ss);
  KVCache restored = KVCache::read(ss);
  CHECK(restored == cache);
  const auto rest_tok = std::span(seq.tokens).subspan(half);
  const auto rest_pos = std::span(seq.positions).subspan(half);
  const StepOutput x = forward_step(p, rest_tok, rest_pos, cache);
  const StepOutput y = forward_step(p, rest_tok, rest_pos, restored);
  CHECK(x.logits == y.logits);

  std::vector<PositionTriple> back(seq.positions.begin(), seq.positions.begin() + 3);
  CHECK_THROWS_AS(forward_step(p, std::span(seq.tokens).first(3), back, cache), DataError);
}

TEST_CASE("speak head aggregation and probability") {
  const std::vector<std::vector<double>> h{{1.0, 2.0}, {3.0, -1.0}, {0.0, 0.0}, {5.0, 5.0}};
  const double inf = std::numeric_limits<double>::infinity();
  CHECK(aggregate_layers(h, std::vector<double>{0.0, -inf, -inf, -inf}) == h[0]);
  const auto mean = aggregate_layers(h, std::vector<double>{0.3, 0.3, 0.3, 0.3});
  CHECK(mean[0] == doctest::Approx(2.25));
  CHECK(mean[1] == doctest::Approx(1.5));
  const std::vector<std::vector<double>> same(3, std::vector<double>{0.7, -0.2});
  const auto s = aggregate_layers(same, std::vector<double>{5.0, -2.0, 0.1});
  CHECK(s[0] == doctest::Approx(0.7));
  CHECK(s[1] == doctest::Approx(-0.2));
  CHECK_THROWS_AS(aggregate_layers(h, std::vector<double>{0.0, 0.0}), std::invalid_argument);

  SpeakHeadParams sp{Parameter("a", Tensor(1, 4)), Parameter("w1", Tensor(2, 3)), Parameter("b1", Tensor(1, 3)),
                     Parameter("w2", Tensor(3, 1)), Parameter("b2", Tensor(1, 1))};
  const std::vector<double> x{0.4, -1.3};
  CHECK(speak_prob(x, sp) == 0.5);
  std::mt19937_64 rng(1);
  sp.w1.value = testing::random_tensor(2, 3, rng);
  sp.w2.value = testing::random_tensor(3, 1, rng);
  double prev = 0.0;
  for (double b : {-3.0, -1.0, 0.0, 2.0}) {
    sp.b2.value(0, 0) = b;
    const double p = speak_prob(x, sp);
    CHECK(p > prev);
    CHECK(p > 0.0);
    CHECK(p < 1.0);
    prev = p;
  }
}

TEST_CASE("loss fixtures") {
  CHECK(std::abs(timing_loss(std::vector<double>{0.5}, std::vector<int>{1}, 3.0) - 3.0 * std::log(2.0)) <= 1e-12);
  CHECK(std::abs(timing_loss(std::vector<double>{0.5, 0.5}, std::vector<int>{0, 0}, 3.0) - std::log(2.0)) <= 1e-12);
  CHECK(timing_loss(std::vector<double>{1e-12, 1 - 1e-12}, std::vector<int>{0, 1}, 3.0) < 1e-10);
  CHECK_THROWS_AS(timing_loss(std::vector<double>{0.5}, std::vector<int>{1, 0}, 3.0), std::invalid_argument);
  CHECK_THROWS_AS(timing_loss(std::vector<double>{1.0}, std::vector<int>{1}, 3.0), std::invalid_argument);
  // w_pos = 1 is plain binary cross entropy.
  const std::vector<double> p{0.2, 0.9, 0.6};
  const std::vector<int> z{0, 1, 1};
  const double bce = -(std::log(0.8) + std::log(0.9) + std::log(0.6)) / 3.0;
  CHECK(timing_loss(p, z, 1.0) == doctest::Approx(bce).epsilon(1e-14));

  CHECK(std::abs(lm_loss(Tensor(1, 64), std::vector<int>{17}) - std::log(64.0)) <= 1e-12);
  Tensor sharp(1, 64);
  sharp(0, 5) = 100.0;
  CHECK(lm_loss(sharp, std::vector<int>{5}) < 1e-40);
  CHECK_THROWS_AS(lm_loss(Tensor(0, 64), std::vector<int>{}), std::invalid_argument);

  CHECK(total_loss(2.0, 3.0, 0.0) == 2.0);
  CHECK(total_loss(2.0, 3.0, 1.0) == 5.0);
  CHECK(total_loss(2.0, std::nullopt, 0.5) == 2.0);
  CHECK_THROWS_AS(total_loss(2.0, 3.0, -1.0), std::invalid_argument);
}

TEST_CASE("timing and language gradients stay on their own heads") {
  ModelParams p = ModelParams::init(testing::tiny_config(), 9);
  const PreparedSample alert = prepare_sample(testing::tiny_alert(4, 1));
  const PreparedSample qa = prepare_sample(generate_qa_stream(4, testing::tiny_dims(), 2));
  const PreparedSample* a = &alert;
  const PreparedSample* q = &qa;
  auto norm = [](std::vector<Parameter*> ps) {
    double s = 0.0;
    for (Parameter* x : ps)
      for (double g : x->grad.flat()) s += g * g;
    return s;
  };
  p.zero_grad();
  batch_loss(p, std::span(&a, 1), {}, Objective::joint, 0.5, 3.0, true);
  CHECK(norm(p.group(ParamGroup::lm_head)) == 0.0);
  CHECK(norm(p.group(ParamGroup::speak_head)) > 0.0);
  CHECK(norm(p.group(ParamGroup::layers)) > 0.0);
  p.zero_grad();
  batch_loss(p, {}, std::span(&q, 1), Objective::lm_only, 0.5, 3.0, true);
  CHECK(norm(p.group(ParamGroup::speak_head)) == 0.0);
  CHECK(norm(p.group(ParamGroup::lm_head)) > 0.0);
  CHECK(norm(p.group(ParamGroup::layers)) > 0.0);
}

TEST_CASE("language loss ignores unsupervised positions") {
  ModelParams p = ModelParams::init(testing::tiny_config(), 10);
  const PreparedSample qa = prepare_sample(generate_qa_stream(5, testing::tiny_dims(), 3));
  const PreparedSample* q = &qa;
  const double base = *batch_loss(p, {}, std::span(&q, 1), Objective::lm_only, 0.5, 3.0, false).l_lm;
  // The speak head never reaches the language loss.
  p.speak.b2.value(0, 0) += 4.0;
  CHECK(*batch_loss(p, {}, std::span(&q, 1), Objective::lm_only, 0.5, 3.0, false).l_lm == base);
  CHECK(qa.seq.lm_rows.size() == qa.seq.lm_targets.size());
  CHECK(qa.seq.lm_targets.back() == vocab::id(vocab::Marker::im_end));
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  Checkpoint c{ModelParams::init(testing::tiny_config(), 11), 1, 0xABCDEFull};
  std::stringstream ss;
  write_checkpoint(ss, c);
  const Checkpoint r = read_checkpoint(ss);
  CHECK(r.stage_complete == 1);
  CHECK(r.config_hash == 0xABCDEFull);
  CHECK(r.params.config == c.params.config);
  const auto a = std::as_const(c.params).all();
  const auto b = std::as_const(r.params).all();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i]->name == b[i]->name);
    CHECK(a[i]->value == b[i]->value);
  }
  CHECK(parameter_checksum(a) == parameter_checksum(b));
  std::string bytes = ss.str();
  std::istringstream truncated(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(read_checkpoint(truncated), DataError);
  std::istringstream garbage("not a checkpoint at all");
  CHECK_THROWS_AS(read_checkpoint(garbage), DataError);
}
