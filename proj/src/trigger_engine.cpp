#include "streamgate/trigger_engine.hpp"

#include <algorithm>
#include <future>
#include <stdexcept>

#include "streamgate/errors.hpp"

namespace streamgate {

std::string_view to_string(TriggerMode m) {
  switch (m) {
    case TriggerMode::alert_once: return "alert_once";
    case TriggerMode::alert_recurring: return "alert_recurring";
    case TriggerMode::narration: return "narration";
    case TriggerMode::static_scoring: return "static_scoring";
  }
  return "?";
}

TriggerMode parse_trigger_mode(std::string_view s) {
  for (TriggerMode m : {TriggerMode::alert_once, TriggerMode::alert_recurring, TriggerMode::narration,
                        TriggerMode::static_scoring})
    if (s == to_string(m)) return m;
  throw ConfigError("unknown trigger mode '" + std::string(s) + "'");
}

std::string_view to_string(Smoothing s) { return s == Smoothing::mean ? "mean" : "vote"; }

Smoothing parse_smoothing(std::string_view s) {
  if (s == "mean") return Smoothing::mean;
  if (s == "vote") return Smoothing::vote;
  throw ConfigError("unknown smoothing '" + std::string(s) + "'");
}

void TriggerPolicy::validate() const {
  if (window < 1) throw ConfigError("policy window must be >= 1");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("policy threshold must lie in (0, 1)");
  if (token_budget < 1) throw ConfigError("token_budget must be >= 1");
  if (cooldown_units < 0) throw ConfigError("cooldown_units must be >= 0");
}

double smooth(std::span<const double> history, int window, Smoothing kind, double threshold) {
  if (history.empty()) throw std::invalid_argument("smooth: empty history");
  if (window < 1) throw std::invalid_argument("smooth: window must be >= 1");
  const std::size_t n = std::min(history.size(), static_cast<std::size_t>(window));
  double acc = 0.0;
  for (std::size_t i = history.size() - n; i < history.size(); ++i)
    acc += kind == Smoothing::mean ? history[i] : (history[i] >= threshold ? 1.0 : 0.0);
  return acc / static_cast<double>(n);
}

std::vector<double> smooth_all(std::span<const double> p, int window, Smoothing kind, double threshold) {
  std::vector<double> s(p.size());
  for (std::size_t t = 0; t < p.size(); ++t) s[t] = smooth(p.first(t + 1), window, kind, threshold);
  return s;
}

Decision decide(double s_t, int t, const TriggerPolicy& policy, const TriggerState& state) {
  const double bar = policy.smoothing == Smoothing::mean ? policy.threshold : 0.5;
  if (!(s_t >= bar)) return Decision::stay_silent;
  switch (policy.mode) {
    case TriggerMode::static_scoring: return Decision::stay_silent;
    case TriggerMode::alert_once: return state.fired ? Decision::stay_silent : Decision::trigger;
    case TriggerMode::alert_recurring:
    case TriggerMode::narration:
      if (state.last_trigger && t - *state.last_trigger < policy.cooldown_units) return Decision::stay_silent;
      return Decision::trigger;
  }
  return Decision::stay_silent;
}

void commit(TriggerState& state, int t, Decision d) {
  if (d != Decision::trigger) return;
  state.fired = true;
  state.last_trigger = t;
}

std::vector<int> SpeakTrace::trigger_times() const {
  std::vector<int> out;
  for (std::size_t t = 0; t < triggered.size(); ++t)
    if (triggered[t]) out.push_back(static_cast<int>(t));
  return out;
}

std::optional<int> SpeakTrace::first_trigger() const {
  for (std::size_t t = 0; t < triggered.size(); ++t)
    if (triggered[t]) return static_cast<int>(t);
  return std::nullopt;
}

std::optional<int> SpeakTrace::first_response_unit() const {
  if (responses.empty()) return std::nullopt;
  return responses.front().start_unit;
}

ResponseSpan decode_span(int unit, int budget, const std::function<int()>& next_token) {
  ResponseSpan span;
  span.unit = unit;
  for (int i = 0; i < budget; ++i) {
    const int tok = next_token();
    span.tokens.push_back(tok);
    if (tok == vocab::id(vocab::Marker::im_end)) {
      span.complete = true;
      break;
    }
  }
  return span;
}

StreamSession::StreamSession(const ModelParams& params, int budget)
    : params_(params), budget_(budget), cache_(params.config.n_layers, params.config.d_model) {
  if (budget < 1) throw ConfigError("token_budget must be >= 1");
}

int StreamSession::pick(const Tensor& logits, std::size_t row) const {
  int best = vocab::id(vocab::Marker::im_end);
  double best_v = logits(row, static_cast<std::size_t>(best));
  for (int id = 0; id < vocab::kTextSize; ++id) {
    const double v = logits(row, static_cast<std::size_t>(id));
    if (v > best_v) {
      best_v = v;
      best = id;
    }
  }
  return best;
}

void StreamSession::feed_tokens(std::span<const Token> tokens) {
  if (tokens.empty()) return;
  const auto pos = cursor_.place_text(tokens.size());
  const StepOutput out = forward_step(params_, tokens, pos, cache_);
  next_ = pick(out.logits, tokens.size() - 1);
}

int StreamSession::feed_and_pick(const Token& tok) {
  feed_tokens(std::span<const Token>(&tok, 1));
  return *next_;
}

double StreamSession::feed_unit(const MultimodalUnit& unit) {
  if (last_unit_ && unit.unit_index <= *last_unit_) throw DataError("units must arrive in time order");
  const PositionAssignment pa = cursor_.place_unit(unit);
  const StepOutput out = forward_step(params_, unit.tokens, pa.positions, cache_);
  last_unit_ = unit.unit_index;
  const std::size_t eos = unit.tokens.size() - 1;
  next_ = pick(out.logits, eos);
  return speak_prob_at(params_, out, eos);
}

ResponseSpan StreamSession::decode(int unit) {
  if (!next_) throw DataError("decode before any context was encoded");
  ResponseSpan span = decode_span(unit, budget_, [&] {
    const int tok = *next_;
    const Token t = vocab::is_marker(tok) ? make_marker(static_cast<vocab::Marker>(tok))
                                          : Token{Modality::text, tok, {}, 0};
    feed_and_pick(t);
    return tok;
  });
  if (!span.complete) {
    const Token eot = make_marker(vocab::Marker::endoftext);
    feed_tokens(std::span<const Token>(&eot, 1));
  }
  return span;
}

SpeakTrace run_stream(const ModelParams& params, const StreamSample& sample, const TriggerPolicy& policy,
                      const EngineOptions& options) {
  policy.validate();
  const ModelConfig& cfg = params.config;
  if (sample.dims.d_video != cfg.d_video || sample.dims.d_audio != cfg.d_audio)
    throw ConfigError("stream feature dims (" + std::to_string(sample.dims.d_video) + ", " +
                      std::to_string(sample.dims.d_audio) + ") do not match the checkpoint (" +
                      std::to_string(cfg.d_video) + ", " + std::to_string(cfg.d_audio) + ")");
  if (static_cast<int>(sample.seconds.size()) != sample.duration_s) throw DataError("stream is truncated");

  SpeakTrace trace;
  trace.sample_id = sample.sample_id;
  trace.task = sample.task;
  trace.policy = policy;
  const auto T = static_cast<std::size_t>(sample.duration_s);
  trace.triggered.assign(T, false);

  const bool reactive = sample.task == TaskKind::reactive_qa;
  const TaskAnnotations& a = sample.annotations;
  if (reactive && !a.query_time_s) throw DataError("qa sample without query time");

  StreamSession session(params, policy.token_budget);
  if (!reactive && !a.instruction_tokens.empty()) session.feed_tokens(make_text_tokens(a.instruction_tokens));

  TriggerState state;
  std::optional<std::size_t> pending;
  auto run_span = [&](int t) {
    ResponseSpan span = session.decode(t);
    span.response = *pending;
    Response& r = trace.responses[*pending];
    r.tokens.insert(r.tokens.end(), span.tokens.begin(), span.tokens.end());
    r.complete = span.complete;
    if (span.complete) pending.reset();
    trace.spans.push_back(std::move(span));
  };

  std::future<MultimodalUnit> prefetch;
  if (options.pipelined && T > 0) prefetch = std::async(std::launch::async, [&] { return build_unit(sample, 0); });
  for (std::size_t i = 0; i < T; ++i) {
    const int t = static_cast<int>(i);
    MultimodalUnit unit = options.pipelined ? prefetch.get() : build_unit(sample, t);
    if (options.pipelined && i + 1 < T)
      prefetch = std::async(std::launch::async, [&sample, t] { return build_unit(sample, t + 1); });

    trace.p.push_back(session.feed_unit(unit));
    trace.s.push_back(smooth(trace.p, policy.window, policy.smoothing, policy.threshold));

    if (pending) run_span(t);  // continuation of an unfinished response

    if (reactive) {
      if (t == *a.query_time_s) {
        session.feed_tokens(make_query_tokens(a.query_tokens));
        trace.responses.push_back({t, {}, false});
        pending = trace.responses.size() - 1;
        run_span(t);
      }
      continue;
    }
    const Decision d = decide(trace.s.back(), t, policy, state);
    commit(state, t, d);
    if (d != Decision::trigger) continue;
    trace.triggered[i] = true;
    if (pending) continue;
    trace.responses.push_back({t, {}, false});
    pending = trace.responses.size() - 1;
    run_span(t);
  }
  return trace;
}

std::vector<double> rank_timestamps(std::span<const double> p) {
  if (p.empty()) return {};
  const auto [lo, hi] = std::minmax_element(p.begin(), p.end());
  const double range = *hi - *lo;
  std::vector<double> out(p.size(), 0.5);
  if (range > 0.0)
    for (std::size_t i = 0; i < p.size(); ++i) out[i] = (p[i] - *lo) / range;
  return out;
}

std::vector<double> rank_timestamps(const SpeakTrace& trace) { return rank_timestamps(trace.p); }

std::vector<SecondWindow> extract_spans(std::span<const double> s, double threshold) {
  std::vector<SecondWindow> out;
  std::optional<int> start;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    const bool on = i < s.size() && s[i] >= threshold;
    if (on && !start) start = static_cast<int>(i);
    if (!on && start) {
      out.push_back({*start, static_cast<int>(i) - 1});
      start.reset();
    }
  }
  return out;
}

std::vector<SecondWindow> extract_spans(const SpeakTrace& trace, double threshold) {
  return extract_spans(trace.s, threshold);
}

std::optional<SecondWindow> top_span(std::span<const SecondWindow> spans) {
  std::optional<SecondWindow> best;
  for (const SecondWindow& w : spans)
    if (!best || w.width() > best->width()) best = w;
  return best;
}

}  // namespace streamgate
