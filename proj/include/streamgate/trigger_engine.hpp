#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "streamgate/backbone.hpp"
#include "streamgate/stream_sim.hpp"

// Streaming inference: per-unit speak decisions over smoothed probabilities
// and budgeted response decoding that continues across units.

namespace streamgate {

enum class TriggerMode { alert_once, alert_recurring, narration, static_scoring };
enum class Smoothing { mean, vote };

std::string_view to_string(TriggerMode m);
TriggerMode parse_trigger_mode(std::string_view s);
std::string_view to_string(Smoothing s);
Smoothing parse_smoothing(std::string_view s);

struct TriggerPolicy {
  int window = 1;
  double threshold = 0.5;
  int token_budget = 25;
  int cooldown_units = 2;
  TriggerMode mode = TriggerMode::alert_once;
  Smoothing smoothing = Smoothing::mean;

  // Throws ConfigError.
  void validate() const;
  friend bool operator==(const TriggerPolicy&, const TriggerPolicy&) = default;
};

// Smoothed value for the newest entry of `history`: the mean of the last
// `window` probabilities (fewer while the prefix is shorter). Vote smoothing
// returns the fraction of those probabilities at or above `threshold`.
// Throws std::invalid_argument on an empty history or window < 1.
double smooth(std::span<const double> history, int window, Smoothing kind = Smoothing::mean,
              double threshold = 0.5);
std::vector<double> smooth_all(std::span<const double> p, int window, Smoothing kind = Smoothing::mean,
                               double threshold = 0.5);

enum class Decision { stay_silent, trigger };

struct TriggerState {
  bool fired = false;
  std::optional<int> last_trigger;
};

// Pure: trigger iff the smoothed value clears the bar (threshold for mean
// smoothing, a majority for vote smoothing) and the mode allows it. Once
// modes fire at most once; recurring and narration modes need
// t − last_trigger ≥ cooldown_units.
Decision decide(double s_t, int t, const TriggerPolicy& policy, const TriggerState& state);
void commit(TriggerState& state, int t, Decision d);

struct ResponseSpan {
  int unit = 0;             // unit after which these tokens were emitted
  std::size_t response = 0; // index into SpeakTrace::responses
  std::vector<int> tokens;  // generated ids; the terminal marker is the last one when complete
  bool complete = false;    // false: a continuation marker follows and decoding resumes next unit
};

struct Response {
  int start_unit = 0;
  std::vector<int> tokens;  // concatenated span tokens
  bool complete = false;
};

struct SpeakTrace {
  std::string sample_id;
  TaskKind task = TaskKind::alert;
  TriggerPolicy policy;
  std::vector<double> p;
  std::vector<double> s;
  std::vector<bool> triggered;
  std::vector<Response> responses;
  std::vector<ResponseSpan> spans;

  std::vector<int> trigger_times() const;
  std::optional<int> first_trigger() const;
  std::optional<int> first_response_unit() const;
};

// Emits at most `budget` tokens from `next_token`, stopping early at the
// terminal marker. Budget counts every generated id, the terminal one included.
ResponseSpan decode_span(int unit, int budget, const std::function<int()>& next_token);

// Incremental session over one stream with a persistent cache.
class StreamSession {
 public:
  StreamSession(const ModelParams& params, int budget);

  // Text-like context (instruction, query, continuation marker).
  void feed_tokens(std::span<const Token> tokens);
  // Encodes a unit and returns its speak probability.
  double feed_unit(const MultimodalUnit& unit);
  // Decodes one span at the current position (greedy over text symbols and
  // the terminal marker), appending every emitted id to the context and a
  // continuation marker when the span ends unfinished.
  ResponseSpan decode(int unit);

  const KVCache& cache() const { return cache_; }
  const PositionCursor& cursor() const { return cursor_; }
  // Latest timestamp of any unit the context contains.
  std::optional<int> last_unit() const { return last_unit_; }

 private:
  int feed_and_pick(const Token& tok);
  int pick(const Tensor& logits, std::size_t row) const;

  const ModelParams& params_;
  int budget_;
  KVCache cache_;
  PositionCursor cursor_;
  std::optional<int> next_;  // greedy choice for the next position
  std::optional<int> last_unit_;
};

struct EngineOptions {
  bool pipelined = false;  // build unit t+1 while unit t is encoded and decoded
};

// Proactive streams: instruction first, then per unit encode → p_t → smooth →
// decide → decode. A pending unfinished response resumes after each unit and
// blocks new responses until it finishes (the trigger is still recorded).
// Reactive streams: the query follows its unit and exactly one response is
// decoded from there; speak triggers are not acted on.
// Throws ConfigError if the sample's feature dims do not match the model.
SpeakTrace run_stream(const ModelParams& params, const StreamSample& sample, const TriggerPolicy& policy,
                      const EngineOptions& options = {});

// Min-max normalised raw probabilities; a constant trace maps to 0.5.
std::vector<double> rank_timestamps(std::span<const double> p);
std::vector<double> rank_timestamps(const SpeakTrace& trace);

// Maximal runs of consecutive units with s_t ≥ threshold.
std::vector<SecondWindow> extract_spans(std::span<const double> s, double threshold);
std::vector<SecondWindow> extract_spans(const SpeakTrace& trace, double threshold);

// Longest span, ties to the earlier one.
std::optional<SecondWindow> top_span(std::span<const SecondWindow> spans);

}  // namespace streamgate
