#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "streamgate/stream_sim.hpp"
#include "streamgate/trigger_engine.hpp"

// Proactive and reactive stream metrics.

namespace streamgate {

// Real-valued interval [start, end].
struct Interval {
  double start = 0.0;
  double end = 0.0;
  double length() const { return end > start ? end - start : 0.0; }
};

// |a∩b| / |a∪b| on the real line; zero when the union is empty.
double iou(const Interval& a, const Interval& b);
// Inclusive integer-second windows: lengths are end − start + 1.
double iou(const SecondWindow& a, const SecondWindow& b);

// 1 iff the top predicted span (longest, ties to the earlier) reaches IoU ≥ tau.
int recall_at(std::span<const SecondWindow> predicted, const SecondWindow& gt, double tau);

struct MapHit {
  double ap = 0.0;
  int hit1 = 0;
};

// Average precision of seconds ranked by descending score (ties to the
// earlier second) against positives = seconds inside any window, plus
// whether the top-ranked second is positive. nullopt if nothing is positive.
std::optional<MapHit> map_hit(std::span<const double> scores, std::span<const SecondWindow> gt_windows);

int alert_success(std::optional<int> trigger_time, const SecondWindow& gt);

// 1 iff |first − gt| ≤ tol (inclusive).
int first_response_accuracy(std::optional<double> first_time, double gt_time, double tol = 2.0);

struct RecCount {
  int points = 0;
  int segments = 0;
  double rate() const { return segments > 0 ? static_cast<double>(points) / segments : 0.0; }
};
RecCount rec_count(std::span<const int> trigger_times, std::span<const SecondWindow> segments);
double rec_score(std::span<const int> trigger_times, std::span<const SecondWindow> segments);

// 1 iff the first response after the ask time comes after the clue time.
int crr_score(std::optional<int> first_response_time, int ask_time, int clue_time);

struct F1Result {
  int matched = 0;
  int triggers = 0;
  int segments = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};
// Triggers inside a segment window match it; each segment consumes at most
// one trigger. Matching is maximum cardinality (triggers in time order claim
// the containing free segment that ends first).
F1Result narration_f1(std::span<const int> trigger_times, std::span<const SecondWindow> segments);

// Multiset token F1.
double text_overlap_f1(std::span<const int> response, std::span<const int> reference);

// Narration ground truth: each regime that starts at a boundary, ending one
// second before the next boundary (the last runs to the end of the stream).
std::vector<SecondWindow> narration_segments(const StreamSample& sample);

struct SampleScore {
  std::string sample_id;
  std::map<std::string, double> values;
};

struct EvalReport {
  std::string task;
  TriggerPolicy policy;
  std::map<std::string, double> metrics;
  std::vector<SampleScore> samples;
  std::vector<std::string> warnings;
};

// Pairs traces with annotations by sample id. Throws DataError for a trace
// without annotations or a task mismatch.
EvalReport evaluate(TaskKind task, std::span<const SpeakTrace> traces, std::span<const StreamSample> annotations);

// Structured text report followed by a flat metric table.
std::string format_report(const EvalReport& report);
// sample_id,metric,value rows.
std::string format_table(const EvalReport& report);

}  // namespace streamgate
