#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "streamgate/tensor.hpp"

// Synthetic labeled audio/video feature streams with known ground truth.
//
// Every second carries two video frame grids (2 fps) and 25 audio vectors
// (one per 40 ms). Background is unit-variance Gaussian noise; an event adds
// its class signature (entries ±2.0) to every grid cell and audio vector of
// the seconds it covers. Signatures and captions come from a fixed codebook
// so that the same class looks the same across samples.

namespace streamgate {

inline constexpr int kFramesPerSecond = 2;
inline constexpr int kAudioPerSecond = 25;
inline constexpr double kSignatureMagnitude = 2.0;

enum class TaskKind { alert, narration, reactive_qa };

std::string_view to_string(TaskKind t);
TaskKind parse_task(std::string_view s);

struct FeatureDims {
  int d_video = 8;
  int d_audio = 8;
  int grid_h = 2;
  int grid_w = 2;

  int grid_cells() const { return grid_h * grid_w; }
  friend bool operator==(const FeatureDims&, const FeatureDims&) = default;
};

struct SecondFeatures {
  std::vector<Tensor> frames;  // kFramesPerSecond grids, each (grid_h·grid_w) × d_video, row = h·grid_w + w
  Tensor audio;                // kAudioPerSecond × d_audio
};

// Closed integer-second interval [start, end].
struct SecondWindow {
  int start = 0;
  int end = 0;
  bool contains(int t) const { return t >= start && t <= end; }
  int width() const { return end - start + 1; }
  friend bool operator==(const SecondWindow&, const SecondWindow&) = default;
};

struct TaskAnnotations {
  std::vector<int> instruction_tokens;

  // alert
  std::vector<SecondWindow> event_windows;
  std::vector<int> event_classes;
  std::vector<int> response_tokens;  // reference alert message

  // narration
  std::vector<int> segment_boundaries;  // regime starts, excluding t = 0
  std::vector<int> segment_classes;     // one per regime
  std::vector<std::vector<int>> segment_captions;

  // reactive QA
  std::optional<int> query_time_s;
  std::vector<int> query_tokens;
  std::vector<int> answer_tokens;
  std::optional<int> clue_time_s;

  friend bool operator==(const TaskAnnotations&, const TaskAnnotations&) = default;
};

struct StreamSample {
  std::string sample_id;
  TaskKind task = TaskKind::alert;
  int duration_s = 0;
  FeatureDims dims;
  std::vector<SecondFeatures> seconds;
  TaskAnnotations annotations;
};

struct TimingLabels {
  std::vector<int> z;
};

struct ClassSignature {
  std::vector<double> video;  // d_video
  std::vector<double> audio;  // d_audio
  std::vector<int> caption;   // ≤ 8 tokens, starts with the class-name symbol
};

// Deterministic codebook entry for an event class in [0, vocab::kMaxClasses).
ClassSignature class_signature(const FeatureDims& dims, int cls);

StreamSample generate_alert_stream(int duration_s, int n_events, const FeatureDims& dims, std::uint64_t seed);
StreamSample generate_narration_stream(int duration_s, int n_segments, const FeatureDims& dims, std::uint64_t seed);
StreamSample generate_qa_stream(int duration_s, const FeatureDims& dims, std::uint64_t seed);

TimingLabels label_timing(const StreamSample& sample);

struct LabelCounts {
  std::size_t positives = 0;
  std::size_t negatives = 0;
};
LabelCounts count_labels(std::span<const TimingLabels> labels);

// N_neg / N_pos over every unit of the dataset.
double compute_pos_weight(std::span<const TimingLabels> labels);
double compute_pos_weight(LabelCounts counts);

// Mean feature of one second: the video grid cells of both frames and the 25
// audio vectors, averaged per modality and concatenated (d_video + d_audio).
std::vector<double> mean_second_features(const StreamSample& sample, int second);

struct DatasetSpec {
  TaskKind task = TaskKind::alert;
  int count = 1;
  int duration_s = 30;
  int n_events = 1;    // alert
  int n_segments = 4;  // narration
  FeatureDims dims;
  std::uint64_t seed = 0;
};

// Sample i is generated from derive_seed(spec.seed, i).
std::vector<StreamSample> generate_dataset(const DatasetSpec& spec);

// Seed for the i-th sample of a batch generated from `base`.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

}  // namespace streamgate
