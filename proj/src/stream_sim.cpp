#include "streamgate/stream_sim.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <string>

#include "streamgate/errors.hpp"
#include "streamgate/vocab.hpp"

namespace streamgate {
namespace {

constexpr std::uint64_t kCodebookSeed = 0x5EED'C0DE'B00Cull;
constexpr int kMinEventWidth = 3;
constexpr int kMaxEventWidth = 8;

void check_dims(const FeatureDims& d) {
  if (d.d_video <= 0 || d.d_audio <= 0 || d.grid_h <= 0 || d.grid_w <= 0)
    throw DataError("feature dimensions must be positive");
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

StreamSample noise_stream(TaskKind task, int duration_s, const FeatureDims& dims, std::uint64_t seed) {
  check_dims(dims);
  StreamSample s;
  s.sample_id = std::string(to_string(task)) + "-" + std::to_string(seed);
  s.task = task;
  s.duration_s = duration_s;
  s.dims = dims;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  s.seconds.resize(static_cast<std::size_t>(duration_s));
  for (SecondFeatures& sec : s.seconds) {
    for (int f = 0; f < kFramesPerSecond; ++f) {
      Tensor grid(static_cast<std::size_t>(dims.grid_cells()), static_cast<std::size_t>(dims.d_video));
      for (double& v : grid.flat()) v = normal(rng);
      sec.frames.push_back(std::move(grid));
    }
    sec.audio = Tensor(kAudioPerSecond, static_cast<std::size_t>(dims.d_audio));
    for (double& v : sec.audio.flat()) v = normal(rng);
  }
  return s;
}

void inject(StreamSample& s, int second, const ClassSignature& sig) {
  SecondFeatures& sec = s.seconds[static_cast<std::size_t>(second)];
  for (Tensor& grid : sec.frames)
    for (std::size_t r = 0; r < grid.rows(); ++r)
      for (std::size_t c = 0; c < grid.cols(); ++c) grid(r, c) += sig.video[c];
  for (std::size_t r = 0; r < sec.audio.rows(); ++r)
    for (std::size_t c = 0; c < sec.audio.cols(); ++c) sec.audio(r, c) += sig.audio[c];
}

// Splits `slack` extra units among `bins` bins, one unit at a time.
std::vector<int> spread(std::mt19937_64& rng, int slack, int bins) {
  std::vector<int> out(static_cast<std::size_t>(bins), 0);
  for (int i = 0; i < slack; ++i) ++out[static_cast<std::size_t>(uniform_int(rng, 0, bins - 1))];
  return out;
}

// Second RNG stream for annotation choices so that feature noise does not
// depend on how many structural draws were made.
std::mt19937_64 layout_rng(std::uint64_t seed) { return std::mt19937_64(seed ^ 0x9E37'79B9'7F4A'7C15ull); }

}  // namespace

std::string_view to_string(TaskKind t) {
  switch (t) {
    case TaskKind::alert: return "alert";
    case TaskKind::narration: return "narration";
    case TaskKind::reactive_qa: return "qa";
  }
  return "unknown";
}

TaskKind parse_task(std::string_view s) {
  if (s == "alert") return TaskKind::alert;
  if (s == "narration") return TaskKind::narration;
  if (s == "qa" || s == "reactive_qa") return TaskKind::reactive_qa;
  throw ConfigError("unknown task: " + std::string(s));
}

ClassSignature class_signature(const FeatureDims& dims, int cls) {
  if (cls < 0 || cls >= vocab::kMaxClasses) throw DataError("event class out of range");
  check_dims(dims);
  std::mt19937_64 rng(kCodebookSeed + static_cast<std::uint64_t>(cls) * 0x1000193ull +
                      static_cast<std::uint64_t>(dims.d_video) * 131 + static_cast<std::uint64_t>(dims.d_audio));
  std::bernoulli_distribution coin(0.5);
  ClassSignature sig;
  for (int i = 0; i < dims.d_video; ++i) sig.video.push_back(coin(rng) ? kSignatureMagnitude : -kSignatureMagnitude);
  for (int i = 0; i < dims.d_audio; ++i) sig.audio.push_back(coin(rng) ? kSignatureMagnitude : -kSignatureMagnitude);
  sig.caption.push_back(vocab::kClassNameBase + cls);
  const int extra = 2 + cls % 3;
  for (int i = 0; i < extra; ++i) sig.caption.push_back(uniform_int(rng, vocab::kCaptionBase, vocab::kTextSize - 1));
  return sig;
}

StreamSample generate_alert_stream(int duration_s, int n_events, const FeatureDims& dims, std::uint64_t seed) {
  if (duration_s < 4) throw DataError("alert stream needs duration_s >= 4");
  if (n_events < 1) throw DataError("alert stream needs at least one event");
  // One leading background second plus one separating second per extra event.
  if (n_events * (kMinEventWidth + 1) > duration_s)
    throw DataError("cannot pack " + std::to_string(n_events) + " events into " + std::to_string(duration_s) + " s");

  StreamSample s = noise_stream(TaskKind::alert, duration_s, dims, seed);
  auto rng = layout_rng(seed);
  const int cls = uniform_int(rng, 0, vocab::kMaxClasses - 1);
  std::vector<int> widths;
  for (int i = 0; i < n_events; ++i) widths.push_back(uniform_int(rng, kMinEventWidth, kMaxEventWidth));
  auto total = [&] { return std::accumulate(widths.begin(), widths.end(), 0) + n_events; };
  while (total() > duration_s) {
    auto it = std::max_element(widths.begin(), widths.end());
    --*it;
  }
  const std::vector<int> bins = spread(rng, duration_s - total(), n_events + 1);
  int cursor = 0;
  const ClassSignature sig = class_signature(dims, cls);
  for (int i = 0; i < n_events; ++i) {
    cursor += 1 + bins[static_cast<std::size_t>(i)];
    SecondWindow w{cursor, cursor + widths[static_cast<std::size_t>(i)] - 1};
    for (int t = w.start; t <= w.end; ++t) inject(s, t, sig);
    s.annotations.event_windows.push_back(w);
    s.annotations.event_classes.push_back(cls);
    cursor = w.end + 1;
  }
  s.annotations.instruction_tokens = {vocab::kInstrAlert, vocab::kClassNameBase + cls};
  s.annotations.response_tokens = sig.caption;
  return s;
}

StreamSample generate_narration_stream(int duration_s, int n_segments, const FeatureDims& dims, std::uint64_t seed) {
  if (n_segments < 2) throw DataError("narration stream needs at least two segments");
  if (n_segments > duration_s) throw DataError("more segments than seconds");

  StreamSample s = noise_stream(TaskKind::narration, duration_s, dims, seed);
  auto rng = layout_rng(seed);
  const int min_len = std::max(1, std::min(3, duration_s / n_segments));
  std::vector<int> lengths(static_cast<std::size_t>(n_segments), min_len);
  const std::vector<int> extra = spread(rng, duration_s - n_segments * min_len, n_segments);
  for (std::size_t i = 0; i < lengths.size(); ++i) lengths[i] += extra[i];

  int prev_cls = -1;
  int start = 0;
  for (int seg = 0; seg < n_segments; ++seg) {
    int cls = uniform_int(rng, 0, vocab::kMaxClasses - 2);
    if (cls >= prev_cls && prev_cls >= 0) ++cls;  // never repeat the previous regime
    const ClassSignature sig = class_signature(dims, cls);
    const int len = lengths[static_cast<std::size_t>(seg)];
    for (int t = start; t < start + len; ++t) inject(s, t, sig);
    if (seg > 0) s.annotations.segment_boundaries.push_back(start);
    s.annotations.segment_classes.push_back(cls);
    s.annotations.segment_captions.push_back(sig.caption);
    prev_cls = cls;
    start += len;
  }
  s.annotations.instruction_tokens = {vocab::kInstrNarrate};
  return s;
}

StreamSample generate_qa_stream(int duration_s, const FeatureDims& dims, std::uint64_t seed) {
  if (duration_s < 4) throw DataError("qa stream needs duration_s >= 4");
  StreamSample s = noise_stream(TaskKind::reactive_qa, duration_s, dims, seed);
  auto rng = layout_rng(seed);
  const bool ordinal = duration_s >= 8 && uniform_int(rng, 0, 1) == 1;
  TaskAnnotations& a = s.annotations;
  if (!ordinal) {
    const int cls = uniform_int(rng, 0, vocab::kMaxClasses - 1);
    const int width = uniform_int(rng, 2, std::min(4, duration_s - 2));
    const int start = uniform_int(rng, 0, duration_s - 1 - width);
    const ClassSignature sig = class_signature(dims, cls);
    for (int t = start; t < start + width; ++t) inject(s, t, sig);
    a.event_windows.push_back({start, start + width - 1});
    a.event_classes.push_back(cls);
    a.clue_time_s = start + width - 1;
    a.query_tokens = {vocab::kQueryWhich};
    a.answer_tokens = sig.caption;
  } else {
    const int c1 = uniform_int(rng, 0, vocab::kMaxClasses - 1);
    int c2 = uniform_int(rng, 0, vocab::kMaxClasses - 2);
    if (c2 >= c1) ++c2;
    const int w1 = uniform_int(rng, 2, 3);
    const int w2 = uniform_int(rng, 2, 3);
    const int slack = duration_s - 1 - w1 - w2 - 1;  // ≥ 1 s gap, ≥ 1 s after for the query
    const std::vector<int> bins = spread(rng, std::max(0, slack), 3);
    const int s1 = bins[0];
    const int s2 = s1 + w1 + 1 + bins[1];
    const ClassSignature g1 = class_signature(dims, c1);
    const ClassSignature g2 = class_signature(dims, c2);
    for (int t = s1; t < s1 + w1; ++t) inject(s, t, g1);
    for (int t = s2; t < s2 + w2; ++t) inject(s, t, g2);
    a.event_windows = {{s1, s1 + w1 - 1}, {s2, s2 + w2 - 1}};
    a.event_classes = {c1, c2};
    a.clue_time_s = s2;
    a.query_tokens = {vocab::kQueryFirst};
    a.answer_tokens = g1.caption;
  }
  const int evidence_end = a.event_windows.back().end;
  a.query_time_s = uniform_int(rng, std::min(evidence_end + 1, duration_s - 1), duration_s - 1);
  return s;
}

TimingLabels label_timing(const StreamSample& sample) {
  TimingLabels out;
  out.z.assign(static_cast<std::size_t>(sample.duration_s), 0);
  const TaskAnnotations& a = sample.annotations;
  switch (sample.task) {
    case TaskKind::alert:
      if (a.event_windows.empty()) throw DataError("alert sample " + sample.sample_id + " has no event windows");
      for (const SecondWindow& w : a.event_windows)
        for (int t = std::max(0, w.start); t <= std::min(w.end, sample.duration_s - 1); ++t)
          out.z[static_cast<std::size_t>(t)] = 1;
      break;
    case TaskKind::narration:
      if (a.segment_boundaries.empty())
        throw DataError("narration sample " + sample.sample_id + " has no segment boundaries");
      for (int b : a.segment_boundaries)
        if (b >= 0 && b < sample.duration_s) out.z[static_cast<std::size_t>(b)] = 1;
      break;
    case TaskKind::reactive_qa:
      if (!a.query_time_s) throw DataError("qa sample " + sample.sample_id + " has no query time");
      break;
  }
  return out;
}

LabelCounts count_labels(std::span<const TimingLabels> labels) {
  LabelCounts c;
  for (const TimingLabels& l : labels)
    for (int z : l.z) (z != 0 ? c.positives : c.negatives) += 1;
  return c;
}

double compute_pos_weight(LabelCounts counts) {
  if (counts.positives == 0) throw DataError("pos weight undefined: dataset has no positive labels");
  return static_cast<double>(counts.negatives) / static_cast<double>(counts.positives);
}

double compute_pos_weight(std::span<const TimingLabels> labels) { return compute_pos_weight(count_labels(labels)); }

std::vector<double> mean_second_features(const StreamSample& sample, int second) {
  const SecondFeatures& sec = sample.seconds.at(static_cast<std::size_t>(second));
  std::vector<double> out(static_cast<std::size_t>(sample.dims.d_video + sample.dims.d_audio), 0.0);
  std::size_t n_cells = 0;
  for (const Tensor& g : sec.frames) {
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) out[c] += g(r, c);
    n_cells += g.rows();
  }
  for (std::size_t c = 0; c < static_cast<std::size_t>(sample.dims.d_video); ++c) out[c] /= static_cast<double>(n_cells);
  const std::size_t off = static_cast<std::size_t>(sample.dims.d_video);
  for (std::size_t r = 0; r < sec.audio.rows(); ++r)
    for (std::size_t c = 0; c < sec.audio.cols(); ++c) out[off + c] += sec.audio(r, c);
  for (std::size_t c = 0; c < sec.audio.cols(); ++c) out[off + c] /= static_cast<double>(sec.audio.rows());
  return out;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  // splitmix64 finaliser over (base, index)
  std::uint64_t z = base * 0x9E37'79B9'7F4A'7C15ull + index + 0xBF58'476D'1CE4'E5B9ull;
  z = (z ^ (z >> 30)) * 0xBF58'476D'1CE4'E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D0'49BB'1331'11EBull;
  return z ^ (z >> 31);
}

std::vector<StreamSample> generate_dataset(const DatasetSpec& spec) {
  if (spec.count < 0) throw DataError("dataset count must be non-negative");
  std::vector<StreamSample> out;
  out.reserve(static_cast<std::size_t>(spec.count));
  for (int i = 0; i < spec.count; ++i) {
    const std::uint64_t seed = derive_seed(spec.seed, static_cast<std::uint64_t>(i));
    switch (spec.task) {
      case TaskKind::alert: out.push_back(generate_alert_stream(spec.duration_s, spec.n_events, spec.dims, seed)); break;
      case TaskKind::narration:
        out.push_back(generate_narration_stream(spec.duration_s, spec.n_segments, spec.dims, seed));
        break;
      case TaskKind::reactive_qa: out.push_back(generate_qa_stream(spec.duration_s, spec.dims, seed)); break;
    }
  }
  return out;
}

}  // namespace streamgate
