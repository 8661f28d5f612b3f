#include "streamgate/eval_suite.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "streamgate/errors.hpp"

namespace streamgate {
namespace {

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::vector<int> strip_terminal(std::vector<int> tokens) {
  if (!tokens.empty() && tokens.back() == vocab::id(vocab::Marker::im_end)) tokens.pop_back();
  return tokens;
}

F1Result f1_from_counts(int matched, int triggers, int segments) {
  F1Result r{matched, triggers, segments, 0.0, 0.0, 0.0};
  if (triggers > 0) r.precision = static_cast<double>(matched) / triggers;
  if (segments > 0) r.recall = static_cast<double>(matched) / segments;
  if (r.precision + r.recall > 0.0) r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

}  // namespace

double iou(const Interval& a, const Interval& b) {
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = a.length() + b.length() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double iou(const SecondWindow& a, const SecondWindow& b) {
  return iou(Interval{static_cast<double>(a.start), a.end + 1.0}, Interval{static_cast<double>(b.start), b.end + 1.0});
}

int recall_at(std::span<const SecondWindow> predicted, const SecondWindow& gt, double tau) {
  const auto top = top_span(predicted);
  return top && iou(*top, gt) >= tau ? 1 : 0;
}

std::optional<MapHit> map_hit(std::span<const double> scores, std::span<const SecondWindow> gt_windows) {
  std::vector<char> positive(scores.size(), 0);
  std::size_t n_pos = 0;
  for (std::size_t t = 0; t < scores.size(); ++t) {
    for (const SecondWindow& w : gt_windows)
      if (w.contains(static_cast<int>(t))) positive[t] = 1;
    n_pos += positive[t];
  }
  if (n_pos == 0) return std::nullopt;
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  MapHit out;
  out.hit1 = positive[order.front()] ? 1 : 0;
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (!positive[order[k]]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  out.ap = sum / static_cast<double>(n_pos);
  return out;
}

int alert_success(std::optional<int> trigger_time, const SecondWindow& gt) {
  return trigger_time && gt.contains(*trigger_time) ? 1 : 0;
}

int first_response_accuracy(std::optional<double> first_time, double gt_time, double tol) {
  return first_time && std::abs(*first_time - gt_time) <= tol ? 1 : 0;
}

RecCount rec_count(std::span<const int> trigger_times, std::span<const SecondWindow> segments) {
  RecCount c;
  c.segments = static_cast<int>(segments.size());
  for (const SecondWindow& seg : segments)
    if (std::any_of(trigger_times.begin(), trigger_times.end(), [&](int t) { return seg.contains(t); })) ++c.points;
  return c;
}

double rec_score(std::span<const int> trigger_times, std::span<const SecondWindow> segments) {
  return rec_count(trigger_times, segments).rate();
}

int crr_score(std::optional<int> first_response_time, int ask_time, int clue_time) {
  return first_response_time && *first_response_time >= ask_time && *first_response_time > clue_time ? 1 : 0;
}

F1Result narration_f1(std::span<const int> trigger_times, std::span<const SecondWindow> segments) {
  std::vector<int> triggers(trigger_times.begin(), trigger_times.end());
  std::sort(triggers.begin(), triggers.end());
  std::vector<char> used(segments.size(), 0);
  int matched = 0;
  for (int t : triggers) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < segments.size(); ++i) {
      if (used[i] || !segments[i].contains(t)) continue;
      if (!best || segments[i].end < segments[*best].end) best = i;
    }
    if (best) {
      used[*best] = 1;
      ++matched;
    }
  }
  return f1_from_counts(matched, static_cast<int>(triggers.size()), static_cast<int>(segments.size()));
}

double text_overlap_f1(std::span<const int> response, std::span<const int> reference) {
  if (response.empty() || reference.empty()) return 0.0;
  std::unordered_map<int, int> ref;
  for (int t : reference) ++ref[t];
  int common = 0;
  for (int t : response) {
    auto it = ref.find(t);
    if (it != ref.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double p = static_cast<double>(common) / static_cast<double>(response.size());
  const double r = static_cast<double>(common) / static_cast<double>(reference.size());
  return 2.0 * p * r / (p + r);
}

std::vector<SecondWindow> narration_segments(const StreamSample& sample) {
  const auto& b = sample.annotations.segment_boundaries;
  std::vector<SecondWindow> out;
  for (std::size_t i = 0; i < b.size(); ++i)
    out.push_back({b[i], i + 1 < b.size() ? b[i + 1] - 1 : sample.duration_s - 1});
  return out;
}

EvalReport evaluate(TaskKind task, std::span<const SpeakTrace> traces, std::span<const StreamSample> annotations) {
  EvalReport rep;
  rep.task = std::string(to_string(task));
  if (!traces.empty()) rep.policy = traces.front().policy;
  std::unordered_map<std::string, const StreamSample*> by_id;
  for (const StreamSample& s : annotations) by_id[s.sample_id] = &s;

  std::vector<double> success, first_acc, aps, hits, r5, r7, overlap, crr;
  RecCount rec;
  int matched = 0, n_trig = 0, n_seg = 0;
  for (const SpeakTrace& tr : traces) {
    auto it = by_id.find(tr.sample_id);
    if (it == by_id.end()) throw DataError("no annotations for trace " + tr.sample_id);
    const StreamSample& s = *it->second;
    if (s.task != task || tr.task != task) throw DataError("task mismatch for " + tr.sample_id);
    if (static_cast<int>(tr.p.size()) != s.duration_s) throw DataError("trace length mismatch for " + tr.sample_id);
    const TaskAnnotations& a = s.annotations;
    SampleScore row{tr.sample_id, {}};
    const std::vector<int> trig = tr.trigger_times();

    switch (task) {
      case TaskKind::alert: {
        if (a.event_windows.empty()) throw DataError("alert annotations without windows: " + s.sample_id);
        const SecondWindow& gt = a.event_windows.front();
        const auto first = tr.first_trigger();
        int ok = 0;
        for (const SecondWindow& w : a.event_windows) ok |= alert_success(first, w);
        row.values["alert_success"] = ok;
        success.push_back(ok);
        const int fa =
            first_response_accuracy(first ? std::optional<double>(*first) : std::nullopt, gt.start);
        row.values["first_response_acc"] = fa;
        first_acc.push_back(fa);
        const RecCount rc = rec_count(trig, a.event_windows);
        rec.points += rc.points;
        rec.segments += rc.segments;
        row.values["rec"] = rc.rate();
        if (auto mh = map_hit(rank_timestamps(tr.p), a.event_windows)) {
          row.values["ap"] = mh->ap;
          row.values["hit1"] = mh->hit1;
          aps.push_back(mh->ap);
          hits.push_back(mh->hit1);
        } else {
          rep.warnings.push_back("sample " + s.sample_id + " has no positive seconds; skipped for mAP");
        }
        const auto spans = extract_spans(tr.s, tr.policy.threshold);
        r5.push_back(recall_at(spans, gt, 0.5));
        r7.push_back(recall_at(spans, gt, 0.7));
        row.values["r@0.5"] = r5.back();
        row.values["r@0.7"] = r7.back();
        break;
      }
      case TaskKind::narration: {
        const auto segs = narration_segments(s);
        const F1Result f = narration_f1(trig, segs);
        matched += f.matched;
        n_trig += f.triggers;
        n_seg += f.segments;
        row.values["f1"] = f.f1;
        row.values["precision"] = f.precision;
        row.values["recall"] = f.recall;
        for (const Response& r : tr.responses) {
          std::size_t regime = 0;
          for (int b : a.segment_boundaries)
            if (r.start_unit >= b) ++regime;
          if (regime < a.segment_captions.size())
            overlap.push_back(text_overlap_f1(strip_terminal(r.tokens), a.segment_captions[regime]));
        }
        break;
      }
      case TaskKind::reactive_qa: {
        if (!a.query_time_s || !a.clue_time_s) throw DataError("qa annotations incomplete: " + s.sample_id);
        const int c = crr_score(tr.first_response_unit(), *a.query_time_s, *a.clue_time_s);
        row.values["crr"] = c;
        crr.push_back(c);
        const double o =
            tr.responses.empty() ? 0.0 : text_overlap_f1(strip_terminal(tr.responses.front().tokens), a.answer_tokens);
        row.values["answer_overlap_f1"] = o;
        overlap.push_back(o);
        break;
      }
    }
    rep.samples.push_back(std::move(row));
  }

  rep.metrics["samples"] = static_cast<double>(traces.size());
  switch (task) {
    case TaskKind::alert:
      rep.metrics["alert_success"] = mean_of(success);
      rep.metrics["first_response_acc"] = mean_of(first_acc);
      rep.metrics["rec"] = rec.rate();
      rep.metrics["mAP"] = mean_of(aps);
      rep.metrics["hit@1"] = mean_of(hits);
      rep.metrics["r@0.5"] = mean_of(r5);
      rep.metrics["r@0.7"] = mean_of(r7);
      break;
    case TaskKind::narration: {
      const F1Result f = f1_from_counts(matched, n_trig, n_seg);
      rep.metrics["f1"] = f.f1;
      rep.metrics["precision"] = f.precision;
      rep.metrics["recall"] = f.recall;
      rep.metrics["caption_overlap_f1"] = mean_of(overlap);
      break;
    }
    case TaskKind::reactive_qa:
      rep.metrics["crr"] = mean_of(crr);
      rep.metrics["answer_overlap_f1"] = mean_of(overlap);
      break;
  }
  return rep;
}

std::string format_report(const EvalReport& r) {
  std::ostringstream os;
  os.precision(6);
  os << "task: " << r.task << "\n";
  os << "policy: window=" << r.policy.window << " threshold=" << r.policy.threshold
     << " budget=" << r.policy.token_budget << " cooldown=" << r.policy.cooldown_units
     << " mode=" << to_string(r.policy.mode) << " smoothing=" << to_string(r.policy.smoothing) << "\n";
  os << "metrics:\n";
  for (const auto& [k, v] : r.metrics) os << "  " << k << ": " << v << "\n";
  for (const std::string& w : r.warnings) os << "warning: " << w << "\n";
  os << "\n" << format_table(r);
  return os.str();
}

std::string format_table(const EvalReport& r) {
  std::ostringstream os;
  os.precision(6);
  os << "sample_id,metric,value\n";
  for (const SampleScore& s : r.samples)
    for (const auto& [k, v] : s.values) os << s.sample_id << ',' << k << ',' << v << '\n';
  for (const auto& [k, v] : r.metrics) os << "ALL," << k << ',' << v << '\n';
  return os.str();
}

}  // namespace streamgate
