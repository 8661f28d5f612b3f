#include <doctest.h>

#include <random>

#include "../oracles.hpp"
#include "streamgate/errors.hpp"
#include "streamgate/eval_suite.hpp"

using namespace streamgate;

TEST_CASE("interval overlap") {
  CHECK(iou(Interval{2, 8}, Interval{4, 10}) == 0.5);
  CHECK(iou(Interval{2, 8}, Interval{2, 8}) == 1.0);
  CHECK(iou(Interval{0, 1}, Interval{3, 4}) == 0.0);
  CHECK(iou(Interval{3, 3}, Interval{5, 5}) == 0.0);
  CHECK(iou(SecondWindow{4, 9}, SecondWindow{4, 10}) == 6.0 / 7.0);
  CHECK(iou(SecondWindow{5, 5}, SecondWindow{5, 5}) == 1.0);
}

TEST_CASE("recall at threshold uses the top span") {
  const std::vector<SecondWindow> pred{{4, 9}};
  CHECK(recall_at(pred, {4, 10}, 0.5) == 1);
  CHECK(recall_at(pred, {4, 10}, 0.9) == 0);
  CHECK(recall_at(std::vector<SecondWindow>{}, {4, 10}, 0.5) == 0);
  // The longest span wins even when a shorter one overlaps better.
  const std::vector<SecondWindow> two{{0, 0}, {20, 25}};
  CHECK(recall_at(two, {0, 0}, 0.5) == 0);
  // Ties go to the earlier span.
  const std::vector<SecondWindow> tie{{0, 2}, {10, 12}};
  CHECK(recall_at(tie, {0, 2}, 1.0) == 1);
}

TEST_CASE("average precision fixtures") {
  const std::vector<SecondWindow> pos02{{0, 0}, {2, 2}};
  const auto perfect = map_hit(std::vector<double>{0.9, 0.1, 0.8}, pos02);
  REQUIRE(perfect);
  CHECK(perfect->ap == 1.0);
  CHECK(perfect->hit1 == 1);
  // Positive {0} ranked last of three: precision 1/3.
  const auto last = map_hit(std::vector<double>{0.1, 0.5, 0.9}, std::vector<SecondWindow>{{0, 0}});
  REQUIRE(last);
  CHECK(last->ap == 1.0 / 3.0);
  CHECK(last->hit1 == 0);
  // Two positives at ranks 2 and 3: (1/2 + 2/3) / 2.
  const auto lower = map_hit(std::vector<double>{0.2, 0.1, 0.9}, std::vector<SecondWindow>{{0, 1}});
  REQUIRE(lower);
  CHECK(lower->ap == (0.5 + 2.0 / 3.0) / 2.0);
  CHECK(map_hit(std::vector<double>{0.3, 0.1, 0.2}, std::vector<SecondWindow>{{0, 2}})->ap == 1.0);
  CHECK(!map_hit(std::vector<double>{0.3, 0.1}, std::vector<SecondWindow>{}).has_value());
  // Ties resolve to the earlier second.
  const auto tied = map_hit(std::vector<double>{0.5, 0.5}, std::vector<SecondWindow>{{1, 1}});
  CHECK(tied->hit1 == 0);
  CHECK(tied->ap == 0.5);
}

TEST_CASE("average precision matches the brute-force oracle") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 300; ++i) {
    const auto inst = oracle::random_ranking(rng);
    const auto a = map_hit(inst.scores, inst.windows);
    const auto b = oracle::map_hit(inst.scores, inst.windows);
    REQUIRE(a.has_value() == b.has_value());
    if (!a) continue;
    CHECK(a->ap == b->ap);
    CHECK(a->hit1 == b->hit1);
  }
}

TEST_CASE("average precision is invariant under monotone score transforms") {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 100; ++i) {
    auto inst = oracle::random_ranking(rng);
    const auto a = map_hit(inst.scores, inst.windows);
    for (double& s : inst.scores) s = std::exp(3.0 * s) - 7.0;
    const auto b = map_hit(inst.scores, inst.windows);
    REQUIRE(a.has_value() == b.has_value());
    if (a) CHECK(a->ap == b->ap);
  }
}

TEST_CASE("alert, recurrence, first response and waiting protocols") {
  CHECK(alert_success(17, {12, 28}) == 1);
  CHECK(alert_success(5, {12, 28}) == 0);
  CHECK(alert_success(std::nullopt, {12, 28}) == 0);

  CHECK(first_response_accuracy(12.0, 10.0) == 1);
  CHECK(first_response_accuracy(12.5, 10.0) == 0);
  CHECK(first_response_accuracy(std::nullopt, 10.0) == 0);

  const std::vector<SecondWindow> segs{{5, 9}, {13, 17}};
  CHECK(rec_score(std::vector<int>{7, 15}, segs) == 1.0);
  CHECK(rec_score(std::vector<int>{7}, segs) == 0.5);
  CHECK(rec_score(std::vector<int>{}, segs) == 0.0);
  CHECK(rec_score(std::vector<int>{6, 7, 8}, segs) == 0.5);

  CHECK(crr_score(9, 3, 8) == 1);
  CHECK(crr_score(5, 3, 8) == 0);
  CHECK(crr_score(std::nullopt, 3, 8) == 0);
}

TEST_CASE("narration matching") {
  const std::vector<SecondWindow> segs{{2, 4}, {6, 8}, {10, 12}};
  const F1Result f = narration_f1(std::vector<int>{3, 7}, segs);
  CHECK(f.precision == 1.0);
  CHECK(f.recall == 2.0 / 3.0);
  CHECK(f.f1 == doctest::Approx(0.8).epsilon(1e-15));
  const F1Result dup = narration_f1(std::vector<int>{3, 4}, segs);
  CHECK(dup.matched == 1);
  CHECK(dup.precision == 0.5);
  CHECK(narration_f1(std::vector<int>{}, segs).f1 == 0.0);
  // Shifting everything by a common offset leaves the score unchanged.
  const std::vector<SecondWindow> shifted{{12, 14}, {16, 18}, {20, 22}};
  CHECK(narration_f1(std::vector<int>{13, 17}, shifted).f1 == f.f1);
}

TEST_CASE("narration matching agrees with exhaustive matching") {
  std::mt19937_64 rng(13);
  for (int i = 0; i < 300; ++i) {
    const auto inst = oracle::random_matching(rng);
    const F1Result a = narration_f1(inst.triggers, inst.segments);
    const F1Result b = oracle::narration_f1(inst.triggers, inst.segments);
    CHECK(a.matched == b.matched);
    CHECK(a.f1 == b.f1);
  }
}

TEST_CASE("token overlap") {
  CHECK(text_overlap_f1(std::vector<int>{1, 2, 3}, std::vector<int>{1, 2, 3}) == 1.0);
  CHECK(text_overlap_f1(std::vector<int>{1, 2}, std::vector<int>{3, 4}) == 0.0);
  CHECK(text_overlap_f1(std::vector<int>{1, 2, 3, 4}, std::vector<int>{1, 2, 5, 6}) == 0.5);
  CHECK(text_overlap_f1(std::vector<int>{1, 1, 1}, std::vector<int>{1}) == 0.5);
}

TEST_CASE("narration segments run to the next boundary") {
  StreamSample s;
  s.task = TaskKind::narration;
  s.duration_s = 12;
  s.annotations.segment_boundaries = {3, 7};
  CHECK(narration_segments(s) == std::vector<SecondWindow>{{3, 6}, {7, 11}});
}

namespace {

SpeakTrace constructed_trace(const std::string& id, TaskKind task, std::vector<double> p, std::vector<int> trig) {
  SpeakTrace t;
  t.sample_id = id;
  t.task = task;
  t.p = p;
  t.s = p;
  t.triggered.assign(p.size(), false);
  for (int x : trig) t.triggered[static_cast<std::size_t>(x)] = true;
  return t;
}

}  // namespace

TEST_CASE("dataset evaluation on constructed traces") {
  StreamSample a, b;
  a.sample_id = "a";
  b.sample_id = "b";
  a.task = b.task = TaskKind::alert;
  a.duration_s = b.duration_s = 6;
  a.annotations.event_windows = {{2, 3}};
  b.annotations.event_windows = {{0, 1}, {4, 5}};
  std::vector<StreamSample> ann{a, b};
  std::vector<SpeakTrace> tr{
      constructed_trace("a", TaskKind::alert, {0.1, 0.2, 0.9, 0.8, 0.3, 0.1}, {2}),
      constructed_trace("b", TaskKind::alert, {0.1, 0.2, 0.3, 0.6, 0.7, 0.9}, {3, 5}),
  };
  const EvalReport r = evaluate(TaskKind::alert, tr, ann);
  CHECK(r.metrics.at("alert_success") == 0.5);
  CHECK(r.metrics.at("rec") == 2.0 / 3.0);
  CHECK(r.metrics.at("first_response_acc") == 0.5);
  // a: both positives on top, AP 1. b: positives at ranks 1,2,5,6.
  const double ap_b = (1.0 + 1.0 + 3.0 / 5.0 + 4.0 / 6.0) / 4.0;
  CHECK(r.metrics.at("mAP") == doctest::Approx((1.0 + ap_b) / 2.0).epsilon(1e-15));
  CHECK(r.metrics.at("hit@1") == 1.0);
  // a: span [2,3] vs [2,3] → 1. b: span [3,5] vs first window [0,1] → 0.
  CHECK(r.metrics.at("r@0.5") == 0.5);
  CHECK(format_table(r).find("ALL,alert_success,0.5") != std::string::npos);
  CHECK(format_report(r).find("task: alert") != std::string::npos);

  std::vector<SpeakTrace> orphan{constructed_trace("zzz", TaskKind::alert, {0.1}, {})};
  CHECK_THROWS_AS(evaluate(TaskKind::alert, orphan, ann), DataError);
  CHECK_THROWS_AS(evaluate(TaskKind::narration, tr, ann), DataError);
}
