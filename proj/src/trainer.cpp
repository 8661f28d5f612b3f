#include "streamgate/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "streamgate/config.hpp"
#include "streamgate/errors.hpp"

namespace streamgate {
namespace {

void require_finite(double v, const char* what, int step) {
  if (!std::isfinite(v))
    throw NumericalError(std::string("non-finite ") + what + " at step " + std::to_string(step));
}

class AdamW {
 public:
  AdamW(std::vector<Parameter*> params, const TrainConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const Parameter* p : params_) {
      m_.emplace_back(p->value.rows(), p->value.cols());
      v_.emplace_back(p->value.rows(), p->value.cols());
    }
  }

  // Clips by global norm and applies one update. Returns the pre-clip norm.
  double step() {
    double sq = 0.0;
    for (const Parameter* p : params_)
      for (double g : p->grad.flat()) sq += g * g;
    const double norm = std::sqrt(sq);
    const double clip = (cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip) ? cfg_.grad_clip / norm : 1.0;
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto w = params_[i]->value.flat();
      auto g = params_[i]->grad.flat();
      auto m = m_[i].flat();
      auto v = v_[i].flat();
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double gj = g[j] * clip;
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
        const double mh = m[j] / bc1;
        const double vh = v[j] / bc2;
        w[j] -= cfg_.learning_rate * (mh / (std::sqrt(vh) + cfg_.adam_eps) + cfg_.weight_decay * w[j]);
      }
    }
    return norm;
  }

 private:
  std::vector<Parameter*> params_;
  const TrainConfig& cfg_;
  std::vector<Tensor> m_, v_;
  int t_ = 0;
};

std::vector<Parameter*> trainable_params(ModelParams& params, int stage, bool freeze_projections) {
  std::vector<Parameter*> out;
  for (ParamGroup g : {ParamGroup::embeddings, ParamGroup::projections, ParamGroup::layers, ParamGroup::lm_head,
                       ParamGroup::speak_head}) {
    if (g == ParamGroup::projections && freeze_projections) continue;
    if (g == ParamGroup::speak_head && stage == 1) continue;
    for (Parameter* p : params.group(g)) out.push_back(p);
  }
  return out;
}

// Epoch-wise shuffled index stream; deterministic for a given seed.
class IndexStream {
 public:
  IndexStream(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    reshuffle();
  }
  std::size_t next() {
    if (pos_ == order_.size()) reshuffle();
    return order_[pos_++];
  }

 private:
  void reshuffle() {
    std::shuffle(order_.begin(), order_.end(), rng_);
    pos_ = 0;
  }
  std::vector<std::size_t> order_;
  std::mt19937_64 rng_;
  std::size_t pos_ = 0;
};

std::vector<double> probs_of(const Tensor& logits) {
  std::vector<double> p(logits.rows());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = 1.0 / (1.0 + std::exp(-logits(i, 0)));
  return p;
}

template <typename Fn>
TrainResult run_loop(Checkpoint& ckpt, const TrainConfig& cfg, int stage, const MetricsSink& sink, Fn&& batch_step) {
  ModelParams& params = ckpt.params;
  AdamW opt(trainable_params(params, stage, cfg.freeze_projections), cfg);
  TrainResult result;
  for (int step = 0; step < cfg.steps; ++step) {
    params.zero_grad();
    const BatchLoss loss = batch_step(step);
    require_finite(loss.l_total, "loss", step);
    StepMetrics m{stage, step, loss.l_time, loss.l_lm, loss.l_total, opt.step()};
    require_finite(m.grad_norm, "gradient norm", step);
    result.history.push_back(m);
    if (sink) sink(m);
    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_path.empty() && (step + 1) % cfg.checkpoint_every == 0 &&
        step + 1 < cfg.steps)
      save_checkpoint(cfg.checkpoint_path, ckpt);
  }
  params.zero_grad();
  ckpt.stage_complete = stage;
  ckpt.config_hash = config_hash(params.config, cfg);
  if (!cfg.checkpoint_path.empty()) save_checkpoint(cfg.checkpoint_path, ckpt);
  return result;
}

}  // namespace

void TrainConfig::validate() const {
  if (stage != 1 && stage != 2) throw ConfigError("stage must be 1 or 2");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (steps <= 0) throw ConfigError("steps must be positive");
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
  if (w_pos && !(*w_pos > 0.0)) throw ConfigError("w_pos must be positive");
  if (!(qa_mix_ratio >= 0.0 && qa_mix_ratio <= 1.0)) throw ConfigError("qa_mix_ratio must lie in [0, 1]");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be non-negative");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
}

PreparedSample prepare_sample(const StreamSample& sample) {
  std::vector<SequenceSegment> segments = build_stream_sequence(sample);
  if (sample.task == TaskKind::reactive_qa) {
    auto it = std::find_if(segments.begin(), segments.end(),
                           [](const SequenceSegment& s) { return s.kind == SegmentKind::response; });
    if (it != segments.end()) segments.erase(it + 1, segments.end());
  }
  PositionCursor cursor;
  PreparedSample out;
  out.sample_id = sample.sample_id;
  out.task = sample.task;
  out.seq = pack_sequence(segments, cursor, sample.task == TaskKind::reactive_qa);
  if (sample.task != TaskKind::reactive_qa) {
    const TimingLabels z = label_timing(sample);
    for (int t : out.seq.unit_seconds) out.labels.push_back(z.z.at(static_cast<std::size_t>(t)));
  }
  return out;
}

std::vector<PreparedSample> prepare_samples(std::span<const StreamSample> samples) {
  std::vector<PreparedSample> out;
  out.reserve(samples.size());
  for (const StreamSample& s : samples) out.push_back(prepare_sample(s));
  return out;
}

BatchLoss batch_loss(ModelParams& params, std::span<const PreparedSample* const> proactive,
                     std::span<const PreparedSample* const> qa, Objective objective, double lambda, double w_pos,
                     bool accumulate_grad) {
  BatchLoss out;
  const bool use_time = objective == Objective::joint && !proactive.empty();
  if (objective == Objective::lm_only && qa.empty()) throw DataError("LM objective needs reactive QA samples");
  if (objective == Objective::joint && proactive.empty()) throw DataError("timing objective needs proactive samples");

  if (use_time) {
    double sum = 0.0;
    const double coeff = 1.0 / static_cast<double>(proactive.size());
    for (const PreparedSample* s : proactive) {
      Tape tape(accumulate_grad);
      const Encoded enc = encode(tape, params, s->seq.tokens, s->seq.positions);
      const Var logits = speak_logits_at(tape, params, enc, s->seq.unit_eos_rows);
      const Var l = ad::weighted_bce_with_logits(logits, s->labels, w_pos);
      sum += l.value()(0, 0);
      if (accumulate_grad) tape.backward(ad::scale(l, coeff));
    }
    out.l_time = sum * coeff;
  }
  if (!qa.empty()) {
    double sum = 0.0;
    const double weight = objective == Objective::joint ? lambda : 1.0;
    const double coeff = weight / static_cast<double>(qa.size());
    for (const PreparedSample* s : qa) {
      if (s->seq.lm_rows.empty()) throw DataError("qa sample " + s->sample_id + " has no supervised response");
      Tape tape(accumulate_grad && coeff != 0.0);
      const Encoded enc = encode(tape, params, s->seq.tokens, s->seq.positions);
      const Var logits = lm_logits(tape, params, enc.layers.back(), s->seq.lm_rows);
      const Var l = ad::cross_entropy_sum(logits, s->seq.lm_targets);
      sum += l.value()(0, 0);
      if (accumulate_grad && coeff != 0.0) tape.backward(ad::scale(l, coeff));
    }
    out.l_lm = sum / static_cast<double>(qa.size());
  }
  out.l_total = objective == Objective::joint ? total_loss(out.l_time.value_or(0.0), out.l_lm, lambda)
                                              : out.l_lm.value_or(0.0);
  return out;
}

std::vector<double> speak_probabilities(const ModelParams& params, const PreparedSample& sample) {
  Tape tape(false);
  const Encoded enc = encode(tape, params, sample.seq.tokens, sample.seq.positions);
  return probs_of(speak_logits_at(tape, params, enc, sample.seq.unit_eos_rows).value());
}

double heldout_timing_loss(const ModelParams& params, std::span<const PreparedSample> samples, double w_pos) {
  if (samples.empty()) throw DataError("held-out set is empty");
  double sum = 0.0;
  for (const PreparedSample& s : samples) sum += timing_loss(speak_probabilities(params, s), s.labels, w_pos);
  return sum / static_cast<double>(samples.size());
}

double positive_prediction_rate(const ModelParams& params, std::span<const PreparedSample> samples,
                                double threshold) {
  std::size_t pos = 0, total = 0;
  for (const PreparedSample& s : samples) {
    for (double p : speak_probabilities(params, s)) pos += p >= threshold ? 1 : 0;
    total += s.seq.unit_eos_rows.size();
  }
  if (total == 0) throw DataError("evaluation set has no units");
  return static_cast<double>(pos) / static_cast<double>(total);
}

Checkpoint initial_checkpoint(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Checkpoint c;
  c.params = ModelParams::init(config, seed);
  c.stage_complete = 0;
  return c;
}

TrainResult train_stage1(Checkpoint& ckpt, std::span<const StreamSample> qa, const TrainConfig& config,
                         const MetricsSink& sink) {
  config.validate();
  if (qa.empty()) throw DataError("stage 1 needs a non-empty reactive QA dataset");
  for (const StreamSample& s : qa)
    if (s.task != TaskKind::reactive_qa) throw DataError("stage 1 dataset contains non-QA sample " + s.sample_id);
  const std::vector<PreparedSample> prepared = prepare_samples(qa);
  IndexStream order(prepared.size(), derive_seed(config.seed, 1));
  TrainResult r = run_loop(ckpt, config, 1, sink, [&](int) {
    std::vector<const PreparedSample*> batch;
    for (int i = 0; i < config.batch_size; ++i) batch.push_back(&prepared[order.next()]);
    return batch_loss(ckpt.params, {}, batch, Objective::lm_only, config.lambda, 1.0, true);
  });
  return r;
}

TrainResult train_stage2(Checkpoint& ckpt, std::span<const StreamSample> proactive,
                         std::span<const StreamSample> qa, const TrainConfig& config, const MetricsSink& sink) {
  config.validate();
  if (ckpt.stage_complete < 1) throw ConfigError("stage 2 requires a checkpoint that completed stage 1");
  if (proactive.empty()) throw DataError("stage 2 needs a non-empty proactive dataset");
  for (const StreamSample& s : proactive)
    if (s.task == TaskKind::reactive_qa) throw DataError("proactive dataset contains QA sample " + s.sample_id);
  for (const StreamSample& s : qa)
    if (s.task != TaskKind::reactive_qa) throw DataError("QA mix contains non-QA sample " + s.sample_id);

  const std::vector<PreparedSample> pro = prepare_samples(proactive);
  std::vector<TimingLabels> labels;
  for (const PreparedSample& s : pro) labels.push_back({s.labels});
  const LabelCounts counts = count_labels(labels);
  if (counts.positives == 0) throw DataError("proactive dataset has no positive timing labels");
  const double w_pos = config.w_pos.value_or(compute_pos_weight(counts));

  int n_qa = 0;
  if (!qa.empty() && config.qa_mix_ratio > 0.0)
    n_qa = std::clamp(static_cast<int>(std::lround(config.qa_mix_ratio * config.batch_size)), 1,
                      std::max(1, config.batch_size - 1));
  const int n_pro = std::max(1, config.batch_size - n_qa);
  const std::vector<PreparedSample> qas = n_qa > 0 ? prepare_samples(qa) : std::vector<PreparedSample>{};

  IndexStream pro_order(pro.size(), derive_seed(config.seed, 2));
  IndexStream qa_order(std::max<std::size_t>(qas.size(), 1), derive_seed(config.seed, 3));
  TrainResult r = run_loop(ckpt, config, 2, sink, [&](int) {
    std::vector<const PreparedSample*> pb, qb;
    for (int i = 0; i < n_pro; ++i) pb.push_back(&pro[pro_order.next()]);
    for (int i = 0; i < n_qa; ++i) qb.push_back(&qas[qa_order.next()]);
    return batch_loss(ckpt.params, pb, qb, Objective::joint, config.lambda, w_pos, true);
  });
  r.w_pos = w_pos;
  return r;
}

std::uint64_t config_hash(const ModelConfig& model, const TrainConfig& train) {
  nlohmann::json j;
  j["model"] = to_json(model);
  j["train"] = to_json(train);
  j["train"].erase("checkpoint_path");
  j["train"].erase("checkpoint_every");
  return fnv1a(j.dump());
}

std::vector<SweepRow> run_wpos_sweep(const SweepSpec& spec, std::span<const StreamSample> proactive_train,
                                     std::span<const StreamSample> qa_train, std::span<const StreamSample> eval) {
  if (spec.w_pos_values.empty() || spec.seeds.empty()) throw ConfigError("sweep needs w_pos values and seeds");
  const std::vector<PreparedSample> eval_set = prepare_samples(eval);
  std::vector<SweepRow> rows(spec.w_pos_values.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].w_pos = spec.w_pos_values[i];
  for (std::uint64_t seed : spec.seeds) {
    Checkpoint base = initial_checkpoint(spec.model, seed);
    TrainConfig s1 = spec.stage1;
    s1.stage = 1;
    s1.seed = seed;
    s1.checkpoint_path.clear();
    train_stage1(base, qa_train, s1);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      Checkpoint run = base;
      TrainConfig s2 = spec.stage2;
      s2.stage = 2;
      s2.seed = seed;
      s2.w_pos = spec.w_pos_values[i];
      s2.checkpoint_path.clear();
      train_stage2(run, proactive_train, qa_train, s2);
      rows[i].per_seed_rate.push_back(positive_prediction_rate(run.params, eval_set, spec.threshold));
    }
  }
  for (SweepRow& r : rows)
    r.mean_rate = std::accumulate(r.per_seed_rate.begin(), r.per_seed_rate.end(), 0.0) /
                  static_cast<double>(r.per_seed_rate.size());
  return rows;
}

}  // namespace streamgate
