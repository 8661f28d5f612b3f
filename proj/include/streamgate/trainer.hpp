#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "streamgate/backbone.hpp"
#include "streamgate/checkpoint.hpp"
#include "streamgate/stream_sim.hpp"

// Two-stage curriculum. Stage 1 fits the LM objective on reactive QA streams
// with the speak head untouched; stage 2 fits the weighted timing loss on
// proactive streams plus λ·LM on a mixed-in fraction of QA streams.

namespace streamgate {

struct TrainConfig {
  int stage = 1;
  double learning_rate = 3e-4;
  int steps = 100;
  int batch_size = 8;
  double lambda = 0.5;
  std::optional<double> w_pos = 3.0;  // nullopt: N_neg / N_pos of the proactive set
  double qa_mix_ratio = 0.2;
  std::uint64_t seed = 0;
  bool freeze_projections = false;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;  // global-norm clip; 0 disables
  int checkpoint_every = 0;
  std::string checkpoint_path;

  // Throws ConfigError.
  void validate() const;
};

// A stream packed once for training: the full streaming layout with its
// timing labels and supervised response rows.
struct PreparedSample {
  std::string sample_id;
  TaskKind task = TaskKind::alert;
  PackedSequence seq;
  std::vector<int> labels;  // one per unit, aligned with seq.unit_eos_rows
};

// QA samples are cut after their response (later units cannot influence the
// supervised rows).
PreparedSample prepare_sample(const StreamSample& sample);
std::vector<PreparedSample> prepare_samples(std::span<const StreamSample> samples);

struct BatchLoss {
  std::optional<double> l_time;
  std::optional<double> l_lm;
  double l_total = 0.0;
};

enum class Objective { lm_only, joint };

// L_time: mean over proactive samples of the per-sample weighted BCE.
// L_LM: mean over QA samples of the summed response negative log-likelihood.
// lm_only returns L_LM; joint returns L_time + λ·L_LM (LM term only when QA
// samples are present). With `accumulate_grad`, parameter gradients of the
// returned total are added into Parameter::grad.
BatchLoss batch_loss(ModelParams& params, std::span<const PreparedSample* const> proactive,
                     std::span<const PreparedSample* const> qa, Objective objective, double lambda, double w_pos,
                     bool accumulate_grad);

// Per-unit speak probabilities over the training layout of a sample.
std::vector<double> speak_probabilities(const ModelParams& params, const PreparedSample& sample);

// Mean per-sample timing loss over a held-out set.
double heldout_timing_loss(const ModelParams& params, std::span<const PreparedSample> samples, double w_pos);

// Fraction of units with p ≥ threshold over an evaluation set.
double positive_prediction_rate(const ModelParams& params, std::span<const PreparedSample> samples, double threshold);

struct StepMetrics {
  int stage = 0;
  int step = 0;
  std::optional<double> l_time;
  std::optional<double> l_lm;
  double l_total = 0.0;
  double grad_norm = 0.0;
};

using MetricsSink = std::function<void(const StepMetrics&)>;

struct TrainResult {
  std::vector<StepMetrics> history;
  double w_pos = 0.0;
};

// Fresh checkpoint from a model config.
Checkpoint initial_checkpoint(const ModelConfig& config, std::uint64_t seed);

TrainResult train_stage1(Checkpoint& ckpt, std::span<const StreamSample> qa, const TrainConfig& config,
                         const MetricsSink& sink = {});
// Refuses a checkpoint that has not completed stage 1.
TrainResult train_stage2(Checkpoint& ckpt, std::span<const StreamSample> proactive,
                         std::span<const StreamSample> qa, const TrainConfig& config, const MetricsSink& sink = {});

std::uint64_t config_hash(const ModelConfig& model, const TrainConfig& train);

// Sensitivity sweep over the positive-class weight: one stage-1 model per
// seed, then one stage-2 run per (seed, w_pos) from it, scored by the
// positive-prediction rate at `threshold` on a fixed evaluation set.
struct SweepSpec {
  ModelConfig model;
  TrainConfig stage1;
  TrainConfig stage2;
  std::vector<double> w_pos_values{1.0, 3.0, 9.0};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  double threshold = 0.5;
};

struct SweepRow {
  double w_pos = 0.0;
  std::vector<double> per_seed_rate;
  double mean_rate = 0.0;
};

std::vector<SweepRow> run_wpos_sweep(const SweepSpec& spec, std::span<const StreamSample> proactive_train,
                                     std::span<const StreamSample> qa_train, std::span<const StreamSample> eval);

}  // namespace streamgate
