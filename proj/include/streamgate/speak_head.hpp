#pragma once

#include <optional>
#include <span>
#include <vector>

#include "streamgate/autodiff.hpp"

namespace streamgate {

// Aggregation logits over the last K layers plus a two-layer GELU MLP
// (d_model → hidden → 1) read through a sigmoid.
struct SpeakHeadParams {
  Parameter alpha;  // 1 × K
  Parameter w1;     // d_model × hidden
  Parameter b1;     // 1 × hidden
  Parameter w2;     // hidden × 1
  Parameter b2;     // 1 × 1
};

// Σ_k softmax(alpha)_k · states[k]. Throws std::invalid_argument on K mismatch.
std::vector<double> aggregate_layers(std::span<const std::vector<double>> states, std::span<const double> alpha);

double speak_logit(std::span<const double> aggregated, const SpeakHeadParams& params);
double speak_prob(std::span<const double> aggregated, const SpeakHeadParams& params);

// Differentiable head: rows of `states[k]` are aggregated, then mapped to an
// n × 1 logit column.
Var speak_logits(Tape& tape, std::span<const Var> states, const SpeakHeadParams& params, bool trainable);
Var speak_logits(Tape& tape, std::span<const Var> states, SpeakHeadParams& params);

// −(1/T) Σ_t [w_pos·z_t·log p_t + (1−z_t)·log(1−p_t)].
double timing_loss(std::span<const double> p, std::span<const int> z, double w_pos);

// Σ_i −log softmax(logits_i)[targets_i] over the supervised response rows.
double lm_loss(const Tensor& logits, std::span<const int> targets);

// l_time + λ·l_lm; an absent LM term (no QA samples in the batch) contributes
// nothing.
double total_loss(double l_time, std::optional<double> l_lm, double lambda);

}  // namespace streamgate
