#include "streamgate/speak_head.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace streamgate {
namespace {

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

}  // namespace

std::vector<double> aggregate_layers(std::span<const std::vector<double>> states, std::span<const double> alpha) {
  if (states.empty() || states.size() != alpha.size())
    throw std::invalid_argument("aggregate_layers: need exactly one alpha per layer state");
  const double mx = *std::max_element(alpha.begin(), alpha.end());
  if (!std::isfinite(mx)) throw std::invalid_argument("aggregate_layers: alpha has no finite entry");
  std::vector<double> w(alpha.size());
  double z = 0.0;
  for (std::size_t k = 0; k < alpha.size(); ++k) z += (w[k] = std::exp(alpha[k] - mx));
  std::vector<double> out(states[0].size(), 0.0);
  for (std::size_t k = 0; k < states.size(); ++k) {
    if (states[k].size() != out.size()) throw std::invalid_argument("aggregate_layers: state width mismatch");
    const double wk = w[k] / z;
    if (wk == 0.0) continue;
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += wk * states[k][c];
  }
  return out;
}

double speak_logit(std::span<const double> x, const SpeakHeadParams& p) {
  const Tensor& w1 = p.w1.value;
  if (x.size() != w1.rows()) throw std::invalid_argument("speak_logit: input width mismatch");
  std::vector<double> hidden(w1.cols());
  for (std::size_t j = 0; j < w1.cols(); ++j) {
    double acc = p.b1.value(0, j);
    for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * w1(i, j);
    hidden[j] = gelu(acc);
  }
  double out = p.b2.value(0, 0);
  for (std::size_t j = 0; j < hidden.size(); ++j) out += hidden[j] * p.w2.value(j, 0);
  return out;
}

double speak_prob(std::span<const double> x, const SpeakHeadParams& p) {
  const double l = speak_logit(x, p);
  return l >= 0 ? 1.0 / (1.0 + std::exp(-l)) : std::exp(l) / (1.0 + std::exp(l));
}

Var speak_logits(Tape& tape, std::span<const Var> states, const SpeakHeadParams& params, bool trainable) {
  auto bind = [&](const Parameter& p) {
    return trainable ? tape.param(const_cast<Parameter&>(p)) : tape.alias(p.value);
  };
  Var mixed = ad::softmax_mix(states, bind(params.alpha));
  Var h = ad::gelu(ad::add_row(ad::matmul(mixed, bind(params.w1)), bind(params.b1)));
  return ad::add_row(ad::matmul(h, bind(params.w2)), bind(params.b2));
}

Var speak_logits(Tape& tape, std::span<const Var> states, SpeakHeadParams& params) {
  return speak_logits(tape, states, params, true);
}

double timing_loss(std::span<const double> p, std::span<const int> z, double w_pos) {
  if (p.size() != z.size() || p.empty()) throw std::invalid_argument("timing_loss: p and z must have equal non-zero length");
  double acc = 0.0;
  for (std::size_t t = 0; t < p.size(); ++t) {
    if (!(p[t] > 0.0 && p[t] < 1.0)) throw std::invalid_argument("timing_loss: probabilities must lie in (0,1)");
    acc += z[t] != 0 ? w_pos * std::log(p[t]) : std::log1p(-p[t]);
  }
  return -acc / static_cast<double>(p.size());
}

double lm_loss(const Tensor& logits, std::span<const int> targets) {
  if (targets.empty()) throw std::invalid_argument("lm_loss: empty target");
  if (logits.rows() != targets.size()) throw std::invalid_argument("lm_loss: one logit row per target required");
  double loss = 0.0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= logits.cols())
      throw std::invalid_argument("lm_loss: target out of range");
    auto row = logits.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    loss += mx + std::log(z) - row[static_cast<std::size_t>(targets[r])];
  }
  return loss;
}

double total_loss(double l_time, std::optional<double> l_lm, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("total_loss: lambda must be non-negative");
  return l_lm ? l_time + lambda * *l_lm : l_time;
}

}  // namespace streamgate
