#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "streamgate/tensor.hpp"

// Tape-based reverse-mode differentiation over Tensor values.
//
// Every op evaluates eagerly. When the tape is recording and at least one
// input needs a gradient, the op also records a backward closure; backward()
// replays those closures in reverse order and finally adds leaf gradients into
// the owning Parameter::grad buffers.

namespace streamgate {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}
  void zero_grad() { grad = Tensor(value.rows(), value.cols()); }
};

class Tape;

class Var {
 public:
  Var() = default;
  bool valid() const { return tape_ != nullptr; }
  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }
  const Tensor& value() const;

 private:
  friend class Tape;
  Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Tensor value);
  // Binds a parameter as a leaf. Binding the same parameter twice returns the
  // same Var. The parameter must outlive the tape.
  Var param(Parameter& p);
  // Read-only view of external storage (no gradient). `value` must outlive the tape.
  Var alias(const Tensor& value);

  const Tensor& value(Var v) const { return value(v.id_); }
  const Tensor& value(std::size_t id) const;
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  // Gradient buffer for a node, allocated on first access.
  Tensor& grad(std::size_t id);
  const Tensor* grad_if_any(std::size_t id) const;

  // Reverse pass from a 1×1 loss. Parameter gradients are accumulated (+=).
  void backward(Var loss);

  // Op-author interface: records a node computed from `inputs`.
  Var push(Tensor value, std::span<const Var> inputs, Backward back);
  Var push(Tensor value, std::initializer_list<Var> inputs, Backward back) {
    return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(back));
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;  // parameter leaves alias their storage
    Parameter* param = nullptr;
    Tensor grad;
    bool has_grad = false;
    bool needs_grad = false;
    Backward back;
  };

  bool record_;
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> bound_;
};

namespace ad {

Var matmul(Var a, Var b);
Var add(Var a, Var b);
// x (n×m) + b (1×m) broadcast over rows.
Var add_row(Var x, Var b);
Var scale(Var x, double c);
// Row-wise RMS normalisation with a learned 1×d gain.
Var rmsnorm(Var x, Var gain, double eps = 1e-6);
// Exact (erf) GELU.
Var gelu(Var x);
// Rotates channel pairs (2j, 2j+1) of every head by the per-row angles whose
// cos/sin are given as n×(head_dim/2) tables.
Var rope(Var x, const Tensor& cos, const Tensor& sin, std::size_t n_heads);
// Multi-head causal attention. Query row i sits at absolute index past + i and
// attends to every cached row plus current rows 0..i. past_k/past_v hold
// already-rotated keys and values and are treated as constants.
Var causal_attention(Var q, Var k, Var v, std::size_t n_heads, const Tensor* past_k = nullptr,
                     const Tensor* past_v = nullptr);
Var gather_rows(Var table, std::span<const int> ids);
Var select_rows(Var x, std::span<const std::size_t> rows);

struct RowPlacement {
  Var source;
  std::vector<std::size_t> dst_rows;  // dst_rows[r] receives source row r
};
// Builds an n×cols matrix from row placements; every destination row must be
// written exactly once.
Var scatter_rows(std::size_t n, std::size_t cols, std::span<const RowPlacement> pieces);

// Σ_k softmax(alpha)_k · xs[k]; alpha is 1×K.
Var softmax_mix(std::span<const Var> xs, Var alpha);

// mean_t of −[w_pos·z_t·log σ(l_t) + (1−z_t)·log(1−σ(l_t))] over an n×1 logit column.
Var weighted_bce_with_logits(Var logits, std::span<const int> labels, double w_pos);
// Σ_i −log softmax(logits_i)[targets_i].
Var cross_entropy_sum(Var logits, std::span<const int> targets);

Var sum_all(Var x);

}  // namespace ad
}  // namespace streamgate
