#include "streamgate/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "streamgate/kernels.hpp"

namespace streamgate {

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return Var(this, it->second);
  Node n;
  n.external = &p.value;
  n.param = &p;
  n.needs_grad = record_;
  nodes_.push_back(std::move(n));
  bound_.emplace(&p, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::alias(const Tensor& value) {
  Node n;
  n.external = &value;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.external != nullptr ? *n.external : n.value;
}

Tensor& Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    const Tensor& v = value(id);
    n.grad = Tensor(v.rows(), v.cols());
    n.has_grad = true;
  }
  return n.grad;
}

const Tensor* Tape::grad_if_any(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.has_grad ? &n.grad : nullptr;
}

Var Tape::push(Tensor value, std::span<const Var> inputs, Backward back) {
  Node n;
  n.value = std::move(value);
  if (record_) {
    for (const Var& in : inputs) {
      if (in.tape_ != this) throw std::invalid_argument("Tape::push: input from a different tape");
      if (nodes_[in.id_].needs_grad) n.needs_grad = true;
    }
    if (n.needs_grad) n.back = std::move(back);
  }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var loss) {
  if (!record_) throw std::logic_error("Tape::backward: tape is not recording");
  const Tensor& lv = value(loss.id_);
  if (lv.rows() != 1 || lv.cols() != 1) throw std::invalid_argument("Tape::backward: loss must be a 1x1 scalar");
  grad(loss.id_)(0, 0) += 1.0;
  for (std::size_t id = loss.id_ + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.has_grad && n.back) n.back(*this, id);
  }
  for (Node& n : nodes_) {
    if (n.param == nullptr || !n.has_grad) continue;
    if (!n.param->grad.same_shape(n.param->value)) n.param->zero_grad();
    kernels::add(n.grad.flat(), n.param->grad.flat());
  }
}

namespace ad {
namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = a.tape();
  Tensor out = streamgate::matmul(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.push(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(ia)) matmul_nt_acc(g, t.value(ib), t.grad(ia));
    if (t.needs_grad(ib)) matmul_tn_acc(t.value(ia), g, t.grad(ib));
  });
}

Var add(Var a, Var b) {
  require(a.value().same_shape(b.value()), "ad::add: shape mismatch");
  Tensor out = a.value();
  kernels::add(b.value().flat(), out.flat());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(ia)) kernels::add(g.flat(), t.grad(ia).flat());
    if (t.needs_grad(ib)) kernels::add(g.flat(), t.grad(ib).flat());
  });
}

Var add_row(Var x, Var b) {
  const Tensor& xv = x.value();
  const Tensor& bv = b.value();
  require(bv.rows() == 1 && bv.cols() == xv.cols(), "ad::add_row: bias must be 1 x cols");
  Tensor out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r) kernels::add(bv.row(0), out.row(r));
  const std::size_t ix = x.id(), ib = b.id();
  return x.tape().push(std::move(out), {x, b}, [ix, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(ix)) kernels::add(g.flat(), t.grad(ix).flat());
    if (t.needs_grad(ib)) {
      Tensor& gb = t.grad(ib);
      for (std::size_t r = 0; r < g.rows(); ++r) kernels::add(g.row(r), gb.row(0));
    }
  });
}

Var scale(Var x, double c) {
  Tensor out = x.value();
  kernels::scale(c, out.flat());
  const std::size_t ix = x.id();
  return x.tape().push(std::move(out), {x}, [ix, c](Tape& t, std::size_t self) {
    kernels::axpy(c, t.grad(self).flat(), t.grad(ix).flat());
  });
}

Var rmsnorm(Var x, Var gain, double eps) {
  const Tensor& xv = x.value();
  const Tensor& gv = gain.value();
  require(gv.rows() == 1 && gv.cols() == xv.cols(), "ad::rmsnorm: gain must be 1 x cols");
  const std::size_t n = xv.rows(), d = xv.cols();
  Tensor out(n, d);
  Tensor inv_rms(n, 1);
  for (std::size_t r = 0; r < n; ++r) {
    const double ms = kernels::sumsq(xv.row(r)) / static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(ms + eps);
    inv_rms(r, 0) = inv;
    auto src = xv.row(r);
    auto dst = out.row(r);
    for (std::size_t c = 0; c < d; ++c) dst[c] = src[c] * inv * gv(0, c);
  }
  const std::size_t ix = x.id(), ig = gain.id();
  return x.tape().push(std::move(out), {x, gain},
                       [ix, ig, inv_rms = std::move(inv_rms)](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(ix);
    const Tensor& gv = t.value(ig);
    const std::size_t n = xv.rows(), d = xv.cols();
    std::vector<double> xhat(d), dxhat(d);
    for (std::size_t r = 0; r < n; ++r) {
      const double inv = inv_rms(r, 0);
      auto xr = xv.row(r);
      auto gr = g.row(r);
      for (std::size_t c = 0; c < d; ++c) {
        xhat[c] = xr[c] * inv;
        dxhat[c] = gr[c] * gv(0, c);
      }
      if (t.needs_grad(ig)) {
        Tensor& gg = t.grad(ig);
        for (std::size_t c = 0; c < d; ++c) gg(0, c) += gr[c] * xhat[c];
      }
      if (t.needs_grad(ix)) {
        const double proj = kernels::dot(dxhat, xhat) / static_cast<double>(d);
        auto dx = t.grad(ix).row(r);
        for (std::size_t c = 0; c < d; ++c) dx[c] += (dxhat[c] - xhat[c] * proj) * inv;
      }
    }
  });
}

constexpr double kInvSqrt2 = 0.70710678118654752440;

Var gelu(Var x) {
  Tensor out = x.value();
  for (double& v : out.flat()) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  const std::size_t ix = x.id();
  return x.tape().push(std::move(out), {x}, [ix](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(ix);
    Tensor& dx = t.grad(ix);
    constexpr double kInvSqrt2Pi = 0.3989422804014327;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double v = xv.data()[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      dx.data()[i] += g.data()[i] * (cdf + v * pdf);
    }
  });
}

Var rope(Var x, const Tensor& cos, const Tensor& sin, std::size_t n_heads) {
  const Tensor& xv = x.value();
  require(n_heads > 0 && xv.cols() % n_heads == 0, "ad::rope: width not divisible by heads");
  const std::size_t hd = xv.cols() / n_heads;
  require(hd % 2 == 0, "ad::rope: head_dim must be even");
  require(cos.rows() == xv.rows() && cos.cols() == hd / 2 && sin.same_shape(cos),
          "ad::rope: angle table shape mismatch");
  Tensor out(xv.rows(), xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t h = 0; h < n_heads; ++h)
      for (std::size_t j = 0; j < hd / 2; ++j) {
        const std::size_t c0 = h * hd + 2 * j;
        const double a = xv(r, c0), b = xv(r, c0 + 1);
        const double cs = cos(r, j), sn = sin(r, j);
        out(r, c0) = a * cs - b * sn;
        out(r, c0 + 1) = a * sn + b * cs;
      }
  const std::size_t ix = x.id();
  if (!x.tape().recording()) return x.tape().push(std::move(out), {x}, {});
  return x.tape().push(std::move(out), {x}, [ix, cos, sin, n_heads, hd](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& dx = t.grad(ix);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t h = 0; h < n_heads; ++h)
        for (std::size_t j = 0; j < hd / 2; ++j) {
          const std::size_t c0 = h * hd + 2 * j;
          const double ga = g(r, c0), gb = g(r, c0 + 1);
          const double cs = cos(r, j), sn = sin(r, j);
          dx(r, c0) += ga * cs + gb * sn;
          dx(r, c0 + 1) += -ga * sn + gb * cs;
        }
  });
}

namespace {

constexpr std::size_t kAttnBlock = 32;

// Column slice [h·hd, (h+1)·hd) of m as a contiguous rows × hd matrix.
Tensor head_cols(const Tensor& m, std::size_t h, std::size_t hd, double scale = 1.0) {
  Tensor out(m.rows(), hd);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < hd; ++c) out(r, c) = scale * m(r, h * hd + c);
  return out;
}

// Per-head keys or values over the cached prefix followed by the current rows.
Tensor head_rows(const Tensor* past_m, const Tensor& cur, std::size_t h, std::size_t hd) {
  const std::size_t past = past_m != nullptr ? past_m->rows() : 0;
  Tensor out(past + cur.rows(), hd);
  for (std::size_t j = 0; j < past; ++j)
    for (std::size_t c = 0; c < hd; ++c) out(j, c) = (*past_m)(j, h * hd + c);
  for (std::size_t j = 0; j < cur.rows(); ++j)
    for (std::size_t c = 0; c < hd; ++c) out(past + j, c) = cur(j, h * hd + c);
  return out;
}

void add_head_cols(const Tensor& src, std::size_t h, std::size_t hd, double scale, Tensor& dst) {
  for (std::size_t r = 0; r < src.rows(); ++r)
    for (std::size_t c = 0; c < hd; ++c) dst(r, h * hd + c) += scale * src(r, c);
}

// Splits n query rows into blocks; a block only needs the first past+i0+rows
// key columns.
template <typename Fn>
void causal_blocks(std::size_t n, std::size_t past, Fn&& fn) {
  for (std::size_t i0 = 0; i0 < n; i0 += kAttnBlock) {
    const std::size_t rows = std::min(kAttnBlock, n - i0);
    fn(i0, rows, past + i0 + rows);
  }
}

}  // namespace

Var causal_attention(Var q, Var k, Var v, std::size_t n_heads, const Tensor* past_k, const Tensor* past_v) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  require(qv.same_shape(kv) && qv.same_shape(vv), "ad::causal_attention: q/k/v shape mismatch");
  require((past_k == nullptr) == (past_v == nullptr), "ad::causal_attention: past k/v must be given together");
  const std::size_t n = qv.rows(), d = qv.cols();
  require(n_heads > 0 && d % n_heads == 0, "ad::causal_attention: width not divisible by heads");
  const std::size_t past = past_k != nullptr ? past_k->rows() : 0;
  if (past_k != nullptr)
    require(past_k->cols() == d && past_v->cols() == d && past_v->rows() == past,
            "ad::causal_attention: cache shape mismatch");
  const std::size_t total = past + n;
  const std::size_t hd = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const auto& kern = kernels::active();

  const bool keep = q.tape().recording();
  std::vector<Tensor> probs;  // per head, n × total; row i is zero past column past+i
  if (keep) probs.reserve(n_heads);
  Tensor out(n, d);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const Tensor qh = head_cols(qv, h, hd, scale);
    const Tensor kt = transpose(head_rows(past_k, kv, h, hd));
    const Tensor vh = head_rows(past_v, vv, h, hd);
    Tensor ph(n, total);
    Tensor oh(n, hd);
    causal_blocks(n, past, [&](std::size_t i0, std::size_t rows, std::size_t cols) {
      kern.gemm(rows, cols, hd, qh.data() + i0 * hd, hd, kt.data(), total, ph.data() + i0 * total, total);
      for (std::size_t i = i0; i < i0 + rows; ++i) {
        double* s = ph.data() + i * total;
        const std::size_t len = past + i + 1;
        const double z = kern.exp_shift_sum(s, len, kern.max(s, len));
        kern.scale(1.0 / z, s, len);
        std::fill(s + len, s + cols, 0.0);
      }
      kern.gemm(rows, hd, cols, ph.data() + i0 * total, total, vh.data(), hd, oh.data() + i0 * hd, hd);
    });
    add_head_cols(oh, h, hd, 1.0, out);
    if (keep) probs.push_back(std::move(ph));
  }

  const std::size_t iq = q.id(), ik = k.id(), iv = v.id();
  if (!keep) return q.tape().push(std::move(out), {q, k, v}, {});
  // Cached rows are constants; only their values are needed to rebuild the
  // per-head key/value matrices during the reverse pass.
  Tensor pk = past_k != nullptr ? *past_k : Tensor(0, d);
  Tensor pv = past_v != nullptr ? *past_v : Tensor(0, d);
  return q.tape().push(
      std::move(out), {q, k, v},
      [iq, ik, iv, n_heads, hd, past, n, total, scale, probs = std::move(probs), pk = std::move(pk),
       pv = std::move(pv)](Tape& t, std::size_t self) {
        const auto& kern = kernels::active();
        const Tensor& g = t.grad(self);
        const Tensor& qv = t.value(iq);
        const Tensor& kv = t.value(ik);
        const Tensor& vv = t.value(iv);
        const bool gq = t.needs_grad(iq), gk = t.needs_grad(ik), gv = t.needs_grad(iv);
        const Tensor* pkp = past > 0 ? &pk : nullptr;
        const Tensor* pvp = past > 0 ? &pv : nullptr;
        for (std::size_t h = 0; h < n_heads; ++h) {
          const Tensor& ph = probs[h];
          const Tensor doh = head_cols(g, h, hd);
          const Tensor vt = transpose(head_rows(pvp, vv, h, hd));
          Tensor ds(n, total);
          causal_blocks(n, past, [&](std::size_t i0, std::size_t rows, std::size_t cols) {
            kern.gemm(rows, cols, hd, doh.data() + i0 * hd, hd, vt.data(), total, ds.data() + i0 * total, total);
          });
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t len = past + i + 1;
            const double* p = ph.data() + i * total;
            double* row = ds.data() + i * total;
            const double pdp = kern.dot(p, row, len);
            for (std::size_t j = 0; j < len; ++j) row[j] = p[j] * (row[j] - pdp);
            std::fill(row + len, row + total, 0.0);
          }
          if (gq) {
            const Tensor kh = head_rows(pkp, kv, h, hd);
            Tensor dqh(n, hd);
            causal_blocks(n, past, [&](std::size_t i0, std::size_t rows, std::size_t cols) {
              kern.gemm(rows, hd, cols, ds.data() + i0 * total, total, kh.data(), hd, dqh.data() + i0 * hd, hd);
            });
            add_head_cols(dqh, h, hd, scale, t.grad(iq));
          }
          // Only the current rows' keys/values receive gradient: columns
          // [past, total) of the score matrices contracted over query rows,
          // computed transposed (hd × n) so the wide matrices stream row-wise.
          // Column j only collects rows i ≥ j.
          auto contract = [&](const Tensor& lhs_t, const Tensor& wide, double sc, Tensor& grad) {
            Tensor acc(hd, n);
            for (std::size_t j0 = 0; j0 < n; j0 += kAttnBlock) {
              const std::size_t w = std::min(kAttnBlock, n - j0);
              kern.gemm(hd, w, n - j0, lhs_t.data() + j0, n, wide.data() + j0 * total + past + j0, total,
                        acc.data() + j0, n);
            }
            add_head_cols(transpose(acc), h, hd, sc, grad);
          };
          if (gk) contract(transpose(head_cols(qv, h, hd)), ds, scale, t.grad(ik));
          if (gv) contract(transpose(doh), ph, 1.0, t.grad(iv));
        }
      });
}

Var gather_rows(Var table, std::span<const int> ids) {
  const Tensor& tv = table.value();
  Tensor out(ids.size(), tv.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    require(ids[r] >= 0 && static_cast<std::size_t>(ids[r]) < tv.rows(), "ad::gather_rows: id out of range");
    std::copy_n(tv.row(static_cast<std::size_t>(ids[r])).data(), tv.cols(), out.row(r).data());
  }
  const std::size_t it = table.id();
  std::vector<int> idv(ids.begin(), ids.end());
  return table.tape().push(std::move(out), {table}, [it, idv = std::move(idv)](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& dt = t.grad(it);
    for (std::size_t r = 0; r < idv.size(); ++r) kernels::add(g.row(r), dt.row(static_cast<std::size_t>(idv[r])));
  });
}

Var select_rows(Var x, std::span<const std::size_t> rows) {
  const Tensor& xv = x.value();
  Tensor out(rows.size(), xv.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r] < xv.rows(), "ad::select_rows: row out of range");
    std::copy_n(xv.row(rows[r]).data(), xv.cols(), out.row(r).data());
  }
  const std::size_t ix = x.id();
  std::vector<std::size_t> rv(rows.begin(), rows.end());
  return x.tape().push(std::move(out), {x}, [ix, rv = std::move(rv)](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& dx = t.grad(ix);
    for (std::size_t r = 0; r < rv.size(); ++r) kernels::add(g.row(r), dx.row(rv[r]));
  });
}

Var scatter_rows(std::size_t n, std::size_t cols, std::span<const RowPlacement> pieces) {
  require(!pieces.empty(), "ad::scatter_rows: no pieces");
  Tensor out(n, cols);
  std::vector<char> written(n, 0);
  std::vector<Var> inputs;
  for (const RowPlacement& pc : pieces) {
    const Tensor& sv = pc.source.value();
    require(sv.cols() == cols && sv.rows() == pc.dst_rows.size(), "ad::scatter_rows: piece shape mismatch");
    for (std::size_t r = 0; r < sv.rows(); ++r) {
      const std::size_t dst = pc.dst_rows[r];
      require(dst < n && !written[dst], "ad::scatter_rows: destination row out of range or written twice");
      written[dst] = 1;
      std::copy_n(sv.row(r).data(), cols, out.row(dst).data());
    }
    inputs.push_back(pc.source);
  }
  require(std::all_of(written.begin(), written.end(), [](char w) { return w != 0; }),
          "ad::scatter_rows: destination row left unwritten");
  std::vector<std::pair<std::size_t, std::vector<std::size_t>>> map;
  for (const RowPlacement& pc : pieces) map.emplace_back(pc.source.id(), pc.dst_rows);
  return pieces.front().source.tape().push(std::move(out), inputs, [map = std::move(map)](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    for (const auto& [id, dst] : map) {
      if (!t.needs_grad(id)) continue;
      Tensor& ds = t.grad(id);
      for (std::size_t r = 0; r < dst.size(); ++r) kernels::add(g.row(dst[r]), ds.row(r));
    }
  });
}

Var softmax_mix(std::span<const Var> xs, Var alpha) {
  const Tensor& av = alpha.value();
  require(!xs.empty() && av.rows() == 1 && av.cols() == xs.size(), "ad::softmax_mix: alpha must be 1 x K");
  const std::size_t kk = xs.size();
  const Tensor& x0 = xs[0].value();
  std::vector<double> w(kk);
  const double mx = *std::max_element(av.flat().begin(), av.flat().end());
  require(std::isfinite(mx), "ad::softmax_mix: alpha has no finite entry");
  double z = 0.0;
  for (std::size_t i = 0; i < kk; ++i) z += (w[i] = std::exp(av(0, i) - mx));
  for (double& wi : w) wi /= z;
  Tensor out(x0.rows(), x0.cols());
  for (std::size_t i = 0; i < kk; ++i) {
    require(xs[i].value().same_shape(x0), "ad::softmax_mix: state shape mismatch");
    if (w[i] != 0.0) kernels::axpy(w[i], xs[i].value().flat(), out.flat());
  }
  std::vector<Var> inputs(xs.begin(), xs.end());
  inputs.push_back(alpha);
  std::vector<std::size_t> ids;
  for (const Var& x : xs) ids.push_back(x.id());
  const std::size_t ia = alpha.id();
  return alpha.tape().push(std::move(out), inputs, [ids = std::move(ids), ia, w](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    std::vector<double> dw(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      dw[i] = kernels::dot(g.flat(), t.value(ids[i]).flat());
      if (t.needs_grad(ids[i]) && w[i] != 0.0) kernels::axpy(w[i], g.flat(), t.grad(ids[i]).flat());
    }
    if (t.needs_grad(ia)) {
      double mean = 0.0;
      for (std::size_t i = 0; i < ids.size(); ++i) mean += w[i] * dw[i];
      Tensor& da = t.grad(ia);
      for (std::size_t i = 0; i < ids.size(); ++i) da(0, i) += w[i] * (dw[i] - mean);
    }
  });
}

Var weighted_bce_with_logits(Var logits, std::span<const int> labels, double w_pos) {
  const Tensor& lv = logits.value();
  require(lv.cols() == 1 && lv.rows() == labels.size() && !labels.empty(),
          "ad::weighted_bce_with_logits: logits must be n x 1 matching labels");
  const double n = static_cast<double>(labels.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double l = lv(i, 0);
    loss += labels[i] != 0 ? w_pos * softplus(-l) : softplus(l);
  }
  const std::size_t il = logits.id();
  std::vector<int> z(labels.begin(), labels.end());
  return logits.tape().push(Tensor(1, 1, loss / n), {logits},
                            [il, z = std::move(z), w_pos, n](Tape& t, std::size_t self) {
    const double g = t.grad(self)(0, 0);
    const Tensor& lv = t.value(il);
    Tensor& dl = t.grad(il);
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double s = sigmoid(lv(i, 0));
      dl(i, 0) += g * (z[i] != 0 ? w_pos * (s - 1.0) : s) / n;
    }
  });
}

Var cross_entropy_sum(Var logits, std::span<const int> targets) {
  const Tensor& lv = logits.value();
  require(lv.rows() == targets.size() && !targets.empty(), "ad::cross_entropy_sum: one target per row required");
  Tensor probs(lv.rows(), lv.cols());
  double loss = 0.0;
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    require(targets[r] >= 0 && static_cast<std::size_t>(targets[r]) < lv.cols(),
            "ad::cross_entropy_sum: target out of range");
    const double mx = kernels::max(lv.row(r));
    double z = 0.0;
    for (std::size_t c = 0; c < lv.cols(); ++c) z += (probs(r, c) = std::exp(lv(r, c) - mx));
    for (std::size_t c = 0; c < lv.cols(); ++c) probs(r, c) /= z;
    loss += (mx + std::log(z)) - lv(r, static_cast<std::size_t>(targets[r]));
  }
  const std::size_t il = logits.id();
  std::vector<int> tv(targets.begin(), targets.end());
  return logits.tape().push(Tensor(1, 1, loss), {logits},
                            [il, probs = std::move(probs), tv = std::move(tv)](Tape& t, std::size_t self) {
    const double g = t.grad(self)(0, 0);
    Tensor& dl = t.grad(il);
    for (std::size_t r = 0; r < probs.rows(); ++r) {
      kernels::axpy(g, probs.row(r), dl.row(r));
      dl(r, static_cast<std::size_t>(tv[r])) -= g;
    }
  });
}

Var sum_all(Var x) {
  const double s = kernels::sum(x.value().flat());
  const std::size_t ix = x.id();
  return x.tape().push(Tensor(1, 1, s), {x}, [ix](Tape& t, std::size_t self) {
    const double g = t.grad(self)(0, 0);
    for (double& v : t.grad(ix).flat()) v += g;
  });
}

}  // namespace ad
}  // namespace streamgate
