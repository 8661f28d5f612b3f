#include "streamgate/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "streamgate/kernels.hpp"

namespace streamgate {
namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) +
                              "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                              "x" + std::to_string(b.cols()));
}

}  // namespace

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) throw std::invalid_argument("Tensor: data size does not match shape");
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::append_rows(const Tensor& other) {
  if (rows_ == 0 && cols_ == 0) cols_ = other.cols_;
  if (other.cols_ != cols_) shape_error("append_rows", *this, other);
  data_.insert(data_.end(), other.data_.begin(), other.data_.end());
  rows_ += other.rows_;
}

void matmul_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  if (a.cols() != b.rows() || out.rows() != a.rows() || out.cols() != b.cols())
    shape_error("matmul", a, b);
  if (a.size() == 0 || b.size() == 0) return;
  kernels::active().gemm(a.rows(), b.cols(), a.cols(), a.data(), a.cols(), b.data(), b.cols(), out.data(),
                         out.cols());
}

void matmul_nt_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  if (a.cols() != b.cols() || out.rows() != a.rows() || out.cols() != b.rows())
    shape_error("matmul_nt", a, b);
  matmul_acc(a, transpose(b), out);
}

void matmul_tn_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  if (a.rows() != b.rows() || out.rows() != a.cols() || out.cols() != b.cols())
    shape_error("matmul_tn", a, b);
  if (a.size() == 0 || b.size() == 0) return;
  kernels::active().gemm_tn(a.cols(), b.cols(), a.rows(), a.data(), a.cols(), b.data(), b.cols(), out.data(),
                            out.cols());
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tensor out(a.rows(), b.cols());
  matmul_acc(a, b, out);
  return out;
}

Tensor transpose(const Tensor& a) {
  constexpr std::size_t kTile = 32;
  Tensor t(a.cols(), a.rows());
  for (std::size_t i0 = 0; i0 < a.rows(); i0 += kTile)
    for (std::size_t j0 = 0; j0 < a.cols(); j0 += kTile)
      for (std::size_t i = i0; i < std::min(i0 + kTile, a.rows()); ++i)
        for (std::size_t j = j0; j < std::min(j0 + kTile, a.cols()); ++j) t(j, i) = a(i, j);
  return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) shape_error("max_abs_diff", a, b);
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace streamgate
