#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cmlm {

// Dense row-major tensor, rank <= 4. float for training runs, double for
// gradient checks; the whole differentiable stack is templated on the scalar.
template <typename S>
struct Tensor {
  std::vector<int> shape;
  std::vector<S> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> sh) : shape(std::move(sh)), v(count(shape), S(0)) {
    if (shape.size() > 4) throw std::invalid_argument("tensor rank > 4");
  }
  Tensor(std::vector<int> sh, std::vector<S> data) : shape(std::move(sh)), v(std::move(data)) {
    if (shape.size() > 4) throw std::invalid_argument("tensor rank > 4");
    if (static_cast<int64_t>(v.size()) != count(shape))
      throw std::invalid_argument("tensor data does not match shape");
  }

  static int64_t count(const std::vector<int>& sh) {
    int64_t n = 1;
    for (int d : sh) n *= d;
    return n;
  }

  int64_t size() const { return static_cast<int64_t>(v.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int rows() const { return shape.at(0); }
  int cols() const { return shape.at(1); }

  S& at(int i, int j) { return v[static_cast<size_t>(i) * cols() + j]; }
  S at(int i, int j) const { return v[static_cast<size_t>(i) * cols() + j]; }

  void fill(S x) { std::fill(v.begin(), v.end(), x); }
  void zero() { fill(S(0)); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  std::string shape_str() const {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ")";
    return os.str();
  }

  bool all_finite() const {
    for (S x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

[[noreturn]] inline void shape_violation(const std::string& op, const std::string& a, const std::string& b) {
  throw std::invalid_argument(op + ": incompatible shapes " + a + " vs " + b);
}

// ---- raw matmul kernels ------------------------------------------------
// C(MxN) += A(MxK) * B(KxN)
template <typename S>
void mm_nn_acc(S* __restrict c, const S* __restrict a, const S* __restrict b, int M, int K, int N) {
  for (int i = 0; i < M; ++i) {
    S* ci = c + static_cast<size_t>(i) * N;
    const S* ai = a + static_cast<size_t>(i) * K;
    for (int k = 0; k < K; ++k) {
      const S aik = ai[k];
      if (aik == S(0)) continue;
      const S* bk = b + static_cast<size_t>(k) * N;
      for (int j = 0; j < N; ++j) ci[j] += aik * bk[j];
    }
  }
}

// C(MxN) += A(MxK) * B(NxK)^T
template <typename S>
void mm_nt_acc(S* __restrict c, const S* __restrict a, const S* __restrict b, int M, int K, int N) {
  for (int i = 0; i < M; ++i) {
    const S* ai = a + static_cast<size_t>(i) * K;
    S* ci = c + static_cast<size_t>(i) * N;
    for (int j = 0; j < N; ++j) {
      const S* bj = b + static_cast<size_t>(j) * K;
      S acc = S(0);
      for (int k = 0; k < K; ++k) acc += ai[k] * bj[k];
      ci[j] += acc;
    }
  }
}

// C(KxN) += A(MxK)^T * B(MxN)
template <typename S>
void mm_tn_acc(S* __restrict c, const S* __restrict a, const S* __restrict b, int M, int K, int N) {
  for (int m = 0; m < M; ++m) {
    const S* am = a + static_cast<size_t>(m) * K;
    const S* bm = b + static_cast<size_t>(m) * N;
    for (int k = 0; k < K; ++k) {
      const S amk = am[k];
      if (amk == S(0)) continue;
      S* ck = c + static_cast<size_t>(k) * N;
      for (int j = 0; j < N; ++j) ck[j] += amk * bm[j];
    }
  }
}

}  // namespace cmlm
