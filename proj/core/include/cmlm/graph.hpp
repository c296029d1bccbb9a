#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "cmlm/rng.hpp"
#include "cmlm/tensor.hpp"

namespace cmlm {

// Reverse-mode tape over dense tensors. Nodes are created in evaluation
// order (forward values computed eagerly), so creation order is a valid
// topological order and backward() is a single reverse sweep.
template <typename S>
class Graph {
 public:
  enum class Op {
    Param,
    Constant,
    Matmul,      // A(MxK) * B(KxN)
    MatmulNT,    // A(MxK) * B(NxK)^T
    Add,
    AddBias,     // X(NxD) + b(D)
    Scale,
    Mul,
    Exp,
    Log,
    SumAll,
    ColSum,      // (LxM) -> (1xM)
    GatherRows,
    GatherCols,
    LayerNorm,
    Softmax,
    LogSoftmax,
    Gelu,
    Dropout,
    ConcatCols,
    SliceCols,
    NllSum,      // -sum_j logp[j, ids[j]]
  };

  void set_dropout_stream(uint64_t seed, uint64_t step, uint64_t stream) {
    drop_seed_ = mix64(seed, mix64(step, stream));
  }

  int param(Tensor<S>* value, Tensor<S>* grad_slot) {
    auto it = param_ids_.find(value);
    if (it != param_ids_.end()) return it->second;
    Node n;
    n.op = Op::Param;
    n.val = *value;
    n.param_grad = grad_slot;
    int id = push(std::move(n));
    param_ids_[value] = id;
    return id;
  }

  int constant(Tensor<S> value) {
    Node n;
    n.op = Op::Constant;
    n.val = std::move(value);
    return push(std::move(n));
  }

  int matmul(int a, int b) {
    const auto& A = val(a);
    const auto& B = val(b);
    if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows())
      shape_violation("matmul", A.shape_str(), B.shape_str());
    Node n;
    n.op = Op::Matmul;
    n.in = {a, b};
    n.val = Tensor<S>({A.rows(), B.cols()});
    mm_nn_acc(n.val.v.data(), A.v.data(), B.v.data(), A.rows(), A.cols(), B.cols());
    return push(std::move(n));
  }

  int matmul_nt(int a, int b) {
    const auto& A = val(a);
    const auto& B = val(b);
    if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.cols())
      shape_violation("matmul_nt", A.shape_str(), B.shape_str());
    Node n;
    n.op = Op::MatmulNT;
    n.in = {a, b};
    n.val = Tensor<S>({A.rows(), B.rows()});
    mm_nt_acc(n.val.v.data(), A.v.data(), B.v.data(), A.rows(), A.cols(), B.rows());
    return push(std::move(n));
  }

  int add(int a, int b) {
    const auto& A = val(a);
    const auto& B = val(b);
    if (!A.same_shape(B)) shape_violation("add", A.shape_str(), B.shape_str());
    Node n;
    n.op = Op::Add;
    n.in = {a, b};
    n.val = A;
    for (int64_t i = 0; i < n.val.size(); ++i) n.val.v[i] += B.v[i];
    return push(std::move(n));
  }

  int add_bias(int x, int b) {
    const auto& X = val(x);
    const auto& B = val(b);
    if (X.rank() != 2 || B.rank() != 1 || B.shape[0] != X.cols())
      shape_violation("add_bias", X.shape_str(), B.shape_str());
    Node n;
    n.op = Op::AddBias;
    n.in = {x, b};
    n.val = X;
    for (int i = 0; i < X.rows(); ++i)
      for (int j = 0; j < X.cols(); ++j) n.val.at(i, j) += B.v[j];
    return push(std::move(n));
  }

  int scale(int a, double s) {
    Node n;
    n.op = Op::Scale;
    n.in = {a};
    n.scalar = s;
    n.val = val(a);
    for (auto& x : n.val.v) x = static_cast<S>(x * s);
    return push(std::move(n));
  }

  int mul(int a, int b) {
    const auto& A = val(a);
    const auto& B = val(b);
    if (!A.same_shape(B)) shape_violation("mul", A.shape_str(), B.shape_str());
    Node n;
    n.op = Op::Mul;
    n.in = {a, b};
    n.val = A;
    for (int64_t i = 0; i < n.val.size(); ++i) n.val.v[i] *= B.v[i];
    return push(std::move(n));
  }

  int exp_(int a) {
    Node n;
    n.op = Op::Exp;
    n.in = {a};
    n.val = val(a);
    for (auto& x : n.val.v) x = static_cast<S>(std::exp(static_cast<double>(x)));
    return push(std::move(n));
  }

  int log_(int a) {
    Node n;
    n.op = Op::Log;
    n.in = {a};
    n.val = val(a);
    for (auto& x : n.val.v) x = static_cast<S>(std::log(static_cast<double>(x)));
    return push(std::move(n));
  }

  int sum_all(int a) {
    Node n;
    n.op = Op::SumAll;
    n.in = {a};
    double acc = 0.0;
    for (S x : val(a).v) acc += static_cast<double>(x);
    n.val = Tensor<S>({1});
    n.val.v[0] = static_cast<S>(acc);
    return push(std::move(n));
  }

  int col_sum(int a) {
    const auto& A = val(a);
    if (A.rank() != 2) shape_violation("col_sum", A.shape_str(), "(rank-2)");
    Node n;
    n.op = Op::ColSum;
    n.in = {a};
    n.val = Tensor<S>({1, A.cols()});
    for (int j = 0; j < A.cols(); ++j) {
      double acc = 0.0;
      for (int i = 0; i < A.rows(); ++i) acc += static_cast<double>(A.at(i, j));
      n.val.v[j] = static_cast<S>(acc);
    }
    return push(std::move(n));
  }

  int gather_rows(int table, std::vector<int> ids) {
    const auto& T = val(table);
    if (T.rank() != 2) shape_violation("gather_rows", T.shape_str(), "(rank-2)");
    for (int id : ids)
      if (id < 0 || id >= T.rows())
        throw std::invalid_argument("gather_rows: row index " + std::to_string(id) +
                                    " out of range for " + T.shape_str());
    Node n;
    n.op = Op::GatherRows;
    n.in = {table};
    n.ids = std::move(ids);
    n.val = Tensor<S>({static_cast<int>(n.ids.size()), T.cols()});
    for (size_t r = 0; r < n.ids.size(); ++r)
      std::copy_n(&T.v[static_cast<size_t>(n.ids[r]) * T.cols()], T.cols(),
                  &n.val.v[r * T.cols()]);
    return push(std::move(n));
  }

  int gather_cols(int a, std::vector<int> ids) {
    const auto& A = val(a);
    if (A.rank() != 2) shape_violation("gather_cols", A.shape_str(), "(rank-2)");
    for (int id : ids)
      if (id < 0 || id >= A.cols())
        throw std::invalid_argument("gather_cols: col index " + std::to_string(id) +
                                    " out of range for " + A.shape_str());
    Node n;
    n.op = Op::GatherCols;
    n.in = {a};
    n.ids = std::move(ids);
    n.val = Tensor<S>({A.rows(), static_cast<int>(n.ids.size())});
    for (int i = 0; i < A.rows(); ++i)
      for (size_t c = 0; c < n.ids.size(); ++c) n.val.at(i, static_cast<int>(c)) = A.at(i, n.ids[c]);
    return push(std::move(n));
  }

  int layer_norm(int x, int gain, int bias) {
    const auto& X = val(x);
    const auto& G = val(gain);
    const auto& B = val(bias);
    if (X.rank() != 2 || G.rank() != 1 || G.shape[0] != X.cols())
      shape_violation("layer_norm", X.shape_str(), G.shape_str());
    if (!G.same_shape(B)) shape_violation("layer_norm gain/bias", G.shape_str(), B.shape_str());
    Node n;
    n.op = Op::LayerNorm;
    n.in = {x, gain, bias};
    n.val = Tensor<S>({X.rows(), X.cols()});
    const int d = X.cols();
    n.cache.resize(static_cast<size_t>(X.rows()) * (d + 1));  // xhat rows then rstd per row
    for (int i = 0; i < X.rows(); ++i) {
      double mean = 0.0;
      for (int j = 0; j < d; ++j) mean += static_cast<double>(X.at(i, j));
      mean /= d;
      double var = 0.0;
      for (int j = 0; j < d; ++j) {
        double c = static_cast<double>(X.at(i, j)) - mean;
        var += c * c;
      }
      var /= d;
      double rstd = 1.0 / std::sqrt(var + kLnEps);
      for (int j = 0; j < d; ++j) {
        double xh = (static_cast<double>(X.at(i, j)) - mean) * rstd;
        n.cache[static_cast<size_t>(i) * d + j] = static_cast<S>(xh);
        n.val.at(i, j) = static_cast<S>(xh * static_cast<double>(G.v[j]) + static_cast<double>(B.v[j]));
      }
      n.cache[static_cast<size_t>(X.rows()) * d + i] = static_cast<S>(rstd);
    }
    return push(std::move(n));
  }

  int softmax(int a) { return rowwise_softmax(a, /*log=*/false); }
  int log_softmax(int a) { return rowwise_softmax(a, /*log=*/true); }

  int gelu(int a) {
    Node n;
    n.op = Op::Gelu;
    n.in = {a};
    n.val = val(a);
    for (auto& x : n.val.v) {
      double xd = static_cast<double>(x);
      x = static_cast<S>(xd * normal_cdf(xd));
    }
    return push(std::move(n));
  }

  int dropout(int a, double p) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout rate must be in [0,1)");
    Node n;
    n.op = Op::Dropout;
    n.in = {a};
    n.scalar = p;
    n.val = val(a);
    if (p > 0.0) {
      const uint64_t instance = drop_instance_++;
      n.cache.resize(n.val.v.size());
      const S keep = static_cast<S>(1.0 / (1.0 - p));
      for (size_t i = 0; i < n.val.v.size(); ++i) {
        S m = counter_uniform(drop_seed_, 0, instance, i) >= p ? keep : S(0);
        n.cache[i] = m;
        n.val.v[i] *= m;
      }
    }
    return push(std::move(n));
  }

  int concat_cols(const std::vector<int>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
    int rows = val(parts[0]).rows();
    int cols = 0;
    for (int p : parts) {
      const auto& P = val(p);
      if (P.rank() != 2 || P.rows() != rows)
        shape_violation("concat_cols", val(parts[0]).shape_str(), P.shape_str());
      cols += P.cols();
    }
    Node n;
    n.op = Op::ConcatCols;
    n.in = parts;
    n.val = Tensor<S>({rows, cols});
    int off = 0;
    for (int p : parts) {
      const auto& P = val(p);
      for (int i = 0; i < rows; ++i)
        std::copy_n(&P.v[static_cast<size_t>(i) * P.cols()], P.cols(),
                    &n.val.v[static_cast<size_t>(i) * cols + off]);
      off += P.cols();
    }
    return push(std::move(n));
  }

  int slice_cols(int a, int c0, int c1) {
    const auto& A = val(a);
    if (A.rank() != 2 || c0 < 0 || c1 > A.cols() || c0 >= c1)
      shape_violation("slice_cols", A.shape_str(),
                      "[" + std::to_string(c0) + "," + std::to_string(c1) + ")");
    Node n;
    n.op = Op::SliceCols;
    n.in = {a};
    n.ids = {c0, c1};
    n.val = Tensor<S>({A.rows(), c1 - c0});
    for (int i = 0; i < A.rows(); ++i)
      std::copy_n(&A.v[static_cast<size_t>(i) * A.cols() + c0], c1 - c0,
                  &n.val.v[static_cast<size_t>(i) * (c1 - c0)]);
    return push(std::move(n));
  }

  // Cross entropy from log-softmax rows: -sum_j logp[j, ids[j]].
  int nll_sum(int logp, std::vector<int> ids) {
    const auto& L = val(logp);
    if (L.rank() != 2 || static_cast<int>(ids.size()) != L.rows())
      shape_violation("nll_sum", L.shape_str(), "(" + std::to_string(ids.size()) + " targets)");
    for (int id : ids)
      if (id < 0 || id >= L.cols()) throw std::invalid_argument("nll_sum: target id out of vocab");
    Node n;
    n.op = Op::NllSum;
    n.in = {logp};
    n.ids = std::move(ids);
    double acc = 0.0;
    for (int j = 0; j < L.rows(); ++j) acc -= static_cast<double>(L.at(j, n.ids[j]));
    n.val = Tensor<S>({1});
    n.val.v[0] = static_cast<S>(acc);
    return push(std::move(n));
  }

  const Tensor<S>& val(int id) const { return nodes_.at(id).val; }
  double scalar_value(int id) const {
    const auto& t = val(id);
    if (t.size() != 1) throw std::invalid_argument("scalar_value on non-scalar " + t.shape_str());
    return static_cast<double>(t.v[0]);
  }
  size_t num_nodes() const { return nodes_.size(); }

  // Reverse sweep from a scalar node; parameter gradients are accumulated
  // into the external slots registered via param().
  void backward(int loss_node) {
    if (val(loss_node).size() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got " + val(loss_node).shape_str());
    for (auto& n : nodes_) n.grad = Tensor<S>();
    auto g = [this](int id) -> Tensor<S>& {
      Node& n = nodes_[id];
      if (n.grad.size() == 0) n.grad = Tensor<S>(n.val.shape);
      return n.grad;
    };
    g(loss_node).v[0] = S(1);

    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.grad.size() == 0) continue;  // not on any path to the loss
      const Tensor<S>& gy = n.grad;
      switch (n.op) {
        case Op::Param:
          if (n.param_grad) {
            if (!n.param_grad->same_shape(gy))
              shape_violation("param grad", n.param_grad->shape_str(), gy.shape_str());
            for (int64_t i = 0; i < gy.size(); ++i) n.param_grad->v[i] += gy.v[i];
          }
          break;
        case Op::Constant:
          break;
        case Op::Matmul: {
          const auto& A = val(n.in[0]);
          const auto& B = val(n.in[1]);
          mm_nt_acc(g(n.in[0]).v.data(), gy.v.data(), B.v.data(), A.rows(), B.cols(), A.cols());
          mm_tn_acc(g(n.in[1]).v.data(), A.v.data(), gy.v.data(), A.rows(), A.cols(), B.cols());
          break;
        }
        case Op::MatmulNT: {
          const auto& A = val(n.in[0]);
          const auto& B = val(n.in[1]);
          // C = A B^T ; dA = dC B ; dB = dC^T A
          mm_nn_acc(g(n.in[0]).v.data(), gy.v.data(), B.v.data(), A.rows(), B.rows(), A.cols());
          mm_tn_acc(g(n.in[1]).v.data(), gy.v.data(), A.v.data(), A.rows(), B.rows(), A.cols());
          break;
        }
        case Op::Add:
          for (int64_t i = 0; i < gy.size(); ++i) g(n.in[0]).v[i] += gy.v[i];
          for (int64_t i = 0; i < gy.size(); ++i) g(n.in[1]).v[i] += gy.v[i];
          break;
        case Op::AddBias: {
          auto& gx = g(n.in[0]);
          auto& gb = g(n.in[1]);
          for (int64_t i = 0; i < gy.size(); ++i) gx.v[i] += gy.v[i];
          const int cols = gy.cols();
          for (int i = 0; i < gy.rows(); ++i)
            for (int j = 0; j < cols; ++j) gb.v[j] += gy.at(i, j);
          break;
        }
        case Op::Scale: {
          auto& gx = g(n.in[0]);
          for (int64_t i = 0; i < gy.size(); ++i)
            gx.v[i] += static_cast<S>(static_cast<double>(gy.v[i]) * n.scalar);
          break;
        }
        case Op::Mul: {
          const auto& A = val(n.in[0]);
          const auto& B = val(n.in[1]);
          auto& ga = g(n.in[0]);
          auto& gb = g(n.in[1]);
          for (int64_t i = 0; i < gy.size(); ++i) {
            ga.v[i] += gy.v[i] * B.v[i];
            gb.v[i] += gy.v[i] * A.v[i];
          }
          break;
        }
        case Op::Exp: {
          auto& gx = g(n.in[0]);
          for (int64_t i = 0; i < gy.size(); ++i) gx.v[i] += gy.v[i] * n.val.v[i];
          break;
        }
        case Op::Log: {
          const auto& X = val(n.in[0]);
          auto& gx = g(n.in[0]);
          for (int64_t i = 0; i < gy.size(); ++i) gx.v[i] += gy.v[i] / X.v[i];
          break;
        }
        case Op::SumAll: {
          auto& gx = g(n.in[0]);
          const S s = gy.v[0];
          for (int64_t i = 0; i < gx.size(); ++i) gx.v[i] += s;
          break;
        }
        case Op::ColSum: {
          auto& gx = g(n.in[0]);
          for (int i = 0; i < gx.rows(); ++i)
            for (int j = 0; j < gx.cols(); ++j) gx.at(i, j) += gy.v[j];
          break;
        }
        case Op::GatherRows: {
          auto& gx = g(n.in[0]);
          const int cols = gx.cols();
          for (size_t r = 0; r < n.ids.size(); ++r)
            for (int j = 0; j < cols; ++j)
              gx.v[static_cast<size_t>(n.ids[r]) * cols + j] += gy.v[r * cols + j];
          break;
        }
        case Op::GatherCols: {
          auto& gx = g(n.in[0]);
          for (int i = 0; i < gy.rows(); ++i)
            for (size_t c = 0; c < n.ids.size(); ++c)
              gx.at(i, n.ids[c]) += gy.at(i, static_cast<int>(c));
          break;
        }
        case Op::LayerNorm: {
          const auto& X = val(n.in[0]);
          const auto& G = val(n.in[1]);
          auto& gx = g(n.in[0]);
          auto& gg = g(n.in[1]);
          auto& gb = g(n.in[2]);
          const int d = X.cols();
          const S* xhat = n.cache.data();
          const S* rstd = n.cache.data() + static_cast<size_t>(X.rows()) * d;
          for (int i = 0; i < X.rows(); ++i) {
            double sum_dxh = 0.0, sum_dxh_xh = 0.0;
            for (int j = 0; j < d; ++j) {
              double dxh = static_cast<double>(gy.at(i, j)) * static_cast<double>(G.v[j]);
              double xh = static_cast<double>(xhat[static_cast<size_t>(i) * d + j]);
              sum_dxh += dxh;
              sum_dxh_xh += dxh * xh;
              gg.v[j] += static_cast<S>(static_cast<double>(gy.at(i, j)) * xh);
              gb.v[j] += gy.at(i, j);
            }
            const double r = static_cast<double>(rstd[i]);
            for (int j = 0; j < d; ++j) {
              double dxh = static_cast<double>(gy.at(i, j)) * static_cast<double>(G.v[j]);
              double xh = static_cast<double>(xhat[static_cast<size_t>(i) * d + j]);
              gx.at(i, j) += static_cast<S>(r * (dxh - sum_dxh / d - xh * sum_dxh_xh / d));
            }
          }
          break;
        }
        case Op::Softmax: {
          auto& gx = g(n.in[0]);
          const int cols = n.val.cols();
          for (int i = 0; i < n.val.rows(); ++i) {
            double dot = 0.0;
            for (int j = 0; j < cols; ++j)
              dot += static_cast<double>(gy.at(i, j)) * static_cast<double>(n.val.at(i, j));
            for (int j = 0; j < cols; ++j)
              gx.at(i, j) += static_cast<S>(static_cast<double>(n.val.at(i, j)) *
                                            (static_cast<double>(gy.at(i, j)) - dot));
          }
          break;
        }
        case Op::LogSoftmax: {
          auto& gx = g(n.in[0]);
          const int cols = n.val.cols();
          for (int i = 0; i < n.val.rows(); ++i) {
            double sum = 0.0;
            for (int j = 0; j < cols; ++j) sum += static_cast<double>(gy.at(i, j));
            for (int j = 0; j < cols; ++j)
              gx.at(i, j) += static_cast<S>(static_cast<double>(gy.at(i, j)) -
                                            std::exp(static_cast<double>(n.val.at(i, j))) * sum);
          }
          break;
        }
        case Op::Gelu: {
          const auto& X = val(n.in[0]);
          auto& gx = g(n.in[0]);
          for (int64_t i = 0; i < gy.size(); ++i) {
            double x = static_cast<double>(X.v[i]);
            double d = normal_cdf(x) + x * normal_pdf(x);
            gx.v[i] += static_cast<S>(static_cast<double>(gy.v[i]) * d);
          }
          break;
        }
        case Op::Dropout: {
          auto& gx = g(n.in[0]);
          if (n.scalar > 0.0) {
            for (int64_t i = 0; i < gy.size(); ++i) gx.v[i] += gy.v[i] * n.cache[i];
          } else {
            for (int64_t i = 0; i < gy.size(); ++i) gx.v[i] += gy.v[i];
          }
          break;
        }
        case Op::ConcatCols: {
          int off = 0;
          for (int p : n.in) {
            auto& gp = g(p);
            for (int i = 0; i < gy.rows(); ++i)
              for (int j = 0; j < gp.cols(); ++j) gp.at(i, j) += gy.at(i, off + j);
            off += gp.cols();
          }
          break;
        }
        case Op::SliceCols: {
          auto& gx = g(n.in[0]);
          const int c0 = n.ids[0];
          for (int i = 0; i < gy.rows(); ++i)
            for (int j = 0; j < gy.cols(); ++j) gx.at(i, c0 + j) += gy.at(i, j);
          break;
        }
        case Op::NllSum: {
          auto& gx = g(n.in[0]);
          const S s = gy.v[0];
          for (size_t j = 0; j < n.ids.size(); ++j)
            gx.at(static_cast<int>(j), n.ids[j]) -= s;
          break;
        }
      }
    }
  }

  static double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }
  static double normal_pdf(double x) {
    static const double inv_sqrt_2pi = 0.3989422804014327;
    return inv_sqrt_2pi * std::exp(-0.5 * x * x);
  }

 private:
  struct Node {
    Op op;
    std::vector<int> in;
    Tensor<S> val;
    Tensor<S> grad;
    std::vector<int> ids;
    std::vector<S> cache;
    double scalar = 0.0;
    Tensor<S>* param_grad = nullptr;
  };

  static constexpr double kLnEps = 1e-5;

  int push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  int rowwise_softmax(int a, bool log) {
    const auto& A = val(a);
    if (A.rank() != 2) shape_violation(log ? "log_softmax" : "softmax", A.shape_str(), "(rank-2)");
    Node n;
    n.op = log ? Op::LogSoftmax : Op::Softmax;
    n.in = {a};
    n.val = Tensor<S>({A.rows(), A.cols()});
    const int cols = A.cols();
    for (int i = 0; i < A.rows(); ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < cols; ++j) mx = std::max(mx, static_cast<double>(A.at(i, j)));
      double z = 0.0;
      for (int j = 0; j < cols; ++j) z += std::exp(static_cast<double>(A.at(i, j)) - mx);
      if (log) {
        const double lz = std::log(z) + mx;
        for (int j = 0; j < cols; ++j) n.val.at(i, j) = static_cast<S>(static_cast<double>(A.at(i, j)) - lz);
      } else {
        for (int j = 0; j < cols; ++j)
          n.val.at(i, j) = static_cast<S>(std::exp(static_cast<double>(A.at(i, j)) - mx) / z);
      }
    }
    return push(std::move(n));
  }

  std::vector<Node> nodes_;
  std::unordered_map<const void*, int> param_ids_;
  uint64_t drop_seed_ = 0;
  uint64_t drop_instance_ = 0;
};

using GraphF = Graph<float>;
using GraphD = Graph<double>;

}  // namespace cmlm
