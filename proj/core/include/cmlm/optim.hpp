#pragma once

#include <cmath>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "cmlm/tensor.hpp"

namespace cmlm {

struct LrSchedule {
  int warmup_steps = 1000;
  double peak_lr = 5e-4;  // floor configs use 1e-4
};

// Linear ramp to peak_lr, then inverse-sqrt decay; lr(0) = 0 and the two
// pieces meet at warmup_steps.
inline double lr_at(const LrSchedule& s, int64_t step) {
  if (step <= 0) return 0.0;
  const double w = static_cast<double>(s.warmup_steps);
  const double t = static_cast<double>(step);
  return s.peak_lr * std::min(t / w, std::sqrt(w / t));
}

template <typename S>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t step = 0;
  int64_t skipped = 0;
  std::vector<Tensor<S>> m;
  std::vector<Tensor<S>> v;

  void init(const std::vector<Tensor<S>*>& params) {
    m.clear();
    v.clear();
    for (auto* p : params) {
      m.emplace_back(p->shape);
      v.emplace_back(p->shape);
    }
  }
};

// Bias-corrected Adam over a fixed parameter list. A non-finite gradient
// anywhere skips the whole step and bumps the skip counter.
template <typename S>
bool adam_step(AdamState<S>& st, const std::vector<Tensor<S>*>& params,
               const std::vector<Tensor<S>>& grads, double lr) {
  if (st.m.size() != params.size()) throw std::invalid_argument("adam state not initialized");
  for (const auto& gt : grads)
    if (!gt.all_finite()) {
      ++st.skipped;
      std::cerr << "adam_step: non-finite gradient, skipping step " << (st.step + 1) << "\n";
      return false;
    }
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (size_t t = 0; t < params.size(); ++t) {
    Tensor<S>& p = *params[t];
    const Tensor<S>& gt = grads[t];
    if (!p.same_shape(gt)) shape_violation("adam_step", p.shape_str(), gt.shape_str());
    for (int64_t i = 0; i < p.size(); ++i) {
      const double g = static_cast<double>(gt.v[i]);
      double m = st.beta1 * static_cast<double>(st.m[t].v[i]) + (1.0 - st.beta1) * g;
      double v = st.beta2 * static_cast<double>(st.v[t].v[i]) + (1.0 - st.beta2) * g * g;
      st.m[t].v[i] = static_cast<S>(m);
      st.v[t].v[i] = static_cast<S>(v);
      const double mh = m / c1;
      const double vh = v / c2;
      p.v[i] = static_cast<S>(static_cast<double>(p.v[i]) - lr * mh / (std::sqrt(vh) + st.eps));
    }
  }
  return true;
}

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  int64_t worst_coord = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Central differences against reverse-mode gradients, one coordinate at a
// time. `forward` must re-evaluate the scalar objective from the current
// parameter values; `analytic_grads` are the reverse-mode results at the
// unperturbed point.
inline GradCheckReport grad_check(const std::function<double()>& forward,
                                  const std::vector<std::pair<std::string, TensorD*>>& params,
                                  const std::vector<TensorD>& analytic_grads, double h) {
  GradCheckReport rep;
  for (size_t t = 0; t < params.size(); ++t) {
    TensorD& p = *params[t].second;
    for (int64_t i = 0; i < p.size(); ++i) {
      const double orig = p.v[i];
      p.v[i] = orig + h;
      const double fp = forward();
      p.v[i] = orig - h;
      const double fm = forward();
      p.v[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw std::runtime_error("grad_check: non-finite objective at perturbed point");
      const double num = (fp - fm) / (2.0 * h);
      const double ana = analytic_grads[t].v[i];
      const double denom = std::max({1e-8, std::abs(num), std::abs(ana)});
      const double rel = std::abs(num - ana) / denom;
      if (rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst_param = params[t].first;
        rep.worst_coord = i;
        rep.analytic = ana;
        rep.numeric = num;
      }
    }
  }
  return rep;
}

}  // namespace cmlm
